"""``stmd`` command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure
(non-finite loss, violated bound, failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analytic, evaluation, train
from .config import ConfigError, dump_config, load_config
from .data import DatasetError, DatasetSpec, gaussian, read_points_csv
from .output import write_rows_csv, write_samples
from .sample import CountingModel, LinearObservation, SamplerError, sample_objective
from .schedule import NoiseSchedule, ScheduleError

log = logging.getLogger("stmd")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _setup_logging(log_file=None, verbose=False):
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, mode="w"))
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, force=True,
                        format="%(asctime)s %(levelname)s %(message)s", handlers=handlers)


def _load(path):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return train.load_checkpoint(path)


def _dataset_of(state) -> DatasetSpec:
    spec = state.meta.get("dataset")
    if spec is None:
        raise UsageError("checkpoint has no dataset metadata; pass --config")
    return DatasetSpec(**spec)


def _parse_matrix(text):
    rows = [r for r in text.split(";") if r.strip()]
    try:
        return np.array([[float(v) for v in r.split(",")] for r in rows])
    except ValueError as exc:
        raise UsageError(f"cannot parse matrix {text!r}: {exc}") from exc


def _parse_pair(text):
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError as exc:
        raise UsageError(f"expected NINFxNMF, got {text!r}") from exc


# --- verbs ----------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _setup_logging(out / "train.log", args.verbose)
    (out / "config.yaml").write_text(dump_config(cfg))
    dataset = cfg.dataset.to_spec()
    net = cfg.network.build(dataset.dim)
    state = train.init_state(net, cfg.train.build(), cfg.schedule.build(),
                             meta={"dataset": dataset.to_dict()})
    ckpt_dir = out / "checkpoints" if cfg.train.checkpoint_every else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(exist_ok=True)
    log.info("training %s for %d steps on %s", cfg.train.objective, cfg.train.iterations,
             dataset.kind)
    try:
        train.fit(state, dataset.sample, log_every=cfg.train.log_every,
                  metrics_path=out / "metrics.csv", checkpoint_every=cfg.train.checkpoint_every,
                  checkpoint_dir=ckpt_dir,
                  progress=lambda row: log.info("step %d raw_loss %.5g", row["step"], row["raw_loss"]))
    except train.NumericalError as exc:
        (out / "failure_snapshot.json").write_text(json.dumps(exc.snapshot, indent=2))
        train.save_checkpoint(state, out / "failure.ckpt")
        log.error("%s; snapshot written to %s", exc, out / "failure_snapshot.json")
        return EXIT_NUMERIC
    train.save_checkpoint(state, out / "final.ckpt")
    print(out / "final.ckpt")
    return EXIT_OK


def cmd_sample(args) -> int:
    _setup_logging(verbose=args.verbose)
    state = _load(args.checkpoint)
    objective = state.config.objective
    obs = None
    if (args.mask is None) != (args.observation is None):
        raise UsageError("--mask and --observation must be given together")
    if args.mask is not None:
        mask = _parse_matrix(args.mask)
        y = _parse_matrix(args.observation).ravel()
        if mask.shape[1] != state.net.data_dim or mask.shape[0] != y.size:
            raise UsageError(f"mask shape {mask.shape} does not match data dim "
                             f"{state.net.data_dim} and {y.size} observations")
        obs = LinearObservation(mask, y)
    model = CountingModel(state.ema_net())
    x = sample_objective(objective, model, state.sched, args.n, state.net.data_dim,
                         args.n_inf, args.n_mf, args.seed, obs)
    paths = write_samples(args.out_dir, x, objective, args.n_inf, args.n_mf, args.seed,
                          svg=not args.no_svg, kind="samples" if obs is None else "inpaint")
    print(f"NFE {model.calls}")
    if obs is not None:
        print(f"max constraint residual {np.abs(obs.residual(x)).max():.3e}")
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_eval(args) -> int:
    _setup_logging(verbose=args.verbose)
    pairs = [_parse_pair(p) for p in args.pairs]
    rows = []
    for path in args.checkpoint:
        state = _load(path)
        if args.data:
            ref = read_points_csv(args.data)
            dataset = DatasetSpec("csv", path=args.data)
        else:
            dataset = load_config(args.config).dataset.to_spec() if args.config else _dataset_of(state)
            ref = None
        model, dim = state.ema_net(), state.net.data_dim
        for n_inf, n_mf in pairs:
            def generate(i, _a=n_inf, _b=n_mf):
                return sample_objective(state.config.objective, model, state.sched, args.n, dim,
                                        _a, _b, args.seed + i)
            row = {"checkpoint": str(path), "objective": state.config.objective,
                   "n_inf": n_inf, "n_mf": n_mf, "nfe": n_inf * n_mf}
            if "w2" in args.metrics:
                w2 = evaluation.w2_vs_sampler(generate, dataset.sample, args.n, args.n_rep,
                                              args.seed)
                row.update(w2=w2["w2_raw"], w2_se=w2["w2_raw_se"], w2_debiased=w2["w2"],
                           w2_debiased_se=w2["w2_se"], w2_floor=w2["w2_floor"])
            if "energy" in args.metrics:
                held = ref if ref is not None else dataset.sample(
                    np.random.default_rng([args.seed, 99]), args.n)
                row["energy"] = evaluation.energy_distance(generate(0), held)
            rows.append(row)
            log.info("%s", {k: v for k, v in row.items() if k != "checkpoint"})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rows_csv(out, rows)
    text = out.with_suffix(".txt")
    text.write_text("".join(
        f"{r['objective']} nfe={r['nfe']} (n_inf={r['n_inf']}, n_mf={r['n_mf']})"
        + (f" W2^2={r['w2']:.5f}+-{r['w2_se']:.5f} debiased={r['w2_debiased']:.5f}"
           f"+-{r['w2_debiased_se']:.5f}" if "w2" in r else "")
        + (f" energy={r['energy']:.5f}" if "energy" in r else "") + "\n" for r in rows))
    print(out)
    return EXIT_OK


def cmd_verify_bounds(args) -> int:
    _setup_logging(verbose=args.verbose)
    if args.mode == "threshold":
        if None in (args.m2, args.d, args.eps1):
            raise UsageError("threshold mode needs --m2, --d and --eps1")
        a1 = evaluation.alpha1_threshold(args.m2, args.d, args.eps1)
        print(f"alpha1_max {a1:.17g}")
        return EXIT_OK

    sched = NoiseSchedule(args.beta_min, args.beta_max)
    reports = []
    if args.mode == "analytic":
        reports.append(evaluation.check_meanflow_bound(analytic.GaussianMeanFlow(args.sigma0), args.sigma0,
                                                 n=args.n, seed=args.seed, n_rep=args.n_rep))
        reports.append(evaluation.check_stmd_bound(
            analytic.GaussianPosteriorMeanFlow(args.sigma0, sched), sched, gaussian(args.sigma0, 2),
            n=args.n, seed=args.seed, n_rep=args.n_rep, n_pairs=args.n_pairs))
    else:
        if args.checkpoint is None:
            raise UsageError(f"{args.mode} mode needs --checkpoint")
        state = _load(args.checkpoint)
        dataset = _dataset_of(state)
        model = state.ema_net()
        if args.mode == "meanflow":
            if state.config.objective != "meanflow" or dataset.kind != "gaussian":
                raise UsageError("meanflow mode needs a meanflow checkpoint trained on gaussian data")
            reports.append(evaluation.check_meanflow_bound(model, dataset.sigma0, n=args.n,
                                                     dim=dataset.dim, seed=args.seed,
                                                     n_rep=args.n_rep))
        else:
            if state.config.objective != "stmd" or not dataset.is_gmm_like:
                raise UsageError("stmd mode needs an stmd checkpoint trained on gaussian/gmm data")
            reports.append(evaluation.check_stmd_bound(model, state.sched, dataset, n=args.n,
                                                       seed=args.seed, n_rep=args.n_rep,
                                                       n_pairs=args.n_pairs))
            m2 = reports[-1].details["m2"]
            a1 = evaluation.alpha1_threshold(m2, dataset.dim, max(reports[-1].epsilon_hat, 1e-300))
            print(f"alpha1_max {a1:.6g} (schedule alpha1 {reports[-1].details['alpha1']:.6g})")
    for rep in reports:
        print(rep.summary())
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_rows_csv(out, [r.to_row() for r in reports])
        out.with_suffix(".txt").write_text("".join(r.summary() + "\n" for r in reports))
    return EXIT_OK if all(r.satisfied for r in reports) else EXIT_NUMERIC


def cmd_check_grads(args) -> int:
    report = evaluation.jvp_fd_suite(args.nets, args.tol, args.seed)
    for k, v in report.items():
        print(f"{k} {v}")
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stmd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a YAML config")
    t.add_argument("config")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. train.iterations=100")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--n-inf", type=int, default=4)
    s.add_argument("--n-mf", type=int, default=2)
    s.add_argument("--n", type=int, default=2048)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mask", help="observation matrix, rows split by ';', e.g. '1,0'")
    s.add_argument("--observation", help="observed values, e.g. '0.5'")
    s.add_argument("--out-dir", default=".")
    s.add_argument("--no-svg", action="store_true")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="metric-vs-NFE table against data")
    e.add_argument("checkpoint", nargs="+")
    e.add_argument("--config", help="take the dataset from this config instead of the checkpoint")
    e.add_argument("--data", help="held-out points CSV")
    e.add_argument("--pairs", nargs="+", default=["1x1", "1x2", "2x2", "4x2"],
                   help="(n_inf)x(n_mf) pairs")
    e.add_argument("--metrics", nargs="+", choices=["w2", "energy"], default=["w2", "energy"])
    e.add_argument("--n", type=int, default=2048)
    e.add_argument("--n-rep", type=int, default=4)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="eval.csv")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("verify-bounds", help="check the Wasserstein bounds numerically")
    b.add_argument("--mode", choices=["meanflow", "stmd", "threshold", "analytic"],
                   default="analytic")
    b.add_argument("--checkpoint")
    b.add_argument("--sigma0", type=float, default=2.0)
    b.add_argument("--beta-min", type=float, default=0.1)
    b.add_argument("--beta-max", type=float, default=20.0)
    b.add_argument("--m2", type=float)
    b.add_argument("--d", type=int)
    b.add_argument("--eps1", type=float)
    b.add_argument("--n", type=int, default=2048)
    b.add_argument("--n-rep", type=int, default=4)
    b.add_argument("--n-pairs", type=int, default=1024)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="report CSV path (a .txt summary is written next to it)")
    b.set_defaults(func=cmd_verify_bounds)

    g = sub.add_parser("check-grads", help="finite-difference JVP and gradient checks")
    g.add_argument("--nets", type=int, default=50)
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_check_grads)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ConfigError, DatasetError, ScheduleError, SamplerError,
            train.CheckpointFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except evaluation.CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
