import csv

import numpy as np
import pytest

from stmd.cli import main
from stmd.data import read_points_csv


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(
        "dataset: {kind: ring}\n"
        "network: {hidden: [16, 16], embed_dim: 4}\n"
        "train: {objective: stmd, iterations: 100, log_every: 20, checkpoint_every: 50}\n"
        f"output_dir: {tmp_path / 'run'}\n")
    return path


@pytest.fixture
def trained(tiny_config, tmp_path):
    assert main(["train", str(tiny_config)]) == 0
    return tmp_path / "run"


def test_train_outputs(trained, tiny_config, tmp_path):
    assert (trained / "final.ckpt").is_file()
    assert sorted(p.name for p in (trained / "checkpoints").iterdir()) == [
        "step_00000050.ckpt", "step_00000100.ckpt"]
    rows = list(csv.DictReader(open(trained / "metrics.csv")))
    assert len(rows) == 100 // 20
    assert all(np.isfinite(float(r["raw_loss"])) for r in rows)
    # a second identical run gives a byte-identical checkpoint
    assert main(["train", str(tiny_config), "--set", f"output_dir={tmp_path / 'again'}"]) == 0
    assert (tmp_path / "again" / "final.ckpt").read_bytes() == (trained / "final.ckpt").read_bytes()


def test_sample_unconditional(trained, tmp_path, capsys):
    assert main(["sample", str(trained / "final.ckpt"), "--n", "37", "--n-inf", "4", "--n-mf", "2",
                 "--seed", "3", "--out-dir", str(tmp_path / "s")]) == 0
    out = capsys.readouterr().out
    assert "NFE 8" in out
    pts = read_points_csv(tmp_path / "s" / "samples_stmd_ninf4_nmf2_seed3.csv")
    assert pts.shape == (37, 2)
    svg = (tmp_path / "s" / "samples_stmd_ninf4_nmf2_seed3.svg").read_text()
    assert svg.count("<circle") == 37


def test_sample_inpaint(trained, tmp_path):
    assert main(["sample", str(trained / "final.ckpt"), "--n", "40", "--mask", "1,0",
                 "--observation", "0.25", "--out-dir", str(tmp_path / "s")]) == 0
    pts = read_points_csv(tmp_path / "s" / "inpaint_stmd_ninf4_nmf2_seed0.csv")
    assert np.abs(pts[:, 0] - 0.25).max() <= 1e-8


def test_sample_errors(trained, tmp_path):
    ckpt = str(trained / "final.ckpt")
    assert main(["sample", str(tmp_path / "nope.ckpt")]) == 2
    assert main(["sample", ckpt, "--mask", "1,0;2,0", "--observation", "0;0"]) == 2
    assert main(["sample", ckpt, "--mask", "1,0"]) == 2
    assert main(["sample", ckpt, "--mask", "1,0,0", "--observation", "1"]) == 2


def test_eval_sweep(trained, tmp_path):
    out = tmp_path / "ev.csv"
    assert main(["eval", str(trained / "final.ckpt"), "--pairs", "1x1", "1x2", "2x2", "4x2",
                 "--n", "128", "--n-rep", "2", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [int(r["nfe"]) for r in rows] == [1, 2, 4, 8]
    assert all(float(r["w2"]) >= 0 for r in rows)
    assert out.with_suffix(".txt").is_file()


def test_config_errors_exit_2(tiny_config, tmp_path):
    assert main(["train", str(tiny_config), "--set", "train.bogus=1"]) == 2
    assert main(["train", str(tmp_path / "missing.yaml")]) == 2
    assert main(["frobnicate"]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_exit_3(tiny_config, tmp_path):
    code = main(["train", str(tiny_config), "--set", "train.learning_rate=1e300",
                 "--set", f"output_dir={tmp_path / 'nan'}"])
    assert code == 3
    assert (tmp_path / "nan" / "failure_snapshot.json").is_file()


def test_verify_bounds_analytic_and_threshold(tmp_path, capsys):
    assert main(["verify-bounds", "--mode", "analytic", "--n", "512", "--n-rep", "2",
                 "--n-pairs", "32", "--out", str(tmp_path / "b.csv")]) == 0
    assert "SATISFIED" in capsys.readouterr().out
    assert len(list(csv.DictReader(open(tmp_path / "b.csv")))) == 2
    assert main(["verify-bounds", "--mode", "threshold", "--m2", "0", "--d", "1", "--eps1", "1"]) == 0
    assert "alpha1_max 1" in capsys.readouterr().out
    assert main(["verify-bounds", "--mode", "threshold", "--m2", "1"]) == 2


def test_verify_bounds_wrong_checkpoint(trained):
    assert main(["verify-bounds", "--mode", "meanflow", "--checkpoint",
                 str(trained / "final.ckpt")]) == 2


def test_check_grads(capsys):
    assert main(["check-grads", "--nets", "3"]) == 0
    assert "passed True" in capsys.readouterr().out
