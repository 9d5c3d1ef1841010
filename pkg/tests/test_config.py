import pytest

from stmd.config import ConfigError, RunConfig, dump_config, load_config, parse_override


def test_defaults_build():
    cfg = load_config()
    assert cfg.train.build().objective == "stmd"
    assert cfg.dataset.to_spec().kind == "gaussian"
    net = cfg.network.build(2)
    assert net.widths == (2 * 2 + 3 * 32, 128, 128, 128, 2)


def test_yaml_and_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("dataset: {kind: ring, ring: {radius: 1.5}}\ntrain: {iterations: 10}\n")
    cfg = load_config(path, ["train.iterations=20", "sampler.n_inf=3"])
    assert cfg.train.iterations == 20
    assert cfg.sampler.n_inf == 3
    assert cfg.dataset.to_spec().means[0, 0] == pytest.approx(1.5)


def test_dump_round_trip(tmp_path):
    cfg = load_config(overrides=["dataset.kind=two_moons", "train.objective=cfm"])
    path = tmp_path / "d.yaml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


@pytest.mark.parametrize("override", [
    "train.warmup=10",
    "train.objective=gan",
    "network.embed_dim=7",
    "train.adaptive_c=0",
    "sampler.n_mf=0",
    "dataset.kind=gmm",
    "network.hidden=[]",
])
def test_invalid_configs(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("- a\n- b\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_parse_override():
    assert parse_override("a.b=[1, 2]") == ("a.b", [1, 2])
    with pytest.raises(ConfigError):
        parse_override("nonsense")


def test_unknown_section():
    with pytest.raises(ConfigError):
        load_config(overrides=["optimizer.lr=1"])
    assert isinstance(load_config(), RunConfig)
