import pytest
import yaml

import app
from tests.conftest import tiny_config_dict
from utils.config import SeedsConfig, build_config, load_config, parse_override
from utils.errors import ConfigError


def _write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


# =========================
# CONFIG
# =========================
def test_tiny_config_loads(tiny_config_path):
    config = load_config(tiny_config_path)
    assert config.seeds.generation == 5
    assert config.model.embed_dim == 16
    assert config.location.detour_factor == pytest.approx(1.3)
    config.check_inputs_exist()


def test_overrides_apply_and_parse():
    key, value = parse_override("training.epochs=5")
    assert (key, value) == ("training.epochs", 5)
    assert parse_override("simulation.corridor_links=[1, 2]")[1] == [1, 2]
    with pytest.raises(ConfigError):
        parse_override("training.epochs")

    config = build_config(tiny_config_dict("out"), {"training.epochs": 3, "location.eta": 1.0})
    assert config.training.epochs == 3
    assert config.location.eta == 1.0


@pytest.mark.parametrize(
    "overrides",
    [
        {"location.eta": 0.0},
        {"model.n_heads": 3},
        {"simulation.mode_shares": {"car": 0.5}},
        {"activities.extra_labels": ["Exercise"]},
        {"training.unknown_key": 1},
    ],
)
def test_invalid_values_raise_config_error(overrides):
    with pytest.raises(ConfigError):
        build_config(tiny_config_dict("out"), overrides)


def test_seeds_are_required():
    raw = tiny_config_dict("out")
    del raw["seeds"]["modes"]
    with pytest.raises(ConfigError):
        build_config(raw)


def test_population_source_required():
    raw = tiny_config_dict("out")
    del raw["paths"]["marginals"]
    with pytest.raises(ConfigError):
        build_config(raw)


def test_seeds_from_base_are_distinct():
    seeds = SeedsConfig.from_base(7).model_dump()
    assert len(set(seeds.values())) == len(seeds)
    assert SeedsConfig.from_base(7) == SeedsConfig.from_base(7)
    assert SeedsConfig.from_base(7) != SeedsConfig.from_base(8)


def test_hash_ignores_output_dir_only():
    a = build_config(tiny_config_dict("a"))
    b = build_config(tiny_config_dict("b"))
    c = build_config(tiny_config_dict("a"), {"seeds.location": 99})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("paths: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(str(bad))


# =========================
# CLI
# =========================
def test_collect_overrides_from_flags():
    args = app.build_parser().parse_args(
        ["simulate", "--rng-seed", "3", "--out", "elsewhere", "--iters", "4", "--set", "simulation.gridlock_s=30"]
    )
    overrides = app.collect_overrides(args)
    assert overrides["paths.output_dir"] == "elsewhere"
    assert overrides["simulation.iterations"] == 4
    assert overrides["simulation.gridlock_s"] == 30
    assert overrides["seeds.location"] == SeedsConfig.from_base(3).location


def test_missing_network_exits_with_config_code(tmp_path):
    raw = tiny_config_dict(tmp_path / "run")
    raw["paths"]["network"] = str(tmp_path / "no_such_network.csv")
    assert app.main(["pipeline", "--config", _write(tmp_path, raw)]) == 2
    # nothing was computed
    assert not (tmp_path / "run" / "corpus").exists()


def test_bad_yaml_exits_with_config_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seeds: {population: 1\n")
    assert app.main(["gen-corpus", "--config", str(bad)]) == 2


def test_stage_without_upstream_exits_with_data_code(tiny_config_path):
    # generate needs the train and seed_chain artifacts
    assert app.main(["generate", "--config", tiny_config_path]) == 3


def test_env_config_path(monkeypatch, tiny_config_path, tmp_path):
    monkeypatch.setenv("TRAVELGEN_CONFIG", tiny_config_path)
    assert app.main(["gen-corpus", "--out", str(tmp_path / "corpus_only")]) == 0
    assert (tmp_path / "corpus_only" / "corpus" / "activities.csv").is_file()
