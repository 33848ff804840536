import json
from pathlib import Path

import pytest
import yaml

from romes.config import (ConfigError, ExperimentConfig, SamplingConfig, dump_config,
                          load_config)
from romes.core import SurrogateSpec

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, doc, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def test_defaults_valid():
    cfg = ExperimentConfig()
    assert cfg.sampling.n_train + cfg.sampling.n_validation == cfg.sampling.n_total
    assert cfg.divisions % 3 == 0


def test_shipped_configs_load():
    for name in ("thermal_block.yaml", "dual_outputs.yaml"):
        cfg = load_config(CONFIGS / name)
        assert cfg.schema_version == 1


def test_roundtrip(tmp_path):
    cfg = load_config(CONFIGS / "dual_outputs.yaml")
    dump_config(cfg, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back.to_dict() == cfg.to_dict()
    assert back.hash() == cfg.hash()


def test_json_accepted(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"schema_version": 1, "seed": 4}))
    assert load_config(p).seed == 4


def test_hash_tracks_content():
    a, b = ExperimentConfig(), ExperimentConfig()
    assert a.hash() == b.hash()
    b.seed = 1
    assert a.hash() != b.hash()
    b = ExperimentConfig(sweep_sizes=[10, 100])
    assert a.hash() != b.hash()
    assert a.hash(exclude=("sweep_sizes",)) == b.hash(exclude=("sweep_sizes",))


def test_seed_streams_independent():
    cfg = ExperimentConfig(seed=3)
    assert cfg.candidate_rng().random() != cfg.sample_rng().random()
    assert ExperimentConfig(seed=3).sample_rng().random() == cfg.sample_rng().random()


@pytest.mark.parametrize("doc, match", [
    ({"seed": 1}, "schema_version"),
    ({"schema_version": 2}, "schema_version"),
    ({"schema_version": 1, "colour": "red"}, "unknown"),
    ({"schema_version": 1, "divisions": 10}, "multiple of 3"),
    ({"schema_version": 1, "param_box": [0.1, 20]}, "defined on"),
    ({"schema_version": 1, "sampling": {"n_total": 10, "n_train": 5, "n_validation": 6}},
     "exceeds"),
    ({"schema_version": 1, "sampling": {"law": "normal"}}, "law"),
    ({"schema_version": 1, "greedy": {"tol": 0}}, "positive"),
    ({"schema_version": 1, "duals": {"tolerances": [1, -0.1]}}, "positive"),
    ({"schema_version": 1, "greedy": {"n_candidates": 0}}, "candidate"),
    ({"schema_version": 1, "sweep_sizes": [1, 10]}, "sweep"),
    ({"schema_version": 1, "sweep_sizes": [200]}, "sweep"),
    ({"schema_version": 1, "rigor_levels": [1.0]}, "rigor"),
    ({"schema_version": 1, "omegas": [1.0]}, "omegas"),
    ({"schema_version": 1, "greedy": {"tolerance": 1}}, "invalid"),
    ({"schema_version": 1, "surrogates": [{"name": "a", "indicator": "x", "error": "energy"}]},
     "invalid"),
    ({"schema_version": 1, "surrogates": [
        {"name": "a", "indicator": "log_residual_riesz", "error": "energy"},
        {"name": "a", "indicator": "log_residual_euclid", "error": "energy"}]}, "unique"),
])
def test_invalid(tmp_path, doc, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write(tmp_path, doc))


def test_unreadable(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError, match="parse"):
        load_config(p)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(p)


def test_surrogate_defaults_filled(tmp_path):
    p = write(tmp_path, {"schema_version": 1, "surrogates": [
        {"name": "e", "indicator": "log_residual_riesz", "error": "energy",
         "gp": {"n_starts": 2}}]})
    sp = load_config(p).surrogates[0]
    assert isinstance(sp, SurrogateSpec)
    assert sp.gp.n_starts == 2 and sp.gp.targets == "center"
    assert sp.transform.kind == "log" and sp.variance_mode == "full"


def test_sampling_dataclass_defaults():
    s = SamplingConfig()
    assert (s.n_total, s.n_train, s.n_validation) == (2000, 100, 1900)
