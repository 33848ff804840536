"""Experiment configuration: one versioned YAML or JSON document."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from . import hifi
from .core import IndicatorSpec, SurrogateSpec, Transformation

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class GreedyConfig:
    n_candidates: int = 100
    tol: float = 1.0
    max_p: int = 200
    criterion: str = "xnorm"


@dataclass
class DualConfig:
    outputs: list = field(default_factory=list)          # e.g. ["output_1", "output_2"]
    tolerances: list = field(default_factory=lambda: [1.0, 0.5, 0.1])
    max_p: int = 200


@dataclass
class SamplingConfig:
    n_total: int = 2000
    n_train: int = 100
    n_validation: int = 1900
    law: str = "uniform"          # or "loguniform"


def default_surrogates():
    riesz = IndicatorSpec("log_residual_riesz")
    return [
        SurrogateSpec("romes_energy_gp", riesz, "energy"),
        SurrogateSpec("romes_energy_rvm", riesz, "energy", regressor="rvm"),
        SurrogateSpec("romes_compliant_gp", riesz, "output_compliant"),
        SurrogateSpec("multifidelity_compliant_gp", IndicatorSpec("system_inputs"),
                      "output_compliant", transform=Transformation("identity")),
    ]


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    divisions: int = 60
    param_box: tuple = hifi.PARAM_BOX
    output_points: list = field(default_factory=lambda: [list(p) for p in hifi.DEFAULT_POINTS])
    greedy: GreedyConfig = field(default_factory=GreedyConfig)
    duals: DualConfig = field(default_factory=DualConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    surrogates: list = field(default_factory=default_surrogates)
    omegas: list = field(default_factory=lambda: [0.5, 0.8, 0.9, 0.95, 0.99])
    rigor_levels: list = field(default_factory=lambda: [0.5, 0.9])
    sweep_sizes: list = field(default_factory=lambda: [10, 20, 35, 50, 75, 95, 100])
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} is not supported "
                              f"(expected {SCHEMA_VERSION})")
        if self.divisions < 3 or self.divisions % 3:
            raise ConfigError("divisions must be a positive multiple of 3")
        lo, hi = self.param_box
        if not 0 < lo < hi:
            raise ConfigError(f"invalid parameter box {self.param_box}")
        if tuple(self.param_box) != tuple(hifi.PARAM_BOX):
            raise ConfigError(f"the thermal block model is defined on {hifi.PARAM_BOX}")
        s = self.sampling
        if min(s.n_total, s.n_train, s.n_validation) < 0:
            raise ConfigError("sample counts must be nonnegative")
        if s.n_train + s.n_validation > s.n_total:
            raise ConfigError("n_train + n_validation exceeds n_total")
        if s.law not in ("uniform", "loguniform"):
            raise ConfigError(f"unknown sampling law {s.law!r}")
        if self.greedy.tol <= 0 or any(t <= 0 for t in self.duals.tolerances):
            raise ConfigError("greedy tolerances must be positive")
        if self.greedy.n_candidates < 1 or self.greedy.max_p < 1:
            raise ConfigError("greedy needs at least one candidate and max_p >= 1")
        if any(n < 2 or n > s.n_train for n in self.sweep_sizes):
            raise ConfigError(f"sweep sizes must lie in [2, n_train={s.n_train}]")
        if any(not 0 < c < 1 for c in self.rigor_levels):
            raise ConfigError("rigor levels must lie in (0, 1)")
        if any(not 0 <= w < 1 for w in self.omegas):
            raise ConfigError("omegas must lie in [0, 1)")
        names = [sp.name for sp in self.surrogates]
        if len(set(names)) != len(names):
            raise ConfigError("surrogate names must be unique")

    # -- seeds -------------------------------------------------------------------
    def candidate_rng(self):
        return np.random.default_rng([self.seed, 1])

    def sample_rng(self):
        return np.random.default_rng([self.seed, 2])

    def to_dict(self):
        d = asdict(self)
        d["param_box"] = list(self.param_box)
        d["surrogates"] = [sp.to_dict() for sp in self.surrogates]
        return d

    def hash(self, exclude=()):
        d = {k: v for k, v in self.to_dict().items() if k not in exclude}
        blob = json.dumps(d, sort_keys=True, default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        if "schema_version" not in d:
            raise ConfigError("configuration must declare schema_version")
        try:
            for key, sub in (("greedy", GreedyConfig), ("duals", DualConfig),
                             ("sampling", SamplingConfig)):
                if key in d:
                    d[key] = sub(**d[key])
            if "surrogates" in d:
                d["surrogates"] = [SurrogateSpec.from_dict(sp) for sp in d["surrogates"]]
            if "param_box" in d:
                d["param_box"] = tuple(d["param_box"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc


# fields that change which results are computed, or how fast, but not their values
STUDY_INDEPENDENT = ("sweep_sizes", "threads")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (tuple, set)):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def load_config(path):
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)        # JSON is a subset of YAML
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse configuration {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: configuration must be a mapping")
    return ExperimentConfig.from_dict(doc)


def dump_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(json.loads(json.dumps(cfg.to_dict(), default=_jsonable)), fh,
                       sort_keys=False)
