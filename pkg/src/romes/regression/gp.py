"""Gaussian-process kernel regression with maximum-likelihood hyperparameters.

The covariance is ``k(x, x') + sigma2 * I`` with a unit-amplitude
squared-exponential kernel ``k = exp(-|x - x'|^2 / (2 l2))``. Hyperparameters
``(l2, sigma2)`` maximize the log marginal likelihood over several
Nelder-Mead runs in log space.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize
from scipy.spatial.distance import cdist, pdist

from ._base import NormalPrediction, TrainingSet, as_points
from .scaling import FeatureScaling, fit_scaling

logger = logging.getLogger(__name__)

LOG2PI = np.log(2.0 * np.pi)
FORMAT_VERSION = "romes.gp/1"


class GPTrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SquaredExponential:
    l2: float

    def __call__(self, a, b):
        return np.exp(-0.5 * cdist(a, b, "sqeuclidean") / self.l2)

    def diag(self, a):
        return np.ones(a.shape[0])

    def to_dict(self):
        return {"kind": "squared_exponential", "l2": self.l2}


@dataclass
class GPConfig:
    n_starts: int = 5
    max_iter: int = 500
    seed: int = 0
    noise_floor: float = 1e-12
    jitter: float = 1e-10                  # times trace(K)/N
    feature_scaling: str = "standard"
    targets: str = "center"                # "center", "standardize" or "none"
    log_l2_bounds: tuple = (np.log(1e-4), np.log(1e4))
    log_sigma2_bounds: tuple = (np.log(1e-12), np.log(1e2))


def _factor(Kxx, sigma2, jitter):
    n = Kxx.shape[0]
    C = Kxx + (sigma2 + jitter * np.trace(Kxx) / n) * np.eye(n)
    return sla.cho_factor(C, lower=True)


def log_likelihood(x, y, l2, sigma2, jitter=1e-10, grad=False):
    """Log marginal likelihood of zero-mean GP data; optional gradient in (log l2, log sigma2)."""
    d2 = cdist(x, x, "sqeuclidean")
    Kse = np.exp(-0.5 * d2 / l2)
    try:
        cf = _factor(Kse, sigma2, jitter)
    except np.linalg.LinAlgError:
        return (-np.inf, np.full(2, np.nan)) if grad else -np.inf
    alpha = sla.cho_solve(cf, y)
    n = len(y)
    ll = -0.5 * y @ alpha - np.sum(np.log(np.diag(cf[0]))) - 0.5 * n * LOG2PI
    if not grad:
        return float(ll)
    W = np.outer(alpha, alpha) - sla.cho_solve(cf, np.eye(n))
    dK_dl = Kse * (0.5 * d2 / l2)
    g = np.array([0.5 * np.sum(W * dK_dl), 0.5 * sigma2 * np.trace(W)])
    return float(ll), g


@dataclass
class GPModel:
    kernel: object
    sigma2: float                 # noise variance in working (standardized) units
    x: np.ndarray                 # scaled inputs
    y: np.ndarray                 # working targets
    scaling: FeatureScaling
    y_offset: float = 0.0
    y_scale: float = 1.0
    jitter: float = 1e-10
    log_likelihood: float = np.nan
    _cf: tuple = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        Kxx = self.kernel(self.x, self.x)
        try:
            self._cf = _factor(Kxx, self.sigma2, self.jitter)
        except np.linalg.LinAlgError as exc:
            raise GPTrainingError(f"kernel matrix not SPD: {exc}") from exc
        self._alpha = sla.cho_solve(self._cf, self.y)

    @property
    def noise_variance(self):
        """Inferred noise variance in target units."""
        return self.sigma2 * self.y_scale ** 2

    @property
    def l2(self):
        return getattr(self.kernel, "l2", np.nan)

    def predict(self, xstar, scaled=False):
        xs = as_points(xstar, self.x.shape[1])
        if not scaled:
            xs = self.scaling.apply(xs)
        Ks = self.kernel(xs, self.x)
        mean = Ks @ self._alpha
        v = sla.solve_triangular(self._cf[0], Ks.T, lower=True)
        var = np.maximum(self.kernel.diag(xs) - np.sum(v * v, axis=0), 0.0)
        return NormalPrediction(mean=self.y_offset + self.y_scale * mean,
                                var_mean=self.y_scale ** 2 * var,
                                noise_var=self.noise_variance)

    def to_dict(self):
        return {"format": FORMAT_VERSION, "kernel": self.kernel.to_dict(),
                "sigma2": self.sigma2, "x": self.x.tolist(), "y": self.y.tolist(),
                "scaling": self.scaling.to_dict(), "y_offset": self.y_offset,
                "y_scale": self.y_scale, "jitter": self.jitter,
                "log_likelihood": self.log_likelihood}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported GP format {d.get('format')!r}")
        k = d["kernel"]
        if k["kind"] != "squared_exponential":
            raise ValueError(f"cannot restore kernel {k['kind']!r}")
        return cls(kernel=SquaredExponential(k["l2"]), sigma2=d["sigma2"],
                   x=np.asarray(d["x"], dtype=float), y=np.asarray(d["y"], dtype=float),
                   scaling=FeatureScaling.from_dict(d["scaling"]), y_offset=d["y_offset"],
                   y_scale=d["y_scale"], jitter=d["jitter"],
                   log_likelihood=d["log_likelihood"])


def gp_condition(kernel, x, y, sigma2, scaling=None, jitter=1e-10):
    """GP posterior for fixed kernel and noise, no target transformation."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    scaling = scaling or fit_scaling(x, "identity")
    return GPModel(kernel=kernel, sigma2=sigma2, x=scaling.apply(x),
                   y=np.asarray(y, dtype=float), scaling=scaling, jitter=jitter)


def _start_points(x, y, cfg, rng):
    lo_l, hi_l = cfg.log_l2_bounds
    lo_s, hi_s = cfg.log_sigma2_bounds
    d = pdist(x, "sqeuclidean")
    d = d[d > 0]
    l0 = np.log(np.median(d)) if d.size else 0.0
    s0 = np.log(max(0.1 * np.var(y), np.exp(lo_s)))
    starts = [(np.clip(l0, lo_l, hi_l), np.clip(s0, lo_s, hi_s))]
    while len(starts) < cfg.n_starts:
        starts.append((rng.uniform(lo_l, hi_l), rng.uniform(lo_s, 0.0)))
    return np.array(starts)


def gp_train(ts, config=None):
    cfg = config or GPConfig()
    if not isinstance(ts, TrainingSet):
        ts = TrainingSet(*ts)
    scaling = fit_scaling(ts.x, cfg.feature_scaling)
    x = scaling.apply(ts.x)
    off, scale = 0.0, 1.0
    if cfg.targets in ("center", "standardize"):
        off = float(ts.y.mean())
    if cfg.targets == "standardize":
        sd = float(ts.y.std())
        scale = sd if sd > 0 else 1.0
    elif cfg.targets not in ("center", "none"):
        raise ValueError(f"unknown target normalization {cfg.targets!r}")
    y = (ts.y - off) / scale

    floor = cfg.noise_floor

    def unpack(t):
        return np.exp(t[0]), max(np.exp(t[1]), floor)

    def nll(t):
        l2, s2 = unpack(t)
        ll = log_likelihood(x, y, l2, s2, cfg.jitter)
        return -ll if np.isfinite(ll) else 1e300

    rng = np.random.default_rng(cfg.seed)
    bounds = [cfg.log_l2_bounds, cfg.log_sigma2_bounds]
    best = None
    for t0 in _start_points(x, y, cfg, rng):
        if nll(t0) >= 1e300:
            continue
        res = minimize(nll, t0, method="Nelder-Mead", bounds=bounds,
                       options={"maxiter": cfg.max_iter, "xatol": 1e-6, "fatol": 1e-9})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or best.fun >= 1e300:
        raise GPTrainingError("no start point produced an SPD kernel matrix")
    l2, s2 = unpack(best.x)
    return GPModel(kernel=SquaredExponential(float(l2)), sigma2=float(s2), x=x, y=y,
                   scaling=scaling, y_offset=off, y_scale=scale, jitter=cfg.jitter,
                   log_likelihood=float(-best.fun))


def gp_predict(model, xstar):
    return model.predict(xstar)
