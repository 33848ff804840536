"""Relevance vector machine (sparse Bayesian linear regression).

The predictor is ``y(x) = sum_k w_k phi_k(x) + eps`` with independent priors
``w_k ~ N(0, 1/alpha_k)`` and ``eps ~ N(0, sigma2)``. The precisions and the
noise are re-estimated by evidence maximization; basis functions whose
precision diverges are pruned.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from numpy.polynomial import legendre as npleg
from scipy.spatial.distance import cdist, pdist

from ._base import NormalPrediction, TrainingSet, as_points
from .scaling import FeatureScaling, fit_scaling

logger = logging.getLogger(__name__)

FORMAT_VERSION = "romes.rvm/1"


class RVMTrainingError(RuntimeError):
    pass


def legendre(order, z):
    """Legendre polynomial P_order evaluated at ``z``."""
    c = np.zeros(order + 1)
    c[order] = 1.0
    return npleg.legval(z, c)


@dataclass(frozen=True)
class LegendreBasis:
    """P_0 plus P_1..P_max_order of every feature (additive, no cross terms)."""

    n_features: int
    max_order: int = 4

    def terms(self):
        return [(0, 0)] + [(j, k) for j in range(self.n_features)
                           for k in range(1, self.max_order + 1)]

    def names(self):
        return ["P0" if k == 0 else f"P{k}(x{j + 1})" for j, k in self.terms()]

    def design(self, z):
        return np.column_stack([legendre(k, z[:, j]) for j, k in self.terms()])

    def to_dict(self):
        return {"kind": "legendre", "n_features": self.n_features, "max_order": self.max_order}


@dataclass(frozen=True)
class RBFBasis:
    """A bias term plus Gaussian bumps ``exp(-|z - c|^2 / r^2)``."""

    centers: np.ndarray
    width: float

    def names(self):
        return ["bias"] + [f"rbf{i}" for i in range(len(self.centers))]

    def design(self, z):
        G = np.exp(-cdist(z, self.centers, "sqeuclidean") / self.width ** 2)
        return np.column_stack([np.ones(len(z)), G])

    def to_dict(self):
        return {"kind": "rbf", "centers": np.asarray(self.centers).tolist(), "width": self.width}


def basis_from_dict(d):
    if d["kind"] == "legendre":
        return LegendreBasis(d["n_features"], d["max_order"])
    if d["kind"] == "rbf":
        return RBFBasis(np.asarray(d["centers"], dtype=float), float(d["width"]))
    raise ValueError(f"unknown basis kind {d['kind']!r}")


@dataclass
class RVMConfig:
    basis: str = "legendre"          # or "rbf"
    max_order: int = 4
    rbf_width: float | None = None   # median pairwise distance if None
    prune_threshold: float = 1e12
    tol: float = 1e-6
    max_iter: int = 1000
    noise_floor: float = 1e-12
    noise_variance: float | None = None   # hold sigma2 fixed if given
    feature_scaling: str | None = None    # defaults: legendre -> "legendre", rbf -> "standard"


@dataclass
class RVMModel:
    basis: object
    scaling: FeatureScaling
    active: np.ndarray        # indices into the full basis
    alpha: np.ndarray         # precisions of the active terms
    sigma2: float
    mean: np.ndarray          # posterior weight mean (active terms)
    cov: np.ndarray           # posterior weight covariance
    n_iter: int = 0
    converged: bool = False

    @property
    def noise_variance(self):
        return self.sigma2

    def weights(self):
        """Posterior mean over the full basis, zeros for pruned terms."""
        w = np.zeros(len(self.basis.names()))
        w[self.active] = self.mean
        return w

    def design(self, xstar, scaled=False):
        z = as_points(xstar, self.scaling.offset.shape[0])
        if not scaled:
            z = self.scaling.apply(z)
        return self.basis.design(z)[:, self.active], z

    def predict(self, xstar, scaled=False):
        Phi, z = self.design(xstar, scaled)
        var = np.einsum("ij,jk,ik->i", Phi, self.cov, Phi)
        extr = None
        if isinstance(self.basis, LegendreBasis):
            extr = np.any(np.abs(z) > 1.0, axis=1)
            if np.any(extr):
                logger.debug("%d prediction points outside the Legendre domain", extr.sum())
        return NormalPrediction(mean=Phi @ self.mean, var_mean=np.maximum(var, 0.0),
                                noise_var=self.sigma2, extrapolated=extr)

    def to_dict(self):
        return {"format": FORMAT_VERSION, "basis": self.basis.to_dict(),
                "scaling": self.scaling.to_dict(), "active": self.active.tolist(),
                "alpha": self.alpha.tolist(), "sigma2": self.sigma2,
                "mean": self.mean.tolist(), "cov": self.cov.tolist(),
                "n_iter": self.n_iter, "converged": self.converged}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported RVM format {d.get('format')!r}")
        return cls(basis=basis_from_dict(d["basis"]),
                   scaling=FeatureScaling.from_dict(d["scaling"]),
                   active=np.asarray(d["active"], dtype=int),
                   alpha=np.asarray(d["alpha"], dtype=float), sigma2=float(d["sigma2"]),
                   mean=np.asarray(d["mean"], dtype=float),
                   cov=np.asarray(d["cov"], dtype=float).reshape(len(d["active"]), -1),
                   n_iter=d["n_iter"], converged=d["converged"])


def _posterior(Phi, y, alpha, sigma2):
    """Weight posterior for fixed hyperparameters; ``(mean, cov)``."""
    H = Phi.T @ Phi / sigma2 + np.diag(alpha)
    # symmetric diagonal rescaling keeps the factorization stable when alpha spans many decades
    s = 1.0 / np.sqrt(np.diag(H))
    cf = sla.cho_factor(s[:, None] * H * s[None, :], lower=True)
    cov = s[:, None] * sla.cho_solve(cf, np.eye(len(alpha))) * s[None, :]
    mean = cov @ (Phi.T @ y) / sigma2
    return mean, 0.5 * (cov + cov.T)


def make_basis(x_scaled, cfg):
    if cfg.basis == "legendre":
        return LegendreBasis(x_scaled.shape[1], cfg.max_order)
    if cfg.basis == "rbf":
        width = cfg.rbf_width
        if width is None:
            d = pdist(x_scaled)
            d = d[d > 0]
            width = float(np.median(d)) if d.size else 1.0
        return RBFBasis(x_scaled.copy(), float(width))
    raise ValueError(f"unknown RVM basis {cfg.basis!r}")


def rvm_train(ts, config=None):
    cfg = config or RVMConfig()
    if not isinstance(ts, TrainingSet):
        ts = TrainingSet(*ts)
    mode = cfg.feature_scaling or ("legendre" if cfg.basis == "legendre" else "standard")
    scaling = fit_scaling(ts.x, mode)
    z = scaling.apply(ts.x)
    basis = make_basis(z, cfg)
    Phi_full = basis.design(z)
    y = ts.y
    N = len(y)

    yvar = float(np.var(y))
    scale = yvar if yvar > 0 else max(float(np.mean(y ** 2)), 1.0)
    fixed = cfg.noise_variance is not None
    sigma2 = float(cfg.noise_variance) if fixed else 0.1 * scale
    floor = cfg.noise_floor * scale
    active = np.arange(Phi_full.shape[1])
    colsq = np.sum(Phi_full ** 2, axis=0)
    alpha = np.maximum(colsq, 1e-12) / (N * scale)   # weights of order sqrt(var y)
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        Phi = Phi_full[:, active]
        m, S = _posterior(Phi, y, alpha, sigma2)
        gamma = np.clip(1.0 - alpha * np.diag(S), 0.0, 1.0)
        new_alpha = gamma / np.maximum(m ** 2, 1e-300)
        new_alpha = np.where(gamma <= 0.0, np.inf, new_alpha)
        if fixed:
            new_sigma2 = sigma2
        else:
            resid = float(np.sum((y - Phi @ m) ** 2))
            dof = max(N - float(np.sum(gamma)), 1e-12)
            new_sigma2 = max(resid / dof, floor)

        keep = new_alpha < cfg.prune_threshold
        if not np.any(keep):
            raise RVMTrainingError("all basis functions were pruned")
        with np.errstate(invalid="ignore", over="ignore"):
            rel_a = np.max(np.abs(np.log(new_alpha[keep] / alpha[keep])))
        rel_s = abs(np.log(new_sigma2 / sigma2))
        pruned = not np.all(keep)
        active, alpha, sigma2 = active[keep], new_alpha[keep], new_sigma2
        if not pruned and max(rel_a, rel_s) < cfg.tol:
            converged = True
            break
    if not converged:
        logger.info("RVM stopped after %d sweeps without meeting tol=%g", it, cfg.tol)
    # posterior consistent with the final hyperparameters
    m, S = _posterior(Phi_full[:, active], y, alpha, sigma2)
    return RVMModel(basis=basis, scaling=scaling, active=active, alpha=alpha, sigma2=sigma2,
                    mean=m, cov=S, n_iter=it, converged=converged)


def rvm_predict(model, xstar):
    return model.predict(xstar)


@dataclass(frozen=True)
class EquivalentKernel:
    """k(z, z') = sum_k phi_k(z) phi_k(z') / alpha_k over the active terms."""

    basis: object
    active: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    def _phi(self, z):
        return self.basis.design(z)[:, self.active]

    def __call__(self, a, b):
        return (self._phi(a) / self.alpha) @ self._phi(b).T

    def diag(self, a):
        P = self._phi(a)
        return np.sum(P * P / self.alpha, axis=1)

    def to_dict(self):
        return {"kind": "rvm_equivalent", "basis": self.basis.to_dict(),
                "active": self.active.tolist(), "alpha": self.alpha.tolist()}


def equivalent_kernel(model):
    return EquivalentKernel(model.basis, model.active, model.alpha)
