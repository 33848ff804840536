"""Reduced-basis construction, offline/online projection and error bounds.

Both the primal problem ``A(mu) u = f`` and the dual problems
``A(mu) y = -g`` are handled by :class:`ProjectedSystem`, which stores the
Galerkin-projected affine terms and the parameter-independent blocks needed
to evaluate residual norms without touching n-dimensional data online.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import hifi

logger = logging.getLogger(__name__)

FORMAT_VERSION = "romes.reduced_model/1"
GS_TOL = 1e-10
CLAMP_TOL = 1e-11  # relative to the largest term of the expansion


class BasisError(RuntimeError):
    pass


class GramianError(RuntimeError):
    pass


def coercivity_lower_bound(mu):
    """min_q mu_q / mu_ref_q with mu_ref = (1,...,1)."""
    return float(np.min(mu))


def continuity_upper_bound(mu):
    return float(np.max(mu))


@dataclass
class ReducedBasis:
    V: np.ndarray
    snapshot_inputs: list
    seed: int | None = None
    skipped: list = field(default_factory=list)
    max_bounds: list = field(default_factory=list)

    @property
    def p(self):
        return self.V.shape[1]


@dataclass
class ReducedState:
    uhat: np.ndarray
    mu: np.ndarray


@dataclass
class BoundSet:
    energy: float          # upper bound, energy norm
    xnorm: float           # upper bound, X-norm
    output: float          # upper bound, compliant output
    energy_lb: float
    xnorm_lb: float
    output_lb: float
    residual_riesz: float
    residual_euclid: float
    alpha_lb: float
    gamma_ub: float


class _KSolver:
    """One sparse factorization of the inner-product matrix, reused for all Riesz solves."""

    def __init__(self, op):
        try:
            self._lu = spla.splu(op.inner_product.tocsc())
        except RuntimeError as exc:
            raise GramianError(f"inner-product matrix is singular: {exc}") from exc
        d = self._lu.U.diagonal()
        if np.any(d <= 0):
            raise GramianError("inner-product matrix is not positive definite")

    def solve(self, b):
        return self._lu.solve(b)


class _ColumnCache:
    """Per-column A^q w and K^-1 A^q w for a growing basis."""

    def __init__(self, op, ksolver):
        self.op = op
        self.ksolver = ksolver
        self.AW = [[] for _ in op.components]
        self.ZW = [[] for _ in op.components]

    def extend(self, W):
        for j in range(len(self.AW[0]), W.shape[1]):
            w = W[:, j]
            for q, Aq in enumerate(self.op.components):
                aw = Aq @ w
                self.AW[q].append(aw)
                self.ZW[q].append(self.ksolver.solve(aw))

    def arrays(self, p):
        n = self.op.n
        AW = np.stack([np.column_stack(c[:p]) if p else np.zeros((n, 0)) for c in self.AW])
        ZW = np.stack([np.column_stack(c[:p]) if p else np.zeros((n, 0)) for c in self.ZW])
        return AW, ZW


@dataclass
class ProjectedSystem:
    """Galerkin projection of ``sum_q mu_q A^q x = b`` onto span(W).

    Residual convention: ``res(W c; mu) = sum_q mu_q A^q W c - b``.
    """

    ops: np.ndarray          # (Q, p, p)  W^T A^q W
    rhs: np.ndarray          # (p,)       W^T b
    riesz_aa: np.ndarray     # (Q, Q, p, p)  (K^-1 A^q W)^T A^q' W
    riesz_ba: np.ndarray     # (Q, p)        (K^-1 b)^T A^q W
    riesz_bb: float
    euclid_aa: np.ndarray
    euclid_ba: np.ndarray
    euclid_bb: float
    basis: np.ndarray | None = None

    @property
    def p(self):
        return self.rhs.shape[0]

    def matrix(self, mu):
        return np.tensordot(mu, self.ops, axes=1)

    def solve(self, mu):
        mu = np.asarray(mu, dtype=float)
        M = self.matrix(mu)
        if self.p == 0:
            return np.zeros(0)
        try:
            c, low = sla.cho_factor(M)
        except np.linalg.LinAlgError as exc:
            raise BasisError(f"reduced matrix not SPD at mu={mu}: {exc}") from exc
        return sla.cho_solve((c, low), self.rhs)

    def residual_norm(self, mu, c, weighting="riesz"):
        mu = np.asarray(mu, dtype=float)
        if weighting == "riesz":
            G, g, s = self.riesz_aa, self.riesz_ba, self.riesz_bb
        elif weighting == "euclid":
            G, g, s = self.euclid_aa, self.euclid_ba, self.euclid_bb
        else:
            raise ValueError(f"unknown weighting {weighting!r}")
        if self.p:
            Q = len(mu)
            M = (np.outer(mu, mu).ravel() @ G.reshape(Q * Q, -1)).reshape(self.p, self.p)
            quad = float(c @ M @ c)
        else:
            quad = 0.0
        lin = float(2.0 * (mu @ g) @ c) if self.p else 0.0
        sq = quad - lin + s
        if sq < 0.0:
            scale = max(abs(quad), abs(lin), abs(s))
            if sq < -CLAMP_TOL * scale:
                raise GramianError(f"negative squared residual norm {sq:.3e} (scale {scale:.3e})")
            sq = 0.0
        return float(np.sqrt(sq))


def _project(op, W, b, ksolver, cache=None):
    if cache is None:
        cache = _ColumnCache(op, ksolver)
    cache.extend(W)
    p = W.shape[1]
    AW, ZW = cache.arrays(p)
    zb = ksolver.solve(b)
    Q = len(op.components)
    ops = np.stack([W.T @ AW[q] for q in range(Q)])
    ops = 0.5 * (ops + ops.transpose(0, 2, 1))
    # (n, Q*p) column blocks so that the Gramians are single GEMMs
    A2 = AW.transpose(1, 0, 2).reshape(op.n, Q * p)
    Z2 = ZW.transpose(1, 0, 2).reshape(op.n, Q * p)

    def blocks(L, R):
        return (L.T @ R).reshape(Q, p, Q, p).transpose(0, 2, 1, 3)

    return ProjectedSystem(
        ops=ops,
        rhs=W.T @ b,
        riesz_aa=blocks(Z2, A2),
        riesz_ba=(zb @ A2).reshape(Q, p),
        riesz_bb=float(zb @ b),
        euclid_aa=blocks(A2, A2),
        euclid_ba=(b @ A2).reshape(Q, p),
        euclid_bb=float(b @ b),
        basis=W,
    )


def _k_orthonormalize(W, K, v):
    """Modified Gram-Schmidt of ``v`` against the columns of ``W``, run twice."""
    norm0 = np.sqrt(max(v @ (K @ v), 0.0))
    if norm0 == 0.0:
        return None
    v = v.copy()
    for _ in range(2):
        for j in range(W.shape[1]):
            w = W[:, j]
            v -= (w @ (K @ v)) * w
    nrm = np.sqrt(max(v @ (K @ v), 0.0))
    if nrm < GS_TOL * norm0:
        return None
    return v / nrm


def _greedy(op, candidates, tol, max_p, seed, b, ksolver=None, criterion="xnorm"):
    candidates = [hifi.check_input(mu) for mu in candidates]
    if not candidates:
        raise ValueError("empty candidate set")
    if tol <= 0:
        raise ValueError("tol must be positive")
    ksolver = ksolver or _KSolver(op)
    K = op.inner_product
    cache = _ColumnCache(op, ksolver)
    rng = np.random.default_rng(seed)
    idx = int(rng.integers(len(candidates)))
    W = np.zeros((op.n, 0))
    chosen, skipped, history = [], [], []
    excluded = set()
    alphas = np.array([coercivity_lower_bound(mu) for mu in candidates])
    if criterion == "xnorm":
        scale = 1.0 / alphas
    elif criterion == "energy":
        scale = 1.0 / np.sqrt(alphas)
    else:
        raise ValueError(f"unknown greedy criterion {criterion!r}")

    while True:
        mu = candidates[idx]
        snap = hifi.solve_system(op, mu, b)
        w = _k_orthonormalize(W, K, snap)
        excluded.add(idx)
        if w is None:
            logger.info("skipping linearly dependent snapshot at candidate %d", idx)
            skipped.append(mu.tolist())
        else:
            W = np.column_stack([W, w])
            chosen.append(mu.tolist())
        sys = _project(op, W, b, ksolver, cache)
        bounds = np.empty(len(candidates))
        for i, m in enumerate(candidates):
            c = sys.solve(m)
            bounds[i] = sys.residual_norm(m, c) * scale[i]
        if w is not None:
            history.append(float(bounds.max()))
        logger.info("greedy p=%d max bound %.3e", W.shape[1], bounds.max())
        if bounds.max() <= tol or W.shape[1] >= max_p:
            break
        order = np.argsort(-bounds)
        nxt = [i for i in order if i not in excluded]
        if not nxt:
            break
        idx = int(nxt[0])
    return ReducedBasis(V=W, snapshot_inputs=chosen, seed=seed, skipped=skipped,
                        max_bounds=history), sys


def greedy_build(op, candidate_set, tol, max_p, seed=None, criterion="xnorm"):
    """Greedy primal basis.

    ``criterion`` selects the bound maximized over the candidates: ``"xnorm"``
    (r / alpha_LB) or ``"energy"`` (r / sqrt(alpha_LB)).
    """
    basis, _ = _greedy(op, candidate_set, tol, max_p, seed, op.rhs, criterion=criterion)
    return basis


def greedy_build_dual(op, output_id, candidate_set, tol, max_p, seed=None, criterion="xnorm"):
    """Greedy basis for ``A(mu) y = -g``, same bound criteria as :func:`greedy_build`."""
    if output_id not in op.outputs:
        raise KeyError(f"unknown output {output_id!r}")
    basis, _ = _greedy(op, candidate_set, tol, max_p, seed, -op.outputs[output_id],
                       criterion=criterion)
    return basis


@dataclass
class DualModel:
    output_id: str
    basis: ReducedBasis
    system: ProjectedSystem          # dual problem, b = -g
    cross: np.ndarray                # (Q, p_y, p)  W_y^T A^q V
    cross_rhs: np.ndarray            # (p_y,)       W_y^T f

    @property
    def p(self):
        return self.system.p


@dataclass
class ReducedModel:
    basis: ReducedBasis
    primal: ProjectedSystem
    outputs: dict                    # output id -> V^T g
    duals: dict = field(default_factory=dict)

    @property
    def p(self):
        return self.primal.p

    def solve(self, mu):
        mu = hifi.check_input(mu)
        return ReducedState(uhat=self.primal.solve(mu), mu=mu)

    def reconstruct(self, uhat):
        return self.basis.V @ uhat

    def output(self, uhat, output_id="compliant"):
        return float(self.outputs[output_id] @ uhat)

    def residual_norm(self, mu, uhat, weighting="riesz"):
        return self.primal.residual_norm(mu, uhat, weighting)

    def error_bounds(self, mu, uhat):
        r = self.residual_norm(mu, uhat, "riesz")
        a = coercivity_lower_bound(mu)
        g = continuity_upper_bound(mu)
        return BoundSet(
            energy=r / np.sqrt(a), xnorm=r / a, output=r * r / a,
            energy_lb=r / np.sqrt(g), xnorm_lb=r / g, output_lb=r * r / g,
            residual_riesz=r, residual_euclid=self.residual_norm(mu, uhat, "euclid"),
            alpha_lb=a, gamma_ub=g,
        )

    def add_dual(self, op, output_id, dual_basis, ksolver=None, key=None):
        ksolver = ksolver or _KSolver(op)
        Wy = dual_basis.V
        g = op.outputs[output_id]
        V = self.basis.V
        cross = np.stack([Wy.T @ (Aq @ V) for Aq in op.components])
        dual = DualModel(output_id=output_id, basis=dual_basis,
                         system=_project(op, Wy, -g, ksolver), cross=cross,
                         cross_rhs=Wy.T @ op.rhs)
        self.duals[key or output_id] = dual
        return dual

    def _dual(self, key):
        try:
            return self.duals[key]
        except KeyError:
            raise KeyError(f"no dual model registered under {key!r}") from None

    def dual_solve(self, key, mu):
        return self._dual(key).system.solve(np.asarray(mu, dtype=float))

    def dual_weighted_residual(self, key, mu, uhat=None):
        """y_red^T res(V uhat; mu), evaluated from projected blocks only."""
        dual = self._dual(key)
        mu = np.asarray(mu, dtype=float)
        if uhat is None:
            uhat = self.primal.solve(mu)
        yhat = dual.system.solve(mu)
        return float(yhat @ (np.tensordot(mu, dual.cross, axes=1) @ uhat - dual.cross_rhs))

    def output_bound_dual(self, key, mu, uhat=None):
        """r * r_g / alpha_LB; bounds the DWR-corrected output error."""
        dual = self._dual(key)
        mu = np.asarray(mu, dtype=float)
        if uhat is None:
            uhat = self.primal.solve(mu)
        r = self.residual_norm(mu, uhat, "riesz")
        rg = dual.system.residual_norm(mu, dual.system.solve(mu), "riesz")
        return r * rg / coercivity_lower_bound(mu)

    # -- serialization --------------------------------------------------

    def to_dict(self, include_basis=True):
        def sysd(s):
            d = {k: np.asarray(getattr(s, k)).tolist() for k in
                 ("ops", "rhs", "riesz_aa", "riesz_ba", "euclid_aa", "euclid_ba")}
            d["riesz_bb"] = s.riesz_bb
            d["euclid_bb"] = s.euclid_bb
            return d

        def based(b):
            d = {"snapshot_inputs": b.snapshot_inputs, "seed": b.seed,
                 "skipped": b.skipped, "max_bounds": b.max_bounds, "p": b.p}
            if include_basis:
                d["V"] = b.V.tolist()
            return d

        return {
            "format": FORMAT_VERSION,
            "basis": based(self.basis),
            "primal": sysd(self.primal),
            "outputs": {k: v.tolist() for k, v in self.outputs.items()},
            "duals": {k: {"output_id": d.output_id, "basis": based(d.basis),
                          "system": sysd(d.system), "cross": d.cross.tolist(),
                          "cross_rhs": d.cross_rhs.tolist()}
                      for k, d in self.duals.items()},
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported reduced-model format {doc.get('format')!r}")

        def sysl(d, basis):
            arr = {k: np.asarray(d[k], dtype=float) for k in
                   ("ops", "rhs", "riesz_aa", "riesz_ba", "euclid_aa", "euclid_ba")}
            p = arr["rhs"].shape[0]
            q = len(arr["ops"])
            for k in ("riesz_aa", "euclid_aa"):
                arr[k] = arr[k].reshape(q, q, p, p)
            for k in ("riesz_ba", "euclid_ba"):
                arr[k] = arr[k].reshape(q, p)
            arr["ops"] = arr["ops"].reshape(q, p, p)
            return ProjectedSystem(riesz_bb=d["riesz_bb"], euclid_bb=d["euclid_bb"],
                                   basis=basis, **arr)

        def basl(d):
            V = np.asarray(d["V"], dtype=float) if "V" in d else np.zeros((0, d["p"]))
            return ReducedBasis(V=V, snapshot_inputs=d["snapshot_inputs"], seed=d["seed"],
                                skipped=d["skipped"], max_bounds=d["max_bounds"])

        basis = basl(doc["basis"])
        rm = cls(basis=basis, primal=sysl(doc["primal"], basis.V),
                 outputs={k: np.asarray(v) for k, v in doc["outputs"].items()})
        for k, d in doc["duals"].items():
            b = basl(d["basis"])
            p = rm.p
            cross = np.asarray(d["cross"], dtype=float).reshape(-1, b.p, p)
            rm.duals[k] = DualModel(output_id=d["output_id"], basis=b,
                                    system=sysl(d["system"], b.V), cross=cross,
                                    cross_rhs=np.asarray(d["cross_rhs"], dtype=float))
        return rm

    def save(self, path, include_basis=True):
        with open(path, "w") as fh:
            json.dump(self.to_dict(include_basis), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def offline_project(op, basis, ksolver=None):
    """Assemble every parameter-independent reduced block for ``basis``."""
    ksolver = ksolver or _KSolver(op)
    V = basis.V
    primal = _project(op, V, op.rhs, ksolver)
    outputs = {k: V.T @ g for k, g in op.outputs.items()}
    return ReducedModel(basis=basis, primal=primal, outputs=outputs)


def solve_reduced(rm, mu):
    return rm.solve(mu)


def residual_norm(rm, mu, uhat, weighting="riesz"):
    return rm.residual_norm(mu, uhat, weighting)


def error_bounds(rm, mu, uhat):
    return rm.error_bounds(mu, uhat)


def dual_weighted_residual(rm, key, mu, uhat=None):
    return rm.dual_weighted_residual(key, mu, uhat)


def output_bound_dual(rm, key, mu, uhat=None):
    return rm.output_bound_dual(key, mu, uhat)
