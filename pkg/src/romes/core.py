"""Error surrogates built from cheap indicators, and their validation statistics.

A surrogate maps an indicator vector ``rho(mu)`` to a normal distribution
``N(nu, var)`` over the transformed error ``d(delta)``. With ``d = log`` the
error itself is log-normal and is summarized by its mode.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import erfinv

from . import hifi
from .regression import (GPConfig, GPModel, RVMConfig, RVMModel, TrainingSet, gp_train,
                         rvm_train)

logger = logging.getLogger(__name__)

ZERO_ERROR_FLOOR = 1e-14
N_PARAMS = hifi.N_BLOCKS

INDICATOR_KINDS = ("log_residual_euclid", "log_residual_riesz", "log_energy_bound", "dwr",
                   "system_inputs")
ERROR_KINDS = ("energy", "xnorm", "output_compliant", "output_1", "output_2")
NORMED_ERRORS = ("energy", "xnorm", "output_compliant")
BOUND_COLUMNS = ("bound_energy", "bound_energy_lb", "bound_output", "bound_output_lb")
MU_COLUMNS = tuple(f"mu_{i}" for i in range(1, N_PARAMS + 1))
SPLITS = ("train", "validation", "unused")


class SurrogateError(ValueError):
    pass


def output_of_error(kind):
    """Operator output id whose error is ``kind``."""
    if kind == "output_compliant":
        return "compliant"
    if kind in ("output_1", "output_2"):
        return kind
    raise KeyError(f"error kind {kind!r} is not an output error")


# -- ingredients ---------------------------------------------------------------

@dataclass(frozen=True)
class IndicatorSpec:
    kind: str
    dual_key: str | None = None      # registered dual model, e.g. "output_1@0.1"

    def __post_init__(self):
        if self.kind not in INDICATOR_KINDS:
            raise ValueError(f"unknown indicator {self.kind!r}; expected one of {INDICATOR_KINDS}")
        if (self.kind == "dwr") != (self.dual_key is not None):
            raise ValueError("a dual key is required for, and only for, dwr indicators")

    @property
    def q(self):
        return N_PARAMS if self.kind == "system_inputs" else 1

    @property
    def columns(self):
        if self.kind == "system_inputs":
            return MU_COLUMNS
        if self.kind == "dwr":
            return (f"dwr_{self.dual_key}",)
        return ({"log_residual_euclid": "log_res_euclid",
                 "log_residual_riesz": "log_res_riesz",
                 "log_energy_bound": "log_bound_energy"}[self.kind],)


def dual_key(output_id, tol):
    return f"{output_id}@{tol:g}"


@dataclass(frozen=True)
class Transformation:
    kind: str = "log"

    def __post_init__(self):
        if self.kind not in ("log", "identity"):
            raise ValueError(f"unknown transformation {self.kind!r}")

    def forward(self, delta):
        delta = np.asarray(delta, dtype=float)
        if self.kind == "identity":
            return delta
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(delta)

    def inverse(self, z):
        return np.exp(z) if self.kind == "log" else np.asarray(z, dtype=float)

    def mode(self, nu, var):
        """Mode of ``d^-1(Z)`` for ``Z ~ N(nu, var)``."""
        nu = np.asarray(nu, dtype=float)
        return np.exp(nu - var) if self.kind == "log" else nu

    def median(self, nu, var):
        return self.inverse(nu)


@dataclass(frozen=True)
class SurrogateSpec:
    name: str
    indicator: IndicatorSpec
    error: str
    transform: Transformation = Transformation("log")
    regressor: str = "gp"
    variance_mode: str = "full"       # "full" (sigma_bar^2) or "noise" (sigma^2)
    gp: GPConfig = field(default_factory=GPConfig)
    rvm: RVMConfig = field(default_factory=RVMConfig)

    def __post_init__(self):
        if self.error not in ERROR_KINDS:
            raise ValueError(f"unknown error kind {self.error!r}; expected one of {ERROR_KINDS}")
        if self.regressor not in ("gp", "rvm"):
            raise ValueError(f"unknown regressor {self.regressor!r}")
        if self.variance_mode not in ("full", "noise"):
            raise ValueError(f"unknown variance mode {self.variance_mode!r}")
        if self.transform.kind == "log" and self.error not in NORMED_ERRORS:
            raise ValueError(f"log transformation needs a nonnegative error, {self.error!r} is signed")

    def to_dict(self):
        d = asdict(self)
        d["indicator"] = asdict(self.indicator)
        d["transform"] = self.transform.kind
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        ind = d.pop("indicator")
        if isinstance(ind, str):
            ind = {"kind": ind}
        gp = GPConfig(**{k: tuple(v) if isinstance(v, list) else v
                         for k, v in (d.pop("gp", None) or {}).items()})
        rvm = RVMConfig(**(d.pop("rvm", None) or {}))
        return cls(indicator=IndicatorSpec(**ind),
                   transform=Transformation(d.pop("transform", "log")), gp=gp, rvm=rvm, **d)


# -- samples ---------------------------------------------------------------------

@dataclass
class SampleTable:
    mu: np.ndarray                    # (M, 9)
    indicators: dict                  # column -> (M,)
    errors: dict                      # "energy", ... -> (M,)
    bounds: dict                      # bound column -> (M,)
    split: np.ndarray                 # (M,) of "train" / "validation" / "unused"

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).reshape(-1, N_PARAMS)
        self.split = np.asarray(self.split, dtype=object)
        bad = set(self.split.tolist()) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split labels {sorted(bad)}")

    def __len__(self):
        return self.mu.shape[0]

    @property
    def columns(self):
        return (list(MU_COLUMNS) + list(self.indicators)
                + [f"err_{k}" for k in self.errors] + list(self.bounds) + ["split"])

    def column(self, name):
        if name in MU_COLUMNS:
            return self.mu[:, MU_COLUMNS.index(name)]
        if name in self.indicators:
            return self.indicators[name]
        if name.startswith("err_") and name[4:] in self.errors:
            return self.errors[name[4:]]
        if name in self.bounds:
            return self.bounds[name]
        raise KeyError(f"no column {name!r} in sample table")

    def features(self, indicator):
        missing = [c for c in indicator.columns if c not in MU_COLUMNS and c not in self.indicators]
        if missing:
            raise KeyError(f"sample table lacks indicator columns {missing}")
        return np.column_stack([self.column(c) for c in indicator.columns])

    def rows(self, split):
        return np.flatnonzero(self.split == split)

    def check_split(self):
        """Training and validation inputs must be disjoint."""
        tr = {tuple(r) for r in self.mu[self.rows("train")]}
        va = {tuple(r) for r in self.mu[self.rows("validation")]}
        common = tr & va
        if common:
            raise ValueError(f"{len(common)} input points appear in both splits")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            cols = [self.column(c) for c in self.columns[:-1]]
            for i in range(len(self)):
                w.writerow([repr(float(c[i])) for c in cols] + [self.split[i]])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            data = list(r)
        if header[:N_PARAMS] != list(MU_COLUMNS) or header[-1] != "split":
            raise ValueError(f"{path}: unexpected sample table header")
        vals = np.array([[float(x) for x in row[:-1]] for row in data]).reshape(len(data),
                                                                          len(header) - 1)
        split = np.array([row[-1] for row in data], dtype=object)
        ind, err, bnd = {}, {}, {}
        for j, name in enumerate(header[:-1]):
            if j < N_PARAMS:
                continue
            if name.startswith("err_"):
                err[name[4:]] = vals[:, j]
            elif name in BOUND_COLUMNS:
                bnd[name] = vals[:, j]
            else:
                ind[name] = vals[:, j]
        return cls(mu=vals[:, :N_PARAMS], indicators=ind, errors=err, bounds=bnd, split=split)


def compute_indicators(rm, mu, uhat, bounds=None, dual_keys=()):
    """Every scalar indicator column at ``mu`` from reduced quantities only."""
    b = bounds or rm.error_bounds(mu, uhat)
    with np.errstate(divide="ignore"):
        out = {"log_res_euclid": float(np.log(b.residual_euclid)),
               "log_res_riesz": float(np.log(b.residual_riesz)),
               "log_bound_energy": float(np.log(b.energy))}
    for key in dual_keys:
        out[f"dwr_{key}"] = rm.dual_weighted_residual(key, mu, uhat)
    return out


def split_labels(n_rows, n_train, n_validation):
    if n_train + n_validation > n_rows:
        raise ValueError(f"train ({n_train}) + validation ({n_validation}) exceeds {n_rows} rows")
    lab = np.full(n_rows, "unused", dtype=object)
    lab[:n_train] = "train"
    lab[n_train:n_train + n_validation] = "validation"
    return lab


def _sample_row(op, rm, mu, dual_keys):
    u = hifi.solve_hifi(op, mu)
    st = rm.solve(mu)
    e = u - rm.reconstruct(st.uhat)
    b = rm.error_bounds(mu, st.uhat)
    err = {"energy": hifi.norm(op, mu, e), "xnorm": hifi.norm(op, None, e)}
    for oid in op.outputs:
        name = "output_compliant" if oid == "compliant" else oid
        err[name] = float(op.outputs[oid] @ e)
    bnd = {"bound_energy": b.energy, "bound_energy_lb": b.energy_lb,
           "bound_output": b.output, "bound_output_lb": b.output_lb}
    return compute_indicators(rm, mu, st.uhat, b, dual_keys), err, bnd


def collect_samples(op, rm, points, n_train=0, n_validation=0, dual_keys=None, threads=1):
    """Evaluate errors, indicators and bounds at every input point.

    Rows whose high-fidelity solve fails are dropped with a warning; the
    split labels are assigned to the surviving rows in order.
    """
    points = np.asarray(points, dtype=float).reshape(-1, N_PARAMS)
    keys = tuple(rm.duals) if dual_keys is None else tuple(dual_keys)

    def work(mu):
        try:
            return _sample_row(op, rm, mu, keys)
        except hifi.SolverError as exc:
            logger.warning("solve failed at mu=%s: %s; row excluded", mu.tolist(), exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(work, points))
    else:
        results = [work(mu) for mu in points]
    ok = [i for i, r in enumerate(results) if r is not None]
    res = [results[i] for i in ok]

    def stack(j, names):
        return {k: np.array([r[j][k] for r in res], dtype=float) for k in names}

    ind_names = ["log_res_euclid", "log_res_riesz", "log_bound_energy"] + [f"dwr_{k}" for k in keys]
    err_names = ["energy", "xnorm"] + ["output_compliant" if o == "compliant" else o
                                       for o in op.outputs]
    table = SampleTable(mu=points[ok], indicators=stack(0, ind_names),
                        errors=stack(1, err_names), bounds=stack(2, BOUND_COLUMNS),
                        split=split_labels(len(ok), min(n_train, len(ok)),
                                           min(n_validation, max(len(ok) - n_train, 0))))
    return table


# -- surrogates ------------------------------------------------------------------

@dataclass
class ErrorPrediction:
    """Normal law N(nu, var) of the transformed error at each query point."""

    nu: np.ndarray
    var: np.ndarray
    noise_var: float
    transform: Transformation

    @property
    def std(self):
        return np.sqrt(self.var)

    def mode(self):
        return self.transform.mode(self.nu, self.var)

    def median(self):
        return self.transform.median(self.nu, self.var)

    def interval(self, omega):
        """Central omega-interval of the transformed error."""
        half = math.sqrt(2.0) * self.std * erfinv(omega)
        return self.nu - half, self.nu + half


def rigor_margin(std, c):
    if not 0.0 < c < 1.0:
        raise ValueError(f"rigor level c={c} must lie strictly between 0 and 1")
    return math.sqrt(2.0) * np.asarray(std) * erfinv(2.0 * c - 1.0)


def rigor_shift(pred, c):
    """Shift the mean so that P(d(delta) <= shifted mean) = c under the prediction."""
    return replace(pred, nu=pred.nu + rigor_margin(pred.std, c))


@dataclass
class ErrorSurrogate:
    spec: SurrogateSpec
    model: object                     # GPModel or RVMModel
    n_train: int
    excluded: list = field(default_factory=list)

    def predict(self, rho):
        p = self.model.predict(rho)
        var = p.variance(self.spec.variance_mode)
        return ErrorPrediction(nu=p.mean, var=np.asarray(var, dtype=float),
                               noise_var=p.noise_var, transform=self.spec.transform)

    def to_dict(self):
        return {"format": "romes.surrogate/1", "spec": self.spec.to_dict(),
                "model": self.model.to_dict(), "n_train": self.n_train,
                "excluded": self.excluded}

    @classmethod
    def from_dict(cls, d):
        spec = SurrogateSpec.from_dict(d["spec"])
        model = (GPModel if spec.regressor == "gp" else RVMModel).from_dict(d["model"])
        return cls(spec=spec, model=model, n_train=d["n_train"], excluded=d["excluded"])


def usable_rows(table, spec, rows):
    """Split ``rows`` into (kept, dropped) for this spec.

    Rows with non-finite indicators or, under ``log``, errors at or below the
    zero floor (snapshot points) are dropped. Negative errors under ``log``
    raise.
    """
    x = table.features(spec.indicator)[rows]
    y = table.errors[spec.error][rows]
    if spec.transform.kind == "log":
        neg = rows[y < -ZERO_ERROR_FLOOR]
        if neg.size:
            raise SurrogateError(f"log transformation of negative {spec.error} errors "
                                 f"in rows {neg[:20].tolist()}")
    ok = np.all(np.isfinite(x), axis=1) & np.isfinite(y)
    if spec.transform.kind == "log":
        ok &= y > ZERO_ERROR_FLOOR
    return rows[ok], rows[~ok]


def train_surrogate(table, spec, n_train=None):
    """Train on the first ``n_train`` training rows (all of them by default)."""
    rows = table.rows("train")
    if n_train is not None:
        if n_train > len(rows):
            raise SurrogateError(f"requested {n_train} training rows, table has {len(rows)}")
        rows = rows[:n_train]
    if rows.size == 0:
        raise SurrogateError("training split is empty")
    kept, dropped = usable_rows(table, spec, rows)
    if dropped.size:
        logger.warning("%s: %d training rows excluded (zero error or non-finite indicator)",
                       spec.name, dropped.size)
    x = table.features(spec.indicator)[kept]
    y = spec.transform.forward(table.errors[spec.error][kept])
    ts = TrainingSet(x, y)
    model = gp_train(ts, spec.gp) if spec.regressor == "gp" else rvm_train(ts, spec.rvm)
    return ErrorSurrogate(spec=spec, model=model, n_train=len(rows),
                          excluded=dropped.tolist())


def predict_error(s, rho):
    return s.predict(rho)


def _validation(s, table):
    rows = table.rows("validation")
    if rows.size == 0:
        raise SurrogateError("validation split is empty")
    kept, dropped = usable_rows(table, s.spec, rows)
    pred = s.predict(table.features(s.spec.indicator)[kept])
    delta = table.errors[s.spec.error][kept]
    return kept, dropped, pred, delta


def validate_confidence(s, table, omegas):
    """Observed coverage of central omega-intervals, for both variance modes."""
    kept, _, _, delta = _validation(s, table)
    p = s.model.predict(table.features(s.spec.indicator)[kept])
    z = s.spec.transform.forward(delta)
    out = {}
    for mode in ("full", "noise"):
        ep = ErrorPrediction(p.mean, np.asarray(p.variance(mode), dtype=float), p.noise_var,
                             s.spec.transform)
        cov = []
        for w in omegas:
            if w <= 0.0:
                cov.append(0.0)
                continue
            lo, hi = ep.interval(w)
            cov.append(float(np.mean((z >= lo) & (z <= hi))))
        out[mode] = dict(zip(map(float, omegas), cov))
    return out


def deviation_samples(s, table):
    """D = d(delta) - nu over the validation rows, and the inferred noise variance."""
    _, _, pred, delta = _validation(s, table)
    return s.spec.transform.forward(delta) - pred.nu, pred.noise_var


def effectivity(s, c, table):
    """mode of the c-shifted surrogate divided by the true error, per validation row."""
    if s.spec.error not in NORMED_ERRORS:
        raise SurrogateError(f"effectivity needs a normed error, not {s.spec.error!r}")
    _, _, pred, delta = _validation(s, table)
    return rigor_shift(pred, c).mode() / delta


def expected_improvement(s, table):
    """|delta - mode| / |delta| per validation row; zero errors are excluded."""
    _, _, pred, delta = _validation(s, table)
    nz = np.abs(delta) > 0
    if not np.all(nz):
        logger.warning("%d rows with zero output error excluded", int((~nz).sum()))
    return np.abs(delta[nz] - pred.mode()[nz]) / np.abs(delta[nz])


def overestimation_frequency(s, c, table):
    """Fraction of validation rows where the c-shifted median exceeds d(delta)."""
    _, _, pred, delta = _validation(s, table)
    shifted = rigor_shift(pred, c)
    return float(np.mean(shifted.nu > s.spec.transform.forward(delta)))


@dataclass(frozen=True)
class UniformBaseline:
    """Uniform law on [lower, upper]; summarized by the midpoint."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, dtype=float), np.asarray(self.upper, dtype=float)
        if np.any(lo > hi):
            raise ValueError("uniform baseline with lower bound above upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def midpoint(self):
        return 0.5 * (self.lower + self.upper)

    def contains(self, delta):
        return (self.lower <= delta) & (delta <= self.upper)


def uniform_baseline(lower, upper):
    return UniformBaseline(lower, upper)


def corrected_output(rm, s, mu):
    """Reduced output plus the surrogate mode; reduced quantities only."""
    oid = output_of_error(s.spec.error)
    st = rm.solve(mu)
    if s.spec.indicator.kind == "system_inputs":
        rho = np.asarray(mu, dtype=float)[None, :]
    else:
        keys = (s.spec.indicator.dual_key,) if s.spec.indicator.kind == "dwr" else ()
        ind = compute_indicators(rm, st.mu, st.uhat, dual_keys=keys)
        rho = np.array([[ind[c] for c in s.spec.indicator.columns]])
    return rm.output(st.uhat, oid) + float(s.predict(rho).mode()[0])


# -- statistics and reports ----------------------------------------------------

def describe(x):
    """mean, median, unbiased std, min, max and count."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return {"count": 0, "mean": None, "median": None, "std": None, "min": None, "max": None}
    return {"count": int(x.size), "mean": float(np.mean(x)), "median": float(np.median(x)),
            "std": float(np.std(x, ddof=1)) if x.size > 1 else 0.0,
            "min": float(np.min(x)), "max": float(np.max(x))}


@dataclass
class ValidationReport:
    spec: str
    n_train: int
    n_validation: int
    n_excluded: int
    sigma2: float
    coverage: dict                    # variance mode -> {omega: c_obs}
    c_validation: dict                # c -> frequency
    effectivity: dict = field(default_factory=dict)   # c -> describe()
    improvement: dict | None = None
    baselines: dict = field(default_factory=dict)
    deviations: np.ndarray = field(default=None, repr=False)

    def to_dict(self, with_deviations=False):
        d = {k: v for k, v in asdict(self).items() if k != "deviations"}
        d["coverage"] = {m: {repr(k): v for k, v in c.items()} for m, c in self.coverage.items()}
        d["c_validation"] = {repr(k): v for k, v in self.c_validation.items()}
        d["effectivity"] = {repr(k): v for k, v in self.effectivity.items()}
        if with_deviations and self.deviations is not None:
            d["deviations"] = self.deviations.tolist()
        return d


def baseline_statistics(table, error):
    """Statistics of the training-free baselines over the validation rows.

    Baselines whose bound columns are absent from the table are skipped.
    """
    rows = table.rows("validation")
    out = {}
    if error == "energy" and "bound_energy" in table.bounds:
        d = table.errors["energy"][rows]
        nz = d > 0
        out["rb_bound_effectivity"] = describe(table.bounds["bound_energy"][rows][nz] / d[nz])
    if error == "output_compliant" and {"bound_output", "bound_output_lb"} <= set(table.bounds):
        d = table.errors["output_compliant"][rows]
        nz = d > 0
        uni = uniform_baseline(table.bounds["bound_output_lb"][rows],
                               table.bounds["bound_output"][rows])
        mid = uni.midpoint()[nz]
        out["uniform_improvement"] = describe(np.abs(d[nz] - mid) / d[nz])
        out["uniform_effectivity"] = describe(mid / d[nz])
        out["uniform_contains"] = float(np.mean(uni.contains(d)))
    return out


def validate(s, table, omegas=(0.5, 0.8, 0.9, 0.95, 0.99), rigor_levels=(0.5, 0.9)):
    kept, dropped, pred, delta = _validation(s, table)
    D, sigma2 = deviation_samples(s, table)
    rep = ValidationReport(
        spec=s.spec.name, n_train=s.n_train, n_validation=int(kept.size),
        n_excluded=int(dropped.size), sigma2=float(sigma2),
        coverage=validate_confidence(s, table, omegas),
        c_validation={float(c): overestimation_frequency(s, c, table) for c in rigor_levels},
        deviations=D)
    if s.spec.error in NORMED_ERRORS:
        rep.effectivity = {float(c): describe(effectivity(s, c, table)) for c in rigor_levels}
    if s.spec.error.startswith("output"):
        rep.improvement = describe(expected_improvement(s, table))
    rep.baselines = baseline_statistics(table, s.spec.error)
    return rep


def training_sweep(table, spec, sizes, omegas=(0.5, 0.8, 0.9, 0.95, 0.99),
                   rigor_levels=(0.5, 0.9)):
    """Validation reports for nested training prefixes of the given sizes."""
    table.check_split()
    reports = []
    for n in sizes:
        s = train_surrogate(table, spec, n)
        reports.append(validate(s, table, omegas, rigor_levels))
    return reports
