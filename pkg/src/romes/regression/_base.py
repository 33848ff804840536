from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class NormalPrediction:
    """Independent normal predictions N(mean, var_mean + noise_var) per point."""

    mean: np.ndarray
    var_mean: np.ndarray
    noise_var: float
    extrapolated: np.ndarray | None = None

    @property
    def total_var(self):
        return self.var_mean + self.noise_var

    def variance(self, mode="full"):
        if mode == "full":
            return self.total_var
        if mode == "noise":
            return np.full_like(self.mean, self.noise_var)
        raise ValueError(f"unknown variance mode {mode!r}")

    def __len__(self):
        return len(self.mean)


@dataclass
class TrainingSet:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if y.shape[0] < 2:
            raise ValueError("need at least two training points")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("training data contain non-finite entries")
        self.x, self.y = x, y

    @property
    def n(self):
        return self.y.shape[0]


def as_points(x, q):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None] if q == 1 else x[None, :]
    if x.shape[1] != q:
        raise ValueError(f"expected {q} features, got {x.shape[1]}")
    return x
