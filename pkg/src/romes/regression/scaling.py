"""Per-feature affine scaling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MODES = ("standard", "minmax", "legendre", "identity")


class ScalingError(ValueError):
    pass


@dataclass
class FeatureScaling:
    """z = (x - offset) / scale, featurewise."""

    offset: np.ndarray
    scale: np.ndarray
    mode: str = "standard"

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.offset) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.offset

    def to_dict(self):
        return {"offset": self.offset.tolist(), "scale": self.scale.tolist(), "mode": self.mode}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["offset"], dtype=float), np.asarray(d["scale"], dtype=float),
                   d["mode"])


def fit_scaling(x, mode="standard"):
    """Fit a featurewise affine map.

    ``legendre`` maps the training range widened by 10% on each side,
    ``[min - 0.1 D, max + 0.1 D]`` with ``D = max - min``, onto [-1, 1].
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    q = x.shape[1]
    if mode == "identity":
        return FeatureScaling(np.zeros(q), np.ones(q), mode)
    lo, hi = x.min(axis=0), x.max(axis=0)
    if np.any(hi - lo <= 0):
        bad = np.flatnonzero(hi - lo <= 0).tolist()
        raise ScalingError(f"features {bad} are constant; cannot fit {mode!r} scaling")
    if mode == "standard":
        sd = x.std(axis=0)
        if not np.all(np.isfinite(sd) & (sd > 0)):
            raise ScalingError(f"feature spread underflows; cannot fit {mode!r} scaling")
        return FeatureScaling(x.mean(axis=0), sd, mode)
    if mode == "minmax":
        return FeatureScaling(0.5 * (lo + hi), 0.5 * (hi - lo), mode)
    if mode == "legendre":
        width = hi - lo
        lo, hi = lo - 0.1 * width, hi + 0.1 * width
        return FeatureScaling(0.5 * (lo + hi), 0.5 * (hi - lo), mode)
    raise ValueError(f"unknown scaling mode {mode!r}; expected one of {MODES}")


def scale_features(x, mode="standard", scaling=None):
    """Fit (``scaling is None``) or apply a scaling; returns ``(z, scaling)``."""
    if scaling is None:
        scaling = fit_scaling(x, mode)
    return scaling.apply(x), scaling
