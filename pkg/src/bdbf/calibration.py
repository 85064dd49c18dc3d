"""NEES consistency and variance rescaling for Laplace predictive distributions.

A Laplace distribution with scale b has variance sigma^2 = 2 b^2. The
normalised error is taken against that variance,

    nees = (mu - z)^2 / sigma^2 = (mu - z)^2 / (2 b^2),

which has expectation exactly 1 when z ~ Laplace(mu, b) (and when z is
Gaussian with variance sigma^2). Scaling every variance by the mean NEES of a
set therefore makes that set consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import EmptyInputError, ScaleError


@dataclass(frozen=True)
class CalibrationState:
    """Mean NEES over ``n_pixels`` pixels; zero-scale pixels are only counted."""

    mean_nees: float
    n_pixels: int
    n_zero_scale: int = 0

    def __post_init__(self):
        if self.n_pixels < 0 or self.n_zero_scale < 0:
            raise ValueError("pixel counts must be non-negative")
        if self.n_pixels > 0 and not (math.isfinite(self.mean_nees) and self.mean_nees > 0.0):
            raise ScaleError(f"mean NEES must be finite and positive, got {self.mean_nees!r}")

    def to_dict(self) -> dict:
        return {"mean_nees": self.mean_nees, "n_pixels": self.n_pixels, "n_zero_scale": self.n_zero_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationState":
        return cls(float(d["mean_nees"]), int(d["n_pixels"]), int(d.get("n_zero_scale", 0)))


def laplace_scale(var):
    """Laplace scale b from variance, ``2 b^2 = var``."""
    v = np.asarray(var, dtype=np.float64)
    if np.any(~(v >= 0.0)):
        raise ScaleError("variance must be non-negative")
    b = np.sqrt(v / 2.0)
    return float(b) if b.ndim == 0 else b


def laplace_variance(b):
    return 2.0 * np.square(b)


def nees(mu, b, z):
    """Per-pixel normalised estimation error squared against Laplace scale ``b``."""
    mu, b, z = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (mu, b, z)))
    if np.any(~(b > 0.0)):
        raise ScaleError("Laplace scale must be strictly positive")
    eps = np.square(mu - z) / (2.0 * np.square(b))
    return float(eps) if eps.ndim == 0 else eps


def estimate_calibration(mu, b, z) -> CalibrationState:
    """Average NEES over pixels with ``b > 0``; pixels with ``b == 0`` are tallied apart."""
    mu, b, z = (np.asarray(x, dtype=np.float64).reshape(-1) for x in (mu, b, z))
    if np.any(b < 0.0) or np.any(~np.isfinite(b)):
        raise ScaleError("Laplace scale must be finite and non-negative")
    ok = b > 0.0
    n_zero = int(np.count_nonzero(~ok))
    n = int(np.count_nonzero(ok))
    if n == 0:
        return CalibrationState(float("nan"), 0, n_zero)
    return CalibrationState(float(np.mean(nees(mu[ok], b[ok], z[ok]))), n, n_zero)


def merge_states(states: Iterable[CalibrationState]) -> CalibrationState:
    states = [s for s in states]
    n = sum(s.n_pixels for s in states)
    n_zero = sum(s.n_zero_scale for s in states)
    if n == 0:
        return CalibrationState(float("nan"), 0, n_zero)
    total = math.fsum(s.mean_nees * s.n_pixels for s in states if s.n_pixels)
    return CalibrationState(total / n, n, n_zero)


def apply_calibration(state: CalibrationState, var):
    """Rescale predictive variance by the recorded mean NEES."""
    if state.n_pixels == 0:
        raise EmptyInputError("calibration state has no pixels")
    v = np.asarray(var, dtype=np.float64) * state.mean_nees
    return float(v) if v.ndim == 0 else v
