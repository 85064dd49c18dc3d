"""Depth accuracy and uncertainty metrics (MAE/RMSE/delta1, AUSE, AUCE, NLL).

Accuracy metrics are computed on metric depth; the uncertainty metrics on
latent log-depth against the Laplace scale ``b`` (AUSE optionally on depth
errors). Sparsification ties are broken by pixel index through stable sorts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError, ScaleError

DELTA1_THRESHOLD = 1.25


@dataclass(frozen=True, eq=False)
class CurveData:
    abscissa: np.ndarray
    ordinate: np.ndarray
    columns: tuple[str, str] = ("x", "y")

    def __post_init__(self):
        x = np.asarray(self.abscissa, dtype=np.float64).reshape(-1)
        y = np.asarray(self.ordinate, dtype=np.float64).reshape(-1)
        if x.shape != y.shape:
            raise DimensionError("curve abscissa and ordinate differ in length")
        if x.size and (x[0] < 0.0 or x[-1] > 1.0 or np.any(np.diff(x) <= 0.0)):
            raise ValueError("curve abscissa must be strictly increasing within [0, 1]")
        object.__setattr__(self, "abscissa", x)
        object.__setattr__(self, "ordinate", y)

    def __len__(self) -> int:
        return self.abscissa.size


@dataclass(frozen=True, eq=False)
class EvalSet:
    """Parallel per-pixel arrays; only pixels with ``valid`` set are scored."""

    pred_depth: np.ndarray
    true_depth: np.ndarray
    latent_mu: np.ndarray
    latent_b: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=np.float64).reshape(-1) for a in
                (self.pred_depth, self.true_depth, self.latent_mu, self.latent_b)]
        n = arrs[0].size
        if any(a.size != n for a in arrs):
            raise DimensionError("EvalSet arrays must have equal length")
        valid = np.ones(n, bool) if self.valid is None else np.asarray(self.valid, bool).reshape(-1)
        if valid.size != n:
            raise DimensionError("valid mask length mismatch")
        pred, true, mu, b = arrs
        if np.any(~(true[valid] > 0.0)):
            raise ScaleError("true depth must be positive on valid pixels")
        if np.any(~(b[valid] >= 0.0)):
            raise ScaleError("Laplace scale must be non-negative")
        for name, a in zip(("pred_depth", "true_depth", "latent_mu", "latent_b"), arrs):
            object.__setattr__(self, name, a)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_prediction(cls, mean, var, true_depth, valid=None) -> "EvalSet":
        """Build from latent predictive mean/variance maps and metric ground truth."""
        mean = np.asarray(mean, dtype=np.float64)
        true_depth = np.asarray(true_depth, dtype=np.float64)
        if mean.shape != true_depth.shape or np.shape(var) != mean.shape:
            raise DimensionError(
                f"prediction shape {mean.shape} / {np.shape(var)} does not match truth {true_depth.shape}"
            )
        if valid is None:
            valid = np.isfinite(true_depth) & (true_depth > 0.0)
        b = np.sqrt(np.asarray(var, dtype=np.float64) / 2.0)
        return cls(np.exp(mean), true_depth, mean, b, valid)

    def __len__(self) -> int:
        return int(np.count_nonzero(self.valid))

    def _pick(self):
        v = self.valid
        if not np.any(v):
            raise EmptyInputError("evaluation set has no valid pixels")
        return self.pred_depth[v], self.true_depth[v], self.latent_mu[v], self.latent_b[v]

    def latent_errors(self) -> np.ndarray:
        _, true, mu, _ = self._pick()
        return np.abs(mu - np.log(true))

    def depth_errors(self) -> np.ndarray:
        pred, true, _, _ = self._pick()
        return np.abs(pred - true)


class DepthMetrics(NamedTuple):
    mae: float
    rmse: float
    delta1: float


def depth_metrics(es: EvalSet) -> DepthMetrics:
    pred, true, _, _ = es._pick()
    err = pred - true
    ratio = np.maximum(pred / true, true / pred)
    return DepthMetrics(
        mae=float(np.mean(np.abs(err))),
        rmse=float(math.sqrt(np.mean(err * err))),
        delta1=100.0 * float(np.mean(ratio < DELTA1_THRESHOLD)),
    )


def _fraction_grid(step: float) -> int:
    if not (0.0 < step <= 1.0):
        raise ValueError(f"step must lie in (0, 1], got {step}")
    k = int(round(1.0 / step))
    if abs(k * step - 1.0) > 1e-9:
        raise ValueError(f"step {step} does not divide [0, 1] into whole bins")
    return k


def sparsification_curve(errors, order: np.ndarray, k: int, base_metric: str = "mae") -> np.ndarray:
    """Metric of the pixels kept after removing the first ``(i*n)//k`` of ``order``, i = 0..k-1."""
    e = np.asarray(errors, dtype=np.float64)[order]
    n = e.size
    if base_metric == "mae":
        vals = np.abs(e)
    elif base_metric == "rmse":
        vals = e * e
    else:
        raise ValueError(f"unknown base metric {base_metric!r}")
    # tail[r] = sum of vals[r:]
    tail = np.concatenate([np.cumsum(vals[::-1])[::-1], [0.0]])
    removed = (np.arange(k, dtype=np.int64) * n) // k
    out = tail[removed] / (n - removed)
    return np.sqrt(out) if base_metric == "rmse" else out


def sparsification_curves(errors, uncertainty, *, base_metric: str = "mae", step: float = 0.01):
    """Return ``(fractions, method_curve, oracle_curve)``."""
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    uncertainty = np.asarray(uncertainty, dtype=np.float64).reshape(-1)
    if errors.shape != uncertainty.shape:
        raise DimensionError("errors and uncertainties differ in length")
    k = _fraction_grid(step)
    method = sparsification_curve(errors, np.argsort(-uncertainty, kind="stable"), k, base_metric)
    oracle = sparsification_curve(errors, np.argsort(-errors, kind="stable"), k, base_metric)
    return np.arange(k) / k, method, oracle


def ause(es: EvalSet, base_metric: str = "mae", step: float = 0.01, *, space: str = "latent"):
    """Area between the uncertainty-ordered and error-ordered sparsification curves.

    Returns ``(value, curve)`` where ``curve`` is the sparsification error
    (method minus oracle) over removed fractions ``0, step, ..., 1 - step``;
    the value is its trapezoidal integral.
    """
    if len(es) < 2:
        raise EmptyInputError("AUSE needs at least two valid pixels")
    if space == "latent":
        errors = es.latent_errors()
    elif space == "depth":
        errors = es.depth_errors()
    else:
        raise ValueError(f"space must be 'latent' or 'depth', got {space!r}")
    b = es.latent_b[es.valid]
    frac, method, oracle = sparsification_curves(errors, b, base_metric=base_metric, step=step)
    diff = method - oracle
    value = float(np.trapezoid(diff, frac)) if frac.size > 1 else 0.0
    return value, CurveData(frac, diff, ("fraction_removed", "sparsification_error"))


def laplace_quantile(q):
    """Inverse CDF of the unit Laplace distribution."""
    q = np.asarray(q, dtype=np.float64)
    if np.any((q <= 0.0) | (q >= 1.0)):
        raise ValueError("quantile level must lie in (0, 1)")
    out = np.where(q >= 0.5, -np.log(2.0 * (1.0 - q)), np.log(2.0 * q))
    return float(out) if out.ndim == 0 else out


def calibration_grid(grid: int = 100) -> np.ndarray:
    """Midpoints of ``grid`` equal bins of (0, 1); symmetric about 1/2."""
    if grid < 2:
        raise ValueError("grid must have at least two points")
    return (np.arange(grid) + 0.5) / grid


def auce(es: EvalSet, grid: int = 100):
    """Mean absolute gap between nominal and empirical Laplace interval coverage.

    A pixel with ``b == 0`` is covered only when its error is exactly zero.
    """
    _, true, mu, b = es._pick()
    p = calibration_grid(grid)
    err = np.abs(np.log(true) - mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(b > 0.0, err / b, np.where(err == 0.0, 0.0, np.inf))
    ratio = np.sort(ratio)
    half_width = laplace_quantile((p + 1.0) / 2.0)
    p_hat = np.searchsorted(ratio, half_width, side="right") / ratio.size
    gap = np.abs(p - p_hat)
    return float(np.mean(gap)), CurveData(p, gap, ("p", "calibration_error"))


def nll(es: EvalSet) -> float:
    """Mean Laplace negative log-likelihood of latent truth, including ln 2."""
    _, true, mu, b = es._pick()
    if np.any(~(b > 0.0)):
        raise ScaleError("NLL needs strictly positive Laplace scale")
    # ln(2b) in one step keeps b = 1/2 exactly at zero
    return float(np.mean(np.abs(mu - np.log(true)) / b + np.log(2.0 * b)))


def laplace_nll(mu, b, z):
    """Elementwise Laplace NLL; ``mu``, ``b``, ``z`` broadcast."""
    mu, b, z = (np.asarray(x, dtype=np.float64) for x in (mu, b, z))
    if np.any(~(b > 0.0)):
        raise ScaleError("NLL needs strictly positive Laplace scale")
    return np.abs(mu - z) / b + np.log(2.0 * b)


def ensemble_mean_var(means: Sequence):
    """Snapshot combination: mean of members and population variance of their means."""
    if len(means) == 0:
        raise EmptyInputError("ensemble needs at least one member")
    m = np.asarray(means, dtype=np.float64)
    mu = m.mean(axis=0)
    var = np.mean((m - mu) ** 2, axis=0)
    if mu.ndim == 0:
        return float(mu), float(var)
    return mu, var


def ensemble_predictive(means: Sequence, variances: Sequence):
    """Mixture moments of K Gaussian members with given means and variances."""
    if len(means) == 0:
        raise EmptyInputError("ensemble needs at least one member")
    if len(means) != len(variances):
        raise DimensionError("means and variances differ in length")
    m = np.asarray(means, dtype=np.float64)
    v = np.asarray(variances, dtype=np.float64)
    if m.shape != v.shape:
        raise DimensionError("means and variances differ in shape")
    mu = m.mean(axis=0)
    var = np.mean((m - mu) ** 2 + v, axis=0)
    if mu.ndim == 0:
        return float(mu), float(var)
    return mu, var


def evaluate(es: EvalSet, *, base_metric: str = "mae", step: float = 0.01, grid: int = 100,
             ause_space: str = "latent") -> tuple[dict, dict[str, CurveData]]:
    """All metrics as a flat dict plus the two curves keyed by name."""
    dm = depth_metrics(es)
    ause_v, spars = ause(es, base_metric, step, space=ause_space)
    auce_v, calib = auce(es, grid)
    b = es.latent_b[es.valid]
    # undefined with zero-scale pixels; reported as null
    nll_v = nll(es) if np.all(b > 0.0) else None
    metrics = {
        "mae": dm.mae,
        "rmse": dm.rmse,
        "delta1": dm.delta1,
        "ause": ause_v,
        "auce": auce_v,
        "nll": nll_v,
    }
    return metrics, {"sparsification": spars, "calibration": calib}
