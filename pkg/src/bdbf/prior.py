"""Shared-prior estimation from per-image ML weight solutions.

Weights are accumulated as (count, mean, scatter) so that merging partial
accumulators (Chan et al.'s pairwise update) is exact in exact arithmetic
and stable for samples with a large common offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, InsufficientSamplesError
from .fitting import GaussianPrior

SHRINKAGE = 1e-6
# used instead of SHRINKAGE * tr/M when every sample is identical
SHRINKAGE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class PriorAccumulator:
    count: int
    mean: np.ndarray
    scatter: np.ndarray

    @classmethod
    def empty(cls, num_bases: int) -> "PriorAccumulator":
        return cls(0, np.zeros(num_bases), np.zeros((num_bases, num_bases)))

    @property
    def n_bases(self) -> int:
        return self.mean.size

    @property
    def sum(self) -> np.ndarray:
        return self.count * self.mean

    @property
    def sum_outer(self) -> np.ndarray:
        return self.scatter + self.count * np.outer(self.mean, self.mean)


def accumulate(acc: PriorAccumulator, w) -> PriorAccumulator:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size != acc.n_bases:
        raise DimensionError(f"weight has length {w.size}, accumulator expects {acc.n_bases}")
    if not np.all(np.isfinite(w)):
        raise DomainError("weight sample has non-finite entries")
    n = acc.count + 1
    delta = w - acc.mean
    mean = acc.mean + delta / n
    scatter = acc.scatter + np.outer(delta, w - mean)
    return PriorAccumulator(n, mean, 0.5 * (scatter + scatter.T))


def accumulate_many(acc: PriorAccumulator, ws) -> PriorAccumulator:
    for w in ws:
        acc = accumulate(acc, w)
    return acc


def merge(a: PriorAccumulator, b: PriorAccumulator) -> PriorAccumulator:
    if a.n_bases != b.n_bases:
        raise DimensionError(f"cannot merge accumulators with M={a.n_bases} and M={b.n_bases}")
    if b.count == 0:
        return a
    if a.count == 0:
        return b
    n = a.count + b.count
    delta = b.mean - a.mean
    # symmetric in (a, b) so merge(a, b) == merge(b, a) bitwise
    mean = (a.count * a.mean + b.count * b.mean) / n
    scatter = a.scatter + b.scatter + np.outer(delta, delta) * (a.count * b.count / n)
    return PriorAccumulator(n, mean, scatter)


def finalize(acc: PriorAccumulator) -> GaussianPrior:
    """Sample mean and unbiased covariance, with a small diagonal shrinkage."""
    if acc.count < 2:
        raise InsufficientSamplesError(f"need at least 2 weight samples, have {acc.count}")
    m = acc.n_bases
    cov = acc.scatter / (acc.count - 1)
    cov = 0.5 * (cov + cov.T)
    lam = max(SHRINKAGE * float(np.trace(cov)) / m, SHRINKAGE_FLOOR)
    return GaussianPrior(acc.mean.copy(), cov + lam * np.eye(m))


def estimate_prior(weights) -> GaussianPrior:
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    return finalize(accumulate_many(PriorAccumulator.empty(weights.shape[1]), weights))
