"""Small dense SPD helpers built on a Cholesky factorisation with jitter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import ConditioningError

JITTER_START = 1e-12
JITTER_STOP = 1e-6


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor of ``A + jitter * I``."""

    lower: np.ndarray
    jitter: float

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return sla.cho_solve((self.lower, True), b, check_finite=False)

    def inverse(self) -> np.ndarray:
        inv = self.solve(np.eye(self.dim))
        return 0.5 * (inv + inv.T)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def _try_cholesky(a: np.ndarray) -> np.ndarray | None:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None


def spd_factor(a: np.ndarray, *, what: str = "matrix") -> SpdFactor:
    """Factor a symmetric positive-definite matrix.

    On failure the diagonal is loaded with ``1e-12 * tr(A)/M``, escalating by
    10x up to ``1e-6 * tr(A)/M``, before giving up with ConditioningError.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConditioningError(f"{what} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConditioningError(f"{what} has non-finite entries")
    a = 0.5 * (a + a.T)
    lower = _try_cholesky(a)
    if lower is not None:
        return SpdFactor(lower, 0.0)

    dim = a.shape[0]
    scale = float(np.trace(a)) / dim
    if not scale > 0.0:
        raise ConditioningError(f"{what} is not positive definite (trace {scale * dim:g})")
    rel = JITTER_START
    eye = np.eye(dim)
    while rel <= JITTER_STOP * (1 + 1e-9):
        jitter = rel * scale
        lower = _try_cholesky(a + jitter * eye)
        if lower is not None:
            return SpdFactor(lower, jitter)
        rel *= 10.0
    raise ConditioningError(f"{what} is not positive definite even with jitter {JITTER_STOP:g}*tr/M")


def is_spd(a: np.ndarray) -> bool:
    return _try_cholesky(np.asarray(a, dtype=np.float64)) is not None


def condition_number(a: np.ndarray) -> float:
    eig = np.linalg.eigvalsh(0.5 * (a + a.T))
    if eig[0] <= 0.0:
        return float("inf")
    return float(eig[-1] / eig[0])
