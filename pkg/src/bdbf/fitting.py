"""Bayesian and maximum-likelihood fitting of last-layer weights.

The linear-Gaussian model in latent (log-depth) space is

    z_i = w^T phi_i + eps_i,   eps_i ~ N(0, 1/beta),   w ~ N(m0, Sigma0 / alpha)

Everything here is dense float64 linear algebra on M x M systems; M is the
number of basis channels (tens), so the N x M design matrix only ever enters
through its Gram matrix and ``Phi^T z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ._linalg import SpdFactor, condition_number, spd_factor
from .basis import BasisMap, RegressionSystem
from .errors import (
    ConditioningError,
    DimensionError,
    DomainError,
    EmptyInputError,
    NumericalError,
    PriorInvalidError,
    RankError,
    UnderdeterminedError,
)

# beta is capped so zero-residual fits stay finite (noise variance >= 1e-12)
BETA_MAX = 1e12
MAX_CONDITION = 1e12
SYMMETRY_TOL = 1e-10

EM_MAX_ITERS = 8
EM_TOL = 0.01


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """Shared weight prior ``N(mean, cov / alpha)``; ``cov`` is the unscaled Sigma0."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        cov = np.array(self.cov, dtype=np.float64)
        m = mean.size
        if m < 1:
            raise PriorInvalidError("prior must have at least one basis")
        if cov.shape != (m, m):
            raise PriorInvalidError(f"prior covariance shape {cov.shape} does not match mean length {m}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise PriorInvalidError("prior has non-finite entries")
        asym = float(np.max(np.abs(cov - cov.T)))
        if asym > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(cov)))):
            raise PriorInvalidError(f"prior covariance is not symmetric (max asymmetry {asym:g})")
        cov = 0.5 * (cov + cov.T)
        try:
            lower = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise PriorInvalidError("prior covariance is not positive definite") from None
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_factor", SpdFactor(lower, 0.0))

    @property
    def n_bases(self) -> int:
        return self.mean.size

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``Sigma0^{-1} b``."""
        return self._factor.solve(b)

    @cached_property
    def precision(self) -> np.ndarray:
        return self._factor.inverse()

    @cached_property
    def logdet(self) -> float:
        return self._factor.logdet()

    @classmethod
    def isotropic(cls, num_bases: int, mean: float = 0.0, variance: float = 1.0) -> "GaussianPrior":
        return cls(np.full(num_bases, mean), variance * np.eye(num_bases))


@dataclass(frozen=True, eq=False)
class MlFit:
    """Least-squares weights and noise precision; ``gram_inv`` is ``(Phi^T Phi)^{-1}``."""

    w_ml: np.ndarray
    beta_ml: float
    n_obs: int
    gram_inv: np.ndarray

    @property
    def n_bases(self) -> int:
        return self.w_ml.size


@dataclass(frozen=True, eq=False)
class PosteriorFit:
    mean: np.ndarray
    cov: np.ndarray
    alpha: float
    beta: float
    n_obs: int
    n_bases: int
    em_iters: int = 0
    converged: bool = False
    # (alpha, beta) pairs visited by EM, starting with the initial values
    trace: tuple[tuple[float, float], ...] = field(default=())

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "n_obs": self.n_obs,
            "n_bases": self.n_bases,
            "em_iters": self.em_iters,
            "converged": self.converged,
        }


@dataclass(frozen=True, eq=False)
class PredictiveField:
    """Dense latent predictive mean and variance maps, both ``(H, W)``."""

    mean: np.ndarray
    var: np.ndarray
    calibration: float = 1.0

    @property
    def scale(self) -> np.ndarray:
        """Laplace scale b with 2 b^2 = var."""
        return np.sqrt(self.var / 2.0)

    @property
    def depth(self) -> np.ndarray:
        return np.exp(self.mean)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape

    def calibrated(self, factor: float) -> "PredictiveField":
        return PredictiveField(self.mean, self.var * factor, self.calibration * factor)


def _check_precisions(alpha: float, beta: float) -> None:
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not (math.isfinite(v) and v > 0.0):
            raise DomainError(f"{name} must be finite and positive, got {v!r}")


def _check_dims(sys: RegressionSystem, prior: GaussianPrior) -> None:
    if sys.n_bases != prior.n_bases:
        raise DimensionError(f"system has M={sys.n_bases} bases but prior has M={prior.n_bases}")


def _as_rows(phi, m: int) -> tuple[np.ndarray, bool]:
    p = np.asarray(phi, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.ndim != 2 or p.shape[1] != m:
        raise DimensionError(f"basis vector(s) must have trailing dimension {m}, got shape {np.shape(phi)}")
    return p, single


def _gaussian_predict(mean: np.ndarray, cov: np.ndarray, phi) -> tuple:
    p, single = _as_rows(phi, mean.size)
    mu = p @ mean
    var = np.maximum(np.einsum("ij,jk,ik->i", p, cov, p), 0.0)
    if single:
        return float(mu[0]), float(var[0])
    return mu, var


def _clip_beta(rss: float, n: int) -> float:
    if rss * BETA_MAX <= n:
        return BETA_MAX
    return n / rss


def fit_ml(sys: RegressionSystem) -> MlFit:
    """Normal-equations least squares with the ML noise precision ``N / RSS``."""
    n, m = sys.design.shape
    if n < m:
        raise UnderdeterminedError(f"ML fit needs N >= M, got N={n}, M={m}; use a prior")
    phi, z = sys.design, sys.targets
    gram = phi.T @ phi
    try:
        fac = spd_factor(gram, what="Gram matrix")
    except ConditioningError as exc:
        raise RankError(str(exc)) from None
    cond = condition_number(gram + fac.jitter * np.eye(m))
    if not cond < MAX_CONDITION:
        raise RankError(f"Gram matrix condition number {cond:.3g} exceeds {MAX_CONDITION:g}")
    w = fac.solve(phi.T @ z)
    r = z - phi @ w
    return MlFit(w, _clip_beta(float(r @ r), n), n, fac.inverse())


def _posterior(sys: RegressionSystem, prior: GaussianPrior, alpha: float, beta: float):
    phi, z = sys.design, sys.targets
    precision = alpha * prior.precision + beta * (phi.T @ phi)
    fac = spd_factor(precision, what="posterior precision")
    rhs = alpha * prior.solve(prior.mean) + beta * (phi.T @ z)
    return fac.solve(rhs), fac.inverse(), fac


def fit_bayes(sys: RegressionSystem, prior: GaussianPrior, alpha: float, beta: float) -> PosteriorFit:
    """Conjugate posterior over the weights for fixed ``alpha`` and ``beta``.

    With no observations the prior is returned unchanged (mean ``m0``,
    covariance ``Sigma0 / alpha``).
    """
    _check_dims(sys, prior)
    _check_precisions(alpha, beta)
    n, m = sys.n_obs, sys.n_bases
    if n == 0:
        return PosteriorFit(prior.mean.copy(), prior.cov / alpha, alpha, beta, 0, m)
    mean, cov, _ = _posterior(sys, prior, alpha, beta)
    return PosteriorFit(mean, cov, float(alpha), float(beta), n, m)


def posterior_precision(sys: RegressionSystem, prior: GaussianPrior, alpha: float, beta: float) -> np.ndarray:
    """``alpha Sigma0^{-1} + beta Phi^T Phi``, for consistency checks."""
    return alpha * prior.precision + beta * (sys.design.T @ sys.design)


def log_evidence(sys: RegressionSystem, prior: GaussianPrior, alpha: float, beta: float) -> float:
    """Log marginal likelihood ``ln p(z | alpha, beta)`` with the weights integrated out.

    Uses the unscaled Sigma0 in ``ln|Sigma0|`` and keeps ``M ln alpha``
    separately, so ``(Sigma0, alpha) -> (c Sigma0, c alpha)`` leaves it unchanged.
    """
    _check_dims(sys, prior)
    _check_precisions(alpha, beta)
    n, m = sys.n_obs, sys.n_bases
    if n == 0:
        return 0.0
    mean, _, fac = _posterior(sys, prior, alpha, beta)
    r = sys.targets - sys.design @ mean
    d = mean - prior.mean
    energy = beta * float(r @ r) + alpha * float(d @ prior.solve(d))
    logdet_post = -fac.logdet()
    return 0.5 * (
        n * math.log(beta)
        + m * math.log(alpha)
        - n * math.log(2.0 * math.pi)
        - energy
        + logdet_post
        - prior.logdet
    )


def reestimate(sys: RegressionSystem, prior: GaussianPrior, fit: PosteriorFit) -> tuple[float, float]:
    """One M-step: maximise the expected complete-data log likelihood over alpha, beta."""
    n, m = sys.n_obs, sys.n_bases
    d = fit.mean - prior.mean
    alpha_inv = (float(d @ prior.solve(d)) + float(np.trace(prior.solve(fit.cov)))) / m
    r = sys.targets - sys.design @ fit.mean
    gram = sys.design.T @ sys.design
    rss = float(r @ r) + float(np.sum(gram * fit.cov))
    if not (math.isfinite(alpha_inv) and math.isfinite(rss)) or alpha_inv <= 0.0:
        raise NumericalError(f"EM re-estimation produced alpha^-1={alpha_inv!r}, rss={rss!r}")
    return 1.0 / alpha_inv, _clip_beta(rss, n)


def fit_em(
    sys: RegressionSystem,
    prior: GaussianPrior,
    *,
    alpha0: float = 1.0,
    beta0: float | None = None,
    max_iters: int = EM_MAX_ITERS,
    tol: float = EM_TOL,
) -> PosteriorFit:
    """Evidence-framework fit with EM re-estimation of alpha and beta.

    Starts from ``alpha0`` and ``beta0`` (default ``sqrt(N)``), alternating
    the posterior update with the closed-form re-estimates until the relative
    change in beta drops below ``tol`` or ``max_iters`` M-steps have run. The
    returned fit is the posterior at the final (alpha, beta).
    """
    _check_dims(sys, prior)
    n = sys.n_obs
    if n < 1:
        raise EmptyInputError("EM needs at least one measurement; use predict_prior for N=0")
    alpha = float(alpha0)
    beta = min(float(math.sqrt(n) if beta0 is None else beta0), BETA_MAX)
    fit = fit_bayes(sys, prior, alpha, beta)
    trace = [(alpha, beta)]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        new_alpha, new_beta = reestimate(sys, prior, fit)
        rel = abs(new_beta - beta) / beta
        alpha, beta = new_alpha, new_beta
        fit = fit_bayes(sys, prior, alpha, beta)
        trace.append((alpha, beta))
        if rel < tol:
            converged = True
            break
    return replace(fit, em_iters=it, converged=converged, trace=tuple(trace))


def predict(fit: PosteriorFit, phi, *, include_noise: bool = False):
    """Latent predictive mean ``m^T phi`` and variance ``phi^T Sigma phi``.

    ``phi`` may be one basis vector or a stack of them (K x M). With
    ``include_noise`` the observation noise ``1/beta`` is added to the variance.
    """
    mu, var = _gaussian_predict(fit.mean, fit.cov, phi)
    if include_noise:
        var = var + 1.0 / fit.beta
    return mu, var


def predict_ml(ml: MlFit, phi):
    """Training-time predictive from the ML solution."""
    p, single = _as_rows(phi, ml.n_bases)
    mu = p @ ml.w_ml
    var = np.maximum(np.einsum("ij,jk,ik->i", p, ml.gram_inv, p), 0.0) / ml.beta_ml
    if single:
        return float(mu[0]), float(var[0])
    return mu, var


def predict_prior(prior: GaussianPrior, phi):
    """Prediction from the shared prior alone (alpha fixed to 1)."""
    return _gaussian_predict(prior.mean, prior.cov, phi)


def _field(basis: BasisMap, mu: np.ndarray, var: np.ndarray) -> PredictiveField:
    shape = (basis.height, basis.width)
    return PredictiveField(mu.reshape(shape), var.reshape(shape))


def predict_field(fit: PosteriorFit, basis: BasisMap, *, include_noise: bool = False) -> PredictiveField:
    mu, var = predict(fit, basis.rows(), include_noise=include_noise)
    return _field(basis, mu, var)


def predict_ml_field(ml: MlFit, basis: BasisMap) -> PredictiveField:
    mu, var = predict_ml(ml, basis.rows())
    return _field(basis, mu, var)


def predict_prior_field(prior: GaussianPrior, basis: BasisMap) -> PredictiveField:
    mu, var = predict_prior(prior, basis.rows())
    return _field(basis, mu, var)
