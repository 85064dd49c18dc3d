"""End-to-end inference and evaluation for one image, as used by the CLI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisMap, SparseDepthSet, assemble
from .calibration import CalibrationState, apply_calibration, estimate_calibration
from .errors import InputError
from .fitting import (
    EM_MAX_ITERS,
    EM_TOL,
    GaussianPrior,
    PredictiveField,
    fit_bayes,
    fit_em,
    fit_ml,
    predict_field,
    predict_ml_field,
    predict_prior_field,
)
from .metrics import EvalSet, evaluate

# prior precision used for the broad-prior limit
BROAD_ALPHA = 1e-12


class PriorRequiredError(InputError):
    code = "prior-required"


@dataclass(frozen=True)
class FitOptions:
    em_max_iters: int = EM_MAX_ITERS
    em_tol: float = EM_TOL
    alpha0: float = 1.0
    beta0: float | None = None
    include_noise: bool = False
    ml_only: bool = False
    broad_prior: bool = False
    calibration: CalibrationState | None = None


def infer(basis: BasisMap, sparse: SparseDepthSet, prior: GaussianPrior | None,
          opts: FitOptions = FitOptions()) -> tuple[PredictiveField, dict]:
    """Dense latent prediction for one image.

    Modes: ``em`` (default, N >= 1), ``prior-only`` (N = 0, needs a prior),
    ``ml`` (least squares, no prior) and ``broad-prior`` (posterior at a
    vanishing prior precision with the ML noise level). Without a prior file
    the EM and broad-prior modes fall back to ``N(0, I)``.
    """
    sys = assemble(basis, sparse)
    n, m = sys.n_obs, sys.n_bases
    summary = {"n_obs": n, "n_bases": m, "alpha": None, "beta": None, "em_iters": 0, "converged": None}

    if opts.ml_only and opts.broad_prior:
        raise InputError("--ml-only and --broad-prior are mutually exclusive")
    if n == 0 and not (opts.ml_only or opts.broad_prior):
        if prior is None:
            raise PriorRequiredError("prior required: no sparse measurements, prediction must come from the prior")
        field = predict_prior_field(prior, basis)
        summary["mode"] = "prior-only"
    elif opts.ml_only:
        ml = fit_ml(sys)
        field = predict_ml_field(ml, basis)
        summary.update(mode="ml", beta=ml.beta_ml)
    else:
        if prior is None:
            prior = GaussianPrior.isotropic(m)
        if opts.broad_prior:
            beta = fit_ml(sys).beta_ml
            fit = fit_bayes(sys, prior, BROAD_ALPHA, beta)
            mode = "broad-prior"
        else:
            fit = fit_em(sys, prior, alpha0=opts.alpha0, beta0=opts.beta0,
                         max_iters=opts.em_max_iters, tol=opts.em_tol)
            mode = "em"
        field = predict_field(fit, basis, include_noise=opts.include_noise)
        summary.update(fit.summary(), mode=mode)

    summary["mean_nees"] = None
    if opts.calibration is not None:
        field = PredictiveField(field.mean, apply_calibration(opts.calibration, field.var),
                                opts.calibration.mean_nees)
        summary["mean_nees"] = opts.calibration.mean_nees
    return field, summary


def valid_mask(depth_true: np.ndarray, depth_cap: float | None) -> np.ndarray:
    valid = np.isfinite(depth_true) & (depth_true > 0.0)
    if depth_cap is not None:
        valid &= depth_true < depth_cap
    return valid


def score(field: PredictiveField, depth_true: np.ndarray, *, depth_cap: float | None = None,
          base_metric: str = "mae", step: float = 0.01, grid: int = 100, ause_space: str = "latent"):
    es = EvalSet.from_prediction(field.mean, field.var, depth_true, valid_mask(depth_true, depth_cap))
    return evaluate(es, base_metric=base_metric, step=step, grid=grid, ause_space=ause_space)


def measure_nees(field: PredictiveField, depth_true: np.ndarray, depth_cap: float | None = None) -> CalibrationState:
    if field.shape != depth_true.shape:
        raise InputError(f"prediction shape {field.shape} does not match truth {depth_true.shape}")
    v = valid_mask(depth_true, depth_cap)
    return estimate_calibration(field.mean[v], field.scale[v], np.log(depth_true[v]))
