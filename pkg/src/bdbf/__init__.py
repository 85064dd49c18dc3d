"""Bayesian deep basis fitting: closed-form Bayesian last-layer inference for depth completion."""

from .basis import (
    BasisMap,
    RegressionSystem,
    SparseDepthSet,
    assemble,
    depth_to_latent,
    latent_to_depth,
)
from .calibration import (
    CalibrationState,
    apply_calibration,
    estimate_calibration,
    laplace_scale,
    nees,
)
from .fitting import (
    GaussianPrior,
    MlFit,
    PosteriorFit,
    PredictiveField,
    fit_bayes,
    fit_em,
    fit_ml,
    log_evidence,
    predict,
    predict_field,
    predict_ml,
    predict_prior,
    predict_prior_field,
)
from .metrics import (
    CurveData,
    EvalSet,
    auce,
    ause,
    depth_metrics,
    ensemble_mean_var,
    ensemble_predictive,
    nll,
)
from .prior import PriorAccumulator, accumulate, finalize, merge

__version__ = "0.1.0"

__all__ = [
    "accumulate",
    "apply_calibration",
    "assemble",
    "auce",
    "ause",
    "BasisMap",
    "CalibrationState",
    "CurveData",
    "depth_metrics",
    "depth_to_latent",
    "ensemble_mean_var",
    "ensemble_predictive",
    "estimate_calibration",
    "EvalSet",
    "finalize",
    "fit_bayes",
    "fit_em",
    "fit_ml",
    "GaussianPrior",
    "laplace_scale",
    "latent_to_depth",
    "log_evidence",
    "merge",
    "MlFit",
    "nees",
    "nll",
    "PosteriorFit",
    "predict",
    "predict_field",
    "predict_ml",
    "predict_prior",
    "predict_prior_field",
    "PredictiveField",
    "PriorAccumulator",
    "RegressionSystem",
    "SparseDepthSet",
]
