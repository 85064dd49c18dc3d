import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdbf.errors import DimensionError, EmptyInputError, ScaleError
from bdbf.metrics import (
    EvalSet,
    auce,
    ause,
    calibration_grid,
    depth_metrics,
    ensemble_mean_var,
    ensemble_predictive,
    evaluate,
    laplace_nll,
    laplace_quantile,
    nll,
    sparsification_curves,
)


def eval_set(pred_depth, true_depth, b=None):
    pred_depth = np.asarray(pred_depth, float)
    true_depth = np.asarray(true_depth, float)
    mu = np.log(pred_depth)
    b = np.ones_like(mu) if b is None else np.asarray(b, float)
    return EvalSet(pred_depth, true_depth, mu, b)


def latent_set(mu, z, b):
    mu, z = np.asarray(mu, float), np.asarray(z, float)
    return EvalSet(np.exp(mu), np.exp(z), mu, np.asarray(b, float))


# -- depth accuracy ---------------------------------------------------------


def test_perfect_prediction():
    assert depth_metrics(eval_set([1.0, 5.0, 20.0], [1.0, 5.0, 20.0])) == (0.0, 0.0, 100.0)


def test_delta1_threshold_edge():
    assert depth_metrics(eval_set([1.3], [1.0])).delta1 == 0.0
    assert depth_metrics(eval_set([1.0], [1.3])).delta1 == 0.0
    assert depth_metrics(eval_set([1.2], [1.0])).delta1 == 100.0


def test_hand_errors():
    m = depth_metrics(eval_set([2.0, 4.0, 6.0], [1.0, 2.0, 3.0]))
    assert m.mae == 2.0
    assert m.rmse == pytest.approx(math.sqrt(14.0 / 3.0), rel=1e-15)


def test_valid_mask_restricts_pixels():
    es = EvalSet([2.0, 100.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0], valid=[True, False])
    assert depth_metrics(es).mae == 1.0
    with pytest.raises(EmptyInputError):
        depth_metrics(EvalSet([1.0], [1.0], [0.0], [1.0], valid=[False]))


def test_evalset_validation():
    with pytest.raises(DimensionError):
        EvalSet([1.0, 2.0], [1.0], [0.0], [1.0])
    with pytest.raises(ScaleError):
        EvalSet([1.0], [0.0], [0.0], [1.0])
    with pytest.raises(ScaleError):
        EvalSet([1.0], [1.0], [0.0], [-1.0])


# -- AUSE -------------------------------------------------------------------


def test_ause_zero_for_oracle_ordering(rng):
    mu = rng.standard_normal(500)
    z = mu + rng.standard_normal(500)
    es = latent_set(mu, z, np.abs(mu - z))
    value, curve = ause(es)
    assert value == 0.0
    assert np.all(curve.ordinate == 0.0)


def test_ause_three_pixel_reversed():
    # latent errors 1, 2, 3 with uncertainty ranking them backwards
    es = latent_set([0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [3.0, 2.0, 1.0])
    value, curve = ause(es, "mae", 1.0 / 3.0)
    # method keeps {1,2,3}, {2,3}, {3}; oracle keeps {1,2,3}, {1,2}, {1}
    np.testing.assert_allclose(curve.ordinate, [0.0, 1.0, 2.0], atol=1e-15)
    assert value == pytest.approx(2.0 / 3.0, rel=1e-15)
    rmse_value, _ = ause(es, "rmse", 1.0 / 3.0)
    d1 = math.sqrt(6.5) - math.sqrt(2.5)
    d2 = 3.0 - 1.0
    assert rmse_value == pytest.approx((d1 / 2 + (d1 + d2) / 2) / 3.0, rel=1e-14)


def brute_force_ause(errors, uncertainty, step, base_metric):
    """Enumerate the kept subset explicitly for every removal fraction."""
    n = len(errors)
    k = round(1 / step)

    def curve(key):
        ranked = sorted(range(n), key=lambda i: (-key[i], i))
        out = []
        for j in range(k):
            kept = set(ranked[(j * n) // k:])
            vals = [errors[i] for i in kept]
            if base_metric == "mae":
                out.append(sum(abs(v) for v in vals) / len(vals))
            else:
                out.append(math.sqrt(sum(v * v for v in vals) / len(vals)))
        return out

    diff = [a - b for a, b in zip(curve(uncertainty), curve(errors))]
    return sum((diff[j] + diff[j + 1]) / 2 * step for j in range(k - 1))


@pytest.mark.parametrize("base_metric", ["mae", "rmse"])
def test_ause_matches_subset_enumeration(rng, base_metric):
    for n in (2, 7, 50, 333):
        mu = rng.standard_normal(n)
        z = mu + rng.laplace(0.0, 0.5, n)
        b = rng.uniform(0.1, 1.0, n)
        b[: n // 3] = 0.5  # force ties
        es = latent_set(mu, z, b)
        errors = np.abs(mu - np.log(np.exp(z)))
        got, _ = ause(es, base_metric, 0.01)
        assert got == pytest.approx(brute_force_ause(list(errors), list(b), 0.01, base_metric), abs=1e-12)


def test_ause_invariant_under_monotone_transform(rng):
    mu = rng.standard_normal(300)
    z = mu + rng.standard_normal(300)
    b = rng.uniform(0.1, 2.0, 300)
    base = ause(latent_set(mu, z, b))[0]
    assert ause(latent_set(mu, z, 3.7 * b))[0] == base
    assert ause(latent_set(mu, z, b**3))[0] == base
    assert ause(latent_set(mu, z, np.exp(b)))[0] == base


def test_oracle_curve_is_non_increasing(rng):
    err = np.abs(rng.standard_normal(1000))
    _, _, oracle = sparsification_curves(err, rng.random(1000), step=0.01)
    assert np.all(np.diff(oracle) <= 1e-15)


def test_ause_depth_space_and_errors(rng):
    es = latent_set([0.0, 1.0, 2.0], [0.5, 1.0, 1.0], [1.0, 2.0, 3.0])
    assert ause(es, space="depth")[0] != ause(es, space="latent")[0]
    with pytest.raises(ValueError):
        ause(es, space="pixels")
    with pytest.raises(ValueError):
        ause(es, step=0.3)
    with pytest.raises(EmptyInputError):
        ause(latent_set([0.0], [1.0], [1.0]))


# -- AUCE -------------------------------------------------------------------


def test_laplace_quantile():
    assert laplace_quantile(0.75) == pytest.approx(math.log(2.0), abs=1e-12)
    assert laplace_quantile(0.5) == 0.0
    assert laplace_quantile(0.25) == pytest.approx(-math.log(2.0), abs=1e-12)
    with pytest.raises(ValueError):
        laplace_quantile(1.0)


def test_calibration_grid_is_symmetric():
    p = calibration_grid(100)
    assert p.size == 100 and p[0] > 0.0 and p[-1] < 1.0
    np.testing.assert_allclose(p + p[::-1], 1.0, rtol=0, atol=1e-15)


def test_auce_perfect_point_predictions():
    value, curve = auce(latent_set([0.0, 1.0, 2.0], [0.0, 1.0, 2.0], [0.1, 0.2, 0.3]))
    assert value == pytest.approx(0.5, abs=1e-15)
    assert len(curve) == 100


def test_auce_small_for_exact_laplace_residuals():
    rng = np.random.default_rng(21)
    n = 1_000_000
    mu = rng.standard_normal(n)
    b = rng.uniform(0.05, 0.5, n)
    z = mu + rng.laplace(0.0, b)
    value, _ = auce(latent_set(mu, z, b))
    assert value <= 0.01


def test_auce_hand_coverage():
    # one pixel at |err|/b = ln 2 is covered exactly from p = 0.5 onwards
    grid = 4  # p = 0.125, 0.375, 0.625, 0.875
    es = latent_set([0.0], [math.log(2.0)], [1.0])
    value, curve = auce(es, grid)
    np.testing.assert_allclose(curve.ordinate, [0.125, 0.375, 0.375, 0.125], atol=1e-15)
    assert value == pytest.approx(0.25, abs=1e-15)


def test_auce_zero_scale_pixel_never_covered():
    es = latent_set([0.0, 0.0], [0.0, 1.0], [0.0, 0.0])
    _, curve = auce(es, 10)
    # the exact pixel is covered, the other never is
    np.testing.assert_allclose(curve.ordinate, np.abs(calibration_grid(10) - 0.5), atol=1e-15)


# -- NLL --------------------------------------------------------------------


def test_nll_hand_cases():
    assert nll(latent_set([0.0], [0.0], [0.5])) == 0.0
    assert nll(latent_set([0.3], [0.3], [1.0])) == pytest.approx(math.log(2.0), abs=1e-15)
    assert nll(latent_set([0.0], [1.0], [1.0])) == pytest.approx(1.0 + math.log(2.0), abs=1e-15)
    with pytest.raises(ScaleError):
        nll(latent_set([0.0], [0.0], [0.0]))


def test_nll_matches_scipy_density(rng):
    from scipy import stats

    mu, z, b = rng.standard_normal(50), rng.standard_normal(50), rng.uniform(0.1, 2.0, 50)
    np.testing.assert_allclose(laplace_nll(mu, b, z), -stats.laplace.logpdf(z, loc=mu, scale=b), rtol=1e-13)


def test_nll_shift_and_scale(rng):
    mu, b = rng.standard_normal(100), rng.uniform(0.1, 1.0, 100)
    z = mu + rng.standard_normal(100)
    base = np.mean(laplace_nll(mu, b, z))
    assert np.mean(laplace_nll(mu + 2.5, b, z + 2.5)) == pytest.approx(base, abs=1e-12)
    c = 3.0
    assert np.mean(laplace_nll(c * mu, c * b, c * z)) == pytest.approx(base + math.log(c), abs=1e-12)


# -- permutation invariance -------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metrics_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n = 40
    mu = rng.standard_normal(n)
    b = rng.choice([0.2, 0.5, 1.0], n)
    z = mu + rng.laplace(0.0, b)
    perm = rng.permutation(n)
    a, _ = evaluate(latent_set(mu, z, b), step=0.05, grid=20)
    p, _ = evaluate(latent_set(mu[perm], z[perm], b[perm]), step=0.05, grid=20)
    for key in a:
        # AUSE depends on ties only through which tied pixels go first, and
        # the method curve for tied uncertainties is order-dependent by design
        if key == "ause":
            continue
        assert p[key] == pytest.approx(a[key], rel=1e-12, abs=1e-12)


def test_ause_permutation_invariant_without_ties(rng):
    n = 64
    mu = rng.standard_normal(n)
    b = rng.uniform(0.1, 1.0, n)
    z = mu + rng.laplace(0.0, b)
    perm = rng.permutation(n)
    assert ause(latent_set(mu[perm], z[perm], b[perm]))[0] == pytest.approx(ause(latent_set(mu, z, b))[0], abs=1e-14)


# -- ensembles --------------------------------------------------------------


def test_ensemble_mean_var_examples():
    assert ensemble_mean_var([1.0, 3.0]) == (2.0, 1.0)
    assert ensemble_mean_var([4.5]) == (4.5, 0.0)
    mu, var = ensemble_mean_var([1.0, 2.0, 3.0])
    assert mu == 2.0 and var == pytest.approx(2.0 / 3.0, rel=1e-15)
    with pytest.raises(EmptyInputError):
        ensemble_mean_var([])


def test_ensemble_predictive_examples(rng):
    assert ensemble_predictive([1.0, 3.0], [1.0, 1.0]) == (2.0, 2.0)
    assert ensemble_predictive([0.7], [0.2]) == (0.7, 0.2)
    means = rng.standard_normal((5, 8))
    np.testing.assert_array_equal(ensemble_predictive(means, np.zeros((5, 8)))[1], ensemble_mean_var(means)[1])
    with pytest.raises(DimensionError):
        ensemble_predictive([1.0, 2.0], [1.0])


def test_ensemble_predictive_is_mixture_variance(rng):
    # law of total variance against direct sampling of the mixture
    means = np.array([-1.0, 0.5, 2.0])
    variances = np.array([0.2, 1.0, 0.4])
    mu, var = ensemble_predictive(means, variances)
    k = rng.integers(0, 3, 400_000)
    x = rng.normal(means[k], np.sqrt(variances[k]))
    assert mu == pytest.approx(x.mean(), abs=0.01)
    assert var == pytest.approx(x.var(), rel=0.01)


def test_evaluate_reports_null_nll_for_zero_scale():
    metrics, curves = evaluate(latent_set([0.0, 1.0], [0.0, 1.0], [0.0, 1.0]), step=0.5, grid=4)
    assert metrics["nll"] is None
    assert set(curves) == {"sparsification", "calibration"}
    assert list(itertools.chain(curves["sparsification"].abscissa)) == [0.0, 0.5]
