import math

import numpy as np
import pytest

from bdbf.calibration import (
    CalibrationState,
    apply_calibration,
    estimate_calibration,
    laplace_scale,
    laplace_variance,
    merge_states,
    nees,
)
from bdbf.errors import EmptyInputError, ScaleError
from bdbf.metrics import EvalSet, ause


def test_laplace_scale_examples():
    assert laplace_scale(2.0) == 1.0
    assert laplace_scale(0.0) == 0.0
    assert laplace_scale(0.5) == 0.5
    with pytest.raises(ScaleError):
        laplace_scale(-1e-9)


def test_laplace_scale_inverts_variance(rng):
    b = rng.uniform(0.0, 5.0, 100)
    np.testing.assert_allclose(laplace_scale(laplace_variance(b)), b, rtol=1e-15)


def test_nees_examples():
    # normalised by the Laplace variance 2 b^2
    assert nees(0.0, 1.0, math.sqrt(2.0)) == pytest.approx(1.0, rel=1e-15)
    assert nees(0.0, 1.0, 1.0) == 0.5
    assert nees(3.0, 0.7, 3.0) == 0.0
    with pytest.raises(ScaleError):
        nees(0.0, 0.0, 1.0)
    with pytest.raises(ScaleError):
        nees(0.0, -1.0, 1.0)


def test_nees_has_unit_mean_for_laplace_samples():
    rng = np.random.default_rng(11)
    b = 0.3
    z = rng.laplace(1.5, b, size=1_000_000)
    assert abs(np.mean(nees(1.5, b, z)) - 1.0) <= 0.01


def test_estimate_calibration_skips_zero_scale():
    state = estimate_calibration([0.0, 0.0, 0.0], [1.0, 0.0, 1.0], [math.sqrt(2.0), 5.0, 0.0])
    assert state.n_pixels == 2
    assert state.n_zero_scale == 1
    assert state.mean_nees == pytest.approx(0.5, rel=1e-15)


def test_apply_calibration_examples():
    assert apply_calibration(CalibrationState(1.0, 10), 0.37) == 0.37
    assert apply_calibration(CalibrationState(4.0, 10), 0.5) == 2.0
    with pytest.raises(EmptyInputError):
        apply_calibration(CalibrationState(float("nan"), 0), 1.0)


def test_overconfident_predictor_is_repaired():
    rng = np.random.default_rng(12)
    b_true = rng.uniform(0.1, 1.0, 400_000)
    mu = rng.standard_normal(b_true.size)
    z = mu + rng.laplace(0.0, b_true)
    b_pred = b_true / 2.0
    half = b_true.size // 2
    train, test = slice(0, half), slice(half, None)
    state = estimate_calibration(mu[train], b_pred[train], z[train])
    assert state.mean_nees == pytest.approx(4.0, rel=0.05)
    var = apply_calibration(state, laplace_variance(b_pred[test]))
    assert np.mean(nees(mu[test], laplace_scale(var), z[test])) == pytest.approx(1.0, abs=0.05)


def test_calibration_is_exact_on_its_own_set(rng):
    mu = rng.standard_normal(1000)
    b = rng.uniform(0.05, 2.0, 1000)
    z = mu + rng.standard_normal(1000)
    state = estimate_calibration(mu, b, z)
    var = apply_calibration(state, laplace_variance(b))
    assert np.mean(nees(mu, laplace_scale(var), z)) == pytest.approx(1.0, abs=1e-9)


def test_merge_states_weights_by_pixels():
    merged = merge_states([CalibrationState(1.0, 100, 2), CalibrationState(4.0, 300, 1)])
    assert merged.mean_nees == pytest.approx(3.25, rel=1e-15)
    assert (merged.n_pixels, merged.n_zero_scale) == (400, 3)


def test_merge_states_equals_pooled_estimate(rng):
    mu, z = rng.standard_normal(500), rng.standard_normal(500)
    b = rng.uniform(0.1, 1.0, 500)
    parts = [estimate_calibration(mu[s], b[s], z[s]) for s in (slice(0, 123), slice(123, 400), slice(400, 500))]
    assert merge_states(parts).mean_nees == pytest.approx(estimate_calibration(mu, b, z).mean_nees, rel=1e-13)


def test_calibration_does_not_change_ause(rng):
    mu = rng.standard_normal(2000)
    b = rng.uniform(0.05, 1.0, 2000)
    depth = np.exp(mu + rng.laplace(0.0, b))
    before = EvalSet(np.exp(mu), depth, mu, b)
    state = estimate_calibration(mu, b, np.log(depth))
    after = EvalSet(np.exp(mu), depth, mu, laplace_scale(apply_calibration(state, laplace_variance(b))))
    assert ause(before)[0] == ause(after)[0]


def test_state_round_trips_through_dict():
    s = CalibrationState(1.2345678901234567, 77, 3)
    assert CalibrationState.from_dict(s.to_dict()) == s
