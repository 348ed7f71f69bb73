import sys

import numpy as np
import pytest

import lrspatial.bootstrap  # noqa: F401
from lrspatial.bootstrap import (
    bootstrap,
    percentile_ci,
    replicate_rng,
    summary_frame,
    with_intervals,
)
from lrspatial.constants import TAU2_FLOOR
from lrspatial.effects import estimate_effects
from lrspatial.eigenbasis import top_l_eigenpairs
from lrspatial.errors import BootstrapFailure, OptimFailure, TooFewSamples, UnsupportedKind
from lrspatial.model import DesignData, ModelKind
from lrspatial.moments import precompute, sample_passes
from lrspatial.reml import fit, fit_ols

from ..conftest import delaunay_weights

# `lrspatial.bootstrap` resolves to the re-exported function; take the module itself.
bootstrap_module = sys.modules["lrspatial.bootstrap"]


@pytest.fixture(scope="module")
def lag_problem():
    n, rho = 100, 0.5
    _, w = delaunay_weights(n, seed=17)
    rng = np.random.default_rng(17)
    X = rng.standard_normal((n, 2))
    signal = X @ np.array([2.0, 0.5]) + rng.standard_normal(n)
    y = 1.0 + np.linalg.solve(np.eye(n) - rho * w.dense(), signal)
    data = DesignData.from_arrays(y, X)
    basis = top_l_eigenpairs(w, 30)
    fitted = fit(ModelKind.LSLM, data, basis, w)
    return data, w, basis, fitted


def test_percentile_interval_interpolates():
    assert percentile_ci(np.arange(101.0), 0.9) == pytest.approx((5.0, 95.0))
    lower, upper = percentile_ci([0.0, 1.0], 0.5)
    assert (lower, upper) == (0.25, 0.75)


def test_percentile_interval_input_checks():
    with pytest.raises(TooFewSamples):
        percentile_ci([1.0], 0.95)
    with pytest.raises(ValueError):
        percentile_ci([1.0, 2.0], 1.5)


def test_replicate_streams_do_not_depend_on_order():
    forward = [replicate_rng(7, i).standard_normal(3) for i in range(4)]
    backward = [replicate_rng(7, i).standard_normal(3) for i in reversed(range(4))][::-1]
    for a, b in zip(forward, backward):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(forward[0], forward[1])


def test_fast_and_naive_paths_agree(lag_problem):
    data, w, basis, fitted = lag_problem
    before = sample_passes["precompute"]
    fast = bootstrap(fitted, data, basis, w, m=20, seed=3, workers=1, fast=True)
    after_fast = sample_passes["precompute"]
    naive = bootstrap(fitted, data, basis, w, m=20, seed=3, workers=1, fast=False)

    # one precompute for the cache, none per replicate
    assert after_fast - before == 1
    assert sample_passes["precompute"] - after_fast == 21
    np.testing.assert_allclose(fast.theta_array, naive.theta_array, atol=1e-10)
    np.testing.assert_allclose(fast.beta_samples, naive.beta_samples, atol=1e-10)


def test_results_do_not_depend_on_worker_count(lag_problem):
    data, w, basis, fitted = lag_problem
    moments = precompute(data, basis, w, ModelKind.LSLM)
    sequential = bootstrap(fitted, data, basis, w, m=8, seed=5, workers=1, moments=moments)
    threaded = bootstrap(fitted, data, basis, w, m=8, seed=5, workers=4, moments=moments)

    np.testing.assert_array_equal(sequential.theta_array, threaded.theta_array)
    np.testing.assert_array_equal(sequential.de_samples, threaded.de_samples)


def test_result_shapes_and_intervals(lag_problem):
    data, w, basis, fitted = lag_problem
    moments = precompute(data, basis, w, ModelKind.LSLM)
    result = bootstrap(fitted, data, basis, w, m=10, seed=1, workers=1, moments=moments)

    assert result.theta_names == ["rho", "ratio"]
    assert result.theta_array.shape == (10, 2)
    assert result.beta_samples.shape == (10, 3)
    assert result.de_samples.shape == (10, 2)
    assert result.n_ok == 10
    ci = result.ci_de()
    assert ci.shape == (2, 2)
    assert np.all(ci[:, 0] <= ci[:, 1])
    assert all(theta.rho is not None for theta in result.theta_samples)

    effects = with_intervals(estimate_effects(fitted, moments), result)
    frame = summary_frame(result, fitted, effects)
    assert frame["name"].tolist() == [
        "rho", "ratio", "intercept", "x1", "x2", "DE_x1", "DE_x2", "IE_x1", "IE_x2",
    ]
    assert list(frame.columns) == ["name", "estimate", "lower", "upper", "replicates", "failures"]
    assert effects.level == 0.95


def test_tolerated_failures_become_nan_rows(mocker, lag_problem):
    data, w, basis, fitted = lag_problem
    real_refit = bootstrap_module._refit
    calls = {"count": 0}

    def flaky(moments, base):
        calls["count"] += 1
        if calls["count"] == 2:
            raise OptimFailure("no finite start")
        return real_refit(moments, base)

    mocker.patch.object(bootstrap_module, "_refit", side_effect=flaky)
    result = bootstrap(fitted, data, basis, w, m=10, seed=2, workers=1)

    assert result.n_failed == 1
    assert result.failed.tolist() == [False, True] + [False] * 8
    assert np.isnan(result.theta_array[1]).all()
    assert result.theta_samples[1] is None
    assert np.isfinite(result.ci_theta()).all()


def test_too_many_failures_raise(mocker, lag_problem):
    data, w, basis, fitted = lag_problem
    mocker.patch.object(bootstrap_module, "_refit", side_effect=OptimFailure("no finite start"))
    with pytest.raises(BootstrapFailure) as excinfo:
        bootstrap(fitted, data, basis, w, m=5, seed=2, workers=1)
    assert (excinfo.value.failed, excinfo.value.total) == (5, 5)


def test_ols_fit_cannot_be_bootstrapped(lag_problem):
    data, w, basis, _ = lag_problem
    with pytest.raises(UnsupportedKind):
        bootstrap(fit_ols(data), data, basis, w, m=5, seed=0)


def test_zero_noise_fit_draws_the_fitted_mean(mocker, lag_problem):
    data, w, basis, fitted = lag_problem
    degenerate = fitted.model_copy(update=dict(perfect_fit=True, tau2=TAU2_FLOOR))
    draw_spy = mocker.spy(bootstrap_module, "draw_response")
    result = bootstrap(degenerate, data, basis, w, m=4, seed=6, workers=1)

    assert draw_spy.call_count == 4
    assert all(call.args[3] == 0.0 for call in draw_spy.call_args_list)
    assert result.n_failed == 0
    # identical responses give identical refits
    assert np.ptp(result.theta_array, axis=0).max() == 0.0
    assert np.ptp(result.beta_samples, axis=0).max() == 0.0
    assert result.theta_array[0, 0] == pytest.approx(fitted.theta.rho, abs=1e-3)
