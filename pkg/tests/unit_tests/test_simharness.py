import numpy as np
import pytest

from lrspatial.bootstrap import replicate_rng
from lrspatial.errors import ScenarioError, SizeGuard
from lrspatial.scenarios import Scenario
from lrspatial.simharness import (
    BENCHMARK_COLUMNS,
    TARGETS,
    generate_dgp,
    rmse_bias,
    run_benchmark,
    run_monte_carlo,
    run_replicate,
    validate_scenario,
)


def scenario(**overrides) -> Scenario:
    fields = dict(
        id="unit",
        n=60,
        dependence=0.5,
        tau2=0.5,
        replications=3,
        estimators=["LM", "SLM", "LSLM:20", "LSEM:20"],
        seed=1,
    )
    fields.update(overrides)
    return Scenario(**fields)


def test_draws_are_deterministic_per_replicate():
    s = scenario()
    first, again, other = generate_dgp(s, 0), generate_dgp(s, 0), generate_dgp(s, 1)

    np.testing.assert_array_equal(first.data.y, again.data.y)
    np.testing.assert_array_equal(first.coords, again.coords)
    assert not np.array_equal(first.data.y, other.data.y)
    assert first.w.scaled and not first.w0.scaled


def test_independent_draw_without_dependence_or_nugget():
    s = scenario(dependence=0.0, tau2=0.0)
    draw = generate_dgp(s, 2)
    rng = replicate_rng(s.seed, 2)
    rng.standard_normal((s.n, 2))
    x1, x2, eps = rng.standard_normal(s.n), rng.standard_normal(s.n), rng.standard_normal(s.n)

    np.testing.assert_allclose(draw.data.y, 1.0 + 2.0 * x1 + 0.5 * x2 + eps, atol=1e-12)
    assert (draw.de1, draw.ie1) == pytest.approx((2.0, 0.0), abs=1e-12)


def test_error_process_draw():
    s = scenario(dgp="SEM-noise", dependence=0.7, tau2=0.0)
    draw = generate_dgp(s, 0)
    rng = replicate_rng(s.seed, 0)
    rng.standard_normal((s.n, 2))
    x1, x2, eps = rng.standard_normal(s.n), rng.standard_normal(s.n), rng.standard_normal(s.n)
    errors = np.linalg.solve(np.eye(s.n) - 0.7 * draw.w.dense(), eps)

    np.testing.assert_allclose(draw.data.y, 1.0 + 2.0 * x1 + 0.5 * x2 + errors, atol=1e-10)
    assert (draw.de1, draw.ie1) == (2.0, 0.0)


def test_lag_process_truth_has_spillover():
    draw = generate_dgp(scenario(dependence=0.6), 0)
    assert draw.de1 > 2.0
    assert draw.ie1 > 0.0


def test_dependence_below_spectrum_is_rejected():
    with pytest.raises(ScenarioError) as excinfo:
        generate_dgp(scenario(dependence=-0.999), 0)
    assert excinfo.value.scenario == "unit"


def test_size_limit():
    with pytest.raises(SizeGuard):
        generate_dgp(scenario(n=20_001), 0)
    with pytest.raises(SizeGuard):
        run_monte_carlo(scenario(n=20_001))


def test_rmse_dominates_bias():
    rmse, bias = rmse_bias(np.array([1.0, 2.0, 4.0]), 2.0)
    assert bias == pytest.approx(1.0 / 3.0)
    assert rmse == pytest.approx(np.sqrt(5.0 / 3.0))


def test_monte_carlo_report():
    report = run_monte_carlo(scenario(), workers=1)
    frame = report.to_frame()

    assert set(frame["estimator"]) == {"LM", "SLM", "LSLM_20", "LSEM_20"}
    assert set(frame.loc[frame["estimator"] == "LSLM_20", "target"]) == set(TARGETS)
    # LM has no dependence parameter
    assert "dependence" not in set(frame.loc[frame["estimator"] == "LM", "target"])
    assert np.all(frame["rmse"] >= np.abs(frame["bias"]) - 1e-12)
    assert report.failures == {"LM": 0, "SLM": 0, "LSLM_20": 0, "LSEM_20": 0}
    assert not report.fully_failed
    assert report.row("LSLM_20", "beta1").n_ok == 3
    assert {"dgp", "eigen", "LSLM_20"} <= set(report.timings)


def test_monte_carlo_is_independent_of_worker_count():
    s = scenario(estimators=["LM", "LSLM:15"], replications=4)
    sequential = run_monte_carlo(s, workers=1)
    parallel = run_monte_carlo(s, workers=2)

    for label in ("LM", "LSLM_15"):
        for target, values in sequential.estimates[label].items():
            np.testing.assert_array_equal(values, parallel.estimates[label][target])
    assert sequential.to_frame().equals(parallel.to_frame())


def test_monte_carlo_with_bootstrap_intervals():
    s = scenario(estimators=["LSLM:15"], replications=2, bootstrap=10)
    report = run_monte_carlo(s, workers=1)
    lower = report.row("LSLM_15", "DE1_lower").mean
    upper = report.row("LSLM_15", "DE1_upper").mean
    assert lower <= upper


def test_estimator_failures_are_counted(mocker):
    from lrspatial.errors import OptimFailure

    mocker.patch("lrspatial.simharness.fit_moments", side_effect=OptimFailure("no finite start"))
    report = run_monte_carlo(scenario(estimators=["LM", "LSEM:10"]), workers=1)

    assert report.failures == {"LM": 0, "LSEM_10": 3}
    assert not report.fully_failed
    assert all(row.estimator == "LM" for row in report.rows)


def test_benchmark_table():
    frame = run_benchmark([80], [10], ["LSLM"], bootstrap_m=5, seed=0)

    assert list(frame.columns) == BENCHMARK_COLUMNS
    assert set(frame["phase"]) == {"estimation", "eigen", "precompute", "bootstrap"}
    lm = frame[frame["kind"] == "LM"]
    assert lm["L"].tolist() == [0]
    assert (frame["status"] == "ok").all()
    assert (frame["seconds"] >= 0).all()


def test_inadmissible_dependence_fails_every_replicate():
    s = scenario(dependence=-0.95, estimators=["LM", "LSLM:10"])
    report = run_monte_carlo(s, workers=1)

    assert report.failures == {"LM": 3, "LSLM_10": 3}
    assert report.fully_failed
    assert report.rows == []


def test_replicate_records_draw_failure():
    outcome = run_replicate(scenario(dependence=-0.95), 0)

    assert set(outcome["results"]) == {"LM", "SLM", "LSLM_20", "LSEM_20"}
    assert all(r["error"].startswith("dgp:") for r in outcome["results"].values())
    assert np.isnan(outcome["DE1"]) and np.isnan(outcome["IE1"])


def test_decomposition_failure_is_counted(mocker):
    from lrspatial.errors import ConvergenceFailure

    mocker.patch(
        "lrspatial.simharness.top_l_eigenpairs",
        side_effect=ConvergenceFailure("eigsh did not converge", 1000),
    )
    report = run_monte_carlo(scenario(estimators=["LM", "LSEM:10"]), workers=1)
    assert report.failures == {"LM": 3, "LSEM_10": 3}


def test_unexpected_numerical_error_is_counted(mocker):
    mocker.patch(
        "lrspatial.simharness.fit_moments", side_effect=np.linalg.LinAlgError("singular")
    )
    report = run_monte_carlo(scenario(estimators=["LM", "LSEM:10"]), workers=1)
    assert report.failures == {"LM": 0, "LSEM_10": 3}


def test_scenario_validation_checks_the_weights_spectrum():
    validate_scenario(scenario(dependence=0.5))
    with pytest.raises(ScenarioError) as excinfo:
        validate_scenario(scenario(dependence=-0.95))
    assert excinfo.value.scenario == "unit"
    assert "dependence" in str(excinfo.value)
