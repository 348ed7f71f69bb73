"""Data-generating processes, replicated Monte Carlo runs and timing
benchmarks."""

import time
from collections import defaultdict
from functools import partial
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp
from eliot import start_action
from scipy.sparse.linalg import splu

from lrspatial.bootstrap import bootstrap, replicate_rng
from lrspatial.constants import DENSE_GUARD, DGP_SIZE_LIMIT, failed_status
from lrspatial.effects import effects_dense, effects_fullrank, lowrank_effects
from lrspatial.eigenbasis import EigenBasis, top_l_eigenpairs
from lrspatial.errors import LowRankError, ScenarioError, SizeGuard
from lrspatial.logger import logger
from lrspatial.model import DesignData, ModelKind
from lrspatial.moments import precompute
from lrspatial.oracle import fit_fullrank, moran_z
from lrspatial.parallel import run_indexed
from lrspatial.reml import FitOptions, dependence_bounds, fit_moments, fit_ols, residuals
from lrspatial.scenarios import EstimatorSpec, Scenario
from lrspatial.utils.pydantic_utils import ArbitraryModel
from lrspatial.weights import SpatialWeights, build_delaunay_adjacency, scale_by_max_eigenvalue

TARGETS = ("beta1", "se_beta1", "dependence", "DE1", "IE1", "moran_z")
INTERVAL_TARGETS = ("DE1_lower", "DE1_upper", "IE1_lower", "IE1_upper")


class DgpDraw(ArbitraryModel):
    coords: np.ndarray
    w0: SpatialWeights
    w: SpatialWeights
    data: DesignData
    de1: float
    ie1: float


def _lag_solve(w: SpatialWeights, theta: float, rhs: np.ndarray) -> np.ndarray:
    """``(I - theta W)^-1 rhs`` by sparse LU."""
    if theta == 0:
        return rhs
    system = sp.identity(w.n, format="csc") - theta * sp.csc_matrix(w.entries)
    return splu(system).solve(rhs)


def _check_dependence(scenario: Scenario, w: SpatialWeights) -> None:
    theta = scenario.dependence
    if not w.lambda_min < theta < 1.0:
        raise ScenarioError(
            f"dependence {theta} outside ({w.lambda_min:.4f}, 1) for this weights matrix.",
            scenario.id,
        )


def validate_scenario(scenario: Scenario) -> None:
    """Reject a scenario whose dependence lies outside the admissible range
    of its first replicate's weights matrix.

    Later replicates redraw the locations, so their spectra differ slightly;
    those are still checked per replicate by ``generate_dgp``.
    """
    if scenario.n > DGP_SIZE_LIMIT:
        raise SizeGuard(scenario.n, DGP_SIZE_LIMIT, "exact data generation")
    rng = replicate_rng(scenario.seed, 0)
    coords = rng.standard_normal((scenario.n, 2))
    _check_dependence(scenario, scale_by_max_eigenvalue(build_delaunay_adjacency(coords)))


def generate_dgp(
    scenario: Scenario, replicate_index: int, size_limit: Optional[int] = DGP_SIZE_LIMIT
) -> DgpDraw:
    """One draw of the scenario's data-generating process.

    Draw order per replicate stream: coordinates, x1, x2, epsilon, u.
    """
    n = scenario.n
    if size_limit is not None and n > size_limit:
        raise SizeGuard(n, size_limit, "exact data generation")
    rng = replicate_rng(scenario.seed, replicate_index)
    coords = rng.standard_normal((n, 2))
    x1 = rng.standard_normal(n)
    x2 = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    u = rng.standard_normal(n) * np.sqrt(scenario.tau2)

    w0 = build_delaunay_adjacency(coords)
    w = scale_by_max_eigenvalue(w0)
    _check_dependence(scenario, w)
    theta = scenario.dependence
    b0, b1, b2 = scenario.true_beta
    signal = b1 * x1 + b2 * x2
    if scenario.dgp == "SLM-noise":
        z = _lag_solve(w, theta, signal + eps)
        de1, ie1 = effects_dense(w, theta, b1) if n <= DENSE_GUARD else (np.nan, np.nan)
    else:
        z = signal + _lag_solve(w, theta, eps)
        de1, ie1 = b1, 0.0
    y = b0 + z + u
    data = DesignData.from_arrays(y, np.column_stack([x1, x2]), names=["x1", "x2"])
    return DgpDraw(coords=coords, w0=w0, w=w, data=data, de1=de1, ie1=ie1)


def _fit_estimator(
    spec: EstimatorSpec,
    draw: DgpDraw,
    basis: Optional[EigenBasis],
    scenario: Scenario,
    replicate_index: int,
) -> Dict[str, float]:
    data, w = draw.data, draw.w
    kind = spec.kind
    if kind == ModelKind.LM:
        fitted = fit_ols(data)
        return dict(
            beta1=fitted.beta[1],
            se_beta1=fitted.se_beta[1],
            dependence=np.nan,
            DE1=fitted.beta[1],
            IE1=0.0,
            moran_z=moran_z(residuals(fitted, data), draw.w0),
        )
    if not kind.is_lowrank:
        full = fit_fullrank(kind, data, w)
        de1, ie1 = effects_fullrank(full, w, 1)
        return dict(
            beta1=full.beta[1],
            se_beta1=full.se_beta[1],
            dependence=full.theta,
            DE1=de1,
            IE1=ie1,
            moran_z=moran_z(full.innovations, draw.w0),
        )

    sub = basis.truncate(min(spec.L, basis.L))
    moments = precompute(data, sub, w, kind)
    lower, _ = dependence_bounds(w)
    fitted = fit_moments(moments, lower, FitOptions())
    rho = fitted.theta.rho if kind.has_lag else None
    de, ie = lowrank_effects(kind, fitted.beta, rho, moments, data.K)
    outcome = dict(
        beta1=fitted.beta[1],
        se_beta1=fitted.se_beta[1],
        dependence=fitted.dependence,
        DE1=de[0],
        IE1=ie[0],
        moran_z=moran_z(residuals(fitted, data, sub, w), draw.w0),
    )
    if scenario.bootstrap > 0:
        result = bootstrap(
            fitted,
            data,
            sub,
            w,
            m=scenario.bootstrap,
            seed=scenario.seed * 1_000_003 + replicate_index,
            level=scenario.level,
            workers=1,
            moments=moments,
        )
        (de_lo, de_hi), (ie_lo, ie_hi) = result.ci_de()[0], result.ci_ie()[0]
        outcome.update(DE1_lower=de_lo, DE1_upper=de_hi, IE1_lower=ie_lo, IE1_upper=ie_hi)
    return outcome


# numpy's LinAlgError is a ValueError
REPLICATE_ERRORS = (LowRankError, ArithmeticError, ValueError)


def _failed_replicate(scenario: Scenario, stage: str, error: Exception, timings) -> Dict:
    results = {spec.label: {"error": f"{stage}: {error}"} for spec in scenario.estimators}
    return {"results": results, "timings": dict(timings), "DE1": np.nan, "IE1": np.nan}


def run_replicate(scenario: Scenario, replicate_index: int) -> Dict:
    """Generate one dataset and fit every estimator.

    Failures never propagate: a failed data draw or decomposition marks every
    estimator of the replicate as failed, a failed fit marks that estimator.
    """
    timings: Dict[str, float] = defaultdict(float)
    with start_action(
        action_type="run_replicate", scenario=scenario.id, replicate=replicate_index
    ) as action:

        def failed(stage: str, error: Exception) -> None:
            action.log(message_type="error", stage=stage, error=str(error))
            logger.warning(f"{scenario.id} replicate {replicate_index} {stage} failed: {error}")

        started = time.perf_counter()
        try:
            draw = generate_dgp(scenario, replicate_index)
        except REPLICATE_ERRORS as e:
            failed("dgp", e)
            return _failed_replicate(scenario, "dgp", e, timings)
        timings["dgp"] = time.perf_counter() - started

        basis = None
        if scenario.max_rank:
            started = time.perf_counter()
            try:
                basis = top_l_eigenpairs(draw.w, scenario.max_rank, which=scenario.which)
            except REPLICATE_ERRORS as e:
                failed("eigen", e)
                return _failed_replicate(scenario, "eigen", e, timings)
            timings["eigen"] = time.perf_counter() - started

        results: Dict[str, Dict] = {}
        for spec in scenario.estimators:
            started = time.perf_counter()
            try:
                results[spec.label] = _fit_estimator(spec, draw, basis, scenario, replicate_index)
            except REPLICATE_ERRORS as e:
                failed(spec.label, e)
                results[spec.label] = {"error": str(e)}
            timings[spec.label] = time.perf_counter() - started
    return {"results": results, "timings": dict(timings), "DE1": draw.de1, "IE1": draw.ie1}


class ReportRow(ArbitraryModel):
    scenario: str
    estimator: str
    L: Optional[int]
    target: str
    mean: float
    rmse: float
    bias: float
    n_ok: int
    n_fail: int


class SimulationReport(ArbitraryModel):
    scenario: Scenario
    rows: List[ReportRow]
    estimates: Dict[str, Dict[str, np.ndarray]]
    timings: Dict[str, float]
    failures: Dict[str, int]

    @property
    def fully_failed(self) -> bool:
        return all(count == self.scenario.replications for count in self.failures.values())

    def row(self, estimator: str, target: str) -> ReportRow:
        for row in self.rows:
            if row.estimator == estimator and row.target == target:
                return row
        raise KeyError((estimator, target))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.rows])

    def timing_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {"scenario": self.scenario.id, "phase": phase, "seconds": seconds}
                for phase, seconds in self.timings.items()
            ]
        )


def rmse_bias(estimates: np.ndarray, truth) -> tuple:
    errors = np.asarray(estimates, dtype=float) - truth
    return float(np.sqrt(np.mean(errors**2))), float(np.mean(errors))


def _aggregate(scenario: Scenario, outcomes: List[Dict]) -> SimulationReport:
    R = len(outcomes)
    truths = {
        "beta1": scenario.true_beta[1],
        "dependence": scenario.dependence,
        "DE1": np.array([o["DE1"] for o in outcomes]),
        "IE1": np.array([o["IE1"] for o in outcomes]),
        "moran_z": 0.0,
    }
    rows, estimates, failures = [], {}, {}
    for spec in scenario.estimators:
        label = spec.label
        per_rep = [o["results"][label] for o in outcomes]
        ok = np.array(["error" not in r for r in per_rep])
        failures[label] = int((~ok).sum())
        targets = list(TARGETS)
        if scenario.bootstrap > 0 and spec.kind.is_lowrank:
            targets += list(INTERVAL_TARGETS)
        estimates[label] = {
            t: np.array([r.get(t, np.nan) if "error" not in r else np.nan for r in per_rep])
            for t in targets
        }
        for target in targets:
            values = estimates[label][target]
            mask = ok & np.isfinite(values)
            if not mask.any():
                continue
            kept = values[mask]
            if target == "se_beta1":
                beta1 = estimates[label]["beta1"][mask]
                truth = float(np.std(beta1, ddof=1)) if beta1.size > 1 else np.nan
            elif target in truths:
                truth = truths[target]
                truth = truth[mask] if isinstance(truth, np.ndarray) else truth
            else:
                truth = np.nan
            rmse, bias = rmse_bias(kept, truth)
            rows.append(
                ReportRow(
                    scenario=scenario.id,
                    estimator=label,
                    L=spec.L,
                    target=target,
                    mean=float(kept.mean()),
                    rmse=rmse,
                    bias=bias,
                    n_ok=int(mask.sum()),
                    n_fail=R - int(mask.sum()),
                )
            )
    timings: Dict[str, float] = defaultdict(float)
    for o in outcomes:
        for phase, seconds in o["timings"].items():
            timings[phase] += seconds
    return SimulationReport(
        scenario=scenario, rows=rows, estimates=estimates, timings=dict(timings), failures=failures
    )


def run_monte_carlo(scenario: Scenario, workers: Optional[int] = None) -> SimulationReport:
    """Replicate the scenario and summarise RMSE and bias per estimator and
    target."""
    if scenario.n > DGP_SIZE_LIMIT:
        raise SizeGuard(scenario.n, DGP_SIZE_LIMIT, "exact data generation")
    with start_action(
        action_type="run_monte_carlo", scenario=scenario.id, replications=scenario.replications
    ):
        outcomes = run_indexed(
            partial(run_replicate, scenario),
            scenario.replications,
            workers=workers,
            backend="process",
        )
        report = _aggregate(scenario, outcomes)
    for label, count in report.failures.items():
        if count:
            logger.warning(f"{scenario.id}: {label} failed in {count} replicates.")
    return report


BENCHMARK_COLUMNS = ["n", "L", "kind", "phase", "seconds", "status"]


def run_benchmark(
    sizes: Sequence[int],
    ls: Sequence[int],
    kinds: Sequence[str] = ("LSLM", "LSEM"),
    bootstrap_m: int = 200,
    seed: int = 0,
) -> pd.DataFrame:
    """Wall-clock seconds per (n, L, kind, phase).

    Phases are eigen, precompute, estimation and bootstrap; an ``L = 0``
    OLS row is included for each n. A failing cell is marked and the run
    continues.
    """
    records = []

    def record(n, L, kind, phase, seconds, status="ok"):
        records.append(dict(n=n, L=L, kind=kind, phase=phase, seconds=seconds, status=status))

    for n in sizes:
        scenario = Scenario(
            id=f"bench-{n}", n=n, dependence=0.6, tau2=1.0, replications=1,
            estimators=["LM"], seed=seed,
        )
        with start_action(action_type="benchmark_size", n=n):
            try:
                draw = generate_dgp(scenario, 0, size_limit=None)
            except LowRankError as e:
                record(n, 0, "LM", "dgp", np.nan, f"{failed_status}: {e}")
                continue
            started = time.perf_counter()
            fit_ols(draw.data)
            record(n, 0, "LM", "estimation", time.perf_counter() - started)

            for L in ls:
                try:
                    started = time.perf_counter()
                    basis = top_l_eigenpairs(draw.w, min(L, n))
                    record(n, L, "-", "eigen", time.perf_counter() - started)
                except LowRankError as e:
                    record(n, L, "-", "eigen", np.nan, f"{failed_status}: {e}")
                    continue
                for kind_name in kinds:
                    kind = ModelKind(kind_name)
                    try:
                        started = time.perf_counter()
                        moments = precompute(draw.data, basis, draw.w, kind)
                        record(n, L, kind.value, "precompute", time.perf_counter() - started)
                        lower, _ = dependence_bounds(draw.w)
                        started = time.perf_counter()
                        fitted = fit_moments(moments, lower, FitOptions())
                        record(n, L, kind.value, "estimation", time.perf_counter() - started)
                        if bootstrap_m > 0:
                            started = time.perf_counter()
                            bootstrap(
                                fitted, draw.data, basis, draw.w, bootstrap_m, seed,
                                workers=1, moments=moments,
                            )
                            record(n, L, kind.value, "bootstrap", time.perf_counter() - started)
                    except LowRankError as e:
                        logger.warning(f"benchmark cell n={n} L={L} {kind.value} failed: {e}")
                        record(n, L, kind.value, "estimation", np.nan, f"{failed_status}: {e}")
    return pd.DataFrame(records, columns=BENCHMARK_COLUMNS)
