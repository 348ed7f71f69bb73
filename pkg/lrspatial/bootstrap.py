"""Parametric bootstrap for theta, beta and the effects.

Each replicate draws ``v ~ N(0, tau2 I_L)`` and ``u ~ N(0, tau2 I_n)``,
forms ``y* = X_theta beta + E Sigma_theta v + u`` at the fitted values, and
refits. Only the response moments are recomputed per replicate.
"""

from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from eliot import start_action
from pydantic import BaseModel, Field

from lrspatial.constants import MAX_BOOTSTRAP_FAILURE_RATE
from lrspatial.effects import EffectsEstimate, lowrank_effects
from lrspatial.eigenbasis import EigenBasis
from lrspatial.errors import (
    BootstrapFailure,
    EstimationError,
    ModelError,
    TooFewSamples,
    UnsupportedKind,
)
from lrspatial.logger import logger
from lrspatial.model import DesignData, ThetaPoint, build_design, build_sigma, full_design
from lrspatial.moments import MomentCache, precompute, with_response
from lrspatial.parallel import run_indexed
from lrspatial.reml import FitOptions, FittedModel, fit_moments
from lrspatial.utils.pydantic_utils import ArbitraryModel
from lrspatial.weights import SpatialWeights


class BootstrapOptions(BaseModel):
    m: int = Field(200, ge=1)
    seed: int = 0
    level: float = Field(0.95, gt=0, lt=1)
    workers: Optional[int] = None
    fast: bool = True
    max_failure_rate: float = Field(MAX_BOOTSTRAP_FAILURE_RATE, ge=0, le=1)


class BootstrapResult(ArbitraryModel):
    """Replicate draws; failed replicates are NaN rows flagged in ``failed``."""

    m: int
    seed: int
    level: float
    theta_names: List[str]
    theta_array: np.ndarray
    beta_samples: np.ndarray
    de_samples: np.ndarray
    ie_samples: np.ndarray
    failed: np.ndarray

    @property
    def n_failed(self) -> int:
        return int(self.failed.sum())

    @property
    def n_ok(self) -> int:
        return self.m - self.n_failed

    @property
    def theta_samples(self) -> List[Optional[ThetaPoint]]:
        draws = []
        for row, bad in zip(self.theta_array, self.failed):
            draws.append(None if bad else ThetaPoint(**dict(zip(self.theta_names, row))))
        return draws

    def _ci(self, samples: np.ndarray) -> np.ndarray:
        ok = samples[~self.failed]
        return np.array([percentile_ci(ok[:, j], self.level) for j in range(ok.shape[1])])

    def ci_theta(self) -> np.ndarray:
        return self._ci(self.theta_array)

    def ci_beta(self) -> np.ndarray:
        return self._ci(self.beta_samples)

    def ci_de(self) -> np.ndarray:
        return self._ci(self.de_samples)

    def ci_ie(self) -> np.ndarray:
        return self._ci(self.ie_samples)


class _Replicate(BaseModel):
    theta: Optional[List[float]] = None
    beta: Optional[List[float]] = None
    de: Optional[List[float]] = None
    ie: Optional[List[float]] = None
    error: Optional[str] = None


def percentile_ci(samples, level: float = 0.95) -> Tuple[float, float]:
    """Empirical quantiles at ``(1 - level) / 2`` and ``(1 + level) / 2``,
    linearly interpolated between order statistics."""
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.size < 2:
        raise TooFewSamples(f"percentile intervals need at least 2 samples, got {samples.size}.")
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}.")
    alpha = (1.0 - level) / 2.0
    lower, upper = np.quantile(samples, [alpha, 1.0 - alpha], method="linear")
    return float(lower), float(upper)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for replicate ``index``; independent of execution order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def draw_response(
    rng: np.random.Generator, mean: np.ndarray, e_sigma: np.ndarray, sd: float
) -> np.ndarray:
    v = rng.standard_normal(e_sigma.shape[1]) * sd
    u = rng.standard_normal(mean.size) * sd
    return mean + e_sigma @ v + u


def _refit(moments: MomentCache, fitted: FittedModel) -> FittedModel:
    warm = FitOptions(
        start=fitted.theta, multi_starts=1, alt_intercept=fitted.alt_intercept
    )
    try:
        refit = fit_moments(moments, fitted.lower, warm)
        if refit.converged:
            return refit
    except (EstimationError, ModelError) as e:
        logger.debug(f"Warm-started refit failed ({e}); falling back to multi-start.")
    return fit_moments(
        moments, fitted.lower, FitOptions(alt_intercept=fitted.alt_intercept)
    )


def bootstrap(
    fitted: FittedModel,
    data: DesignData,
    basis: EigenBasis,
    w: Optional[SpatialWeights],
    m: int,
    seed: int,
    level: float = 0.95,
    workers: Optional[int] = None,
    fast: bool = True,
    moments: Optional[MomentCache] = None,
    max_failure_rate: float = MAX_BOOTSTRAP_FAILURE_RATE,
) -> BootstrapResult:
    kind = fitted.kind
    if not kind.is_lowrank:
        raise UnsupportedKind(f"the parametric bootstrap needs a low-rank fit, got {kind.value}.")
    if m < 1:
        raise TooFewSamples(f"m must be at least 1, got {m}.")
    if not fitted.converged:
        logger.warning(f"Bootstrapping a fit with status '{fitted.status}'.")

    if moments is None:
        moments = precompute(data, basis, w, kind, fitted.alt_intercept)
    X_full, _, _ = full_design(kind, data, w, fitted.alt_intercept)
    rho = fitted.theta.rho if kind.has_lag else None
    mean = build_design(kind, data, basis, w, rho, fitted.alt_intercept) @ fitted.beta
    e_sigma = basis.E * build_sigma(kind, fitted.theta, basis.lambdas)
    sd = 0.0 if fitted.perfect_fit else float(np.sqrt(fitted.tau2))
    K = data.K
    theta_names = list(fitted.theta.model_dump(exclude_none=True).keys())

    def replicate(r: int) -> _Replicate:
        y_star = draw_response(replicate_rng(seed, r), mean, e_sigma, sd)
        if fast:
            moments_r = with_response(moments, y_star, X_full, basis.E)
        else:
            moments_r = precompute(data.with_response(y_star), basis, w, kind, fitted.alt_intercept)
        try:
            refit = _refit(moments_r, fitted)
            de, ie = lowrank_effects(kind, refit.beta, refit.theta.rho if kind.has_lag else None, moments_r, K)
        except (EstimationError, ModelError) as e:
            logger.warning(f"Bootstrap replicate {r} failed: {e}")
            return _Replicate(error=str(e))
        theta = refit.theta.model_dump(exclude_none=True)
        return _Replicate(
            theta=[theta[name] for name in theta_names],
            beta=refit.beta.tolist(),
            de=np.asarray(de).tolist(),
            ie=np.asarray(ie).tolist(),
        )

    with start_action(action_type="bootstrap", kind=kind.value, m=m, seed=seed, fast=fast):
        outcomes = run_indexed(replicate, m, workers=workers, backend="thread")

    failed = np.array([o.error is not None for o in outcomes])
    if failed.sum() > max_failure_rate * m:
        raise BootstrapFailure(int(failed.sum()), m)

    def stack(field: str, width: int) -> np.ndarray:
        rows = [getattr(o, field) or [np.nan] * width for o in outcomes]
        return np.asarray(rows, dtype=float).reshape(m, width)

    result = BootstrapResult(
        m=m,
        seed=seed,
        level=level,
        theta_names=theta_names,
        theta_array=stack("theta", len(theta_names)),
        beta_samples=stack("beta", fitted.beta.size),
        de_samples=stack("de", K - 1),
        ie_samples=stack("ie", K - 1),
        failed=failed,
    )
    logger.info(f"Bootstrap finished: {result.n_ok} of {m} replicates succeeded.")
    return result


def with_intervals(effects: EffectsEstimate, result: BootstrapResult) -> EffectsEstimate:
    return effects.model_copy(
        update=dict(ci_de=result.ci_de(), ci_ie=result.ci_ie(), level=result.level)
    )


def summary_frame(
    result: BootstrapResult, fitted: FittedModel, effects: EffectsEstimate
) -> pd.DataFrame:
    """One row per parameter or effect: estimate, percentile bounds, counts."""
    theta = fitted.theta.model_dump(exclude_none=True)
    rows = []

    def add(names, estimates, intervals):
        for name, estimate, (lower, upper) in zip(names, estimates, intervals):
            rows.append(
                dict(
                    name=name,
                    estimate=float(estimate),
                    lower=lower,
                    upper=upper,
                    replicates=result.n_ok,
                    failures=result.n_failed,
                )
            )

    add(result.theta_names, [theta[k] for k in result.theta_names], result.ci_theta())
    add(fitted.names, fitted.beta, result.ci_beta())
    add([f"DE_{name}" for name in effects.names], effects.de, result.ci_de())
    add([f"IE_{name}" for name in effects.names], effects.ie, result.ci_ie())
    return pd.DataFrame(rows)
