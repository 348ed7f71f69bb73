"""Type II restricted maximum likelihood for the low-rank models.

For fixed theta the low-rank model is the linear mixed model

    y = X_theta beta + E Sigma_theta v + u,   v ~ N(0, tau2 I_L),  u ~ N(0, tau2 I_n)

and (beta, v) solve the (p + L) system

    A = [[X_theta'X_theta,        X_theta'E Sigma],
         [Sigma E'X_theta,        Sigma^2 + I    ]],   b = [X_theta'y ; Sigma E'y].

One Cholesky factorization of ``A`` gives the solution, the log-determinant
and the coefficient covariance.
"""

from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from eliot import start_action
from pydantic import BaseModel, Field
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.special import expit, logit

from lrspatial.checks import MoreRowsThanColumns, run_checks
from lrspatial.classes.history import FitCall, OptimizerStart
from lrspatial.constants import (
    DEFAULT_MULTI_STARTS,
    DEPENDENCE_MARGIN,
    LOG_RATIO_CLIP,
    PIVOT_RATIO,
    TAU2_FLOOR,
    boundary_status,
    converged_status,
    failed_status,
    maxfev_status,
)
from lrspatial.eigenbasis import EigenBasis
from lrspatial.errors import (
    InvalidDesign,
    InvalidTheta,
    OptimFailure,
    PoleProximity,
    SingularSystem,
    UnsupportedKind,
)
from lrspatial.logger import fit_scope, logger
from lrspatial.model import (
    DesignData,
    ModelKind,
    ThetaPoint,
    build_design,
    build_sigma,
)
from lrspatial.moments import MomentCache, assemble_moments, precompute
from lrspatial.parallel import run_indexed
from lrspatial.utils.pydantic_utils import ArbitraryModel
from lrspatial.weights import SpatialWeights

# Objective value for infeasible points.
_INFEASIBLE = 1e300


class FitOptions(BaseModel):
    multi_starts: int = Field(DEFAULT_MULTI_STARTS, ge=1, le=3)
    xatol: float = Field(1e-6, gt=0)
    fatol: float = Field(1e-8, gt=0)
    maxfev_per_dim: int = Field(500, ge=10)
    polish: bool = True
    nested_baseline: bool = True
    workers: int = Field(1, ge=1)
    alt_intercept: bool = False
    start: Optional[ThetaPoint] = Field(
        None, description="Warm start; replaces the multi-start schedule."
    )


class FittedModel(ArbitraryModel):
    kind: ModelKind
    names: List[str]
    beta: np.ndarray
    v: np.ndarray
    gamma: np.ndarray
    theta: Optional[ThetaPoint]
    tau2: float
    sigma2: float
    loglik_r: float
    se_beta: np.ndarray
    varcov: np.ndarray
    n: int
    L: int
    status: str = converged_status
    boundary: bool = False
    perfect_fit: bool = False
    alt_intercept: bool = False
    lower: float = -1.0
    history: Optional[FitCall] = None

    @property
    def converged(self) -> bool:
        return self.status in (converged_status, boundary_status)

    @property
    def n_fixed(self) -> int:
        return self.beta.size

    @property
    def dependence(self) -> float:
        return 0.0 if self.theta is None else self.theta.dependence(self.kind)

    def report(self) -> Dict:
        theta = None
        if self.theta is not None:
            theta = {
                k: v for k, v in self.theta.model_dump().items() if v is not None
            }
        return {
            "kind": self.kind.value,
            "n": self.n,
            "L": self.L,
            "coefficients": [
                {"name": name, "estimate": float(b), "se": float(s)}
                for name, b, s in zip(self.names, self.beta, self.se_beta)
            ],
            "theta": theta,
            "tau2": self.tau2,
            "sigma2": self.sigma2,
            "loglik_r": self.loglik_r,
            "diagnostics": {
                "status": self.status,
                "boundary": self.boundary,
                "perfect_fit": self.perfect_fit,
                "nfev": self.history.total_nfev if self.history else 0,
            },
        }


class ThetaTransform:
    """Maps an unconstrained vector onto the feasible parameter box.

    Dependence parameters go through a scaled logistic onto
    ``(lower, upper)``; the variance ratio is ``exp`` of a log-ratio clipped
    to ``[-LOG_RATIO_CLIP, LOG_RATIO_CLIP]``.
    """

    def __init__(self, kind: ModelKind, lower: float, upper: float = 1.0 - DEPENDENCE_MARGIN):
        if not lower < 0 < upper:
            raise InvalidTheta(f"dependence bounds ({lower}, {upper}) must straddle 0.")
        self.kind = kind
        self.lower = lower
        self.upper = upper
        self.names = kind.dependence_names

    @property
    def dim(self) -> int:
        return len(self.names) + 1

    def _to_dependence(self, z: float) -> float:
        return self.lower + (self.upper - self.lower) * float(expit(z))

    def _from_dependence(self, value: float) -> float:
        share = (value - self.lower) / (self.upper - self.lower)
        share = min(max(share, 1e-12), 1 - 1e-12)
        return float(logit(share))

    def to_theta(self, z: np.ndarray) -> ThetaPoint:
        values = {name: self._to_dependence(z[i]) for i, name in enumerate(self.names)}
        log_ratio = float(np.clip(z[-1], -LOG_RATIO_CLIP, LOG_RATIO_CLIP))
        return ThetaPoint(ratio=float(np.exp(log_ratio)), **values)

    def from_theta(self, theta: ThetaPoint) -> np.ndarray:
        z = [self._from_dependence(getattr(theta, name)) for name in self.names]
        log_ratio = float(np.clip(np.log(theta.ratio), -LOG_RATIO_CLIP, LOG_RATIO_CLIP))
        return np.array(z + [log_ratio])

    def point(self, dependence: float, log_ratio: float = 0.0) -> np.ndarray:
        """Unconstrained point with every dependence parameter at ``dependence``."""
        return np.array([self._from_dependence(dependence)] * len(self.names) + [log_ratio])

    def at_boundary(self, theta: ThetaPoint, tol: float = 1e-4) -> bool:
        log_ratio = np.log(theta.ratio)
        if abs(log_ratio) >= LOG_RATIO_CLIP - 1e-6:
            return True
        for name in self.names:
            value = getattr(theta, name)
            if value - self.lower < tol or self.upper - value < tol:
                return True
        return False


class Evaluation(NamedTuple):
    sigma: np.ndarray
    beta: np.ndarray
    v: np.ndarray
    factor: Tuple[np.ndarray, bool]
    d: float
    rss: float
    loglik: float


def dependence_bounds(w: SpatialWeights) -> Tuple[float, float]:
    """Open interval for dependence parameters of the scaled matrix."""
    return (
        w.lambda_min / w.lambda_max + DEPENDENCE_MARGIN,
        1.0 - DEPENDENCE_MARGIN,
    )


def factor_system(A: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Cholesky factor of the mixed-model system, rejecting tiny pivots."""
    if not np.all(np.isfinite(A)):
        raise SingularSystem("system matrix has non-finite entries.")
    try:
        factor = cho_factor(A, lower=True, check_finite=False)
    except LinAlgError as e:
        raise SingularSystem(f"system matrix is not positive definite: {e}") from e
    pivots = np.diag(factor[0]) ** 2
    if pivots.min() < PIVOT_RATIO * np.max(np.diag(A)):
        raise SingularSystem(
            f"smallest pivot {pivots.min():.3e} is below {PIVOT_RATIO:g} x largest diagonal."
        )
    return factor


def _system(
    M_XX: np.ndarray, M_EX: np.ndarray, m_Xy: np.ndarray, m_Ey: np.ndarray, sigma: np.ndarray, EE: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    p, L = M_XX.shape[0], sigma.size
    A = np.empty((p + L, p + L))
    A[:p, :p] = M_XX
    A[p:, :p] = sigma[:, None] * M_EX
    A[:p, p:] = A[p:, :p].T
    if EE is None:
        A[p:, p:] = np.diag(sigma**2 + 1.0)
    else:
        A[p:, p:] = sigma[:, None] * EE * sigma[None, :] + np.eye(L)
    b = np.concatenate([m_Xy, sigma * m_Ey])
    return A, b


def _loglik(logdet: float, d: float, n: int, p: int) -> float:
    dof = n - p
    return -0.5 * logdet - 0.5 * dof * (1.0 + np.log(2.0 * np.pi * d / dof))


def _logdet(factor: Tuple[np.ndarray, bool]) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(factor[0]))))


def gls_solve(
    xt: np.ndarray, E: np.ndarray, sigma: np.ndarray, y: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Mixed-model normal equations with n-sized inputs.

    Args:
        xt: Transformed design, n x p.
        E: Eigenvectors, n x L.
        sigma: Diagonal of Sigma_theta, length L.
        y: Response.

    Returns:
        ``(beta, v)``.
    """
    A, b = _system(xt.T @ xt, E.T @ xt, xt.T @ y, E.T @ y, sigma, E.T @ E)
    solution = cho_solve(factor_system(A), b)
    p = xt.shape[1]
    return solution[:p], solution[p:]


def penalized_rss(
    y: np.ndarray,
    xt: np.ndarray,
    E: np.ndarray,
    sigma: np.ndarray,
    beta: np.ndarray,
    v: np.ndarray,
) -> float:
    residual = y - xt @ beta - (E * sigma) @ v
    return float(residual @ residual + v @ v)


def estimate_tau2(rss: float, n: int, n_fixed: int) -> float:
    """Noise variance, floored so the covariance stays finite."""
    tau2 = max(rss, 0.0) / (n - n_fixed)
    if tau2 < TAU2_FLOOR:
        logger.warning(f"Residual variance {tau2:.3e} underflows; treating as a perfect fit.")
        return TAU2_FLOOR
    return tau2


def coef_varcov(factor: Tuple[np.ndarray, bool], tau2: float) -> np.ndarray:
    """``tau2`` times the inverse of the factored system, symmetrized."""
    inverse = cho_solve(factor, np.eye(factor[0].shape[0]))
    return tau2 * 0.5 * (inverse + inverse.T)


def evaluate(theta: ThetaPoint, moments: MomentCache) -> Evaluation:
    """Solve, profile and score the likelihood at ``theta`` from moments only.

    Args:
        theta: Dependence parameters and variance ratio.
        moments: Cached sample moments.

    Returns:
        An ``Evaluation`` with sigma, beta, v, the Cholesky factor, the
        profiled residual sum ``d``, the plain residual sum and the
        restricted log-likelihood.
    """
    kind = moments.kind
    sigma = build_sigma(kind, theta, moments.lambdas)
    M_XX, M_EX, m_Xy = assemble_moments(moments, theta.rho if kind.has_lag else None)
    A, b = _system(M_XX, M_EX, m_Xy, moments.m_Ey, sigma)
    factor = factor_system(A)
    solution = cho_solve(factor, b)
    p = moments.p
    beta, v = solution[:p], solution[p:]
    d = max(moments.m_yy - float(b @ solution), 0.0)
    rss = max(d - float(v @ v), 0.0)
    loglik = _loglik(_logdet(factor), max(d, np.finfo(float).tiny), moments.n, p)
    return Evaluation(sigma, beta, v, factor, d, rss, loglik)


def restricted_loglik(theta: ThetaPoint, inputs: MomentCache) -> float:
    """Restricted log-likelihood at ``theta``; no n-sized work."""
    return evaluate(theta, inputs).loglik


def restricted_loglik_naive(
    theta: ThetaPoint,
    kind: ModelKind,
    data: DesignData,
    basis: EigenBasis,
    w: Optional[SpatialWeights] = None,
    alt_intercept: bool = False,
) -> float:
    """The same likelihood built from n-sized matrices."""
    sigma = build_sigma(kind, theta, basis.lambdas)
    xt = build_design(
        kind, data, basis, w, theta.rho if kind.has_lag else None, alt_intercept
    )
    E = basis.E
    A, b = _system(xt.T @ xt, E.T @ xt, xt.T @ data.y, E.T @ data.y, sigma, E.T @ E)
    factor = factor_system(A)
    solution = cho_solve(factor, b)
    p = xt.shape[1]
    d = penalized_rss(data.y, xt, E, sigma, solution[:p], solution[p:])
    return _loglik(_logdet(factor), d, data.n, p)


def _status(result) -> str:
    if not np.isfinite(result.fun) or result.fun >= _INFEASIBLE:
        return failed_status
    if result.success:
        return converged_status
    return maxfev_status


def _run_start(
    objective: Callable[[np.ndarray], float],
    transform: ThetaTransform,
    label: str,
    z0: np.ndarray,
    options: FitOptions,
) -> Tuple[OptimizerStart, np.ndarray]:
    dim = transform.dim
    maxfev = options.maxfev_per_dim * dim
    record = OptimizerStart(
        label=label, start=transform.to_theta(z0).model_dump(exclude_none=True)
    )
    simplex = np.vstack([z0, z0 + 0.5 * np.eye(dim)])
    result = minimize(
        objective,
        z0,
        method="Nelder-Mead",
        options=dict(
            xatol=options.xatol, fatol=options.fatol, maxfev=maxfev, initial_simplex=simplex
        ),
    )
    nfev = result.nfev
    if options.polish and np.isfinite(result.fun) and result.fun < _INFEASIBLE:
        polished = minimize(
            objective,
            result.x,
            method="Nelder-Mead",
            options=dict(
                xatol=options.xatol * 1e-4,
                fatol=options.fatol * 1e-4,
                maxfev=maxfev,
                initial_simplex=np.vstack([result.x, result.x + 0.05 * np.eye(dim)]),
            ),
        )
        nfev += polished.nfev
        if polished.fun <= result.fun:
            result = polished
    theta = transform.to_theta(result.x)
    record.end = theta.model_dump(exclude_none=True)
    record.nfev = int(nfev)
    record.status = _status(result)
    record.message = str(result.message)
    if record.status != failed_status:
        record.loglik = -float(result.fun)
        if transform.at_boundary(theta):
            record.status = boundary_status
    return record, result.x


def _start_schedule(transform: ThetaTransform, options: FitOptions) -> List[Tuple[str, np.ndarray]]:
    if options.start is not None:
        return [("warm", transform.from_theta(options.start))]
    midpoint = 0.5 * (transform.lower + transform.upper)
    schedule = [
        ("mid", transform.point(0.5 * midpoint)),
        ("low", transform.point(0.0)),
        ("high", transform.point(0.8 * transform.upper)),
    ]
    return schedule[: options.multi_starts]


def fit_moments(
    moments: MomentCache,
    lower: float,
    options: Optional[FitOptions] = None,
) -> FittedModel:
    """Maximize the restricted likelihood over theta using ``moments``.

    Each start of the schedule runs Nelder-Mead on the unconstrained scale,
    optionally polished, and the best finite optimum competes with the
    nested OLS point.

    Args:
        moments: Moments of a low-rank kind, from ``precompute``.
        lower: Lower end of the dependence interval, usually from
            ``dependence_bounds``.
        options: Optimizer settings; defaults to ``FitOptions()``.

    Returns:
        The fitted model, with the per-start history attached.

    Raises:
        UnsupportedKind: ``moments`` belong to a full-rank kind.
        OptimFailure: No start reached a finite likelihood.
    """
    options = options or FitOptions()
    kind = moments.kind
    if not kind.is_lowrank:
        raise UnsupportedKind(f"{kind.value} is not a low-rank kind.")
    transform = ThetaTransform(kind, lower)
    call = FitCall(kind=kind.value, n=moments.n, L=moments.L)

    def objective(z: np.ndarray) -> float:
        try:
            value = -restricted_loglik(transform.to_theta(z), moments)
        except (PoleProximity, SingularSystem, InvalidTheta):
            return _INFEASIBLE
        return value if np.isfinite(value) else _INFEASIBLE

    with fit_scope(call.scope), start_action(
        action_type="reml_fit", kind=kind.value, n=moments.n, L=moments.L
    ):
        schedule = _start_schedule(transform, options)
        outcomes = run_indexed(
            lambda i: _run_start(objective, transform, *schedule[i], options),
            len(schedule),
            workers=options.workers,
        )
        candidates = [z for _, z in outcomes]
        call.starts.extend(record for record, _ in outcomes)

        if options.nested_baseline and options.start is None:
            z_nested = transform.point(0.0, -LOG_RATIO_CLIP)
            value = objective(z_nested)
            nested = OptimizerStart(
                label="nested",
                start=transform.to_theta(z_nested).model_dump(exclude_none=True),
                end=transform.to_theta(z_nested).model_dump(exclude_none=True),
                nfev=1,
                status=boundary_status if value < _INFEASIBLE else failed_status,
                loglik=-value if value < _INFEASIBLE else None,
            )
            call.starts.append(nested)
            candidates.append(z_nested)

        scores = [
            s.loglik if s.loglik is not None and s.status != failed_status else -np.inf
            for s in call.starts
        ]
        best = int(np.argmax(scores))
        if not np.isfinite(scores[best]):
            raise OptimFailure(
                f"{kind.value}: no start reached a finite likelihood "
                f"after {call.total_nfev} evaluations."
            )
        call.selected = best
        theta = transform.to_theta(candidates[best])
        fitted = _finish(moments, theta, call, options, lower)
        for start in call.starts:
            logger.debug(
                f"start {start.label}: status={start.status} "
                f"loglik={start.loglik} nfev={start.nfev}"
            )
        logger.info(
            f"{kind.value} fit: loglik_r={fitted.loglik_r:.6f} "
            f"theta=({format_theta(theta)}) status={fitted.status}"
        )
        return fitted


def format_theta(theta: ThetaPoint) -> str:
    return ", ".join(f"{k}={v:.6g}" for k, v in theta.model_dump(exclude_none=True).items())


def _finish(
    moments: MomentCache,
    theta: ThetaPoint,
    call: FitCall,
    options: FitOptions,
    lower: float,
) -> FittedModel:
    ev = evaluate(theta, moments)
    p = moments.p
    perfect = ev.rss / (moments.n - p) < TAU2_FLOOR
    tau2 = estimate_tau2(ev.rss, moments.n, p)
    varcov = coef_varcov(ev.factor, tau2)
    return FittedModel(
        kind=moments.kind,
        names=list(moments.names),
        beta=ev.beta,
        v=ev.v,
        gamma=ev.sigma * ev.v,
        theta=theta,
        tau2=tau2,
        sigma2=tau2 * theta.ratio**2,
        loglik_r=ev.loglik,
        se_beta=np.sqrt(np.clip(np.diag(varcov)[:p], 0.0, None)),
        varcov=varcov,
        n=moments.n,
        L=moments.L,
        status=call.status,
        boundary=call.status == boundary_status,
        perfect_fit=perfect,
        alt_intercept=options.alt_intercept,
        lower=lower,
        history=call,
    )


def fit_ols(data: DesignData) -> FittedModel:
    """Closed-form OLS with classical standard errors."""
    X, y = data.X, data.y
    n, K = X.shape
    with start_action(action_type="ols_fit", n=n, K=K):
        factor = factor_system(X.T @ X)
        beta = cho_solve(factor, X.T @ y)
        residual = y - X @ beta
        rss = float(residual @ residual)
        perfect = rss / (n - K) < TAU2_FLOOR
        tau2 = estimate_tau2(rss, n, K)
        varcov = coef_varcov(factor, tau2)
        return FittedModel(
            kind=ModelKind.LM,
            names=list(data.names),
            beta=beta,
            v=np.zeros(0),
            gamma=np.zeros(0),
            theta=None,
            tau2=tau2,
            sigma2=0.0,
            loglik_r=_loglik(_logdet(factor), max(rss, np.finfo(float).tiny), n, K),
            se_beta=np.sqrt(np.diag(varcov)),
            varcov=varcov,
            n=n,
            L=0,
            perfect_fit=perfect,
        )


def check_fixed_coefficients(kind: ModelKind, data: DesignData) -> None:
    """Raise ``InvalidDesign`` unless n exceeds the fixed coefficients of ``kind``
    (2K - 1 when the covariates are lagged)."""
    run_checks(
        [MoreRowsThanColumns()],
        data.X,
        {"n_fixed": 2 * data.K - 1 if kind.lags_covariates else data.K},
    )


def fit(
    kind: ModelKind,
    data: DesignData,
    basis: Optional[EigenBasis],
    w: Optional[SpatialWeights],
    options: Optional[FitOptions] = None,
    cache=None,
) -> FittedModel:
    """Fit ``kind`` by restricted likelihood (OLS for ``LM``).

    Args:
        kind: Any low-rank kind, or ``LM``.
        data: Response and covariates.
        basis: Leading eigenpairs of ``w``; unused for ``LM``.
        w: Scaled weights matrix; unused for ``LM``.
        options: Optimizer settings.
        cache: Optional ``ArrayCache`` for the moments.

    Returns:
        A ``FittedModel``.
    """
    kind = ModelKind(kind)
    options = options or FitOptions()
    if kind == ModelKind.LM:
        return fit_ols(data)
    if not kind.is_lowrank:
        raise UnsupportedKind(
            f"{kind.value} is a full-rank kind; use oracle.fit_fullrank."
        )
    if basis is None or w is None:
        raise InvalidDesign(f"{kind.value} needs an eigenbasis and weights.")
    if basis.n != data.n or w.n != data.n:
        raise InvalidDesign(
            f"data has n={data.n}, eigenbasis n={basis.n}, weights n={w.n}."
        )
    check_fixed_coefficients(kind, data)
    moments = precompute(data, basis, w, kind, options.alt_intercept, cache)
    lower, _ = dependence_bounds(w)
    return fit_moments(moments, lower, options)


def fitted_values(
    fitted: FittedModel,
    data: DesignData,
    basis: Optional[EigenBasis] = None,
    w: Optional[SpatialWeights] = None,
) -> np.ndarray:
    """``X_theta beta + E gamma`` (``X beta`` for OLS)."""
    if fitted.kind == ModelKind.LM:
        return data.X @ fitted.beta
    rho = fitted.theta.rho if fitted.kind.has_lag else None
    xt = build_design(fitted.kind, data, basis, w, rho, fitted.alt_intercept)
    return xt @ fitted.beta + basis.E @ fitted.gamma


def residuals(
    fitted: FittedModel,
    data: DesignData,
    basis: Optional[EigenBasis] = None,
    w: Optional[SpatialWeights] = None,
) -> np.ndarray:
    return data.y - fitted_values(fitted, data, basis, w)
