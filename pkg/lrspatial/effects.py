"""Average direct and indirect effects.

With ``S = I + E D E'`` (the low-rank stand-in for ``(I - rho W)^-1``) and
``D = rho Lambda (I - rho Lambda)^-1`` the impact matrix of covariate k is
``S (beta_k I + q_k W)``; ``q_k`` is zero except for lagged-covariate kinds.
Its mean diagonal is the direct effect and its mean off-diagonal row sum the
indirect effect. Both reduce to L-length sums over cached moments.
"""

from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import lu_factor, lu_solve

from lrspatial.constants import DENSE_GUARD
from lrspatial.eigenbasis import EigenBasis
from lrspatial.errors import InvalidDesign, SizeGuard
from lrspatial.model import ModelKind, spillover_factors
from lrspatial.moments import MomentCache
from lrspatial.utils.pydantic_utils import ArbitraryModel
from lrspatial.weights import SpatialWeights


class EffectsEstimate(ArbitraryModel):
    names: List[str]
    de: np.ndarray
    ie: np.ndarray
    ci_de: Optional[np.ndarray] = None
    ci_ie: Optional[np.ndarray] = None
    level: Optional[float] = None

    @property
    def total(self) -> np.ndarray:
        return self.de + self.ie

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"covariate": self.names, "DE": self.de, "IE": self.ie})
        if self.ci_de is not None:
            frame["DE_lower"], frame["DE_upper"] = self.ci_de[:, 0], self.ci_de[:, 1]
        if self.ci_ie is not None:
            frame["IE_lower"], frame["IE_upper"] = self.ci_ie[:, 0], self.ci_ie[:, 1]
        return frame


def _split_beta(kind: ModelKind, beta: np.ndarray, K: int, k: int) -> Tuple[float, float]:
    """(beta_k, q_k) for covariate column ``k`` (1 <= k < K)."""
    if not 1 <= k < K:
        raise InvalidDesign(f"covariate index must lie in [1, {K - 1}], got {k}.")
    q = float(beta[K - 1 + k]) if kind.lags_covariates else 0.0
    return float(beta[k]), q


def lowrank_effects(
    kind: ModelKind,
    beta: np.ndarray,
    rho: Optional[float],
    moments: MomentCache,
    K: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Direct and indirect effects of every non-intercept covariate from
    moments only.

    Args:
        kind: Model kind of the fit.
        beta: Fixed coefficients; for lagged covariates the K - 1 ``q``
            coefficients follow the K columns of X.
        rho: Lag dependence, or ``None`` for kinds without a lag.
        moments: Moments of the fit, ``m_W`` and ``E_WE`` included when
            covariates are lagged.
        K: Columns of X, intercept included.

    Returns:
        ``(de, ie)``, each of length K - 1.
    """
    ks = range(1, K)
    pairs = [_split_beta(kind, beta, K, k) for k in ks]
    b = np.array([pair[0] for pair in pairs])
    q = np.array([pair[1] for pair in pairs])
    if not kind.has_lag or not rho:
        if kind.lags_covariates:
            return b, q * moments.m_W / moments.n
        return b, np.zeros_like(b)

    n = moments.n
    D = spillover_factors(rho, moments.lambdas)
    m_1E = moments.m_1E
    de = b * (1.0 + D.sum() / n)
    total = b + b * float(D @ m_1E**2) / n
    if kind.lags_covariates:
        de = de + q * float(D @ np.diag(moments.E_WE)) / n
        total = total + q * (moments.m_W + float(D @ (m_1E * moments.m_EW1))) / n
    return de, total - de


def _fitted_rho(fitted) -> Optional[float]:
    if fitted.theta is None or not fitted.kind.has_lag:
        return None
    return fitted.theta.rho


def de_lowrank(
    fitted, basis: EigenBasis, k: int, moments: Optional[MomentCache] = None
) -> float:
    """Direct effect of covariate column ``k``."""
    kind = fitted.kind
    beta_k, q_k = _split_beta(kind, fitted.beta, _base_K(fitted), k)
    rho = _fitted_rho(fitted)
    if not kind.has_lag or not rho:
        return beta_k
    D = spillover_factors(rho, basis.lambdas)
    de = beta_k * (1.0 + D.sum() / basis.n)
    if kind.lags_covariates:
        if moments is None or moments.E_WE is None:
            raise InvalidDesign("lagged-covariate direct effects need E'WE from the moments.")
        de += q_k * float(D @ np.diag(moments.E_WE)) / basis.n
    return de


def ie_lowrank(fitted, basis: EigenBasis, moments: MomentCache, k: int) -> float:
    """Indirect effect of covariate column ``k`` without n-sized objects."""
    K = _base_K(fitted)
    _, ie = lowrank_effects(fitted.kind, fitted.beta, _fitted_rho(fitted), moments, K)
    return float(ie[k - 1])


def ie_direct(fitted, basis: EigenBasis, w: Optional[SpatialWeights], k: int) -> float:
    """Indirect effect evaluated with n-vectors (``1' S (beta_k 1 + q_k W 1) / n``)."""
    kind = fitted.kind
    beta_k, q_k = _split_beta(kind, fitted.beta, _base_K(fitted), k)
    rho = _fitted_rho(fitted)
    ones = np.ones(basis.n)
    response = beta_k * ones
    if kind.lags_covariates:
        response = response + q_k * np.asarray(w.entries @ ones)
    if rho:
        D = spillover_factors(rho, basis.lambdas)
        response = response + basis.E @ (D * (basis.E.T @ response))
    total = float(response.mean())
    return total - de_lowrank_direct(fitted, basis, w, k)


def de_lowrank_direct(fitted, basis: EigenBasis, w: Optional[SpatialWeights], k: int) -> float:
    """Direct effect from the rows of ``E`` and ``W E``."""
    kind = fitted.kind
    beta_k, q_k = _split_beta(kind, fitted.beta, _base_K(fitted), k)
    rho = _fitted_rho(fitted)
    if not rho:
        return beta_k
    D = spillover_factors(rho, basis.lambdas)
    E = basis.E
    diag = 1.0 + np.einsum("il,l,il->i", E, D, E)
    de = beta_k * diag.mean()
    if kind.lags_covariates:
        WE = np.asarray(w.entries @ E)
        de += q_k * np.einsum("il,l,il->i", E, D, WE).mean()
    return de


def _base_K(fitted) -> int:
    """Columns of X, intercept included."""
    p = fitted.beta.size
    return (p + 1) // 2 if fitted.kind.lags_covariates else p


def effects_dense(
    w: SpatialWeights, rho: float, beta_k: float, q_k: float = 0.0
) -> Tuple[float, float]:
    """Mean diagonal and mean off-diagonal row sum of
    ``(I - rho W)^-1 (beta_k I + q_k W)``."""
    n = w.n
    if n > DENSE_GUARD:
        raise SizeGuard(n, DENSE_GUARD, "dense effects")
    W = w.dense()
    rhs = beta_k * np.eye(n) + q_k * W
    impact = lu_solve(lu_factor(np.eye(n) - rho * W), rhs)
    de = float(np.trace(impact)) / n
    return de, float(impact.sum()) / n - de


def effects_fullrank(fitted, w: SpatialWeights, k: int) -> Tuple[float, float]:
    """Dense effects for a full-rank fit (``SEM``, ``SLM``, ``SDM``)."""
    kind = fitted.kind
    if kind == ModelKind.SEM or kind == ModelKind.LM:
        return float(fitted.beta[k]), 0.0
    if w.n > DENSE_GUARD:
        raise SizeGuard(w.n, DENSE_GUARD, "dense effects")
    beta_k, q_k = _split_beta(kind, fitted.beta, _base_K(fitted), k)
    return effects_dense(w, fitted.theta, beta_k, q_k)


def estimate_effects(
    fitted, moments: Optional[MomentCache] = None
) -> EffectsEstimate:
    """Effects of every non-intercept covariate of a low-rank or OLS fit.

    Args:
        fitted: A ``FittedModel``.
        moments: Required for lag kinds.

    Returns:
        An ``EffectsEstimate`` without intervals.

    Raises:
        InvalidDesign: A lag kind was given no moments.
    """
    K = _base_K(fitted)
    names = list(fitted.names[1:K])
    if fitted.kind.is_lowrank and fitted.kind.has_lag:
        if moments is None:
            raise InvalidDesign(f"{fitted.kind.value} effects need the moment cache.")
        de, ie = lowrank_effects(fitted.kind, fitted.beta, _fitted_rho(fitted), moments, K)
    else:
        de, ie = fitted.beta[1:K].copy(), np.zeros(K - 1)
    return EffectsEstimate(names=names, de=np.asarray(de), ie=np.asarray(ie))
