"""Sample-size-free inner products for the restricted likelihood.

After ``precompute`` every likelihood evaluation works on K x K, L x K and
L-length arrays only. The transformed design is

    X_theta = X + E D E' X T,   D = rho Lambda (I - rho Lambda)^-1,

where the 0/1 diagonal ``T`` marks the columns the spillover transform
touches, so its moments follow from the raw ones:

    X_theta' X_theta = M_XX + M_EX' D M_EX T + T M_EX' D M_EX + T M_EX' D^2 M_EX T
    E' X_theta       = M_EX + D M_EX T
    X_theta' y       = m_Xy + T M_EX' D m_Ey
"""

from collections import Counter
from typing import List, Optional, Tuple

import numpy as np
from eliot import start_action

from lrspatial.eigenbasis import EigenBasis
from lrspatial.logger import logger
from lrspatial.model import DesignData, ModelKind, full_design, spillover_factors
from lrspatial.utils.cache_utils import ArrayCache, content_hash
from lrspatial.utils.pydantic_utils import FrozenArbitraryModel
from lrspatial.weights import SpatialWeights

# Counts passes over n-sized arrays, keyed by the function making them.
sample_passes: Counter = Counter()


class MomentCache(FrozenArbitraryModel):
    kind: ModelKind
    n: int
    names: List[str]
    mask: np.ndarray
    lambdas: np.ndarray
    M_XX: np.ndarray
    M_EX: np.ndarray
    m_Xy: np.ndarray
    m_Ey: np.ndarray
    m_yy: float
    m_W: Optional[float] = None
    m_EW1: Optional[np.ndarray] = None
    E_WE: Optional[np.ndarray] = None

    @property
    def p(self) -> int:
        """Number of fixed-effect columns, lagged covariates included."""
        return self.M_XX.shape[0]

    @property
    def L(self) -> int:
        return self.lambdas.size

    @property
    def m_11(self) -> float:
        return float(self.M_XX[0, 0])

    @property
    def m_1X1(self) -> np.ndarray:
        return self.M_XX[0, 1:]

    @property
    def M_X1X1(self) -> np.ndarray:
        return self.M_XX[1:, 1:]

    @property
    def m_1E(self) -> np.ndarray:
        return self.M_EX[:, 0]

    @property
    def M_EX1(self) -> np.ndarray:
        return self.M_EX[:, 1:]

    @property
    def m_1y(self) -> float:
        return float(self.m_Xy[0])

    @property
    def m_X1y(self) -> np.ndarray:
        return self.m_Xy[1:]


def response_moments(
    y: np.ndarray, X: np.ndarray, E: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """``(y'y, X'y, E'y)``: the only moments that change with the response."""
    sample_passes["response_moments"] += 1
    return float(y @ y), X.T @ y, E.T @ y


def precompute(
    data: DesignData,
    basis: EigenBasis,
    w: Optional[SpatialWeights],
    kind: ModelKind,
    alt_intercept: bool = False,
    cache: Optional[ArrayCache] = None,
) -> MomentCache:
    """One O(n) pass over the data; every later likelihood evaluation reads
    only the result.

    Args:
        data: Response and covariates.
        basis: Eigenpairs used by the fit.
        w: Scaled weights; required when ``kind`` lags the covariates.
        kind: Low-rank model kind.
        alt_intercept: Put the intercept inside the spillover transform.
        cache: When given, moments are loaded from and saved to it under a
            content hash of the inputs.

    Returns:
        The ``MomentCache`` for ``(data, basis, kind)``.
    """
    X, mask, names = full_design(kind, data, w, alt_intercept)
    key = None
    if cache is not None:
        key = content_hash(
            data.y,
            X,
            basis.E,
            w.entries if w is not None else None,
            kind=kind.value,
            alt_intercept=alt_intercept,
        )
        hit = cache.load("moments", key)
        if hit is not None:
            logger.debug(f"Moment cache hit for {kind.value}.")
            return _from_arrays(kind, names, hit)

    with start_action(action_type="precompute_moments", kind=kind.value, n=data.n, L=basis.L):
        sample_passes["precompute"] += 1
        E = basis.E
        m_yy, m_Xy, m_Ey = response_moments(data.y, X, E)
        extras = {}
        if kind.lags_covariates:
            W1 = np.asarray(w.entries @ np.ones(data.n))
            extras = dict(
                m_W=float(W1.sum()),
                m_EW1=E.T @ W1,
                E_WE=E.T @ np.asarray(w.entries @ E),
            )
        moments = MomentCache(
            kind=kind,
            n=data.n,
            names=names,
            mask=mask,
            lambdas=basis.lambdas,
            M_XX=X.T @ X,
            M_EX=E.T @ X,
            m_Xy=m_Xy,
            m_Ey=m_Ey,
            m_yy=m_yy,
            **extras,
        )

    if cache is not None:
        cache.save("moments", key, **_to_arrays(moments))
    return moments


def with_response(
    moments: MomentCache, y: np.ndarray, X: np.ndarray, E: np.ndarray
) -> MomentCache:
    """Copy of ``moments`` for a new response; ``X`` is the untransformed full
    design the cache was built from."""
    m_yy, m_Xy, m_Ey = response_moments(y, X, E)
    return moments.model_copy(update=dict(m_yy=m_yy, m_Xy=m_Xy, m_Ey=m_Ey))


def assemble_moments(
    moments: MomentCache, rho: Optional[float], lambdas: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(X_theta'X_theta, E'X_theta, X_theta'y)`` at lag dependence ``rho``.

    Only the lag-transformed columns (``moments.mask``) change. With
    ``D = rho * Lambda (I - rho * Lambda)^-1`` their basis cross-moment is
    ``(I + D) E'X``.

    Args:
        moments: Cached moments.
        rho: Lag dependence; ``None`` or 0 returns the raw moments.
        lambdas: Eigenvalues to use instead of ``moments.lambdas``.

    Returns:
        ``(M_XX, M_EX, m_Xy)`` of the transformed design.
    """
    if not rho or not moments.mask.any():
        return moments.M_XX, moments.M_EX, moments.m_Xy
    lambdas = moments.lambdas if lambdas is None else lambdas
    D = spillover_factors(rho, lambdas)
    MT = moments.M_EX * moments.mask
    DMT = D[:, None] * MT
    cross = moments.M_EX.T @ DMT
    M_XX = moments.M_XX + cross + cross.T + MT.T @ (D[:, None] * DMT)
    M_EX = moments.M_EX + DMT
    m_Xy = moments.m_Xy + MT.T @ (D * moments.m_Ey)
    return M_XX, M_EX, m_Xy


def assemble_lslm_moments(
    moments: MomentCache, rho: float, lambdas: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return assemble_moments(moments, rho, lambdas)


_ARRAY_FIELDS = ("mask", "lambdas", "M_XX", "M_EX", "m_Xy", "m_Ey", "m_yy", "m_W", "m_EW1", "E_WE")


def _to_arrays(moments: MomentCache) -> dict:
    arrays = {"n": np.asarray(moments.n)}
    for name in _ARRAY_FIELDS:
        value = getattr(moments, name)
        if value is not None:
            arrays[name] = np.asarray(value)
    return arrays


def _from_arrays(kind: ModelKind, names: List[str], arrays: dict) -> MomentCache:
    fields = {name: arrays[name] for name in _ARRAY_FIELDS if name in arrays}
    for scalar in ("m_yy", "m_W"):
        if scalar in fields:
            fields[scalar] = float(fields[scalar])
    fields["mask"] = fields["mask"].astype(bool)
    return MomentCache(kind=kind, n=int(arrays["n"]), names=names, **fields)
