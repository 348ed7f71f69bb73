"""Model kinds and the mixed-model components X_theta and Sigma_theta."""

from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import Field, model_validator

from lrspatial.checks import (
    Finite,
    InterceptColumn,
    MoreRowsThanColumns,
    NonConstantCovariates,
    run_checks,
)
from lrspatial.constants import POLE_TOLERANCE
from lrspatial.eigenbasis import EigenBasis
from lrspatial.errors import InvalidDesign, InvalidTheta, PoleProximity
from lrspatial.utils.pydantic_utils import ArbitraryModel, FrozenArbitraryModel
from lrspatial.weights import SpatialWeights


class ModelKind(str, Enum):
    LSEM = "LSEM"
    LSLM = "LSLM"
    LSDM = "LSDM"
    LSAC = "LSAC"
    LM = "LM"
    SEM = "SEM"
    SLM = "SLM"
    SDM = "SDM"
    SAC = "SAC"

    @property
    def is_lowrank(self) -> bool:
        return self in (ModelKind.LSEM, ModelKind.LSLM, ModelKind.LSDM, ModelKind.LSAC)

    @property
    def has_lag(self) -> bool:
        return self in (
            ModelKind.LSLM,
            ModelKind.LSDM,
            ModelKind.LSAC,
            ModelKind.SLM,
            ModelKind.SDM,
            ModelKind.SAC,
        )

    @property
    def has_error(self) -> bool:
        return self in (ModelKind.LSEM, ModelKind.LSAC, ModelKind.SEM, ModelKind.SAC)

    @property
    def lags_covariates(self) -> bool:
        return self in (ModelKind.LSDM, ModelKind.SDM)

    @property
    def dependence_names(self) -> List[str]:
        names = []
        if self.has_lag:
            names.append("rho")
        if self.has_error:
            names.append("phi")
        return names


class DesignData(ArbitraryModel):
    """Response ``y`` and covariates ``X`` whose first column is the intercept."""

    y: np.ndarray
    X: np.ndarray
    names: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_design(self) -> "DesignData":
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise InvalidDesign(
                f"X has shape {self.X.shape} but y has {self.y.shape[0]} rows."
            )
        if not self.names:
            self.names = ["intercept"] + [f"x{k}" for k in range(1, self.X.shape[1])]
        if len(self.names) != self.X.shape[1]:
            raise InvalidDesign(
                f"{len(self.names)} names given for {self.X.shape[1]} columns."
            )
        run_checks([Finite()], self.y, {"what": "response"})
        run_checks(
            [Finite(), InterceptColumn(), NonConstantCovariates(), MoreRowsThanColumns()],
            self.X,
            {"what": "covariates", "names": self.names},
        )
        return self

    @classmethod
    def from_arrays(
        cls, y, covariates, names: Optional[Sequence[str]] = None
    ) -> "DesignData":
        """Build from covariates without an intercept column."""
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        X = np.column_stack([np.ones(covariates.shape[0]), covariates])
        if names is None:
            names = [f"x{k}" for k in range(1, X.shape[1])]
        return cls(y=y, X=X, names=["intercept", *names])

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def K(self) -> int:
        return self.X.shape[1]

    @property
    def X_minus1(self) -> np.ndarray:
        return self.X[:, 1:]

    def standardized(self) -> "DesignData":
        """Non-intercept columns centred and scaled to unit variance."""
        X = self.X.copy()
        X[:, 1:] = (X[:, 1:] - X[:, 1:].mean(axis=0)) / X[:, 1:].std(axis=0, ddof=1)
        return DesignData(y=self.y, X=X, names=list(self.names))

    def with_response(self, y: np.ndarray) -> "DesignData":
        return DesignData.model_construct(y=np.asarray(y, dtype=float), X=self.X, names=self.names)


class ThetaPoint(FrozenArbitraryModel):
    """Dependence and variance-ratio parameters; absent fields are None."""

    rho: Optional[float] = None
    phi: Optional[float] = None
    ratio: float = 1.0

    def check_for(self, kind: ModelKind, lower: float, upper: float = 1.0) -> None:
        if self.ratio <= 0 or not np.isfinite(self.ratio):
            raise InvalidTheta(f"ratio must be positive and finite, got {self.ratio}.")
        for name in ("rho", "phi"):
            value = getattr(self, name)
            present = name in kind.dependence_names
            if present and value is None:
                raise InvalidTheta(f"{kind.value} requires {name}.")
            if not present and value is not None:
                raise InvalidTheta(f"{kind.value} has no {name} parameter.")
            if present and not lower < value < upper:
                raise InvalidTheta(f"{name} = {value} outside ({lower:.6g}, {upper:.6g}).")

    def dependence(self, kind: ModelKind) -> float:
        """Headline dependence parameter: rho for lag kinds, phi otherwise."""
        if kind.has_lag:
            return float(self.rho)
        if kind.has_error:
            return float(self.phi)
        return 0.0


def _pole_guard(theta: float, lambdas: np.ndarray) -> np.ndarray:
    gap = 1.0 - theta * lambdas
    bad = np.flatnonzero(np.abs(gap) < POLE_TOLERANCE)
    if bad.size:
        raise PoleProximity(int(bad[0]), float(gap[bad[0]]))
    return gap


def spillover_factors(rho: float, lambdas: np.ndarray) -> np.ndarray:
    """Diagonal of rho * Lambda (I - rho * Lambda)^-1."""
    gap = _pole_guard(rho, lambdas)
    return rho * lambdas / gap


def build_sigma(kind: ModelKind, theta: ThetaPoint, lambdas: np.ndarray) -> np.ndarray:
    lambdas = np.asarray(lambdas, dtype=float)
    if theta.ratio <= 0:
        raise InvalidTheta(f"ratio must be positive, got {theta.ratio}.")
    denominator = np.ones_like(lambdas)
    if kind.has_error:
        denominator = denominator * _pole_guard(theta.phi, lambdas)
    if kind.has_lag:
        denominator = denominator * _pole_guard(theta.rho, lambdas)
    return theta.ratio / denominator


def n_fixed(kind: ModelKind, K: int) -> int:
    """Number of fixed coefficients: 2K - 1 when covariates are lagged."""
    return 2 * K - 1 if kind.lags_covariates else K


def lag_covariates(w: SpatialWeights, X_minus1: np.ndarray) -> np.ndarray:
    return np.asarray(w.entries @ X_minus1)


def full_design(
    kind: ModelKind,
    data: DesignData,
    w: Optional[SpatialWeights] = None,
    alt_intercept: bool = False,
) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Design before the spillover transform, the mask of columns the
    transform touches, and column names.

    Lagged-covariate kinds append ``W X_-1``. The intercept is left outside
    the transform unless ``alt_intercept`` is set.
    """
    X = data.X
    names = list(data.names)
    if kind.lags_covariates:
        if w is None:
            raise InvalidDesign(f"{kind.value} needs the weights matrix.")
        lagged = lag_covariates(w, data.X_minus1)
        X = np.column_stack([X, lagged])
        names = names + [f"W_{name}" for name in data.names[1:]]
    mask = np.ones(X.shape[1], dtype=bool)
    if not (kind.has_lag and kind.is_lowrank):
        mask[:] = False
    elif not alt_intercept:
        mask[0] = False
    return X, mask, names


def spillover_transform(
    block: np.ndarray, basis: EigenBasis, rho: float
) -> np.ndarray:
    """``block + E rho Lambda (I - rho Lambda)^-1 E' block`` without forming
    an n x n matrix."""
    factors = spillover_factors(rho, basis.lambdas)
    return block + basis.E @ (factors[:, None] * (basis.E.T @ block))


def build_design(
    kind: ModelKind,
    data: DesignData,
    basis: EigenBasis,
    w: Optional[SpatialWeights] = None,
    rho: Optional[float] = None,
    alt_intercept: bool = False,
) -> np.ndarray:
    X, mask, _ = full_design(kind, data, w, alt_intercept)
    if not mask.any() or not rho:
        return X
    X = X.copy()
    X[:, mask] = spillover_transform(X[:, mask], basis, rho)
    return X
