"""Input checks with configurable failure policies.

A check inspects a value and returns a ``PassResult`` or ``FailResult``.
What happens on failure is decided by the check's ``on_fail`` policy:
``"exception"`` raises the domain error attached to the failure,
``"warn"`` logs it and continues, ``"noop"`` ignores it.
"""

from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Type, Union

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel

from lrspatial.errors import InvalidDesign, LowRankError, WeightsError
from lrspatial.logger import logger

checks_registry: Dict[str, Type["Check"]] = {}

OnFail = Literal["exception", "warn", "noop"]


def register_check(name: str):
    """Register a check class under ``name`` so it can be looked up from
    configuration."""

    def decorator(cls: Type["Check"]):
        cls.check_alias = name
        checks_registry[name] = cls
        return cls

    return decorator


class CheckResult(BaseModel):
    outcome: str
    metadata: Optional[Dict[str, Any]] = None


class PassResult(CheckResult):
    outcome: Literal["pass"] = "pass"


class FailResult(CheckResult):
    outcome: Literal["fail"] = "fail"

    error_message: str


class Check:
    """Base class for checks."""

    check_alias: str
    error_class: Type[LowRankError] = LowRankError

    def __init__(self, on_fail: Optional[Union[Callable, str]] = None):
        if on_fail is None:
            on_fail = "exception"
        if isinstance(on_fail, str):
            self.on_fail_descriptor = on_fail
            self.on_fail_method = None
        else:
            self.on_fail_descriptor = "custom"
            self.on_fail_method = on_fail

        assert (
            self.check_alias in checks_registry
        ), f"Check {self.__class__.__name__} is not registered. "

    def validate(self, value: Any, metadata: Dict[str, Any]) -> CheckResult:
        raise NotImplementedError

    def handle_failure(self, result: FailResult) -> None:
        message = f"{self.check_alias}: {result.error_message}"
        if self.on_fail_descriptor == "exception":
            raise self.error_class(message)
        if self.on_fail_descriptor == "warn":
            logger.warning(message)
        elif self.on_fail_descriptor == "custom" and self.on_fail_method:
            self.on_fail_method(result)

    def __call__(self, value: Any, metadata: Optional[Dict[str, Any]] = None):
        result = self.validate(value, metadata or {})
        if isinstance(result, FailResult):
            self.handle_failure(result)
        return result


def run_checks(
    checks: Sequence[Check], value: Any, metadata: Optional[Dict[str, Any]] = None
) -> List[CheckResult]:
    """Run checks in order; the first ``exception`` failure stops the run."""
    return [check(value, metadata) for check in checks]


@register_check("symmetric")
class Symmetric(Check):
    error_class = WeightsError

    def validate(self, value: sp.spmatrix, metadata: Dict[str, Any]) -> CheckResult:
        diff = abs(value - value.T)
        worst = diff.max() if diff.nnz else 0.0
        if worst > 0:
            return FailResult(error_message=f"matrix is not symmetric (|W - W'| = {worst:.3e}).")
        return PassResult()


@register_check("zero-diagonal")
class ZeroDiagonal(Check):
    error_class = WeightsError

    def validate(self, value: sp.spmatrix, metadata: Dict[str, Any]) -> CheckResult:
        bad = np.flatnonzero(value.diagonal())
        if bad.size:
            return FailResult(
                error_message=f"diagonal is nonzero at unit {int(bad[0])}.",
                metadata={"index": int(bad[0])},
            )
        return PassResult()


@register_check("nonnegative")
class Nonnegative(Check):
    error_class = WeightsError

    def validate(self, value: sp.spmatrix, metadata: Dict[str, Any]) -> CheckResult:
        data = sp.csr_matrix(value).data
        if data.size and data.min() < 0:
            return FailResult(error_message="negative weights are not allowed.")
        return PassResult()


@register_check("intercept-column")
class InterceptColumn(Check):
    error_class = InvalidDesign

    def validate(self, value: np.ndarray, metadata: Dict[str, Any]) -> CheckResult:
        if value.ndim != 2 or value.shape[1] == 0 or not np.all(value[:, 0] == 1.0):
            return FailResult(error_message="first column of X must be all ones.")
        return PassResult()


@register_check("non-constant-covariates")
class NonConstantCovariates(Check):
    error_class = InvalidDesign

    def validate(self, value: np.ndarray, metadata: Dict[str, Any]) -> CheckResult:
        names = metadata.get("names") or [f"x{k}" for k in range(value.shape[1])]
        for k in range(1, value.shape[1]):
            if np.ptp(value[:, k]) == 0:
                return FailResult(error_message=f"covariate '{names[k]}' is constant.")
        return PassResult()


@register_check("more-rows-than-columns")
class MoreRowsThanColumns(Check):
    error_class = InvalidDesign

    def validate(self, value: np.ndarray, metadata: Dict[str, Any]) -> CheckResult:
        n_fixed = metadata.get("n_fixed", value.shape[1])
        if value.shape[0] <= n_fixed:
            return FailResult(
                error_message=f"n = {value.shape[0]} must exceed the {n_fixed} fixed coefficients."
            )
        return PassResult()


@register_check("finite")
class Finite(Check):
    error_class = InvalidDesign

    def validate(self, value: np.ndarray, metadata: Dict[str, Any]) -> CheckResult:
        if not np.all(np.isfinite(value)):
            what = metadata.get("what", "input")
            return FailResult(error_message=f"{what} contains NaN or infinite values.")
        return PassResult()
