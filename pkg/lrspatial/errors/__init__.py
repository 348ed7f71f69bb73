from typing import Optional


class LowRankError(Exception):
    """Base class for all lrspatial errors."""


class WeightsError(LowRankError):
    """Raised when a spatial weights matrix cannot be built or scaled."""


class TooFewPoints(WeightsError):
    def __init__(self, n: int):
        super().__init__(f"At least 3 points are required, got {n}.")
        self.n = n


class DuplicatePoints(WeightsError):
    def __init__(self, i: int, j: int):
        super().__init__(f"Points {i} and {j} are coincident.")
        self.pair = (i, j)


class CollinearPoints(WeightsError):
    """All coordinates lie on one line, so no triangulation exists."""


class ParseError(WeightsError):
    def __init__(self, message: str, line: Optional[int] = None):
        location = f"line {line}: " if line is not None else ""
        super().__init__(f"{location}{message}")
        self.line = line


class SelfLoop(WeightsError):
    def __init__(self, index: int, line: Optional[int] = None):
        location = f" (line {line})" if line is not None else ""
        super().__init__(f"Self-loop on unit {index}{location}.")
        self.index = index
        self.line = line


class DegenerateMatrix(WeightsError):
    """The largest eigenvalue is not positive, so W cannot be scaled."""


class AlreadyScaled(WeightsError):
    """Scaling was requested for a matrix that is already scaled."""


class EigenError(LowRankError):
    """Raised by the eigenbasis module."""


class ConvergenceFailure(EigenError):
    def __init__(self, message: str, iterations: Optional[int] = None):
        super().__init__(message)
        self.iterations = iterations


class BadRank(EigenError):
    def __init__(self, requested: int, maximum: int):
        super().__init__(f"Rank must lie in [1, {maximum}], got {requested}.")
        self.requested = requested
        self.maximum = maximum


class ModelError(LowRankError):
    """Raised when model components cannot be assembled."""


class PoleProximity(ModelError):
    def __init__(self, index: int, value: float):
        super().__init__(
            f"1 - theta * lambda is {value:.3e} for eigenpair {index}; "
            "the dependence parameter is at a pole."
        )
        self.index = index
        self.value = value


class InvalidDesign(ModelError):
    """The response/covariate data violate the design invariants."""


class InvalidTheta(ModelError):
    """A dependence or variance-ratio parameter is outside its domain."""


class EstimationError(LowRankError):
    """Raised by the estimators."""


class SingularSystem(EstimationError):
    """The mixed-model system matrix is not numerically positive definite."""


class OptimFailure(EstimationError):
    """The optimizer did not reach a finite objective value."""


class UnsupportedKind(EstimationError):
    """The requested model kind is not handled by this estimator."""


class SizeGuard(LowRankError):
    def __init__(self, n: int, limit: int, what: str = "dense computation"):
        super().__init__(f"n = {n} exceeds the {what} limit of {limit}.")
        self.n = n
        self.limit = limit


class TooFewSamples(LowRankError):
    """Fewer bootstrap samples than an interval needs."""


class BootstrapFailure(LowRankError):
    def __init__(self, failed: int, total: int):
        super().__init__(
            f"{failed} of {total} bootstrap replicates failed, "
            "more than the tolerated share."
        )
        self.failed = failed
        self.total = total


class ConstantResiduals(LowRankError):
    """Moran's coefficient is undefined for constant residuals."""


class ScenarioError(LowRankError):
    def __init__(self, message: str, scenario: Optional[str] = None):
        prefix = f"scenario '{scenario}': " if scenario else ""
        super().__init__(f"{prefix}{message}")
        self.scenario = scenario


__all__ = [
    "LowRankError",
    "WeightsError",
    "TooFewPoints",
    "DuplicatePoints",
    "CollinearPoints",
    "ParseError",
    "SelfLoop",
    "DegenerateMatrix",
    "AlreadyScaled",
    "EigenError",
    "ConvergenceFailure",
    "BadRank",
    "ModelError",
    "PoleProximity",
    "InvalidDesign",
    "InvalidTheta",
    "EstimationError",
    "SingularSystem",
    "OptimFailure",
    "UnsupportedKind",
    "SizeGuard",
    "TooFewSamples",
    "BootstrapFailure",
    "ConstantResiduals",
    "ScenarioError",
]
