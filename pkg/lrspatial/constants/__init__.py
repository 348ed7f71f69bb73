from typing import Literal

converged_status: Literal["converged"] = "converged"
boundary_status: Literal["boundary"] = "boundary"
maxfev_status: Literal["max evaluations"] = "max evaluations"
failed_status: Literal["failed"] = "failed"
not_run_status: Literal["not run"] = "not run"

# |1 - theta * lambda_l| below this is treated as a pole of (I - theta Lambda)^-1
POLE_TOLERANCE = 1e-10
# Cholesky pivots below this fraction of the largest diagonal are singular
PIVOT_RATIO = 1e-12
# Open-interval margin for the dependence parameters
DEPENDENCE_MARGIN = 1e-6
LOG_RATIO_CLIP = 12.0
TAU2_FLOOR = 1e-12

ZERO_TOLERANCE = 1e-12
DUPLICATE_DISTANCE = 1e-12
CLUSTER_TOLERANCE = 1e-8

# Dense eigensolver below this many units, ARPACK above
DENSE_EIGEN_LIMIT = 500
# Largest n for which dense (I - rho W)^-1 objects may be formed
DENSE_GUARD = 5000
# Largest n for which the Monte Carlo DGP is generated with exact solves
DGP_SIZE_LIMIT = 20_000

DEFAULT_RANK_CAP = 200
DEFAULT_MULTI_STARTS = 3
MAX_BOOTSTRAP_FAILURE_RATE = 0.10

THREADS_ENV = "LRSPATIAL_THREADS"
OUT_ENV = "LRSPATIAL_OUT"
CACHE_DIR_ENV = "LRSPATIAL_CACHE_DIR"
