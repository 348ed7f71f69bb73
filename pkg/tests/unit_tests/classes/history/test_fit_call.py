import logging

from lrspatial.classes.history import FitCall, OptimizerStart
from lrspatial.constants import boundary_status, converged_status, failed_status, not_run_status
from lrspatial.logger import base_scope, logger, set_level, set_scope


def test_empty_initialization():
    call = FitCall(kind="LSEM", n=100, L=20)

    assert call.starts == []
    assert call.selected is None
    assert call.status == not_run_status
    assert not call.converged
    assert call.total_nfev == 0
    assert call.logs == []
    assert call.tree is not None


def test_non_empty_initialization():
    starts = [
        OptimizerStart(
            label="mid",
            start={"phi": 0.25, "ratio": 1.0},
            end={"phi": 0.61, "ratio": 2.3},
            loglik=-120.5,
            nfev=140,
            status=converged_status,
        ),
        OptimizerStart(
            label="high",
            start={"phi": 0.8, "ratio": 1.0},
            end={"phi": 0.99},
            nfev=60,
            status=failed_status,
        ),
        OptimizerStart(
            label="nested",
            start={"phi": 0.0, "ratio": 6e-6},
            loglik=-130.0,
            nfev=1,
            status=boundary_status,
        ),
    ]
    call = FitCall(kind="LSEM", n=100, L=20, starts=starts, selected=0)

    assert call.status == converged_status
    assert call.converged
    assert call.total_nfev == 201
    assert call.starts[1].loglik is None
    assert call.tree.label == "LSEM fit (n=100, L=20)"
    assert len(call.tree.children) == 3


def test_boundary_selection_still_counts_as_converged():
    start = OptimizerStart(label="nested", start={"rho": 0.0, "ratio": 1.0}, status=boundary_status)
    assert FitCall(kind="LSLM", n=10, L=5, starts=[start], selected=0).converged


def test_logs_are_read_from_the_fit_scope():
    call = FitCall(kind="LSLM", n=10, L=5)
    set_level(logging.INFO)
    try:
        set_scope(call.scope)
        logger.info("inside the fit")
        set_scope(base_scope)
        logger.info("outside the fit")
    finally:
        set_level(logging.NOTSET)

    assert call.logs == ["inside the fit"]
