import os

import pytest

from lrspatial.constants import THREADS_ENV
from lrspatial.parallel import default_workers, run_indexed


def _square(i: int) -> int:
    return i * i


@pytest.mark.parametrize("workers", [1, 3, 16])
def test_results_come_back_in_index_order(workers):
    assert run_indexed(_square, 10, workers=workers) == [i * i for i in range(10)]


def test_process_backend():
    assert run_indexed(_square, 5, workers=2, backend="process") == [0, 1, 4, 9, 16]


def test_single_worker_runs_inline(mocker):
    executor = mocker.patch("lrspatial.parallel._make_executor")
    run_indexed(_square, 4, workers=1)
    assert executor.call_count == 0


def test_worker_count_from_environment(mocker):
    mocker.patch.dict(os.environ, {THREADS_ENV: "3"})
    assert default_workers() == 3
    mocker.patch.dict(os.environ, {THREADS_ENV: "many"})
    assert default_workers() == 1
