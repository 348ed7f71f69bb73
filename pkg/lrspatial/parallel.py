import os
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from typing import Callable, List, Literal, Optional, TypeVar

from lrspatial.constants import THREADS_ENV
from lrspatial.logger import logger

T = TypeVar("T")

Backend = Literal["thread", "process"]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, os.cpu_count() or 1)))
    except ValueError:
        logger.warning(f"Ignoring non-integer {THREADS_ENV}; running single-threaded.")
        return 1


def _make_executor(backend: Backend, workers: int) -> Executor:
    if backend == "process":
        return ProcessPoolExecutor(max_workers=workers)
    return ThreadPoolExecutor(max_workers=workers)


def run_indexed(
    fn: Callable[[int], T],
    n_items: int,
    workers: Optional[int] = None,
    backend: Backend = "thread",
) -> List[T]:
    """Evaluate ``fn(0) .. fn(n_items - 1)`` and return the results in index
    order.

    Runs inline when one worker is requested. With a process backend ``fn``
    must be picklable.
    """
    workers = default_workers() if workers is None else max(1, workers)
    if workers == 1 or n_items <= 1:
        return [fn(i) for i in range(n_items)]

    if workers > n_items:
        workers = n_items
    with _make_executor(backend, workers) as executor:
        futures = [executor.submit(fn, i) for i in range(n_items)]
        return [future.result() for future in futures]
