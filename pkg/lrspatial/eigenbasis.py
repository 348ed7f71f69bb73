"""Leading eigenpairs of the scaled weights matrix."""

from typing import Literal, Optional

import numpy as np
from eliot import start_action
from scipy.linalg import eigh, eigvalsh, qr, solve
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from lrspatial.constants import CLUSTER_TOLERANCE, DENSE_EIGEN_LIMIT
from lrspatial.errors import BadRank, ConvergenceFailure
from lrspatial.logger import logger
from lrspatial.utils.cache_utils import ArrayCache, content_hash
from lrspatial.utils.pydantic_utils import FrozenArbitraryModel
from lrspatial.weights import SpatialWeights

Which = Literal["LA", "LM"]

ARPACK_MAXITER = 10_000
ARPACK_ATTEMPTS = 3


class EigenBasis(FrozenArbitraryModel):
    """``E`` (n x L, orthonormal columns) and ``lambdas`` (descending)."""

    E: np.ndarray
    lambdas: np.ndarray
    which: Which = "LA"

    @property
    def n(self) -> int:
        return self.E.shape[0]

    @property
    def L(self) -> int:
        return self.E.shape[1]

    def truncate(self, l: int) -> "EigenBasis":
        """The ``l`` leading eigenpairs under this basis's ranking.

        Algebraically-ranked bases keep a prefix. Magnitude-ranked bases are
        stored in descending algebraic order, so the ``l`` largest |lambda|
        are picked again and kept in that order. Either way the result has
        the spectrum of a fresh decomposition at rank ``l``.
        """
        if l < 1 or l > self.L:
            raise BadRank(l, self.L)
        if l == self.L:
            return self
        if self.which == "LM":
            lambdas, E = _select(self.lambdas, self.E, l, "LM")
            return EigenBasis(E=E, lambdas=lambdas, which=self.which)
        return EigenBasis(E=self.E[:, :l], lambdas=self.lambdas[:l], which=self.which)


def _orient(vectors: np.ndarray) -> np.ndarray:
    """Make each column's largest-magnitude entry positive (lowest index on ties)."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _canonicalize_clusters(values: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Replace each numerically repeated eigenspace's basis with one that
    does not depend on the solver's internal rotation.

    Pivot units are picked by QR with column pivoting on the cluster's rows;
    the basis taking identity values at those units is then orthonormalized.
    """
    vectors = vectors.copy()
    start = 0
    L = values.size
    while start < L:
        stop = start + 1
        while stop < L and abs(values[stop - 1] - values[stop]) < CLUSTER_TOLERANCE:
            stop += 1
        if stop - start > 1:
            block = vectors[:, start:stop]
            k = block.shape[1]
            _, _, pivots = qr(block.T, pivoting=True, mode="economic")
            anchored = block @ solve(block[pivots[:k], :], np.eye(k))
            q, _ = np.linalg.qr(anchored)
            vectors[:, start:stop] = q
        start = stop
    return vectors


def _select(values: np.ndarray, vectors: np.ndarray, l: int, which: Which):
    """Pick ``l`` pairs by the ranking rule and return them in descending
    algebraic order."""
    if which == "LM":
        # larger algebraic value first among equal magnitudes
        order = np.lexsort((-values, -np.abs(values)))[:l]
    else:
        order = np.argsort(-values, kind="stable")[:l]
    chosen = order[np.argsort(-values[order], kind="stable")]
    return values[chosen], vectors[:, chosen]


def _dense_pairs(w: SpatialWeights, l: int, which: Which):
    dense = w.dense()
    n = w.n
    if which == "LA":
        values, vectors = eigh(dense, subset_by_index=[n - l, n - 1])
    else:
        values, vectors = eigh(dense)
    return _select(values, vectors, l, which)


def _arpack_pairs(w: SpatialWeights, l: int, which: Which):
    n = w.n
    v0 = np.full(n, 1.0 / np.sqrt(n))
    try:
        for attempt in Retrying(
            stop=stop_after_attempt(ARPACK_ATTEMPTS),
            retry=retry_if_exception_type(ArpackNoConvergence),
            reraise=True,
        ):
            with attempt:
                ncv = min(n - 1, max(2 * l + 1, 20) * attempt.retry_state.attempt_number)
                values, vectors = eigsh(
                    w.entries, k=l, which=which, v0=v0, ncv=ncv, maxiter=ARPACK_MAXITER
                )
    except ArpackNoConvergence as e:
        raise ConvergenceFailure(
            f"ARPACK found {len(e.eigenvalues)} of {l} eigenpairs.",
            iterations=ARPACK_MAXITER,
        ) from e
    return _select(values, vectors, l, which)


def top_l_eigenpairs(
    w: SpatialWeights,
    l: int,
    which: Which = "LA",
    cache: Optional[ArrayCache] = None,
) -> EigenBasis:
    """The ``l`` leading eigenpairs of ``w``, in descending order.

    ``which="LA"`` ranks by algebraic value, ``"LM"`` by magnitude.
    """
    if l < 1 or l > w.n:
        raise BadRank(l, w.n)
    if not w.scaled:
        logger.warning("Decomposing an unscaled weights matrix.")

    key = content_hash(w.entries, l=l, which=which) if cache is not None else None
    if cache is not None:
        hit = cache.load("eigen", key)
        if hit is not None:
            logger.debug(f"Eigenpair cache hit for n={w.n}, l={l}.")
            return EigenBasis(E=hit["E"], lambdas=hit["lambdas"], which=which)

    with start_action(action_type="top_l_eigenpairs", n=w.n, l=l, which=which):
        if w.n <= DENSE_EIGEN_LIMIT or l >= w.n - 1:
            values, vectors = _dense_pairs(w, l, which)
        else:
            values, vectors = _arpack_pairs(w, l, which)
        vectors = _orient(_canonicalize_clusters(values, vectors))
        basis = EigenBasis(
            E=np.ascontiguousarray(vectors), lambdas=np.asarray(values, dtype=float), which=which
        )

    if cache is not None:
        cache.save("eigen", key, E=basis.E, lambdas=basis.lambdas)
    return basis


def select_l_by_threshold(lambdas_all, t: float, absolute: bool = False) -> int:
    """Number of eigenvalues of the scaled matrix above ``t``.

    By default only the positive side counts; ``absolute`` counts
    ``|lambda| > t``.
    """
    values = np.asarray(lambdas_all, dtype=float)
    if absolute:
        values = np.abs(values)
    return int(np.count_nonzero(values > t))


def count_above_threshold(
    w: SpatialWeights, t: float, absolute: bool = False, initial: int = 50
) -> int:
    """``select_l_by_threshold`` without a full decomposition.

    The Lanczos request grows until the smallest returned eigenvalue falls
    at or below ``t``.
    """
    if w.n <= DENSE_EIGEN_LIMIT:
        return select_l_by_threshold(eigvalsh(w.dense()), t, absolute)

    which: Which = "LM" if absolute else "LA"
    k = min(initial, w.n - 2)
    v0 = np.full(w.n, 1.0 / np.sqrt(w.n))
    with start_action(action_type="count_above_threshold", n=w.n, t=t):
        while True:
            values = eigsh(w.entries, k=k, which=which, v0=v0, return_eigenvectors=False)
            ranked = np.abs(values) if absolute else values
            if ranked.min() <= t or k >= w.n - 2:
                return select_l_by_threshold(values, t, absolute)
            k = min(2 * k, w.n - 2)
