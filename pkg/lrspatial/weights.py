"""Spatial weights: construction, validation, scaling and serialization."""

from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from eliot import start_action
from scipy.linalg import eigvalsh
from scipy.sparse.linalg import eigsh
from scipy.spatial import Delaunay, QhullError, cKDTree

from lrspatial.checks import Nonnegative, Symmetric, ZeroDiagonal, run_checks
from lrspatial.constants import DENSE_EIGEN_LIMIT, DUPLICATE_DISTANCE, ZERO_TOLERANCE
from lrspatial.errors import (
    AlreadyScaled,
    CollinearPoints,
    DegenerateMatrix,
    DuplicatePoints,
    ParseError,
    SelfLoop,
    TooFewPoints,
)
from lrspatial.logger import logger
from lrspatial.utils.io_utils import write_text_atomic
from lrspatial.utils.pydantic_utils import FrozenArbitraryModel

PathLike = Union[str, Path]


class SpatialWeights(FrozenArbitraryModel):
    """Symmetric, zero-diagonal, nonnegative proximity matrix.

    ``lambda_max`` and ``lambda_min`` are the extreme eigenvalues of
    ``entries`` as stored, so after scaling ``lambda_max`` is 1.
    """

    n: int
    entries: sp.csr_matrix
    lambda_max: float
    lambda_min: float
    scaled: bool = False

    @classmethod
    def from_matrix(
        cls, matrix, scaled: bool = False, on_fail: str = "exception"
    ) -> "SpatialWeights":
        entries = sp.csr_matrix(matrix, dtype=float)
        entries.eliminate_zeros()
        entries.sort_indices()
        run_checks(
            [
                Symmetric(on_fail=on_fail),
                ZeroDiagonal(on_fail=on_fail),
                Nonnegative(on_fail=on_fail),
            ],
            entries,
        )
        lambda_min, lambda_max = extreme_eigenvalues(entries)
        return cls(
            n=entries.shape[0],
            entries=entries,
            lambda_max=lambda_max,
            lambda_min=lambda_min,
            scaled=scaled,
        )

    @property
    def n_edges(self) -> int:
        return int(sp.triu(self.entries, k=1).nnz)

    def dense(self) -> np.ndarray:
        return self.entries.toarray()


def extreme_eigenvalues(entries: sp.csr_matrix) -> Tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric sparse matrix."""
    n = entries.shape[0]
    if n <= DENSE_EIGEN_LIMIT:
        values = eigvalsh(entries.toarray())
        return float(values[0]), float(values[-1])
    v0 = np.full(n, 1.0 / np.sqrt(n))
    hi = eigsh(entries, k=1, which="LA", v0=v0, return_eigenvectors=False)
    lo = eigsh(entries, k=1, which="SA", v0=v0, return_eigenvectors=False)
    return float(lo[0]), float(hi[0])


def spectral_radius_power(
    entries: sp.spmatrix, tol: float = 1e-10, max_iter: int = 10_000
) -> float:
    """Spectral radius of a nonnegative symmetric matrix by power iteration.

    Iterates on ``W + I`` so bipartite graphs, whose extreme eigenvalues
    share a magnitude, still converge.
    """
    n = entries.shape[0]
    shifted = sp.csr_matrix(entries) + sp.identity(n, format="csr")
    x = np.full(n, 1.0 / np.sqrt(n))
    estimate = 0.0
    for _ in range(max_iter):
        y = shifted @ x
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        x_next = y / norm
        new_estimate = float(x_next @ (shifted @ x_next))
        if abs(new_estimate - estimate) < tol * max(1.0, abs(new_estimate)):
            return new_estimate - 1.0
        x, estimate = x_next, new_estimate
    logger.warning("Power iteration reached its iteration cap before converging.")
    return estimate - 1.0


def build_delaunay_adjacency(coords) -> SpatialWeights:
    """Binary adjacency of the Delaunay triangulation of 2-D points."""
    points = np.asarray(coords, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ParseError(f"coordinates must be an n x 2 array, got shape {points.shape}.")
    n = points.shape[0]
    if n < 3:
        raise TooFewPoints(n)

    with start_action(action_type="build_delaunay_adjacency", n=n):
        pairs = cKDTree(points).query_pairs(DUPLICATE_DISTANCE)
        if pairs:
            i, j = min(pairs)
            raise DuplicatePoints(i, j)
        spread = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
        if spread[1] <= ZERO_TOLERANCE * spread[0]:
            raise CollinearPoints("all points lie on a single line.")

        try:
            tri = Delaunay(points, qhull_options="Qbb Qc Qz Q12 Qt")
        except QhullError:
            logger.debug("Qhull failed on exact input; retrying with joggled input.")
            try:
                tri = Delaunay(points, qhull_options="QJ")
            except QhullError as e:
                raise CollinearPoints(str(e)) from e

        simplices = tri.simplices
        rows = np.concatenate([simplices[:, 0], simplices[:, 1], simplices[:, 2]])
        cols = np.concatenate([simplices[:, 1], simplices[:, 2], simplices[:, 0]])
        adjacency = sp.coo_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(n, n)
        ).tocsr()
        adjacency = adjacency + adjacency.T
        adjacency.data[:] = 1.0
        return SpatialWeights.from_matrix(adjacency)


def load_edge_list(
    path: PathLike, n: Optional[int] = None, one_based: bool = False
) -> SpatialWeights:
    """Read whitespace-separated ``i j w`` triples.

    ``#`` starts a comment. Asymmetric pairs are symmetrized by taking the
    larger of the two weights.
    """
    offset = 1 if one_based else 0
    edges: Dict[Tuple[int, int], float] = {}
    max_index = -1
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 3:
                raise ParseError(f"expected 'i j weight', got {len(tokens)} fields.", lineno)
            try:
                i, j = int(tokens[0]) - offset, int(tokens[1]) - offset
                weight = float(tokens[2])
            except ValueError as e:
                raise ParseError(str(e), lineno) from e
            if i < 0 or j < 0 or (n is not None and max(i, j) >= n):
                raise ParseError(f"index out of range: {tokens[0]} {tokens[1]}.", lineno)
            if not np.isfinite(weight) or weight < 0:
                raise ParseError(f"weight must be finite and nonnegative, got {tokens[2]}.", lineno)
            if i == j:
                if weight != 0:
                    raise SelfLoop(i, lineno)
                continue
            key = (min(i, j), max(i, j))
            edges[key] = max(edges.get(key, 0.0), weight)
            max_index = max(max_index, i, j)

    if n is None:
        if max_index < 0:
            raise ParseError("edge list contains no edges.")
        n = max_index + 1

    with start_action(action_type="load_edge_list", path=str(path), n=n, n_edges=len(edges)):
        if edges:
            keys = np.array(list(edges.keys()), dtype=int)
            values = np.array(list(edges.values()), dtype=float)
            rows = np.concatenate([keys[:, 0], keys[:, 1]])
            cols = np.concatenate([keys[:, 1], keys[:, 0]])
            data = np.concatenate([values, values])
        else:
            rows = cols = np.array([], dtype=int)
            data = np.array([], dtype=float)
        matrix = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
        return SpatialWeights.from_matrix(matrix)


def save_edge_list(w: SpatialWeights, path: PathLike, one_based: bool = False) -> Path:
    """Write each undirected edge once as ``i j w`` with ``i < j``."""
    offset = 1 if one_based else 0
    upper = sp.triu(w.entries, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    lines = [f"# n={w.n} scaled={str(w.scaled).lower()}"]
    lines.extend(
        f"{upper.row[k] + offset} {upper.col[k] + offset} {float(upper.data[k])!r}"
        for k in order
    )
    return write_text_atomic(path, "\n".join(lines) + "\n")


def load_coords(path: PathLike) -> np.ndarray:
    """Read an ``x,y`` coordinates CSV into an n x 2 array."""
    try:
        frame = pd.read_csv(path)
    except pd.errors.ParserError as e:
        raise ParseError(f"{path}: {e}") from e
    missing = [c for c in ("x", "y") if c not in frame.columns]
    if missing:
        raise ParseError(f"{path}: missing coordinate column(s) {', '.join(missing)}.")
    coords = frame[["x", "y"]]
    bad = coords.apply(pd.to_numeric, errors="coerce").isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        # header is line 1
        raise ParseError(
            f"{path}: non-numeric value in column '{coords.columns[col]}'.", int(row) + 2
        )
    return coords.to_numpy(dtype=float)


def scale_by_max_eigenvalue(w: SpatialWeights) -> SpatialWeights:
    """Divide every entry by the largest eigenvalue."""
    if w.scaled:
        raise AlreadyScaled("weights are already scaled by their largest eigenvalue.")
    if w.lambda_max <= ZERO_TOLERANCE:
        raise DegenerateMatrix(
            f"largest eigenvalue {w.lambda_max:.3e} is not positive; cannot scale."
        )
    with start_action(action_type="scale_by_max_eigenvalue", lambda_max=w.lambda_max):
        return SpatialWeights(
            n=w.n,
            entries=sp.csr_matrix(w.entries / w.lambda_max),
            lambda_max=1.0,
            lambda_min=w.lambda_min / w.lambda_max,
            scaled=True,
        )
