import hashlib
import os
import tempfile
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import scipy.sparse as sp

from lrspatial.constants import CACHE_DIR_ENV
from lrspatial.logger import logger


def content_hash(*parts, **meta) -> str:
    """Hash arrays, sparse matrices and scalars into a stable hex key."""
    h = hashlib.sha256()
    for part in parts:
        if part is None:
            h.update(b"none")
        elif sp.issparse(part):
            csr = sp.csr_matrix(part)
            csr.sort_indices()
            h.update(str(csr.shape).encode())
            h.update(np.ascontiguousarray(csr.indptr).tobytes())
            h.update(np.ascontiguousarray(csr.indices).tobytes())
            h.update(np.ascontiguousarray(csr.data, dtype=float).tobytes())
        else:
            arr = np.ascontiguousarray(np.asarray(part, dtype=float))
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
    for key in sorted(meta):
        h.update(f"{key}={meta[key]!r}".encode())
    return h.hexdigest()


class ArrayCache:
    """Directory of ``.npz`` files keyed by content hash."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)

    @classmethod
    def from_env(cls) -> Optional["ArrayCache"]:
        directory = os.environ.get(CACHE_DIR_ENV)
        return cls(directory) if directory else None

    def _path(self, namespace: str, key: str) -> Path:
        return self.directory / f"{namespace}-{key}.npz"

    def load(self, namespace: str, key: str) -> Optional[Dict[str, np.ndarray]]:
        path = self._path(namespace, key)
        if not path.exists():
            return None
        try:
            with np.load(path, allow_pickle=False) as archive:
                return {name: archive[name] for name in archive.files}
        except (OSError, ValueError) as e:
            logger.warning(f"Ignoring unreadable cache file {path}: {e}")
            return None

    def save(self, namespace: str, key: str, **arrays: np.ndarray) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self._path(namespace, key)
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".npz")
        os.close(fd)
        try:
            with open(tmp, "wb") as f:
                np.savez(f, **arrays)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
        return path
