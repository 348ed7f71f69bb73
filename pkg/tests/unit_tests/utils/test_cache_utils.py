import numpy as np
import scipy.sparse as sp

from lrspatial.constants import CACHE_DIR_ENV
from lrspatial.utils.cache_utils import ArrayCache, content_hash


def test_hash_depends_on_values_and_metadata():
    a = np.arange(6.0).reshape(2, 3)
    assert content_hash(a, l=3) == content_hash(a.copy(), l=3)
    assert content_hash(a, l=3) != content_hash(a, l=4)
    assert content_hash(a) != content_hash(a.reshape(3, 2))
    assert content_hash(sp.csr_matrix(a)) == content_hash(sp.csr_matrix(a.copy()))
    assert content_hash(None, a) != content_hash(a)


def test_cache_round_trip(tmp_path):
    cache = ArrayCache(tmp_path / "cache")
    assert cache.load("eigen", "k") is None

    cache.save("eigen", "k", E=np.eye(3), lambdas=np.array([1.0, 0.5, 0.2]))
    hit = cache.load("eigen", "k")
    np.testing.assert_array_equal(hit["E"], np.eye(3))
    np.testing.assert_array_equal(hit["lambdas"], [1.0, 0.5, 0.2])


def test_unreadable_cache_file_is_ignored(tmp_path):
    cache = ArrayCache(tmp_path)
    (tmp_path / "eigen-bad.npz").write_bytes(b"not an archive")
    assert cache.load("eigen", "bad") is None


def test_cache_from_environment(mocker, tmp_path):
    mocker.patch.dict("os.environ", {CACHE_DIR_ENV: str(tmp_path)})
    assert ArrayCache.from_env().directory == tmp_path
    mocker.patch.dict("os.environ", {}, clear=True)
    assert ArrayCache.from_env() is None
