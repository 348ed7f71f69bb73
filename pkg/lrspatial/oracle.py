"""Full-rank maximum likelihood for SEM/SLM and the residual Moran test.

Both estimators profile beta and sigma2 out of the likelihood and search the
dependence parameter on a bounded interval. ``log|I - theta W|`` comes from
the dense eigenvalues of ``W``.
"""

from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from eliot import start_action
from scipy.linalg import cho_factor, cho_solve, eigvalsh
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import splu

from lrspatial.constants import DENSE_GUARD
from lrspatial.errors import ConstantResiduals, ConvergenceFailure, SizeGuard, UnsupportedKind
from lrspatial.logger import logger
from lrspatial.model import DesignData, ModelKind
from lrspatial.reml import dependence_bounds
from lrspatial.utils.pydantic_utils import ArbitraryModel
from lrspatial.weights import SpatialWeights

SEARCH_XATOL = 1e-8
SEARCH_MAXITER = 500


class FullRankFit(ArbitraryModel):
    kind: ModelKind
    names: List[str]
    beta: np.ndarray
    theta: float
    sigma2: float
    loglik: float
    se_beta: np.ndarray
    se_theta: Optional[float] = None
    n: int
    nfev: int = 0
    innovations: Optional[np.ndarray] = None

    @property
    def dependence(self) -> float:
        return self.theta

    def report(self) -> dict:
        name = "rho" if self.kind == ModelKind.SLM else "phi"
        return {
            "kind": self.kind.value,
            "n": self.n,
            "coefficients": [
                {"name": k, "estimate": float(b), "se": float(s)}
                for k, b, s in zip(self.names, self.beta, self.se_beta)
            ],
            "theta": {name: self.theta},
            "se_theta": self.se_theta,
            "sigma2": self.sigma2,
            "loglik": self.loglik,
        }


class _Profile:
    """Concentrated log-likelihood of one kind on one dataset."""

    def __init__(self, kind: ModelKind, data: DesignData, w: SpatialWeights):
        self.kind = kind
        self.X = data.X
        self.y = data.y
        self.n = data.n
        self.W = w.entries
        self.omega = eigvalsh(w.dense())
        self.Wy = np.asarray(self.W @ self.y)
        if kind == ModelKind.SLM:
            self.factor = cho_factor(self.X.T @ self.X)
            self.e0 = self.y - self.X @ cho_solve(self.factor, self.X.T @ self.y)
            self.eL = self.Wy - self.X @ cho_solve(self.factor, self.X.T @ self.Wy)
        else:
            self.WX = np.asarray(self.W @ self.X)

    def logdet(self, theta: float) -> float:
        return float(np.sum(np.log1p(-theta * self.omega)))

    def solve(self, theta: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(beta, innovations, filtered design)`` at ``theta``."""
        if self.kind == ModelKind.SLM:
            ys = self.y - theta * self.Wy
            beta = cho_solve(self.factor, self.X.T @ ys)
            return beta, ys - self.X @ beta, self.X
        Xs = self.X - theta * self.WX
        ys = self.y - theta * self.Wy
        beta, *_ = np.linalg.lstsq(Xs, ys, rcond=None)
        return beta, ys - Xs @ beta, Xs

    def concentrated(self, theta: float) -> float:
        if self.kind == ModelKind.SLM:
            r = self.e0 - theta * self.eL
        else:
            _, r, _ = self.solve(theta)
        return -0.5 * self.n * np.log(float(r @ r) / self.n) + self.logdet(theta)

    def loglik(self, theta: float) -> float:
        return self.concentrated(theta) - 0.5 * self.n * (np.log(2.0 * np.pi) + 1.0)


def profile_loglik(kind: ModelKind, data: DesignData, w: SpatialWeights, theta: float) -> float:
    """Full log-likelihood with beta and sigma2 profiled out."""
    return _Profile(ModelKind(kind), data, w).loglik(theta)


def _slm_covariance(
    profile: _Profile, rho: float, beta: np.ndarray, sigma2: float
) -> np.ndarray:
    """Inverse asymptotic information in (beta, rho, sigma2)."""
    n, K = profile.X.shape
    ratio = profile.omega / (1.0 - rho * profile.omega)
    lu = splu(sp.csc_matrix(sp.identity(n) - rho * profile.W))
    spill = np.asarray(profile.W @ lu.solve(profile.X @ beta))
    info = np.zeros((K + 2, K + 2))
    info[:K, :K] = profile.X.T @ profile.X / sigma2
    info[:K, K] = info[K, :K] = profile.X.T @ spill / sigma2
    info[K, K] = 2.0 * float(ratio @ ratio) + float(spill @ spill) / sigma2
    info[K, K + 1] = info[K + 1, K] = ratio.sum() / sigma2
    info[K + 1, K + 1] = n / (2.0 * sigma2**2)
    return np.linalg.inv(info)


def _sem_covariance(
    profile: _Profile, phi: float, Xs: np.ndarray, sigma2: float
) -> Tuple[np.ndarray, float]:
    n = profile.n
    ratio = profile.omega / (1.0 - phi * profile.omega)
    varcov_beta = sigma2 * np.linalg.inv(Xs.T @ Xs)
    info = np.array(
        [
            [2.0 * float(ratio @ ratio), ratio.sum() / sigma2],
            [ratio.sum() / sigma2, n / (2.0 * sigma2**2)],
        ]
    )
    return varcov_beta, float(np.linalg.inv(info)[0, 0])


def fit_fullrank(kind: ModelKind, data: DesignData, w: SpatialWeights) -> FullRankFit:
    """Maximum likelihood SEM or SLM by bounded scalar search."""
    kind = ModelKind(kind)
    if kind not in (ModelKind.SEM, ModelKind.SLM):
        raise UnsupportedKind(f"full-rank estimation covers SEM and SLM, not {kind.value}.")
    if data.n > DENSE_GUARD:
        raise SizeGuard(data.n, DENSE_GUARD, "full-rank likelihood")

    with start_action(action_type="fit_fullrank", kind=kind.value, n=data.n):
        profile = _Profile(kind, data, w)
        bounds = dependence_bounds(w)
        result = minimize_scalar(
            lambda t: -profile.concentrated(t),
            bounds=bounds,
            method="bounded",
            options={"xatol": SEARCH_XATOL, "maxiter": SEARCH_MAXITER},
        )
        if not result.success or not np.isfinite(result.fun):
            raise ConvergenceFailure(
                f"{kind.value} scalar search failed: {result.message}", iterations=result.nfev
            )
        theta = float(result.x)
        beta, innovations, Xs = profile.solve(theta)
        sigma2 = float(innovations @ innovations) / data.n
        K = data.K
        if kind == ModelKind.SLM:
            varcov = _slm_covariance(profile, theta, beta, sigma2)
            se_beta = np.sqrt(np.diag(varcov)[:K])
            se_theta = float(np.sqrt(varcov[K, K]))
        else:
            varcov_beta, var_phi = _sem_covariance(profile, theta, Xs, sigma2)
            se_beta = np.sqrt(np.diag(varcov_beta))
            se_theta = float(np.sqrt(var_phi))
        logger.info(f"{kind.value} full-rank fit: theta={theta:.6f} sigma2={sigma2:.6g}")
        return FullRankFit(
            kind=kind,
            names=list(data.names),
            beta=beta,
            theta=theta,
            sigma2=sigma2,
            loglik=profile.loglik(theta),
            se_beta=se_beta,
            se_theta=se_theta,
            n=data.n,
            nfev=int(result.nfev),
            innovations=innovations,
        )


def moran_z(residuals, w0: SpatialWeights) -> float:
    """z-value of Moran's coefficient under the normality assumption."""
    r = np.asarray(residuals, dtype=float).reshape(-1)
    n = r.size
    if n != w0.n:
        raise ValueError(f"{n} residuals for a {w0.n}-unit weights matrix.")
    z = r - r.mean()
    denominator = float(z @ z)
    if np.ptp(r) == 0 or denominator <= np.finfo(float).tiny:
        raise ConstantResiduals("residuals are constant; Moran's coefficient is undefined.")
    W = sp.csr_matrix(w0.entries)
    S0 = float(W.sum())
    symmetric_sum = W + W.T
    S1 = 0.5 * float(symmetric_sum.multiply(symmetric_sum).sum())
    S2 = float(np.sum((np.asarray(W.sum(axis=1)).ravel() + np.asarray(W.sum(axis=0)).ravel()) ** 2))
    mc = (n / S0) * float(z @ (W @ z)) / denominator
    expected = -1.0 / (n - 1)
    variance = (n**2 * S1 - n * S2 + 3.0 * S0**2) / ((n**2 - 1) * S0**2) - expected**2
    return (mc - expected) / np.sqrt(variance)
