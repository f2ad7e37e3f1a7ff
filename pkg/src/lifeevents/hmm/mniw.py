"""Matrix-normal inverse-Wishart prior over VAR regression parameters.

The regression is ``y_t = W x_t + e_t`` with ``e_t ~ N(0, Sigma)``,
``W | Sigma ~ MN(M, Sigma, inv(K))`` and ``Sigma ~ IW(nu, S)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import multigammaln
from scipy.stats import invwishart

LOG_2PI = np.log(2 * np.pi)


@dataclass
class MNIW:
    M: np.ndarray      # (d, p) mean of W
    K: np.ndarray      # (p, p) column precision
    nu: float
    S: np.ndarray      # (d, d) inverse-Wishart scale

    @property
    def d(self):
        return self.M.shape[0]

    def posterior(self, Sxx, Syx, Syy, n) -> "MNIW":
        """Update from sufficient statistics sum(x x'), sum(y x'), sum(y y') over n rows."""
        Kn = Sxx + self.K
        MK = self.M @ self.K
        Syx_n = Syx + MK
        Mn = np.linalg.solve(Kn, Syx_n.T).T
        Syy_n = Syy + MK @ self.M.T
        Sn = self.S + Syy_n - Mn @ Syx_n.T
        Sn = 0.5 * (Sn + Sn.T)
        return MNIW(Mn, Kn, self.nu + n, Sn)

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        Sigma = np.atleast_2d(invwishart.rvs(df=self.nu, scale=self.S, random_state=rng))
        Sigma = 0.5 * (Sigma + Sigma.T)
        Lr = np.linalg.cholesky(Sigma)
        Lc = np.linalg.cholesky(np.linalg.inv(self.K))
        Z = rng.standard_normal(self.M.shape)
        return self.M + Lr @ Z @ Lc.T, Sigma

    def mean(self) -> tuple[np.ndarray, np.ndarray]:
        d = self.d
        denom = self.nu - d - 1
        Sigma = self.S / denom if denom > 0 else self.S / max(self.nu, 1.0)
        return self.M.copy(), Sigma

    def logpdf(self, W, Sigma) -> float:
        d, p = self.M.shape
        _, logdet_sig = np.linalg.slogdet(Sigma)
        _, logdet_S = np.linalg.slogdet(self.S)
        _, logdet_K = np.linalg.slogdet(self.K)
        Sinv = np.linalg.inv(Sigma)
        iw = (0.5 * self.nu * logdet_S - 0.5 * self.nu * d * np.log(2) - multigammaln(0.5 * self.nu, d)
              - 0.5 * (self.nu + d + 1) * logdet_sig - 0.5 * np.trace(self.S @ Sinv))
        D = W - self.M
        mn = (-0.5 * np.trace(self.K @ D.T @ Sinv @ D) - 0.5 * d * p * LOG_2PI
              + 0.5 * d * logdet_K - 0.5 * p * logdet_sig)
        return float(iw + mn)


def default_prior(d: int, ar_order: int, scale: float = 0.5, strength: float = 1.0) -> MNIW:
    """Weakly informative prior for z-normalized data.

    The prior mean of Sigma is ``scale * I``; ``strength`` is the column precision
    of W around zero.
    """
    p = ar_order * d + 1
    nu = d + 2.0
    return MNIW(M=np.zeros((d, p)), K=strength * np.eye(p), nu=nu, S=scale * (nu - d - 1) * np.eye(d))


def sufficient_stats(Y, X):
    return X.T @ X, Y.T @ X, Y.T @ Y, Y.shape[0]
