"""Log-space multivariate t, Gaussian and gamma density kernels.

All kernels work on the observed coordinates of a row only. A
``PatternFactorization`` holds the Cholesky factor of the observed block of
a dispersion matrix and is shared by every row with that pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, logsumexp

NU_MIN = 0.5
NU_MAX = 200.0

LOG_2PI = np.log(2.0 * np.pi)


class DegenerateError(ArithmeticError):
    """A density or update became numerically degenerate."""


@dataclass(frozen=True, eq=False)
class ClusterParams:
    mu: np.ndarray
    sigma: np.ndarray
    nu: float
    pi: float = 1.0

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=float).reshape(mu.size, mu.size)
        if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-10):
            raise ValueError("sigma must be symmetric")
        if not 0 < self.pi <= 1:
            raise ValueError(f"pi={self.pi} outside (0, 1]")
        if not self.nu > 0:
            raise ValueError(f"nu={self.nu} must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def p(self) -> int:
        return self.mu.size


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """K-component t mixture stored as stacked arrays."""

    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float).reshape(-1)
        K = pi.size
        mu = np.asarray(self.mu, dtype=float).reshape(K, -1)
        p = mu.shape[1]
        sigma = np.asarray(self.sigma, dtype=float).reshape(K, p, p)
        nu = np.broadcast_to(np.asarray(self.nu, dtype=float), (K,)).copy()
        if K < 1:
            raise ValueError("need at least one component")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12 * max(1, K):
            raise ValueError(f"mixing proportions {pi} must be nonnegative and sum to 1")
        if np.any(nu <= 0):
            raise ValueError("degrees of freedom must be positive")
        for name, a in (("pi", pi), ("mu", mu), ("sigma", sigma), ("nu", nu)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def K(self) -> int:
        return self.pi.size

    @property
    def p(self) -> int:
        return self.mu.shape[1]

    @property
    def clusters(self) -> list[ClusterParams]:
        return [ClusterParams(self.mu[k], self.sigma[k], float(self.nu[k]), float(self.pi[k])) for k in range(self.K)]

    @classmethod
    def from_clusters(cls, clusters) -> "MixtureParams":
        return cls(
            np.array([c.pi for c in clusters]),
            np.stack([c.mu for c in clusters]),
            np.stack([c.sigma for c in clusters]),
            np.array([c.nu for c in clusters]),
        )

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "p": self.p,
            "clusters": [
                {"pi": float(self.pi[k]), "mu": self.mu[k].tolist(), "sigma": self.sigma[k].tolist(), "nu": float(self.nu[k])}
                for k in range(self.K)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MixtureParams":
        cl = doc["clusters"]
        return cls([c["pi"] for c in cl], [c["mu"] for c in cl], [c["sigma"] for c in cl], [c["nu"] for c in cl])


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


@dataclass(frozen=True, eq=False)
class PatternFactorization:
    observed: np.ndarray
    chol: np.ndarray
    logdet: float

    @property
    def dim(self) -> int:
        return self.observed.size


def factorize(sigma: np.ndarray, observed=None) -> PatternFactorization:
    """Cholesky factor of ``sigma[observed, observed]``."""
    sigma = symmetrize(np.asarray(sigma, dtype=float))
    obs = np.arange(sigma.shape[0]) if observed is None else np.asarray(observed, dtype=int)
    block = sigma[np.ix_(obs, obs)]
    try:
        L = np.linalg.cholesky(block)
    except np.linalg.LinAlgError as exc:
        raise DegenerateError("observed dispersion block is not positive definite") from exc
    return PatternFactorization(obs, L, 2.0 * float(np.log(np.diag(L)).sum()))


def mahalanobis(y_obs, mu_obs, fact: PatternFactorization) -> float:
    """Squared Mahalanobis distance (y - mu)' S^-1 (y - mu) via a triangular solve."""
    y_obs = np.asarray(y_obs, dtype=float).reshape(-1)
    mu_obs = np.asarray(mu_obs, dtype=float).reshape(-1)
    if y_obs.size != fact.dim or mu_obs.size != fact.dim:
        raise ValueError(f"dimension mismatch: y {y_obs.size}, mu {mu_obs.size}, factor {fact.dim}")
    x = solve_triangular(fact.chol, y_obs - mu_obs, lower=True)
    return float(x @ x)


def t_log_normalizer(nu, dim, logdet):
    """Log of the t density at its mode, broadcasting over arrays."""
    return gammaln(0.5 * (nu + dim)) - gammaln(0.5 * nu) - 0.5 * dim * np.log(nu * np.pi) - 0.5 * logdet


def t_log_kernel(delta, nu, dim):
    return -0.5 * (nu + dim) * np.log1p(delta / nu)


def log_t_density(y_obs, params: ClusterParams, fact: PatternFactorization) -> float:
    """log t_d(y_obs; mu[obs], sigma[obs, obs], nu) for d observed coordinates."""
    mu_obs = params.mu[fact.observed]
    delta = mahalanobis(y_obs, mu_obs, fact)
    out = float(t_log_normalizer(params.nu, fact.dim, fact.logdet) + t_log_kernel(delta, params.nu, fact.dim))
    if not np.isfinite(out):
        raise DegenerateError("non-finite t log-density")
    return out


def log_gaussian_density(y_obs, mu_obs, fact: PatternFactorization, w: float = 1.0) -> float:
    """log N(y_obs; mu_obs, S / w) where S is the factorized block."""
    if not w > 0:
        raise ValueError(f"weight w={w} must be positive")
    delta = mahalanobis(y_obs, mu_obs, fact)
    d = fact.dim
    return float(-0.5 * d * LOG_2PI + 0.5 * d * np.log(w) - 0.5 * fact.logdet - 0.5 * w * delta)


def log_gamma_density(w, nu):
    """Log density of Gamma(shape=nu/2, rate=nu/2) at w."""
    w = np.asarray(w, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(w <= 0) or np.any(nu <= 0):
        raise ValueError("w and nu must be positive")
    h = 0.5 * nu
    out = h * np.log(h) - gammaln(h) + (h - 1.0) * np.log(w) - h * w
    return float(out) if out.ndim == 0 else out


def log_mixture_density(y_obs, mix: MixtureParams, facts) -> float:
    """log sum_k pi_k t(y_obs; ...) given one factorization per component."""
    terms = []
    for k, fact in enumerate(facts):
        c = ClusterParams(mix.mu[k], mix.sigma[k], float(mix.nu[k]), 1.0)
        terms.append(np.log(mix.pi[k]) + log_t_density(y_obs, c, fact))
    return float(logsumexp(terms))
