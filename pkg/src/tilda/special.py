"""Special functions, Dirichlet moments and the log-gamma expectation bound.

The scalar/array functions here validate their domain; the inference code
calls the unchecked kernels in :mod:`tilda._backend` directly on arrays whose
positivity is guaranteed by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tilda._backend import kernels


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


def _positive(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(arr > 0):
        raise DomainError(f"{name} requires x > 0")
    return arr


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def log_gamma(x):
    """ln Gamma(x) for x > 0 (scalar or array)."""
    return _out(kernels.lgamma(_positive(x, "log_gamma")))


def digamma(x):
    """Psi(x) = d/dx ln Gamma(x) for x > 0."""
    return _out(kernels.digamma(_positive(x, "digamma")))


def trigamma(x):
    """Psi'(x) = sum_{k>=0} 1/(x+k)^2 for x > 0."""
    return _out(kernels.trigamma(_positive(x, "trigamma")))


def tetragamma(x):
    """Psi''(x) for x > 0; needed for Newton curvature terms."""
    return _out(kernels.tetragamma(_positive(x, "tetragamma")))


def concave_surrogate(x):
    """f(x) = ln Gamma(x) + ln x - x ln x, which is concave on x > 0."""
    x = _positive(x, "concave_surrogate")
    lx = np.log(x)
    return _out(kernels.lgamma(x) + lx - x * lx)


@dataclass(frozen=True)
class DirichletStats:
    """Closed-form moments of theta ~ Dirichlet(nu)."""

    mean: np.ndarray
    log_mean: np.ndarray
    xlogx: np.ndarray
    nu0: float
    digamma_nu: np.ndarray
    digamma_nu0: float

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def dirichlet_stats(nu) -> DirichletStats:
    """E[theta_i], E[log theta_i] and E[theta_i log theta_i] for Dirichlet(nu)."""
    nu = np.asarray(nu, dtype=np.float64)
    if nu.ndim != 1 or nu.size == 0:
        raise ValueError("nu must be a non-empty vector")
    if not np.all(nu > 0):
        raise DomainError("Dirichlet parameters must be positive")
    nu0 = float(nu.sum())
    dg = kernels.digamma(nu)
    dg0 = float(kernels.digamma(nu0))
    mean = nu / nu0
    log_mean = dg - dg0
    xlogx = mean * (log_mean + 1.0 / nu - 1.0 / nu0)
    return DirichletStats(mean, log_mean, xlogx, nu0, dg, dg0)


def elog_gamma_bound_vector(alpha: float, stats: DirichletStats) -> np.ndarray:
    """Upper bounds on E[ln Gamma(alpha * theta_i)] for every component i."""
    m = stats.mean
    am = alpha * m
    return (kernels.lgamma(am) + alpha * (1.0 - m) / stats.nu0
            + (1.0 - am) * (np.log(m) + stats.digamma_nu0 - stats.digamma_nu))


def elog_gamma_upper_bound(alpha: float, stats: DirichletStats, i: int) -> float:
    """Upper bound on E[ln Gamma(alpha * theta_i)] when theta ~ Dirichlet(nu).

    Obtained from Jensen's inequality applied to the concave surrogate
    ``f(x) = ln Gamma(x) + ln x - x ln x``; it becomes an equality as the
    Dirichlet variance vanishes.
    """
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    if not 0 <= i < stats.dim:
        raise IndexError(f"component {i} out of range for dimension {stats.dim}")
    m = float(stats.mean[i])
    am = alpha * m
    return float(kernels.lgamma(am) + alpha * (1.0 - m) / stats.nu0
                 + (1.0 - am) * (np.log(m) + stats.digamma_nu0 - stats.digamma_nu[i]))
