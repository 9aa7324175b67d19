"""Forecast-error model for renewable output.

Only generation deficits are modelled. The error of each plant in each hour
is a mixed variable: zero with probability 1/2, otherwise the negative half
of a symmetric error. All market formulas use its first two moments; the
Normal law below is only used by the Monte Carlo sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import ScenarioConfig

_MU_FACTOR = math.sqrt(2.0 / math.pi)
_DELTA_FACTOR = math.sqrt((math.pi - 2.0) / math.pi)


@dataclass(frozen=True)
class ErrorMoments:
    mu: float  # magnitude of the mean of the negative component
    delta: float  # std of the negative component
    mean: float  # signed mean of the mixed error, -mu/2
    variance: float

    @property
    def sigma(self) -> float:
        """Scale of the underlying symmetric error."""
        return self.mu / _MU_FACTOR


@dataclass(frozen=True)
class TimeSliceMoments:
    M: np.ndarray  # signed mean per plant
    Sigma: np.ndarray  # covariance across plants


@dataclass(frozen=True)
class HorizonMoments:
    mean_row: np.ndarray  # signed mean per hour
    Xi: np.ndarray  # covariance across hours


def moments_from_sigma(sigma: float) -> ErrorMoments:
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    delta = sigma * _DELTA_FACTOR
    mu = sigma * _MU_FACTOR
    return ErrorMoments(mu=mu, delta=delta, mean=-mu / 2.0, variance=delta**2 / 2.0 + mu**2 / 4.0)


def build_time_slice(moms: list[ErrorMoments], correlation: np.ndarray | None = None) -> TimeSliceMoments:
    M = np.array([m.mean for m in moms], dtype=float)
    std = np.sqrt([m.variance for m in moms])
    if correlation is None:
        Sigma = np.diag(std**2)
    else:
        Sigma = correlation * np.outer(std, std)
    return TimeSliceMoments(M=M, Sigma=Sigma)


def build_horizon(moms: list[ErrorMoments], correlation: np.ndarray | None = None) -> HorizonMoments:
    """Moments of one plant's error vector over the day."""
    ts = build_time_slice(moms, correlation)
    return HorizonMoments(mean_row=ts.M, Xi=ts.Sigma)


def sample_error(moms: ErrorMoments, rng_seed=None, size=None):
    """Draw realisations of the mixed error: ``min(x, 0)`` with ``x ~ N(0, sigma^2)``."""
    rng = np.random.default_rng(rng_seed)
    x = rng.normal(0.0, moms.sigma, size=size)
    return np.minimum(x, 0.0)


def psd_sqrt(S: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix.

    Singular matrices are fine (zero-variance hours are routine); a clearly
    negative eigenvalue is rejected.
    """
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return S.copy()
    if not np.allclose(S, S.T, atol=1e-10 * (1.0 + np.abs(S).max())):
        raise ValueError("covariance matrix is not symmetric")
    if np.count_nonzero(S - np.diag(np.diagonal(S))) == 0:
        d = np.diagonal(S)
        if d.min() < 0:
            raise ValueError("covariance matrix is not positive semidefinite")
        return np.diag(np.sqrt(d))
    w, V = np.linalg.eigh(S)
    if w.min() < -1e-9 * max(1.0, w.max()):
        raise ValueError("covariance matrix is not positive semidefinite")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass(frozen=True)
class UncertaintyModel:
    """All moments the market needs, precomputed for a scenario."""

    moments: tuple[tuple[ErrorMoments, ...], ...]  # [res][hour]
    slices: tuple[TimeSliceMoments, ...]  # per hour
    horizons: tuple[HorizonMoments, ...]  # per plant
    slice_roots: tuple[np.ndarray, ...]  # Sigma^{1/2} per hour
    horizon_roots: tuple[np.ndarray, ...]  # Xi^{1/2} per plant

    @property
    def hours(self) -> int:
        return len(self.slices)

    def M(self, t: int) -> np.ndarray:
        return self.slices[t].M

    def Sigma(self, t: int) -> np.ndarray:
        return self.slices[t].Sigma

    def sample(self, n: int, seed=None) -> np.ndarray:
        """Joint draws, shape ``(n, hours, n_res)``, independent across plants and hours.

        The correlation hooks of a scenario only shape the analytic
        covariances; the sampler ignores them.
        """
        rng = np.random.default_rng(seed)
        n_res = len(self.moments)
        T = self.hours
        z = rng.standard_normal((n, T, n_res))
        scale = np.array([[m.sigma for m in row] for row in self.moments]).T  # (T, n_res)
        return np.minimum(z * scale, 0.0)


def build_uncertainty(cfg: ScenarioConfig) -> UncertaintyModel:
    moms = tuple(
        tuple(moments_from_sigma(r.sigma_rel * float(r.forecast[t])) for t in range(cfg.hours))
        for r in cfg.res
    )
    slices = tuple(
        build_time_slice([moms[j][t] for j in range(len(cfg.res))], cfg.res_correlation)
        for t in range(cfg.hours)
    )
    horizons = tuple(build_horizon(list(moms[j]), cfg.time_correlation) for j in range(len(cfg.res)))
    return UncertaintyModel(
        moments=moms,
        slices=slices,
        horizons=horizons,
        slice_roots=tuple(psd_sqrt(s.Sigma) for s in slices),
        horizon_roots=tuple(psd_sqrt(h.Xi) for h in horizons),
    )


def chebyshev_z(epsilon: float) -> float:
    """Safety factor of the distribution-free one-sided bound."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    return math.sqrt((1.0 - epsilon) / epsilon)
