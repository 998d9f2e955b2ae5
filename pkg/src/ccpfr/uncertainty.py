"""Gaussian wind statistics and their propagation through the response policy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ccpfr.grid import GridCase, PTDFMatrix
from ccpfr.policy import DroopSet, tilde_alpha

DET_FLOOR = 1e-12


class SingularCovarianceError(np.linalg.LinAlgError):
    """Covariance is (numerically) rank deficient; use the conditional 1-D path."""


@dataclass(frozen=True)
class WindStatistics:
    """Independent Gaussian wind outputs per farm (MW, MW^2)."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=float).reshape(-1)
        var = np.array(self.variances, dtype=float).reshape(-1)
        if means.shape != var.shape:
            raise ValueError("means and variances must have equal length")
        if np.any(var < 0):
            raise ValueError("wind variances must be nonnegative")
        means.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)

    @property
    def stdevs(self) -> np.ndarray:
        return np.sqrt(self.variances)

    @classmethod
    def from_case(cls, case: GridCase, rel_std: float | None = None) -> "WindStatistics":
        """Forecast means; stdevs from the case or ``rel_std * forecast``."""
        means = case.forecasts()
        if rel_std is None:
            std = np.array([w.stdev for w in case.wind_farms], dtype=float)
        else:
            std = rel_std * means
        return cls(means, std**2)

    def scaled(self, factor: float) -> "WindStatistics":
        """Same means, variances multiplied by ``factor``."""
        return WindStatistics(self.means, self.variances * factor)


def aggregate_wind(wind: WindStatistics) -> tuple[float, float]:
    return float(wind.means.sum()), float(wind.variances.sum())


@dataclass(frozen=True)
class SigmaMoments:
    """Moments of (generator output, frequency) and (line flow, frequency)
    for one dead-zone regime, with the affine data they came from."""

    sigma: int
    denominator: float
    imbalance_mean: float
    imbalance_var: float
    omega_mean: float
    omega_var: float
    p_mean: np.ndarray
    p_omega_cov: np.ndarray
    p_var: np.ndarray
    flow_mean: np.ndarray
    flow_omega_cov: np.ndarray
    flow_var: np.ndarray
    shares: np.ndarray
    flow_wind_map: np.ndarray  # (lines, farms) flow change per MW of farm deviation
    flow_gen_map: np.ndarray  # (lines, gens) d flow_mean / d p0

    def subject(self, kind: str, index: int) -> tuple[float, float, float]:
        """(mean, variance, covariance with omega) for ``"generator"`` or ``"line"``."""
        if kind == "generator":
            return float(self.p_mean[index]), float(self.p_var[index]), float(self.p_omega_cov[index])
        if kind == "line":
            return float(self.flow_mean[index]), float(self.flow_var[index]), float(self.flow_omega_cov[index])
        raise ValueError(f"unknown subject kind {kind!r}")

    def theta(self, kind: str, index: int) -> np.ndarray:
        _, var, cov = self.subject(kind, index)
        return np.array([[var, cov], [cov, self.omega_var]])


def sigma_moments(
    case: GridCase,
    ptdf: PTDFMatrix,
    droops: DroopSet,
    p0,
    wind: WindStatistics,
    sigma: int,
) -> SigmaMoments:
    """Regime-``sigma`` moments at set points ``p0``.

    The dispatch schedules each farm at its case forecast; the policy absorbs
    the deviation ``rho - forecast``, whose mean is ``wind.means - forecast``.
    """
    p0 = np.asarray(p0, dtype=float)
    if wind.means.shape != (case.n_wind,):
        raise ValueError("wind statistics do not match the case's wind farms")
    denom = droops.denominator(sigma)
    if denom <= 0:
        raise ZeroDivisionError(f"degenerate frequency denominator for sigma={sigma}")
    shares = tilde_alpha(droops, sigma)

    dev_mean = wind.means - case.forecasts()
    m = float(dev_mean.sum())
    r = wind.variances
    rsum = float(r.sum())

    h_gen = ptdf.at_buses(case.gen_buses())
    h_wind = ptdf.at_buses(case.wind_buses()) if case.n_wind else np.zeros((case.n_line, 0))
    wind_map = h_wind - (h_gen @ shares)[:, None]
    base_flow = ptdf.entries @ case.injections(p0)

    return SigmaMoments(
        sigma=sigma,
        denominator=denom,
        imbalance_mean=m,
        imbalance_var=rsum,
        omega_mean=m / denom,
        omega_var=rsum / denom**2,
        p_mean=p0 - shares * m,
        p_omega_cov=-shares * rsum / denom,
        p_var=shares**2 * rsum,
        flow_mean=base_flow + wind_map @ dev_mean,
        flow_omega_cov=(wind_map @ r) / denom,
        flow_var=(wind_map**2) @ r,
        shares=shares,
        flow_wind_map=wind_map,
        flow_gen_map=h_gen,
    )


def precision(theta) -> np.ndarray:
    """Closed-form inverse of a 2x2 covariance."""
    theta = np.asarray(theta, dtype=float)
    a, b, c, d = theta[0, 0], theta[0, 1], theta[1, 0], theta[1, 1]
    if not np.isclose(b, c, rtol=1e-12, atol=0):
        raise ValueError("covariance must be symmetric")
    det = a * d - b * c
    scale = max(abs(a * d), abs(b * c), np.finfo(float).tiny)
    if det <= DET_FLOOR * scale:
        raise SingularCovarianceError(f"covariance determinant {det:.3g} below floor")
    return np.array([[d, -b], [-c, a]]) / det
