"""Frequency-response policies: equilibria, renormalized droop, dead-zone response.

All imbalances here are wind deviations from the scheduled (forecast) output,
in MW; a positive total means surplus wind that the generators must back off.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

PRIMARY, SECONDARY_ONLY = 1, 0


@dataclass(frozen=True)
class DroopSet:
    alpha1: np.ndarray
    alpha2: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "gamma"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.alpha1.shape == self.alpha2.shape == self.gamma.shape):
            raise ValueError("droop vectors must have equal length")
        if np.any(self.alpha1 < 0) or np.any(self.alpha2 < 0) or np.any(self.gamma < 0):
            raise ValueError("droop coefficients must be nonnegative")
        if not self.alpha1.sum() + self.gamma.sum() > 0:
            raise ValueError("sum of alpha1 + gamma must be positive")
        if not self.alpha2.sum() > 0:
            raise ValueError("sum of alpha2 must be positive")

    @classmethod
    def from_case(cls, case) -> "DroopSet":
        return cls(case.gen_array("alpha1"), case.gen_array("alpha2"), case.gen_array("gamma"))

    def denominator(self, sigma: int) -> float:
        """Sum of (sigma * alpha1 + gamma): the frequency-to-imbalance gain."""
        return float(sigma * self.alpha1.sum() + self.gamma.sum())


@dataclass(frozen=True)
class Deadband:
    """Governor dead zone expressed as an aggregate imbalance (MW).

    ``trigger="primary"`` tests the with-primary equilibrium, which for an
    imbalance-unit threshold reduces to ``|sum(rho)| > threshold``.
    ``trigger="free"`` tests the undamped-by-governor frequency instead.
    """

    threshold: float = 0.0
    trigger: Literal["primary", "free"] = "primary"

    def __post_init__(self):
        if not self.threshold >= 0:
            raise ValueError(f"deadband threshold must be >= 0, got {self.threshold}")
        if self.trigger not in ("primary", "free"):
            raise ValueError(f"unknown trigger {self.trigger!r}")

    def imbalance_threshold(self, droops: DroopSet) -> float:
        if self.trigger == "primary" or np.isinf(self.threshold):
            return float(self.threshold)
        return float(self.threshold * droops.gamma.sum() / droops.denominator(PRIMARY))


@dataclass(frozen=True)
class PolicyResponse:
    p: np.ndarray
    omega1: np.ndarray | float
    sigma: np.ndarray | int


def omega_uncontrolled(rho_total, droops: DroopSet):
    gsum = droops.gamma.sum()
    if gsum == 0:
        raise ZeroDivisionError("sum of damping coefficients is zero")
    return np.asarray(rho_total, dtype=float) / gsum


def omega_primary(rho_total, droops: DroopSet, primary_active: bool):
    denom = droops.denominator(PRIMARY if primary_active else SECONDARY_ONLY)
    if denom == 0:
        raise ZeroDivisionError("degenerate frequency denominator")
    return np.asarray(rho_total, dtype=float) / denom


def tilde_alpha(droops: DroopSet, sigma: int) -> np.ndarray:
    """Share of the total imbalance each generator ends up carrying."""
    a2sum = droops.alpha2.sum()
    if a2sum == 0:
        raise ZeroDivisionError("sum of alpha2 is zero")
    if sigma == SECONDARY_ONLY:
        # alpha1 -> 0: the gamma sums cancel exactly
        return droops.alpha2 / a2sum
    gsum = droops.gamma.sum()
    return (droops.alpha1 + droops.alpha2 * gsum / a2sum) / droops.denominator(PRIMARY)


def regime(rho_total, droops: DroopSet, deadband: Deadband):
    """1 where primary response is triggered, 0 inside the (closed) dead zone."""
    active = np.abs(np.asarray(rho_total, dtype=float)) > deadband.imbalance_threshold(droops)
    return active.astype(int)


def respond(p0, droops: DroopSet, deadband: Deadband, rho) -> PolicyResponse:
    """Generator outputs after primary and secondary response.

    ``rho`` is the per-farm deviation vector, or an ``(n, farms)`` batch.
    """
    p0 = np.asarray(p0, dtype=float)
    if not np.all(np.isfinite(p0)):
        raise ValueError("p0 must be finite")
    rho = np.asarray(rho, dtype=float)
    total = rho.sum(axis=-1)
    sigma = regime(total, droops, deadband)
    shares = np.where(
        np.asarray(sigma)[..., None] == PRIMARY,
        tilde_alpha(droops, PRIMARY),
        tilde_alpha(droops, SECONDARY_ONLY),
    )
    p = p0 - shares * np.asarray(total)[..., None]
    denom = np.where(sigma == PRIMARY, droops.denominator(PRIMARY), droops.denominator(SECONDARY_ONLY))
    with np.errstate(divide="ignore", invalid="ignore"):
        omega1 = np.where(total == 0, 0.0, total / denom)
    if rho.ndim == 1:
        return PolicyResponse(p, float(omega1), int(sigma))
    return PolicyResponse(p, omega1, sigma)
