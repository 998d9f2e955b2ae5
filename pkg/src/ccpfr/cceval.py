"""Chance-constraint evaluation.

Analytic Gaussian tightenings for the affine policy, exponentially weighted
chance constraints for the dead-zone policy (value and slope by 1-D
quadrature), and Monte Carlo oracles that replay the exact policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import integrate, special

from ccpfr.grid import GridCase, PTDFMatrix
from ccpfr.policy import PRIMARY, Deadband, DroopSet, respond, tilde_alpha
from ccpfr.uncertainty import SigmaMoments, WindStatistics

SUBJECTS = ("generator-upper", "generator-lower", "line-upper", "line-lower")
TRUNCATION_SD = 10.0
QUAD_EPSREL = 1e-11
LOG_VALUE_CAP = 709.0  # exp() of anything larger overflows a double
SCALE_FLOOR_MW = 1e-3
MC_BATCH = 50_000


class QuadratureError(RuntimeError):
    pass


class ChanceConstraintInfeasible(ValueError):
    """Tightened limits cross: no mean dispatch satisfies the constraint."""


@dataclass(frozen=True)
class ConstraintSpec:
    subject: str
    index: int
    regime: int
    epsilon: float

    def __post_init__(self):
        if self.subject not in SUBJECTS:
            raise ValueError(f"unknown constraint subject {self.subject!r}")
        if self.regime not in (0, 1):
            raise ValueError("regime must be 0 or 1")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    @property
    def kind(self) -> str:
        return self.subject.split("-")[0]

    @property
    def upper(self) -> bool:
        return self.subject.endswith("upper")

    @property
    def key(self) -> str:
        return f"{self.subject}:{self.index}:s{self.regime}"


@dataclass(frozen=True)
class WccEvaluation:
    value: float
    d_value_d_mean: float
    log_value: float
    abs_error: float


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    stderr: float
    n: int


def gaussian_quantile(q: float) -> float:
    if not 0 < q < 1:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    return float(special.ndtri(q))


# --------------------------------------------------------------------------
# analytic tightening (affine policy, no dead zone)


@dataclass(frozen=True)
class Tightening:
    z: float
    gen_std: np.ndarray
    line_std: np.ndarray
    gen_upper: np.ndarray
    gen_lower: np.ndarray
    line_upper: np.ndarray
    line_lower: np.ndarray


def fluctuation_std(case: GridCase, ptdf: PTDFMatrix, droops: DroopSet, wind: WindStatistics, sigma: int = PRIMARY):
    """Standard deviations of generator outputs and line flows under fixed shares."""
    shares = tilde_alpha(droops, sigma)
    r = wind.variances
    gen_std = shares * math.sqrt(r.sum())
    if case.n_wind:
        wind_map = ptdf.at_buses(case.wind_buses()) - (ptdf.at_buses(case.gen_buses()) @ shares)[:, None]
        line_std = np.sqrt((wind_map**2) @ r)
    else:
        line_std = np.zeros(case.n_line)
    return gen_std, line_std


def analytic_cc_tightening(case, ptdf, droops, wind, epsilon) -> Tightening:
    """Limits on the mean that make each one-sided Gaussian chance constraint
    hold with probability exactly ``1 - epsilon`` when active."""
    z = gaussian_quantile(1.0 - epsilon)
    gen_std, line_std = fluctuation_std(case, ptdf, droops, wind)
    limits = case.line_limits()
    t = Tightening(
        z=z,
        gen_std=gen_std,
        line_std=line_std,
        gen_upper=case.gen_array("p_max") - z * gen_std,
        gen_lower=case.gen_array("p_min") + z * gen_std,
        line_upper=limits - z * line_std,
        line_lower=-limits + z * line_std,
    )
    bad = np.flatnonzero(t.gen_upper < t.gen_lower)
    if bad.size:
        raise ChanceConstraintInfeasible(f"tightened generator limits cross for generators {bad.tolist()}")
    bad = np.flatnonzero(t.line_upper < t.line_lower)
    if bad.size:
        raise ChanceConstraintInfeasible(f"tightened line limits cross for lines {bad.tolist()}")
    return t


# --------------------------------------------------------------------------
# weighted chance constraints


def weight_parameters(
    spec: ConstraintSpec,
    case: GridCase,
    subject_std: float,
    rule: Literal["chernoff", "limit"] = "chernoff",
) -> tuple[float, float]:
    """(weight_scale, shift) for the weight ``exp(+-(x - shift) / scale)``.

    ``"limit"`` scales by the limit itself with no shift. ``"chernoff"``
    shifts to the limit and picks the scale that makes the exponential the
    tightest exponential bound on the violation indicator at level epsilon,
    so the weighted expectation stays an upper bound on the violation
    probability.
    """
    if spec.kind == "generator":
        gen = case.generators[spec.index]
        limit = gen.p_max if spec.upper else gen.p_min
    else:
        cap = case.lines[spec.index].limit
        limit = cap if spec.upper else -cap
    if rule == "limit":
        scale = abs(limit)
        if spec.kind == "generator" and scale < 1.0:
            scale = max(scale, 0.05 * case.generators[spec.index].p_max)
        return scale, 0.0
    if rule == "chernoff":
        scale = subject_std / math.sqrt(2.0 * math.log(1.0 / spec.epsilon))
        return max(scale, SCALE_FLOOR_MW), limit
    raise ValueError(f"unknown weight rule {rule!r}")


def _event_pieces(regime: int, lo: float, hi: float) -> list[tuple[float, float]]:
    if regime == 0:
        return [(lo, hi)] if hi >= lo else []
    return [(-math.inf, lo), (hi, math.inf)]


def _log_tilted_mass(k: float, lo: float, hi: float) -> tuple[float, float]:
    """log of int_lo^hi phi(t) exp(k t) dt by adaptive quadrature, plus the
    relative error estimate.

    The integrand is rescaled so its peak over the piece is 1, and the piece is
    truncated TRUNCATION_SD units around that peak.
    """
    peak = min(max(k, lo), hi)
    a = max(lo, peak - TRUNCATION_SD)
    b = min(hi, peak + TRUNCATION_SD)
    if not b > a:
        return -math.inf, 0.0
    offset = 0.5 * (peak - k) ** 2

    def g(t):
        return math.exp(offset - 0.5 * (t - k) ** 2)

    points = [k] if a < k < b else None
    mass, err = integrate.quad(g, a, b, points=points, epsabs=0.0, epsrel=QUAD_EPSREL, limit=200)
    if not mass > 0:
        return -math.inf, 0.0
    if err > 1e-6 * mass:
        raise QuadratureError(f"quadrature did not converge (estimated error {err:.3g} on {mass:.3g})")
    log_mass = math.log(mass) - offset + 0.5 * k * k - 0.5 * math.log(2 * math.pi)
    return log_mass, err / mass


def event_bounds(moments: SigmaMoments, threshold_mw: float) -> tuple[float, float]:
    """Dead-zone interval in standardized imbalance units t, S = m + sqrt(R) t."""
    sd = math.sqrt(moments.imbalance_var)
    m = moments.imbalance_mean
    return (-threshold_mw - m) / sd, (threshold_mw - m) / sd


def wcc_evaluate(
    spec: ConstraintSpec,
    moments: SigmaMoments,
    deadband: Deadband,
    weight_scale: float,
    shift: float = 0.0,
    droops: DroopSet | None = None,
) -> WccEvaluation:
    """E[w(x) 1{regime event}] for the constraint subject ``x``.

    ``w(x) = exp((x - shift) / weight_scale)`` on upper constraints and
    ``exp(-(x - shift) / weight_scale)`` on lower ones. The subject is
    conditioned on the total imbalance, which is the only quantity the regime
    depends on, so the expectation is a single integral over that imbalance.
    """
    if moments.sigma != spec.regime:
        raise ValueError("moments belong to a different regime than the constraint")
    if not weight_scale > 0:
        raise ValueError("weight_scale must be positive")
    if deadband.trigger == "free" and droops is None:
        raise ValueError("free-response trigger needs the droop set")
    threshold = deadband.imbalance_threshold(droops) if droops is not None else deadband.threshold

    mean, var, cov_omega = moments.subject(spec.kind, spec.index)
    a = (1.0 if spec.upper else -1.0) / weight_scale
    r = moments.imbalance_var

    if r <= 0:
        inside = abs(moments.imbalance_mean) <= threshold
        hit = inside if spec.regime == 0 else not inside
        log_value = a * (mean - shift) + 0.5 * a * a * max(var, 0.0) if hit else -math.inf
        return _finish(a, log_value, 0.0)

    # x | t ~ N(mean + c t, resid) with t the standardized imbalance
    c = cov_omega * moments.denominator / math.sqrt(r)
    resid = max(var - c * c, 0.0)
    k = a * c
    lo, hi = event_bounds(moments, threshold)
    logs, rel_errs = [], []
    for plo, phi in _event_pieces(spec.regime, lo, hi):
        log_mass, rel = _log_tilted_mass(k, plo, phi)
        logs.append(log_mass)
        rel_errs.append(rel)
    log_j = special.logsumexp(logs) if logs else -math.inf
    log_value = a * (mean - shift) + 0.5 * a * a * resid + log_j
    return _finish(a, log_value, max(rel_errs, default=0.0))


def _finish(a: float, log_value: float, rel_err: float) -> WccEvaluation:
    value = math.exp(min(log_value, LOG_VALUE_CAP)) if log_value > -math.inf else 0.0
    return WccEvaluation(value=value, d_value_d_mean=a * value, log_value=log_value, abs_error=rel_err * value)


# --------------------------------------------------------------------------
# Monte Carlo oracles


def _subject_samples(spec, case, ptdf, droops, p0, wind, deadband, n, seed):
    """Yield (subject values, regime flags) batches of replayed scenarios."""
    rng = np.random.default_rng(seed)
    forecast = case.forecasts()
    std = wind.stdevs
    row = ptdf.entries[spec.index] if spec.kind == "line" else None
    done = 0
    while done < n:
        b = min(MC_BATCH, n - done)
        rho = wind.means + std * rng.standard_normal((b, case.n_wind))
        dev = rho - forecast
        resp = respond(p0, droops, deadband, dev)
        if spec.kind == "generator":
            x = resp.p[:, spec.index]
        else:
            x = case.injections(resp.p, rho) @ row
        yield x, resp.sigma
        done += b


def _mc_stats(batches, n) -> McEstimate:
    total = 0.0
    total_sq = 0.0
    for vals in batches:
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
    mean = total / n
    if n < 2:
        return McEstimate(mean, math.nan, n)
    var = max(total_sq - n * mean * mean, 0.0) / (n - 1)
    return McEstimate(mean, math.sqrt(var / n), n)


def wcc_mc_oracle(
    spec: ConstraintSpec,
    case: GridCase,
    ptdf: PTDFMatrix,
    droops: DroopSet,
    p0,
    wind: WindStatistics,
    deadband: Deadband,
    n: int,
    seed: int,
    weight_scale: float,
    shift: float = 0.0,
) -> McEstimate:
    """Sample-mean estimate of the weighted constraint via the exact policy."""
    if n < 1:
        raise ValueError("n must be >= 1")
    a = (1.0 if spec.upper else -1.0) / weight_scale

    def weighted():
        for x, sigma in _subject_samples(spec, case, ptdf, droops, p0, wind, deadband, n, seed):
            yield np.exp(a * (x - shift)) * (sigma == spec.regime)

    return _mc_stats(weighted(), n)


def subject_limit(spec: ConstraintSpec, case: GridCase) -> float:
    if spec.kind == "generator":
        g = case.generators[spec.index]
        return g.p_max if spec.upper else g.p_min
    cap = case.lines[spec.index].limit
    return cap if spec.upper else -cap


def step_cc_probability(spec, case, ptdf, droops, p0, wind, deadband, n, seed) -> McEstimate:
    """Estimate of P(limit violated and regime == spec.regime)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    limit = subject_limit(spec, case)

    def hits():
        for x, sigma in _subject_samples(spec, case, ptdf, droops, p0, wind, deadband, n, seed):
            over = (x - limit > 0) if spec.upper else (limit - x > 0)
            yield (over & (sigma == spec.regime)).astype(float)

    return _mc_stats(hits(), n)
