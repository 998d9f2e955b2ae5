"""Deterministic DC-OPF, analytic CCOPF, and the weighted-chance-constraint
CCOPF with dead-zone primary response (solved by cutting planes)."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import special

from ccpfr.cceval import (
    SUBJECTS,
    ConstraintSpec,
    analytic_cc_tightening,
    ChanceConstraintInfeasible,
    weight_parameters,
    wcc_evaluate,
)
from ccpfr.grid import GridCase, PTDFMatrix
from ccpfr.policy import PRIMARY, SECONDARY_ONLY, Deadband, DroopSet
from ccpfr.solver.qp import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, QpProblem, solve_qp
from ccpfr.uncertainty import SigmaMoments, WindStatistics, sigma_moments

log = logging.getLogger(__name__)

DCOPF, CCOPF, CCOPF_PFR = "dcopf", "ccopf", "ccopf-pfr"
VIOLATION_TOL = 1e-8
MAX_CUT_ITERATIONS = 200


@dataclass(frozen=True)
class Cut:
    constraint: str
    coef: np.ndarray
    rhs: float
    iteration: int

    def __call__(self, p0) -> float:
        """Cut left-hand side minus right-hand side at ``p0`` (<= 0 is feasible)."""
        return float(self.coef @ np.asarray(p0) - self.rhs)


@dataclass
class DispatchSolution:
    p0: np.ndarray
    objective: float
    formulation: str
    status: str
    iterations: int = 0
    epsilon: float | None = None
    deadband: float | None = None
    cuts: list = field(default_factory=list)
    constraint_values: dict = field(default_factory=dict)
    weight_scales: dict = field(default_factory=dict)
    violation_history: list = field(default_factory=list)
    solve_seconds: float = 0.0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


# --------------------------------------------------------------------------
# shared pieces


def _balance(case: GridCase):
    """Set points balance load against the scheduled (forecast) wind."""
    return np.ones((1, case.n_gen)), np.array([case.loads().sum() - case.forecasts().sum()])


def _bounds(lower, upper):
    n = lower.size
    return np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([upper, -lower])


def _flow_rows(h_gen, base, lower, upper):
    """lower <= h_gen p + base <= upper as G p <= h."""
    return np.vstack([h_gen, -h_gen]), np.concatenate([upper - base, base - lower])


def partial_moments(mean: float, var: float, lo: float, hi: float) -> tuple[float, float, float]:
    """(P, E[S 1], E[S^2 1]) of S ~ N(mean, var) on the interval [lo, hi]."""
    if var <= 0:
        inside = float(lo <= mean <= hi)
        return inside, mean * inside, mean * mean * inside
    sd = math.sqrt(var)
    a, b = (lo - mean) / sd, (hi - mean) / sd
    pa, pb = special.ndtr(a), special.ndtr(b)
    da = math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi) if np.isfinite(a) else 0.0
    db = math.exp(-0.5 * b * b) / math.sqrt(2 * math.pi) if np.isfinite(b) else 0.0
    prob = pb - pa
    t1 = da - db
    t2 = prob + (a * da if np.isfinite(a) else 0.0) - (b * db if np.isfinite(b) else 0.0)
    return prob, mean * prob + sd * t1, mean * mean * prob + 2 * mean * sd * t1 + var * t2


def regime_cost_terms(case: GridCase, regimes) -> tuple[np.ndarray, np.ndarray, float]:
    """Expected cost E[sum C_i(p0_i - share_i S)] as (Q diag, linear, constant).

    ``regimes`` is a list of (shares, P, E[S 1], E[S^2 1]) over a partition of
    the imbalance S.
    """
    c2, c1, c0 = case.gen_array("cost_quad"), case.gen_array("cost_lin"), case.gen_array("cost_const")
    first = sum(shares * m1 for shares, _, m1, _ in regimes)
    second = sum(shares**2 * m2 for shares, _, _, m2 in regimes)
    lin = c1 - 2 * c2 * first
    const = float((c2 * second - c1 * first + c0).sum())
    return 2 * c2, lin, const


def _regime_partition(moments: dict, deadband: Deadband, droops: DroopSet):
    """Partial moments of the imbalance inside / outside the dead zone."""
    m0 = moments[SECONDARY_ONLY]
    t = deadband.imbalance_threshold(droops)
    inside = partial_moments(m0.imbalance_mean, m0.imbalance_var, -t, t)
    full = partial_moments(m0.imbalance_mean, m0.imbalance_var, -math.inf, math.inf)
    outside = tuple(f - i for f, i in zip(full, inside))
    return [(moments[SECONDARY_ONLY].shares, *inside), (moments[PRIMARY].shares, *outside)]


def _finish(result, problem, const, formulation, t0, **extra) -> DispatchSolution:
    if result.status == OPTIMAL:
        return DispatchSolution(
            p0=result.x,
            objective=result.objective + const,
            formulation=formulation,
            status=OPTIMAL,
            iterations=result.iterations,
            solve_seconds=time.perf_counter() - t0,
            **extra,
        )
    return DispatchSolution(
        p0=result.x,
        objective=math.nan,
        formulation=formulation,
        status=result.status,
        iterations=result.iterations,
        solve_seconds=time.perf_counter() - t0,
        message=f"QP {result.status}",
        **extra,
    )


# --------------------------------------------------------------------------
# deterministic DC-OPF


def solve_dcopf(case: GridCase, ptdf: PTDFMatrix) -> DispatchSolution:
    """Least-cost dispatch with wind fixed at forecast."""
    t0 = time.perf_counter()
    h_gen = ptdf.at_buses(case.gen_buses())
    base = ptdf.entries @ case.injections(np.zeros(case.n_gen))
    A, b = _balance(case)
    Gg, hg = _bounds(case.gen_array("p_min"), case.gen_array("p_max"))
    limits = case.line_limits()
    Gl, hl = _flow_rows(h_gen, base, -limits, limits)
    problem = QpProblem(
        Q=2 * case.gen_array("cost_quad"),
        c=case.gen_array("cost_lin"),
        A=A,
        b=b,
        G=np.vstack([Gg, Gl]),
        h=np.concatenate([hg, hl]),
    )
    result = solve_qp(problem)
    return _finish(result, problem, float(case.gen_array("cost_const").sum()), DCOPF, t0)


# --------------------------------------------------------------------------
# standard CCOPF (affine policy)


def solve_ccopf(case, ptdf, droops: DroopSet, wind: WindStatistics, epsilon: float) -> DispatchSolution:
    """Analytic Gaussian chance constraints on means; a single QP."""
    t0 = time.perf_counter()
    try:
        tight = analytic_cc_tightening(case, ptdf, droops, wind, epsilon)
    except ChanceConstraintInfeasible as exc:
        return DispatchSolution(
            p0=np.full(case.n_gen, math.nan),
            objective=math.nan,
            formulation=CCOPF,
            status=INFEASIBLE,
            epsilon=epsilon,
            message=str(exc),
        )
    mom = sigma_moments(case, ptdf, droops, np.zeros(case.n_gen), wind, PRIMARY)
    # mean output P = p0 - shares * m; mean flow = h_gen p0 + flow_mean(0)
    shift = mom.shares * mom.imbalance_mean
    A, b = _balance(case)
    Gg, hg = _bounds(tight.gen_lower + shift, tight.gen_upper + shift)
    Gl, hl = _flow_rows(mom.flow_gen_map, mom.flow_mean, tight.line_lower, tight.line_upper)
    full = partial_moments(mom.imbalance_mean, mom.imbalance_var, -math.inf, math.inf)
    qd, lin, const = regime_cost_terms(case, [(mom.shares, *full)])
    problem = QpProblem(Q=qd, c=lin, A=A, b=b, G=np.vstack([Gg, Gl]), h=np.concatenate([hg, hl]))
    result = solve_qp(problem)
    return _finish(result, problem, const, CCOPF, t0, epsilon=epsilon)


# --------------------------------------------------------------------------
# CCOPF with dead-zone primary response


def constraint_specs(case: GridCase, epsilon: float) -> list[ConstraintSpec]:
    """All weighted constraints in a fixed order (regime, subject, index)."""
    specs = []
    for regime in (SECONDARY_ONLY, PRIMARY):
        for subject in SUBJECTS:
            count = case.n_gen if subject.startswith("generator") else case.n_line
            specs.extend(ConstraintSpec(subject, k, regime, epsilon) for k in range(count))
    return specs


@dataclass(frozen=True)
class WeightedConstraint:
    spec: ConstraintSpec
    scale: float
    shift: float


def weighted_constraints(case, moments: dict, epsilon: float, rule: str) -> list[WeightedConstraint]:
    out = []
    for spec in constraint_specs(case, epsilon):
        _, var, _ = moments[spec.regime].subject(spec.kind, spec.index)
        scale, shift = weight_parameters(spec, case, math.sqrt(max(var, 0.0)), rule)
        out.append(WeightedConstraint(spec, scale, shift))
    return out


def mean_gradient(spec: ConstraintSpec, moments: SigmaMoments, n_gen: int) -> np.ndarray:
    """d(subject mean)/d(p0)."""
    if spec.kind == "generator":
        g = np.zeros(n_gen)
        g[spec.index] = 1.0
        return g
    return moments.flow_gen_map[spec.index]


def evaluate_constraints(case, ptdf, droops, wind, deadband, p0, constraints):
    moments = {s: sigma_moments(case, ptdf, droops, p0, wind, s) for s in (SECONDARY_ONLY, PRIMARY)}
    return moments, [
        wcc_evaluate(wc.spec, moments[wc.spec.regime], deadband, wc.scale, wc.shift, droops=droops)
        for wc in constraints
    ]


def solve_ccopf_pfr(
    case: GridCase,
    ptdf: PTDFMatrix,
    droops: DroopSet,
    wind: WindStatistics,
    epsilon: float,
    deadband: Deadband,
    weight_rule: Literal["chernoff", "limit"] = "chernoff",
    cut_space: Literal["log", "value"] = "log",
    max_iterations: int = MAX_CUT_ITERATIONS,
) -> DispatchSolution:
    """Cutting-plane solve of the weighted-chance-constrained dispatch.

    Each weighted constraint is convex in ``p0``. In ``"log"`` space the cut
    linearizes log(value) <= log(epsilon); in ``"value"`` space it linearizes
    value <= epsilon directly.
    """
    t0 = time.perf_counter()
    n = case.n_gen
    moments0 = {s: sigma_moments(case, ptdf, droops, np.zeros(n), wind, s) for s in (SECONDARY_ONLY, PRIMARY)}
    constraints = weighted_constraints(case, moments0, epsilon, weight_rule)
    qd, lin, const = regime_cost_terms(case, _regime_partition(moments0, deadband, droops))

    A, b = _balance(case)
    Gg, hg = _bounds(case.gen_array("p_min"), case.gen_array("p_max"))
    limits = case.line_limits()
    Gl, hl = _flow_rows(moments0[PRIMARY].flow_gen_map, moments0[PRIMARY].flow_mean, -limits, limits)
    G_base, h_base = np.vstack([Gg, Gl]), np.concatenate([hg, hl])

    cuts: list[Cut] = []
    history: list[float] = []
    best = None
    log_eps = math.log(epsilon)
    extra = dict(epsilon=epsilon, deadband=deadband.threshold)
    scales = {wc.spec.key: wc.scale for wc in constraints}

    for it in range(1, max_iterations + 1):
        G = np.vstack([G_base] + [c.coef[None, :] for c in cuts])
        h = np.concatenate([h_base, [c.rhs for c in cuts]])
        result = solve_qp(QpProblem(Q=qd, c=lin, A=A, b=b, G=G, h=h))
        if result.status != OPTIMAL:
            sol = _finish(result, None, const, CCOPF_PFR, t0, **extra)
            sol.iterations, sol.cuts = it, cuts
            return sol
        x = result.x
        moments, evals = evaluate_constraints(case, ptdf, droops, wind, deadband, x, constraints)
        excess = np.array([ev.value - epsilon for ev in evals])
        worst = float(excess.max(initial=0.0))
        history.append(worst)
        log.debug("cutting plane iter %d: max violation %.3g, %d cuts", it, worst, len(cuts))
        if best is None or worst < best[0]:
            best = (worst, x, result.objective, evals)
        violated = np.flatnonzero(excess > VIOLATION_TOL)
        if violated.size == 0:
            return DispatchSolution(
                p0=x,
                objective=result.objective + const,
                formulation=CCOPF_PFR,
                status=OPTIMAL,
                iterations=it,
                cuts=cuts,
                constraint_values={wc.spec.key: ev.value for wc, ev in zip(constraints, evals)},
                weight_scales=scales,
                violation_history=history,
                solve_seconds=time.perf_counter() - t0,
                **extra,
            )
        for k in violated:
            wc, ev = constraints[k], evals[k]
            grad_mean = mean_gradient(wc.spec, moments[wc.spec.regime], n)
            if cut_space == "log":
                slope = (1.0 if wc.spec.upper else -1.0) / wc.scale * grad_mean
                rhs = log_eps - ev.log_value + slope @ x
            else:
                slope = ev.d_value_d_mean * grad_mean
                rhs = epsilon - ev.value + slope @ x
            cuts.append(Cut(wc.spec.key, slope, float(rhs), it))

    worst, x, obj, evals = best
    return DispatchSolution(
        p0=x,
        objective=obj + const,
        formulation=CCOPF_PFR,
        status=ITERATION_LIMIT,
        iterations=max_iterations,
        cuts=cuts,
        constraint_values={wc.spec.key: ev.value for wc, ev in zip(constraints, evals)},
        weight_scales=scales,
        violation_history=history,
        solve_seconds=time.perf_counter() - t0,
        message=f"iteration limit; max violation {worst:.3g}",
        **extra,
    )


def expected_cost(case, ptdf, droops, wind, deadband, p0) -> float:
    """Expected operating cost of set points under the dead-zone policy."""
    moments = {s: sigma_moments(case, ptdf, droops, p0, wind, s) for s in (SECONDARY_ONLY, PRIMARY)}
    qd, lin, const = regime_cost_terms(case, _regime_partition(moments, deadband, droops))
    p0 = np.asarray(p0, dtype=float)
    return float(0.5 * p0 @ (qd * p0) + lin @ p0 + const)
