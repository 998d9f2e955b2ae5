"""Out-of-sample validation of dispatch decisions.

Scenarios are replayed through the exact dead-zone response, flows are
recomputed with the PTDF, and physical-limit violations and realized costs
are tallied. Work is split into fixed-size chunks so that the result does not
depend on how many worker threads process them.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ccpfr.grid import GridCase, PTDFMatrix
from ccpfr.policy import Deadband, DroopSet, respond
from ccpfr.uncertainty import WindStatistics

LIMIT_TOL_MW = 1e-6
CHUNK = 4096
THREADS_ENV = "CCPFR_THREADS"

TABLE_HEADER = ("label", "epsilon", "objective", "gap_pct", "cost_mean", "cost_std", "sys_violation_rate", "solve_seconds")
PLOT_HEADER = (
    "label",
    "epsilon",
    "cost_mean",
    "cost_std",
    "sys_violation_rate",
    "gen_violation_rate",
    "line_violation_rate",
)


class ComparisonError(ValueError):
    """Reports that cannot be compared (different case or scenario ensemble)."""


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None


@dataclass(frozen=True)
class ScenarioSet:
    samples: np.ndarray  # (n, farms) wind outputs in MW
    seed: int
    n: int

    def __post_init__(self):
        s = np.array(self.samples, dtype=float, ndmin=2)
        if s.shape[0] != self.n:
            raise ValueError(f"expected {self.n} samples, got {s.shape[0]}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)


def sample_wind(wind: WindStatistics, n: int, seed: int, truncate: bool = False) -> ScenarioSet:
    """Independent Gaussian farm outputs. ``truncate`` clips negatives to 0."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, wind.means.size))
    samples = wind.means + wind.stdevs * z
    if truncate:
        samples = np.maximum(samples, 0.0)
    return ScenarioSet(samples, int(seed), int(n))


@dataclass
class ValidationReport:
    gen_upper_rate: np.ndarray
    gen_lower_rate: np.ndarray
    line_upper_rate: np.ndarray
    line_lower_rate: np.ndarray
    system_wide_rate: float
    generator_system_rate: float
    line_system_rate: float
    cost_mean: float
    cost_std: float
    n: int
    seed: int
    case_hash: str
    max_balance_error: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "case_hash": self.case_hash,
            "system_wide_rate": self.system_wide_rate,
            "generator_system_rate": self.generator_system_rate,
            "line_system_rate": self.line_system_rate,
            "cost_mean": self.cost_mean,
            "cost_std": self.cost_std,
            "max_balance_error": self.max_balance_error,
            "gen_upper_rate": self.gen_upper_rate.tolist(),
            "gen_lower_rate": self.gen_lower_rate.tolist(),
            "line_upper_rate": self.line_upper_rate.tolist(),
            "line_lower_rate": self.line_lower_rate.tolist(),
            **self.extra,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ValidationReport":
        known = {
            "n", "seed", "case_hash", "system_wide_rate", "generator_system_rate", "line_system_rate",
            "cost_mean", "cost_std", "max_balance_error",
            "gen_upper_rate", "gen_lower_rate", "line_upper_rate", "line_lower_rate",
        }  # fmt: skip
        return cls(
            gen_upper_rate=np.asarray(doc["gen_upper_rate"], dtype=float),
            gen_lower_rate=np.asarray(doc["gen_lower_rate"], dtype=float),
            line_upper_rate=np.asarray(doc["line_upper_rate"], dtype=float),
            line_lower_rate=np.asarray(doc["line_lower_rate"], dtype=float),
            system_wide_rate=float(doc["system_wide_rate"]),
            generator_system_rate=float(doc["generator_system_rate"]),
            line_system_rate=float(doc["line_system_rate"]),
            cost_mean=float(doc["cost_mean"]),
            cost_std=float(doc["cost_std"]),
            n=int(doc["n"]),
            seed=int(doc["seed"]),
            case_hash=str(doc["case_hash"]),
            max_balance_error=float(doc.get("max_balance_error", 0.0)),
            extra={k: v for k, v in doc.items() if k not in known},
        )


def _replay_chunk(case, ptdf, droops, deadband, p0, rho, lims):
    p_min, p_max, f_max, quad, lin, const = lims
    resp = respond(p0, droops, deadband, rho - case.forecasts())
    p = resp.p
    flows = case.injections(p, rho) @ ptdf.entries.T
    g_up = p > p_max + LIMIT_TOL_MW
    g_lo = p < p_min - LIMIT_TOL_MW
    l_up = flows > f_max + LIMIT_TOL_MW
    l_lo = flows < -f_max - LIMIT_TOL_MW
    cost = (quad * p * p + lin * p + const).sum(axis=1)
    balance = np.abs(p.sum(axis=1) + rho.sum(axis=1) - case.loads().sum())
    return (
        g_up.sum(axis=0),
        g_lo.sum(axis=0),
        l_up.sum(axis=0),
        l_lo.sum(axis=0),
        g_up.any(axis=1) | g_lo.any(axis=1),
        l_up.any(axis=1) | l_lo.any(axis=1),
        cost,
        float(balance.max(initial=0.0)),
    )


def validate(
    solution,
    case: GridCase,
    ptdf: PTDFMatrix,
    droops: DroopSet,
    deadband: Deadband,
    scenarios: ScenarioSet,
    threads: int | None = None,
) -> ValidationReport:
    """Empirical violation rates and realized-cost statistics of ``solution.p0``."""
    p0 = np.asarray(solution.p0 if hasattr(solution, "p0") else solution, dtype=float)
    if p0.shape != (case.n_gen,):
        raise ValueError(f"set points have shape {p0.shape}, case has {case.n_gen} generators")
    lims = (
        case.gen_array("p_min"),
        case.gen_array("p_max"),
        case.line_limits(),
        case.gen_array("cost_quad"),
        case.gen_array("cost_lin"),
        case.gen_array("cost_const"),
    )
    samples = scenarios.samples
    starts = range(0, scenarios.n, CHUNK)
    work = lambda i: _replay_chunk(case, ptdf, droops, deadband, p0, samples[i : i + CHUNK], lims)  # noqa: E731
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1:
        parts = [work(i) for i in starts]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, starts))  # map preserves chunk order

    n = scenarios.n
    gu, gl, lu, ll = (sum(part[k] for part in parts) / n for k in range(4))
    gen_any = np.concatenate([part[4] for part in parts])
    line_any = np.concatenate([part[5] for part in parts])
    cost = np.concatenate([part[6] for part in parts])
    return ValidationReport(
        gen_upper_rate=gu,
        gen_lower_rate=gl,
        line_upper_rate=lu,
        line_lower_rate=ll,
        system_wide_rate=float(np.mean(gen_any | line_any)),
        generator_system_rate=float(np.mean(gen_any)),
        line_system_rate=float(np.mean(line_any)),
        cost_mean=float(np.mean(cost)),
        cost_std=float(np.std(cost - cost[0], ddof=1)) if n > 1 else 0.0,  # shifted for accuracy
        n=n,
        seed=scenarios.seed,
        case_hash=case.content_hash(),
        max_balance_error=max(part[7] for part in parts),
    )


# --------------------------------------------------------------------------
# comparison tables


@dataclass
class ComparisonRow:
    label: str
    epsilon: float | None
    objective: float
    gap_pct: float
    cost_mean: float
    cost_std: float
    sys_violation_rate: float
    gen_violation_rate: float
    line_violation_rate: float
    solve_seconds: float


@dataclass
class ComparisonTable:
    rows: list

    def to_csv(self, timings: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for r in self.rows:
            w.writerow(
                [
                    r.label,
                    _fmt(r.epsilon),
                    _fmt(r.objective),
                    _fmt(r.gap_pct),
                    _fmt(r.cost_mean),
                    _fmt(r.cost_std),
                    _fmt(r.sys_violation_rate),
                    _fmt(r.solve_seconds) if timings else "",
                ]
            )
        return buf.getvalue()

    def plot_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        for r in self.rows:
            w.writerow(
                [
                    r.label,
                    _fmt(r.epsilon),
                    _fmt(r.cost_mean),
                    _fmt(r.cost_std),
                    _fmt(r.sys_violation_rate),
                    _fmt(r.gen_violation_rate),
                    _fmt(r.line_violation_rate),
                ]
            )
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    return format(float(v), ".10g")


def compare(entries, baseline: str | None = None) -> ComparisonTable:
    """Tabulate ``(label, report, solution)`` triples.

    The gap of each row is taken against the ``baseline`` row with the same
    epsilon, or against the first row when no such row exists. ``baseline``
    defaults to the first label.
    """
    entries = list(entries)
    if len(entries) < 1:
        raise ComparisonError("nothing to compare")
    hashes = {rep.case_hash for _, rep, _ in entries}
    if len(hashes) > 1:
        raise ComparisonError(f"reports come from different cases: {sorted(hashes)}")
    ensembles = {(rep.seed, rep.n) for _, rep, _ in entries}
    if len(ensembles) > 1:
        raise ComparisonError(f"reports use different scenario ensembles (seed, n): {sorted(ensembles)}")

    baseline = entries[0][0] if baseline is None else baseline
    by_eps = {}
    for label, _, sol in entries:
        if label == baseline:
            by_eps.setdefault(_eps_key(sol.epsilon), sol.objective)
    first = entries[0][2].objective

    rows = []
    for label, rep, sol in entries:
        ref = by_eps.get(_eps_key(sol.epsilon), first)
        gap = 100.0 * (sol.objective - ref) / abs(ref) if ref and math.isfinite(ref) else math.nan
        rows.append(
            ComparisonRow(
                label=label,
                epsilon=sol.epsilon,
                objective=sol.objective,
                gap_pct=gap,
                cost_mean=rep.cost_mean,
                cost_std=rep.cost_std,
                sys_violation_rate=rep.system_wide_rate,
                gen_violation_rate=rep.generator_system_rate,
                line_violation_rate=rep.line_system_rate,
                solve_seconds=sol.solve_seconds,
            )
        )
    return ComparisonTable(rows)


def _eps_key(eps):
    return None if eps is None else round(float(eps), 15)
