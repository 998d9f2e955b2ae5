"""Command-line front end: ``ccpfr solve | validate | compare | report``.

Exit codes: 0 ok, 1 solver infeasible or iteration limit, 2 I/O or parse
error, 3 case-hash mismatch, 4 scenario-seed mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ccpfr import __version__
from ccpfr.grid import CaseFormatError, CaseValidationError, apply_case_modifiers, build_ptdf, resolve_case
from ccpfr.montecarlo import THREADS_ENV, ComparisonError, ValidationReport, compare, sample_wind, validate
from ccpfr.policy import Deadband, DroopSet
from ccpfr.solver import CCOPF, CCOPF_PFR, DCOPF, DispatchSolution, solve_ccopf, solve_ccopf_pfr, solve_dcopf
from ccpfr.uncertainty import WindStatistics

log = logging.getLogger("ccpfr")

EXIT_OK, EXIT_SOLVER, EXIT_IO, EXIT_CASE_HASH, EXIT_SEED = 0, 1, 2, 3, 4
FORMULATIONS = (DCOPF, CCOPF, CCOPF_PFR)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_IO):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    case: str = "builtin:rts118"
    line_derate: float = 0.0
    load_scale: float = 1.0
    formulation: str = CCOPF_PFR
    epsilon: float = 0.01
    deadband_mw: float = 100.0
    trigger: str = "primary"
    wind_rel_std: float | None = None
    weight_rule: str = "chernoff"
    samples: int = 10_000
    seed: int = 42

    def load(self):
        case = apply_case_modifiers(_read_case(self.case), self.line_derate, self.load_scale)
        return case, build_ptdf(case), DroopSet.from_case(case), WindStatistics.from_case(case, self.wind_rel_std)

    def deadband(self) -> Deadband:
        return Deadband(self.deadband_mw, self.trigger)


def _read_case(spec: str):
    try:
        return resolve_case(spec)
    except FileNotFoundError as exc:
        raise CliError(f"case file not found: {spec}") from exc
    except (CaseFormatError, CaseValidationError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot parse case {spec}: {exc}") from exc
    except OSError as exc:
        raise CliError(f"cannot read case {spec}: {exc}") from exc


def _read_json(path: str, kind: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise CliError(f"{kind} file not found: {path}") from exc
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read {kind} {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise CliError(f"{path} is not a {kind} document")
    return doc


def _write(text: str, dest: str | None) -> None:
    if dest is None or dest == "-":
        sys.stdout.write(text)
        return
    try:
        Path(dest).parent.mkdir(parents=True, exist_ok=True)
        Path(dest).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {dest}: {exc}") from exc


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _config_from(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        raw = _read_plain_json(args.config)
        for k, v in raw.items():
            if not hasattr(cfg, k):
                raise CliError(f"unknown config key {k!r} in {args.config}")
            setattr(cfg, k, v)
    for k in asdict(cfg):
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg, k, v)
    if not 0 < cfg.epsilon < 1:
        raise CliError(f"epsilon must lie in (0, 1), got {cfg.epsilon}")
    if cfg.formulation not in FORMULATIONS:
        raise CliError(f"unknown formulation {cfg.formulation!r}")
    return cfg


def _read_plain_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"config {path} must hold an object")
    return doc


# --------------------------------------------------------------------------
# solve


def run_solve(cfg: RunConfig):
    """Solve per ``cfg``; returns ``(solution, modified case)``."""
    try:
        case, ptdf, droops, wind = cfg.load()
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if cfg.formulation == DCOPF:
        sol = solve_dcopf(case, ptdf)
    elif cfg.formulation == CCOPF:
        sol = solve_ccopf(case, ptdf, droops, wind, cfg.epsilon)
    else:
        sol = solve_ccopf_pfr(case, ptdf, droops, wind, cfg.epsilon, cfg.deadband(), weight_rule=cfg.weight_rule)
    return sol, case


def solution_document(sol: DispatchSolution, cfg: RunConfig, case_hash: str, timings: bool = True) -> dict:
    return {
        "kind": "solution",
        "version": __version__,
        "config": asdict(cfg),
        "case_hash": case_hash,
        "formulation": sol.formulation,
        "status": sol.status,
        "message": sol.message,
        "objective": _num(sol.objective),
        "epsilon": sol.epsilon,
        "deadband": sol.deadband,
        "iterations": sol.iterations,
        "n_cuts": len(sol.cuts),
        "p0": [float(v) for v in sol.p0],
        "constraint_values": {k: _num(v) for k, v in sorted(sol.constraint_values.items())},
        "weight_scales": {k: _num(v) for k, v in sorted(sol.weight_scales.items())},
        "solve_seconds": sol.solve_seconds if timings else None,
    }


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def cmd_solve(args) -> int:
    cfg = _config_from(args)
    sol, case = run_solve(cfg)
    doc = solution_document(sol, cfg, case.content_hash(), timings=args.timings == "record")
    _write(_dump(doc), args.out)
    print(
        f"{sol.formulation} eps={cfg.epsilon:g} status={sol.status} objective={sol.objective:.4f} "
        f"iterations={sol.iterations} time={sol.solve_seconds:.2f}s",
        file=sys.stderr,
    )
    return EXIT_OK if sol.ok else EXIT_SOLVER


# --------------------------------------------------------------------------
# validate


def _solution_from_doc(doc: dict) -> DispatchSolution:
    return DispatchSolution(
        p0=np.asarray(doc["p0"], dtype=float),
        objective=math.nan if doc["objective"] is None else float(doc["objective"]),
        formulation=doc["formulation"],
        status=doc["status"],
        iterations=int(doc.get("iterations", 0)),
        epsilon=doc.get("epsilon"),
        deadband=doc.get("deadband"),
        solve_seconds=doc.get("solve_seconds") or 0.0,
    )


def cmd_validate(args) -> int:
    doc = _read_json(args.solution, "solution")
    cfg = RunConfig(**doc["config"])
    for k in ("case", "line_derate", "load_scale", "deadband_mw", "trigger", "wind_rel_std", "samples", "seed"):
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg, k, v)
    try:
        case, ptdf, droops, wind = cfg.load()
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if case.content_hash() != doc["case_hash"]:
        raise CliError(
            f"case hash {case.content_hash()[:12]} does not match the solution's {doc['case_hash'][:12]}",
            EXIT_CASE_HASH,
        )
    sol = _solution_from_doc(doc)
    if not sol.ok:
        raise CliError(f"solution status is {sol.status}; nothing to validate", EXIT_SOLVER)
    scenarios = sample_wind(wind, cfg.samples, cfg.seed)
    report = validate(sol, case, ptdf, droops, cfg.deadband(), scenarios, threads=args.threads)
    out = {
        "kind": "report",
        "version": __version__,
        "config": asdict(cfg),
        "label": args.label or f"{sol.formulation}",
        "solution": {
            "formulation": sol.formulation,
            "status": sol.status,
            "objective": doc["objective"],
            "epsilon": sol.epsilon,
            "solve_seconds": doc.get("solve_seconds"),
        },
        **report.to_dict(),
    }
    _write(_dump(out), args.out)
    print(
        f"{sol.formulation} eps={sol.epsilon} n={report.n} sys_rate={report.system_wide_rate:.4f} "
        f"cost_mean={report.cost_mean:.2f} cost_std={report.cost_std:.2f}",
        file=sys.stderr,
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# compare / report


def _entries(paths):
    entries = []
    for path in paths:
        doc = _read_json(path, "report")
        s = doc["solution"]
        sol = DispatchSolution(
            p0=np.zeros(0),
            objective=math.nan if s["objective"] is None else float(s["objective"]),
            formulation=s["formulation"],
            status=s["status"],
            epsilon=s["epsilon"],
            solve_seconds=s.get("solve_seconds") or 0.0,
        )
        entries.append((doc.get("label", s["formulation"]), ValidationReport.from_dict(doc), sol))
    return entries


def cmd_compare(args) -> int:
    entries = _entries(args.reports)
    if len(entries) < 2 and not args.allow_single:
        raise CliError("compare needs at least two reports")
    hashes = {rep.case_hash for _, rep, _ in entries}
    if len(hashes) > 1:
        raise CliError("reports were produced on different cases", EXIT_CASE_HASH)
    if len({(rep.seed, rep.n) for _, rep, _ in entries}) > 1:
        raise CliError("reports were produced with different scenario seeds or counts", EXIT_SEED)
    try:
        table = compare(entries, baseline=args.baseline)
    except ComparisonError as exc:
        raise CliError(str(exc)) from exc
    timings = args.timings == "record"
    _write(table.to_csv(timings=timings), args.out)
    if args.plot_out:
        _write(table.plot_csv(), args.plot_out)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        with open(args.document, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise CliError(f"document not found: {args.document}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {args.document}: {exc}") from exc
    kind = doc.get("kind") if isinstance(doc, dict) else None
    if kind == "solution":
        lines = [
            f"formulation  {doc['formulation']}",
            f"status       {doc['status']}",
            f"objective    {doc['objective']}",
            f"epsilon      {doc['epsilon']}",
            f"iterations   {doc['iterations']}  (cuts {doc['n_cuts']})",
            f"case hash    {doc['case_hash']}",
        ]
        worst = max(doc["constraint_values"].items(), key=lambda kv: kv[1] or 0.0, default=None)
        if worst:
            lines.append(f"largest weighted constraint  {worst[0]} = {worst[1]:.3e}")
    elif kind == "report":
        lines = [
            f"label              {doc['label']}",
            f"scenarios          {doc['n']} (seed {doc['seed']})",
            f"system-wide rate   {doc['system_wide_rate']:.5f}",
            f"generator rate     {doc['generator_system_rate']:.5f}",
            f"line rate          {doc['line_system_rate']:.5f}",
            f"cost mean / std    {doc['cost_mean']:.2f} / {doc['cost_std']:.2f}",
        ]
    else:
        raise CliError(f"{args.document} is neither a solution nor a report document")
    print("\n".join(lines))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ccpfr", description="Chance-constrained dispatch with dead-zone frequency response.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def case_flags(p):
        p.add_argument("--case", help="case file or builtin:<name> (default builtin:rts118)")
        p.add_argument("--line-derate", type=float, dest="line_derate")
        p.add_argument("--load-scale", type=float, dest="load_scale")
        p.add_argument("--deadband", type=float, dest="deadband_mw", help="dead zone in MW of aggregate imbalance")
        p.add_argument("--trigger", choices=("primary", "free"))
        p.add_argument("--wind-rel-std", type=float, dest="wind_rel_std")

    p = sub.add_parser("solve", help="solve one dispatch problem")
    case_flags(p)
    p.add_argument("--config", help="JSON object of RunConfig fields; flags override it")
    p.add_argument("--formulation", choices=FORMULATIONS)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--weight-rule", choices=("chernoff", "limit"), dest="weight_rule")
    p.add_argument("--out")
    p.add_argument("--timings", choices=("record", "omit"), default="record")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("validate", help="Monte Carlo validation of a solution document")
    case_flags(p)
    p.add_argument("--solution", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.add_argument("--label")
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("compare", help="tabulate report documents as CSV")
    p.add_argument("reports", nargs="+")
    p.add_argument("--baseline", help="label the gap column is measured against (default: first)")
    p.add_argument("--out")
    p.add_argument("--plot-out", dest="plot_out")
    p.add_argument("--timings", choices=("record", "omit"), default="record")
    p.add_argument("--allow-single", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="print a summary of a solution or report document")
    p.add_argument("document")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ccpfr {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
