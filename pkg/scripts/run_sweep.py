"""Epsilon sweep on the modified 118-bus case: solve, validate, compare.

    python scripts/run_sweep.py --out runs/sweep [--timings omit]

Writes one solution and one report document per run plus table.csv and
plot.csv. With ``--timings omit`` the CSV output is byte-reproducible.
"""

import argparse
import sys
from pathlib import Path

from ccpfr.cli import main as ccpfr

EPSILONS = ("0.1", "0.01", "0.001", "0.0001")
CASE_FLAGS = ["--line-derate", "0.25", "--load-scale", "1.10", "--deadband", "100"]


def run(out: Path, samples: int, seed: int, timings: str, case: str) -> int:
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    runs = [("dcopf", None)] + [(f, e) for e in EPSILONS for f in ("ccopf", "ccopf-pfr")]
    for form, eps in runs:
        stem = form if eps is None else f"{form}_{eps}"
        sol, rep = out / f"{stem}.solution.json", out / f"{stem}.report.json"
        args = ["solve", "--case", case, "--formulation", form, *CASE_FLAGS, "--out", str(sol), "--timings", timings]
        if eps is not None:
            args += ["--epsilon", eps]
        code = ccpfr(args)
        if code != 0:
            print(f"{stem}: solve exited with {code}", file=sys.stderr)
            continue
        code = ccpfr(
            ["validate", "--solution", str(sol), "--samples", str(samples), "--seed", str(seed), "--label", form, "--out", str(rep)]
        )
        if code != 0:
            return code
        reports.append(str(rep))
    return ccpfr(
        ["compare", *reports, "--baseline", "ccopf", "--out", str(out / "table.csv"), "--plot-out", str(out / "plot.csv"), "--timings", timings]
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--timings", choices=("record", "omit"), default="record")
    ap.add_argument("--case", default="builtin:rts118")
    args = ap.parse_args()
    sys.exit(run(Path(args.out), args.samples, args.seed, args.timings, args.case))


if __name__ == "__main__":
    main()
