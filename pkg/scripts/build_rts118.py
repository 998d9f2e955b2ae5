"""Regenerate src/ccpfr/data/rts118.json from the MATPOWER 118-bus case.

Needs PYPOWER (``pip install pypower``) for the raw case data; the package
itself does not. The MATPOWER case carries no thermal ratings (all 9900 MVA),
so ratings are derived: each line is rated at RATING_MARGIN times its flow in
the unconstrained economic dispatch of the base case (forecast wind included),
rounded up to RATING_STEP MW and floored at RATING_FLOOR MW.
"""

import argparse
import math
from pathlib import Path

from ccpfr.grid import Bus, Generator, GridCase, Line, WindFarm, build_ptdf, dump_case
from ccpfr.solver import solve_dcopf

WIND_FORECAST = {3: 70, 8: 147, 11: 102, 20: 105, 24: 113, 38: 250, 43: 118, 49: 76, 50: 72}
WIND_REL_STD = 0.10
DAMPING_RATIO = 1.0 / 9.0  # gamma_k = alpha1_k / 9
RATING_MARGIN = 1.50
RATING_STEP = 10.0
RATING_FLOOR = 175.0


def build(margin=RATING_MARGIN, floor=RATING_FLOOR, step=RATING_STEP) -> GridCase:
    from pypower.case118 import case118

    ppc = case118()
    bus, gen, branch, gencost = ppc["bus"], ppc["gen"], ppc["branch"], ppc["gencost"]
    buses = [Bus(int(r[0]), float(r[2])) for r in bus]
    ng = gen.shape[0]
    share = 1.0 / ng
    gens = []
    for g, cst in zip(gen, gencost):
        assert cst[0] == 2 and cst[3] == 3, "expected quadratic polynomial costs"
        gens.append(
            Generator(
                bus=int(g[0]),
                p_min=float(g[9]),
                p_max=float(g[8]),
                cost_quad=float(cst[4]),
                cost_lin=float(cst[5]),
                cost_const=float(cst[6]),
                alpha1=share,
                alpha2=share,
                gamma=share * DAMPING_RATIO,
            )
        )
    susceptance = []
    for br in branch:
        tap = br[8] if br[8] != 0 else 1.0
        susceptance.append(1.0 / (br[3] * tap))
    farms = [WindFarm(b, float(f), WIND_REL_STD * f) for b, f in WIND_FORECAST.items()]
    slack = int(bus[bus[:, 1] == 3, 0][0])

    unrated = [Line(int(br[0]), int(br[1]), s, 1e6) for br, s in zip(branch, susceptance)]
    probe = GridCase(buses, gens, unrated, farms, slack, name="rts118")
    sol = solve_dcopf(probe, build_ptdf(probe))
    assert sol.ok, sol.message
    flows = build_ptdf(probe).entries @ probe.injections(sol.p0)
    ratings = [max(floor, step * math.ceil(margin * abs(f) / step)) for f in flows]
    lines = [Line(ln.from_bus, ln.to_bus, ln.susceptance, float(r)) for ln, r in zip(unrated, ratings)]
    return GridCase(buses, gens, lines, farms, slack, name="rts118")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).parents[1] / "src/ccpfr/data/rts118.json"))
    ap.add_argument("--margin", type=float, default=RATING_MARGIN)
    ap.add_argument("--floor", type=float, default=RATING_FLOOR)
    args = ap.parse_args()
    case = build(margin=args.margin, floor=args.floor)
    dump_case(case, args.out)
    print(f"wrote {args.out}: {case.n_bus} buses, {case.n_gen} generators, {case.n_line} lines")


if __name__ == "__main__":
    main()
