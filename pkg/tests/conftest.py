import numpy as np
import pytest

from ccpfr.grid import Bus, Generator, GridCase, Line, apply_case_modifiers, build_ptdf, builtin_case
from ccpfr.policy import Deadband, DroopSet
from ccpfr.uncertainty import WindStatistics

DERATE, LOAD_SCALE, DEADBAND_MW = 0.25, 1.10, 100.0
EPSILONS = (1e-1, 1e-2, 1e-3, 1e-4)


def triangle(limit=1000.0, wind=()):
    """Three buses, unit susceptances, slack at bus 3."""
    gens = [
        Generator(1, 0, 300, 0.01, 10, 0, 1.0, 1.0, 0.1),
        Generator(2, 0, 300, 0.01, 20, 0, 1.0, 1.0, 0.1),
        Generator(3, 0, 300, 0.01, 30, 0, 1.0, 1.0, 0.1),
    ]
    lines = [Line(1, 2, 1.0, limit), Line(2, 3, 1.0, limit), Line(1, 3, 1.0, limit)]
    buses = [Bus(1, 0.0), Bus(2, 50.0), Bus(3, 150.0)]
    return GridCase(buses, gens, lines, list(wind), slack_bus=3, name="triangle")


@pytest.fixture(scope="session")
def rts():
    case = apply_case_modifiers(builtin_case("rts118"), DERATE, LOAD_SCALE)
    return case, build_ptdf(case), DroopSet.from_case(case), WindStatistics.from_case(case)


@pytest.fixture(scope="session")
def deadband():
    return Deadband(DEADBAND_MW)


@pytest.fixture(scope="session")
def two_bus():
    case = builtin_case("two_bus")
    return case, build_ptdf(case), DroopSet.from_case(case), WindStatistics.from_case(case)


@pytest.fixture(scope="session")
def sweep(rts, deadband):
    """CCOPF and CCOPF-PFR solutions on the modified 118-bus case per epsilon."""
    from ccpfr.solver import solve_ccopf, solve_ccopf_pfr, solve_dcopf

    case, ptdf, droops, wind = rts
    out = {"dcopf": solve_dcopf(case, ptdf)}
    for eps in EPSILONS:
        out["ccopf", eps] = solve_ccopf(case, ptdf, droops, wind, eps)
        out["ccopf-pfr", eps] = solve_ccopf_pfr(case, ptdf, droops, wind, eps, deadband)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
