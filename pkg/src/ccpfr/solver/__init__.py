from ccpfr.solver.formulations import (
    CCOPF,
    CCOPF_PFR,
    DCOPF,
    Cut,
    DispatchSolution,
    expected_cost,
    solve_ccopf,
    solve_ccopf_pfr,
    solve_dcopf,
)
from ccpfr.solver.qp import QpProblem, QpResult, solve_qp

__all__ = [
    "CCOPF",
    "CCOPF_PFR",
    "DCOPF",
    "Cut",
    "DispatchSolution",
    "QpProblem",
    "QpResult",
    "expected_cost",
    "solve_ccopf",
    "solve_ccopf_pfr",
    "solve_dcopf",
    "solve_qp",
]
