"""Dense convex QP by a primal-dual interior point method (Mehrotra
predictor-corrector), with an active-set polish of the final iterate.

    minimize    1/2 x'Qx + c'x
    subject to  A x  = b
                G x <= h
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class QpProblem:
    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    G: np.ndarray | None = None
    h: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n = c.size
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim == 1:
            Q = np.diag(Q)
        if Q.shape != (n, n):
            raise ValueError(f"Q has shape {Q.shape}, expected {(n, n)}")
        if not np.allclose(Q, Q.T, rtol=1e-12, atol=1e-12):
            raise ValueError("Q must be symmetric")
        A, b = _pair(self.A, self.b, n, "A", "b")
        G, h = _pair(self.G, self.h, n, "G", "h")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.c @ x)

    def kkt_residuals(self, x, y, z) -> dict:
        """Scaled KKT residuals (infinity norms)."""
        stat = self.Q @ x + self.c + self.A.T @ y + self.G.T @ z
        slack = self.h - self.G @ x
        cscale = 1.0 + np.abs(self.c).max(initial=0.0) + np.abs(self.Q @ x).max(initial=0.0)
        return {
            "stationarity": float(np.abs(stat).max(initial=0.0) / cscale),
            "equality": float(np.abs(self.A @ x - self.b).max(initial=0.0) / (1.0 + np.abs(self.b).max(initial=0.0))),
            "inequality": float(np.maximum(-slack, 0.0).max(initial=0.0) / (1.0 + np.abs(self.h).max(initial=0.0))),
            "dual_sign": float(np.maximum(-z, 0.0).max(initial=0.0) / cscale),
            "complementarity": float(np.abs(z * slack).max(initial=0.0) / (1.0 + abs(self.objective(x)))),
        }


def _pair(M, v, n, mname, vname):
    if M is None:
        return np.zeros((0, n)), np.zeros(0)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    v = np.asarray(v, dtype=float).reshape(-1)
    if M.shape[1] != n or M.shape[0] != v.size:
        raise ValueError(f"{mname}/{vname} dimensions inconsistent with {n} variables")
    return M, v


@dataclass
class QpResult:
    x: np.ndarray
    objective: float
    status: str
    y: np.ndarray
    z: np.ndarray
    iterations: int
    residuals: dict = field(default_factory=dict)
    certificate: dict | None = None

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values(), default=0.0)


def _row_scale(M, v):
    norms = np.linalg.norm(M, axis=1)
    norms[norms == 0] = 1.0
    return M / norms[:, None], v / norms, norms


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _ipm(Q, c, A, b, G, h, tol, max_iter):
    n, p, m = c.size, b.size, h.size
    reg = 1e-12 * (1.0 + np.abs(Q).max(initial=0.0))

    def factor(w):
        with np.errstate(over="ignore", invalid="ignore"):
            H = Q + (G.T * w) @ G + reg * np.eye(n)
        if not np.all(np.isfinite(H)):
            raise np.linalg.LinAlgError("non-finite barrier Hessian")
        K = np.block([[H, A.T], [A, -1e-13 * np.eye(p)]])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(K, check_finite=False)
        if not np.all(np.isfinite(lu[0])):
            raise np.linalg.LinAlgError("singular KKT matrix")
        return lu

    def newton(lu, r_d, r_p, r_g, r_sz, s, z):
        rhs_x = -r_d + G.T @ ((r_sz - z * r_g) / s)
        sol = scipy.linalg.lu_solve(lu, np.concatenate([rhs_x, -r_p]), check_finite=False)
        dx, dy = sol[:n], sol[n:]
        dz = (-r_sz + z * r_g + z * (G @ dx)) / s
        ds = -r_g - G @ dx
        return dx, dy, ds, dz

    # start from the equality-constrained minimizer (lightly regularized)
    rho = 1e-6 * (1.0 + np.abs(Q).max(initial=0.0))
    K0 = np.block([[Q + rho * np.eye(n), A.T], [A, -1e-13 * np.eye(p)]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        sol = scipy.linalg.solve(K0, np.concatenate([-c, b]), check_finite=False)
    x, y = sol[:n], sol[n:]
    s = h - G @ x
    z = np.ones(m)
    if m:
        # least-squares duals, then Mehrotra's positivity and balancing shifts
        dual, *_ = np.linalg.lstsq(np.hstack([A.T, G.T]), -(Q @ x + c), rcond=None)
        y, z = dual[:p], dual[p:]
        s = s + max(-1.5 * s.min(), 0.0)
        z = z + max(-1.5 * z.min(), 0.0)
        s = s + 1e-8 * (1.0 + np.abs(s).max())
        z = z + 1e-8 * (1.0 + np.abs(z).max())
        gap = s @ z
        s, z = s + 0.5 * gap / z.sum(), z + 0.5 * gap / s.sum()

    bnorm = 1.0 + np.abs(b).max(initial=0.0)
    hnorm = 1.0 + np.abs(h).max(initial=0.0)
    it = 0
    status = ITERATION_LIMIT
    stalls = 0
    for it in range(1, max_iter + 1):
        r_d = Q @ x + c + A.T @ y + G.T @ z
        r_p = A @ x - b
        r_g = G @ x + s - h
        mu = float(s @ z / m) if m else 0.0
        obj = 0.5 * x @ Q @ x + c @ x
        cnorm = 1.0 + np.abs(c).max(initial=0.0) + np.abs(Q @ x).max(initial=0.0)
        if (
            np.abs(r_d).max(initial=0.0) / cnorm < tol
            and np.abs(r_p).max(initial=0.0) / bnorm < tol
            and np.abs(r_g).max(initial=0.0) / hnorm < tol
            and (s @ z) / (1.0 + abs(obj)) < tol
        ):
            status = OPTIMAL
            break
        if not np.all(np.isfinite(x)) or np.abs(x).max(initial=0.0) > 1e12:
            status = NUMERICAL_FAILURE
            break
        try:
            with np.errstate(divide="ignore", over="ignore"):
                w = z / s
            lu = factor(w)
        except (np.linalg.LinAlgError, ValueError):
            status = NUMERICAL_FAILURE
            break
        dx, dy, ds, dz = newton(lu, r_d, r_p, r_g, s * z, s, z)
        if not np.all(np.isfinite(dx)):
            status = NUMERICAL_FAILURE
            break
        a_aff = min(_max_step(s, ds), _max_step(z, dz))
        if m:
            mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz) / m)
            centering = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            r_sz = s * z + ds * dz - centering * mu
            dx, dy, ds, dz = newton(lu, r_d, r_p, r_g, r_sz, s, z)
        step = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz))) if m else 1.0
        x = x + step * dx
        y = y + step * dy
        s = s + step * ds
        z = z + step * dz
        stalls = stalls + 1 if step < 1e-8 else 0
        if stalls >= 5:
            status = NUMERICAL_FAILURE
            break
    return x, y, s, z, it, status


def _polish(problem: QpProblem, x, y, z, tol):
    """Re-solve the KKT system on the identified active set."""
    G, h = problem.G, problem.h
    slack = h - G @ x
    active = np.flatnonzero(z > np.maximum(slack, 1e-14))
    n, p = problem.n, problem.b.size
    Ga = G[active]
    k = active.size
    K = np.block(
        [
            [problem.Q, problem.A.T, Ga.T],
            [problem.A, np.zeros((p, p)), np.zeros((p, k))],
            [Ga, np.zeros((k, p)), np.zeros((k, k))],
        ]
    )
    rhs = np.concatenate([-problem.c, problem.b, h[active]])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    if not np.allclose(K @ sol, rhs, rtol=1e-10, atol=1e-10 * (1 + np.abs(rhs).max(initial=0.0))):
        return None
    xp, yp = sol[:n], sol[n : n + p]
    zp = np.zeros_like(z)
    zp[active] = sol[n + p :]
    res = problem.kkt_residuals(xp, yp, zp)
    if max(res.values()) > tol:
        return None
    return xp, yp, zp, res


def _phase_one(problem: QpProblem, tol, max_iter):
    """min t  s.t.  Ax = b, Gx - t <= h, t >= -1. Returns (t, y, z)."""
    n, m = problem.n, problem.h.size
    G = np.hstack([problem.G, -np.ones((m, 1))])
    G = np.vstack([G, np.concatenate([np.zeros(n), [-1.0]])])
    h = np.concatenate([problem.h, [1.0]])
    A = np.hstack([problem.A, np.zeros((problem.A.shape[0], 1))])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    Gs, hs, gn = _row_scale(G, h)
    x, y, s, z, _, _ = _ipm(np.zeros((n + 1, n + 1)), c, A, problem.b, Gs, hs, tol, max_iter)
    return float(x[-1]), y, (z / gn)[:m]


def solve_qp(problem: QpProblem, tol: float = 1e-10, max_iter: int = 200, polish: bool = True) -> QpResult:
    """Solve a convex QP.

    On success ``status == "optimal"``. When the interior point iteration
    fails, a phase-one program decides feasibility; an infeasible problem
    comes back with a Farkas-style certificate ``(y, z)`` in ``certificate``.
    """
    G, h, gnorm = _row_scale(problem.G, problem.h)
    A, b, anorm = _row_scale(problem.A, problem.b)
    x, y, s, z, iters, status = _ipm(problem.Q, problem.c, A, b, G, h, tol, max_iter)
    y = y / anorm
    z = z / gnorm

    if status == OPTIMAL or status == ITERATION_LIMIT:
        res = problem.kkt_residuals(x, y, z)
        if polish and problem.h.size:
            polished = _polish(problem, x, y, z, max(tol, 1e-12))
            if polished is not None:
                x, y, z, res = polished
        if status == ITERATION_LIMIT and max(res.values()) < 1e-8:
            status = OPTIMAL
        if status == OPTIMAL:
            return QpResult(x, problem.objective(x), status, y, z, iters, res)

    t, y1, z1 = _phase_one(problem, 1e-10, max_iter)
    if t > 1e-7 * (1.0 + np.abs(problem.h).max(initial=0.0)):
        log.debug("QP infeasible: phase-one optimum %.3g", t)
        cert = {"max_violation": t, "y": y1, "z": z1}
        return QpResult(x, float("nan"), INFEASIBLE, y, z, iters, problem.kkt_residuals(x, y, z), cert)
    return QpResult(x, problem.objective(x), status, y, z, iters, problem.kkt_residuals(x, y, z))
