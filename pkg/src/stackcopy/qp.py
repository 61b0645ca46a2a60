"""Dense strictly convex QP solver for the pose-recovery problems.

Solves ``min 1/2 x'Hx + g'x  s.t.  A x <= b`` with the dual active-set method
of Goldfarb and Idnani. The method starts at the unconstrained minimizer and
adds violated constraints one at a time, so it needs no feasible starting
point and stops with an infeasibility certificate when a violated constraint
is a non-negative combination of the active ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

FEAS_TOL = 1e-6
KKT_TOL = 1e-5

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration_limit"
INACCURATE = "inaccurate"

# internal violation threshold; well below FEAS_TOL so solutions are exact
_VIOL_TOL = 1e-11


@dataclass(frozen=True)
class QpProblem:
    hessian: np.ndarray
    linear: np.ndarray
    A: np.ndarray
    b: np.ndarray
    names: Tuple[str, ...] = ()
    constant: float = 0.0

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        g = np.asarray(self.linear, dtype=float).reshape(-1)
        n = g.size
        A = np.asarray(self.A, dtype=float).reshape(-1, n) if n else np.zeros((0, 0))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if H.shape != (n, n):
            raise ValueError(f"hessian shape {H.shape} does not match {n} variables")
        if A.shape[0] != b.size:
            raise ValueError("A and b have inconsistent row counts")
        if not np.allclose(H, H.T, atol=1e-12):
            raise ValueError("hessian must be symmetric")
        names = tuple(self.names) or tuple(f"x{i}" for i in range(n))
        object.__setattr__(self, "hessian", H)
        object.__setattr__(self, "linear", g)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.linear.size

    @classmethod
    def least_squares(cls, weights, targets, A=None, b=None, names=()) -> "QpProblem":
        """``min sum_i w_i (x_i - t_i)^2`` subject to ``A x <= b``."""
        w = np.asarray(weights, dtype=float)
        t = np.asarray(targets, dtype=float)
        n = w.size
        A = np.zeros((0, n)) if A is None else A
        b = np.zeros(0) if b is None else b
        return cls(np.diag(2 * w), -2 * w * t, A, b, names, float(np.sum(w * t * t)))

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hessian @ x + self.linear @ x + self.constant)

    def max_violation(self, x) -> float:
        if not self.b.size:
            return 0.0
        return float(max(0.0, np.max(self.A @ np.asarray(x, dtype=float) - self.b)))


@dataclass(frozen=True)
class QpSolution:
    status: str
    values: Optional[np.ndarray] = None
    multipliers: Optional[np.ndarray] = None
    kkt_residual: float = float("inf")
    iterations: int = 0
    active: Tuple[int, ...] = ()
    # indices of the constraints proving infeasibility, when status is infeasible
    certificate: Tuple[int, ...] = ()
    names: Tuple[str, ...] = field(default=(), repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def as_dict(self) -> dict:
        if self.values is None:
            return {}
        return dict(zip(self.names, (float(v) for v in self.values)))


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


def _estimate_multipliers(problem: QpProblem, x: np.ndarray) -> np.ndarray:
    from scipy.optimize import nnls

    m = problem.b.size
    lam = np.zeros(m)
    if not m:
        return lam
    grad = problem.hessian @ x + problem.linear
    slack = problem.b - problem.A @ x
    near = np.flatnonzero(slack <= 1e-6)
    if near.size:
        lam[near], _ = nnls(problem.A[near].T, -grad)
    return lam


def check_kkt(problem: QpProblem, solution, multipliers=None) -> KktReport:
    """Worst violation of each KKT condition at ``solution``.

    ``solution`` may be a :class:`QpSolution` or a bare point. Multipliers
    are taken from the solution when present, otherwise estimated by
    non-negative least squares on the nearly active constraints.
    """
    if isinstance(solution, QpSolution):
        if solution.values is None:
            raise ValueError("solution has no values")
        x = solution.values
        if multipliers is None:
            multipliers = solution.multipliers
    else:
        x = np.asarray(solution, dtype=float)
    lam = _estimate_multipliers(problem, x) if multipliers is None else np.asarray(multipliers, float)
    grad = problem.hessian @ x + problem.linear
    if problem.b.size:
        resid = problem.A @ x - problem.b
        stat = grad + problem.A.T @ lam
        primal = float(max(0.0, resid.max()))
        dual = float(max(0.0, (-lam).max()))
        comp = float(np.max(np.abs(lam * resid)))
    else:
        stat, primal, dual, comp = grad, 0.0, 0.0, 0.0
    return KktReport(float(np.max(np.abs(stat))) if stat.size else 0.0, primal, dual, comp)


def solve(problem: QpProblem, max_iter: Optional[int] = None) -> QpSolution:
    H, g, A, b = problem.hessian, problem.linear, problem.A, problem.b
    n, m = g.size, b.size
    if n == 0:
        ok = bool(np.all(b >= -FEAS_TOL))
        return QpSolution(OPTIMAL if ok else INFEASIBLE, np.zeros(0) if ok else None,
                          np.zeros(m) if ok else None, 0.0 if ok else float("inf"))
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise ValueError("hessian must be positive definite") from None
    Linv = np.linalg.inv(L)
    Ginv = Linv.T @ Linv

    x = -Ginv @ g
    active: list = []
    u = np.zeros(0)
    max_iter = max_iter or 10 * (n + m) + 10
    it = 0
    while True:
        viol = A @ x - b if m else np.zeros(0)
        if active:
            viol[active] = -np.inf
        p = int(np.argmax(viol)) if m else -1
        if m == 0 or viol[p] <= _VIOL_TOL:
            break
        # GI works with constraints n'x >= b' where n = -a_p
        n_p = -A[p]
        u_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                return QpSolution(ITERATION_LIMIT, iterations=it, names=problem.names)
            if active:
                N = -A[active].T
                GN = Ginv @ N
                Nstar = np.linalg.solve(N.T @ GN, GN.T)
                z = Ginv @ n_p - GN @ (Nstar @ n_p)
                r = Nstar @ n_p
            else:
                z = Ginv @ n_p
                r = np.zeros(0)
            t1, k = np.inf, -1
            for j in range(r.size):
                if r[j] > 1e-14:
                    ratio = u[j] / r[j]
                    if ratio < t1:
                        t1, k = ratio, j
            zn = float(z @ n_p)
            if zn <= 1e-12 * float(n_p @ Ginv @ n_p):
                if k < 0:
                    # a_p is a non-negative combination of active rows: empty feasible set
                    cert = tuple(sorted(set(active) | {p}))
                    return QpSolution(INFEASIBLE, iterations=it, certificate=cert,
                                      names=problem.names)
                u = u - t1 * r
                u_p += t1
                del active[k]
                u = np.delete(u, k)
                continue
            slack = float(b[p] - A[p] @ x)
            t2 = -slack / zn
            t = min(t1, t2)
            x = x + t * z
            u = u - t * r
            u_p += t
            if t2 <= t1:
                active.append(p)
                u = np.append(u, u_p)
                break
            del active[k]
            u = np.delete(u, k)

    lam = np.zeros(m)
    if active:
        lam[active] = np.maximum(u, 0.0)
    report = check_kkt(problem, x, lam)
    status = OPTIMAL
    if report.primal > FEAS_TOL or report.max > KKT_TOL:
        status = INACCURATE
    return QpSolution(status, x, lam, report.max, it, tuple(active), names=problem.names)
