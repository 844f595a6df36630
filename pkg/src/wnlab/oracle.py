"""Exact LP ground truth: minimal weighted l1 solutions and kernel witnesses.

A dense two-phase primal simplex with Bland's anti-cycling rule.  Problem
sizes here top out around N=1000, M=150, where a tableau implementation is
fast enough and keeps the solver dependency-free and deterministic: ties
between optimal vertices are always broken the same way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverFailureError
from .model import ProblemInstance

FEAS_TOL = 1e-9
_COST_TOL = 1e-10


@dataclass
class OracleSolution:
    """Solution of one LP solve."""

    z: np.ndarray
    objective: float
    status: str  # "optimal" | "infeasible" | "unbounded"
    iterations: int
    basis: list[int] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def to_dict(self) -> dict:
        return {
            "z": self.z.tolist(),
            "objective": self.objective,
            "status": self.status,
            "iterations": self.iterations,
            "basis": list(self.basis),
        }


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    piv = T[row]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] -= T[i, col] * piv


def _bland_iterate(T, basis, ncols, allowed, max_pivots):
    """Run simplex pivots on tableau T (last row = reduced costs, last col = rhs).

    Entering variable: lowest index with negative reduced cost; leaving: min
    ratio, ties to the lowest basis index.  Returns (status, pivots).
    """
    pivots = 0
    nrows = T.shape[0] - 1
    while True:
        col = -1
        for j in range(ncols):
            if allowed[j] and T[-1, j] < -_COST_TOL:
                col = j
                break
        if col < 0:
            return "optimal", pivots
        best_row, best_ratio, best_var = -1, np.inf, ncols + 1
        for i in range(nrows):
            a = T[i, col]
            if a > 1e-11:
                ratio = T[i, -1] / a
                if ratio < best_ratio - 1e-12 or (
                    abs(ratio - best_ratio) <= 1e-12 and basis[i] < best_var
                ):
                    best_row, best_ratio, best_var = i, ratio, basis[i]
        if best_row < 0:
            return "unbounded", pivots
        _pivot(T, best_row, col)
        basis[best_row] = col
        pivots += 1
        if pivots > max_pivots:
            raise SolverFailureError(
                f"simplex exceeded its pivot guard ({max_pivots})"
            )


def solve_lp(A: np.ndarray, b: np.ndarray, c: np.ndarray) -> OracleSolution:
    """min <c, z> subject to A z = b, z >= 0 (dense two-phase simplex)."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = A.shape

    # Scale rows so the feasibility tolerance is meaningful on any data.
    row_scale = np.maximum(np.max(np.abs(A), axis=1), np.abs(b))
    row_scale[row_scale == 0.0] = 1.0
    A = A / row_scale[:, None]
    b = b / row_scale

    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    total = n + m  # structural + artificial
    T = np.zeros((m + 1, total + 1))
    T[:m, :n] = A
    T[:m, n:total] = np.eye(m)
    T[:m, -1] = b
    basis = list(range(n, total))
    # Phase-1 objective: sum of artificials, expressed in reduced form.
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()

    allowed = np.ones(total, dtype=bool)
    max_pivots = 50 * (total + 10)
    status, p1 = _bland_iterate(T, basis, total, allowed, max_pivots)
    if status != "optimal":  # phase 1 is always bounded below by 0
        raise SolverFailureError("phase 1 terminated abnormally")
    if -T[-1, -1] > FEAS_TOL:
        return OracleSolution(
            z=np.zeros(n), objective=np.nan, status="infeasible",
            iterations=p1, basis=[],
        )

    # Drive any remaining artificial variables out of the basis.
    drop_rows = []
    for i in range(m):
        if basis[i] >= n:
            piv_col = -1
            for j in range(n):
                if abs(T[i, j]) > 1e-9:
                    piv_col = j
                    break
            if piv_col >= 0:
                _pivot(T, i, piv_col)
                basis[i] = piv_col
            else:
                drop_rows.append(i)  # redundant constraint
    if drop_rows:
        keep = [i for i in range(m) if i not in drop_rows]
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[i] for i in keep]
        m = len(keep)

    # Phase 2: install the real objective, reduced against the basis.
    allowed[n:] = False
    T[:, n:total] = 0.0
    T[-1, :] = 0.0
    T[-1, :n] = c
    for i in range(m):
        if T[-1, basis[i]] != 0.0:
            T[-1] -= T[-1, basis[i]] * T[i]

    status, p2 = _bland_iterate(T, basis, total, allowed, max_pivots)
    z = np.zeros(n)
    for i in range(m):
        if basis[i] < n:
            z[basis[i]] = T[i, -1]
    if status == "unbounded":
        return OracleSolution(
            z=z, objective=-np.inf, status="unbounded",
            iterations=p1 + p2, basis=sorted(basis),
        )
    z[np.abs(z) < 1e-15] = 0.0
    return OracleSolution(
        z=z,
        objective=float(c @ z),
        status="optimal",
        iterations=p1 + p2,
        basis=sorted(v for v in basis if v < n),
    )


def min_weighted_l1_nonneg(
    inst: ProblemInstance, w: np.ndarray | None = None
) -> OracleSolution:
    """min <w, z> over {z >= 0 : A z = b}; infeasible is a valid outcome."""
    w = inst.weights() if w is None else np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    return solve_lp(inst.A, inst.b, w)


def min_l1_signed(inst: ProblemInstance) -> OracleSolution:
    """min ||z||_1 over {z : A z = b}, via the split z = z+ - z-."""
    n = inst.n
    sol = solve_lp(
        np.hstack([inst.A, -inst.A]), inst.b, np.ones(2 * n)
    )
    if not sol.optimal:
        return OracleSolution(
            z=np.zeros(n), objective=sol.objective, status=sol.status,
            iterations=sol.iterations, basis=[],
        )
    z = sol.z[:n] - sol.z[n:]
    return OracleSolution(
        z=z,
        objective=float(np.sum(np.abs(z))),
        status="optimal",
        iterations=sol.iterations,
        basis=sorted(set(v % n for v in sol.basis)),
    )


def positive_kernel_witness(
    inst: ProblemInstance, tol: float = FEAS_TOL
) -> np.ndarray | None:
    """Strictly positive kernel vector of A, or None when no such vector exists.

    Solves max t  s.t.  A v = 0, v >= t, v <= 1 (entrywise); the kernel meets
    the open positive orthant exactly when the optimum t* is positive.
    """
    m, n = inst.A.shape
    # Variables: [v (n), t (1), slack v-t>=0 (n), slack v<=1 (n)].
    nv = 3 * n + 1
    A_eq = np.zeros((m + 2 * n, nv))
    b_eq = np.zeros(m + 2 * n)
    A_eq[:m, :n] = inst.A
    A_eq[m : m + n, :n] = np.eye(n)
    A_eq[m : m + n, n] = -1.0
    A_eq[m : m + n, n + 1 : 2 * n + 1] = -np.eye(n)
    A_eq[m + n :, :n] = np.eye(n)
    A_eq[m + n :, 2 * n + 1 :] = np.eye(n)
    b_eq[m + n :] = 1.0
    cost = np.zeros(nv)
    cost[n] = -1.0  # maximize t
    sol = solve_lp(A_eq, b_eq, cost)
    if not sol.optimal:
        raise SolverFailureError(f"witness LP ended with status {sol.status}")
    t_star = sol.z[n]
    if t_star <= tol:
        return None
    return sol.z[:n]
