"""Dense-basis revised simplex for standard-form LPs.

min c'x  s.t.  Ax = b, x >= 0.

Two-phase method with explicit basis inverse, Dantzig pricing, a Bland-rule
fallback against cycling, and Farkas certificates on infeasibility. The
constraint matrix may be a numpy array or a scipy.sparse matrix (the basis
stays small and dense either way); redundant equality rows are detected in
phase 1 (their artificial never leaves the basis) and reported, not solved
against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class NumericalBreakdown(RuntimeError):
    pass


@dataclass
class DenseLp:
    costs: np.ndarray
    a: object  # (R, N) ndarray or scipy.sparse matrix, equality rows
    b: np.ndarray


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    value: float | None = None
    farkas: np.ndarray | None = None  # y with A'y <= tol, b'y > 0
    ray: np.ndarray | None = None
    redundant_rows: list = field(default_factory=list)
    iterations: int = 0


_REFACTOR_EVERY = 150
_BLAND_AFTER = 40  # degenerate pivots before switching rules


class _Tableau:
    def __init__(self, a, b, tol):
        self.sparse = sp.issparse(a)
        self.a = a.tocsc() if self.sparse else np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float).copy()
        self.r, self.n = self.a.shape
        # normalize to b >= 0 so phase-1 artificials form an identity basis
        self.row_sign = np.where(self.b < 0, -1.0, 1.0)
        self.b *= self.row_sign
        self.tol = tol
        self.basis = np.arange(self.n, self.n + self.r)  # artificials
        self.binv = np.eye(self.r)
        self.xb = self.b.copy()
        self.pivots = 0

    def column(self, j):
        if j >= self.n:  # artificial
            e = np.zeros(self.r)
            e[j - self.n] = 1.0
            return e
        if self.sparse:
            col = np.asarray(self.a[:, [j]].todense()).ravel()
        else:
            col = self.a[:, j].copy()
        return col * self.row_sign

    def at_y(self, y):
        """A' y for the original columns, respecting the row sign flips."""
        ys = y * self.row_sign
        if self.sparse:
            return np.asarray(self.a.T @ ys).ravel()
        return self.a.T @ ys

    def refactor(self):
        bmat = np.column_stack([self.column(j) for j in self.basis])
        try:
            self.binv = np.linalg.inv(bmat)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("singular basis on refactor") from exc
        self.xb = self.binv @ self.b

    def pivot(self, enter, leave_pos, u):
        piv = u[leave_pos]
        if abs(piv) < 1e-12:
            raise NumericalBreakdown("tiny pivot")
        theta = self.xb[leave_pos] / piv
        self.xb -= theta * u
        self.xb[leave_pos] = theta
        factor = u / piv
        factor[leave_pos] = 1.0 - 1.0 / piv
        self.binv -= np.outer(factor, self.binv[leave_pos])
        self.basis[leave_pos] = enter
        self.pivots += 1
        if self.pivots % _REFACTOR_EVERY == 0:
            self.refactor()
        else:
            np.clip(self.xb, 0.0, None, out=self.xb)


def _run_phase(t: _Tableau, cost, allow, max_iters, tol):
    """Minimize cost'x over the current basis. ``cost`` covers columns
    0..n+r-1; ``allow[j]`` masks columns eligible to enter. Returns
    "optimal" or "unbounded" (entering column with no blocking row)."""
    degen_streak = 0
    bland = False
    it = 0
    while True:
        it += 1
        if it > max_iters:
            raise NumericalBreakdown(f"simplex exceeded {max_iters} iterations")
        cb = cost[t.basis]
        y = t.binv.T @ cb
        reduced = cost[: t.n] - t.at_y(y)
        reduced[~allow[: t.n]] = np.inf
        basic_mask = np.zeros(t.n, dtype=bool)
        basic_mask[t.basis[t.basis < t.n]] = True
        reduced[basic_mask] = np.inf
        if bland:
            cand = np.flatnonzero(reduced < -tol)
            if cand.size == 0:
                return "optimal", it
            enter = int(cand[0])
        else:
            enter = int(np.argmin(reduced))
            if reduced[enter] >= -tol:
                return "optimal", it
        u = t.binv @ t.column(enter)
        pos = u > 1e-10
        if not np.any(pos):
            return "unbounded", it, enter, u
        ratios = np.full(t.r, np.inf)
        ratios[pos] = t.xb[pos] / u[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-9 * (1.0 + best))
        if bland:
            leave_pos = int(ties[np.argmin(t.basis[ties])])
        else:
            leave_pos = int(ties[np.argmax(np.abs(u[ties]))])
        if best <= tol:
            degen_streak += 1
            if degen_streak > _BLAND_AFTER:
                bland = True
        else:
            degen_streak = 0
            bland = False
        t.pivot(enter, leave_pos, u)


def solve_lp(lp: DenseLp, tol: float = 1e-9, max_iters: int | None = None) -> LpResult:
    """Two-phase revised simplex. See module docstring for the contract."""
    c = np.asarray(lp.costs, dtype=float)
    t = _Tableau(lp.a, lp.b, tol)
    if max_iters is None:
        max_iters = 2000 + 40 * (t.r + min(t.n, 4000))
    scale_b = 1.0 + float(np.abs(t.b).max(initial=0.0))
    feas_tol = tol * scale_b

    # phase 1: minimize the artificial mass
    cost1 = np.concatenate([np.zeros(t.n), np.ones(t.r)])
    allow = np.ones(t.n + t.r, dtype=bool)
    out = _run_phase(t, cost1, allow, max_iters, tol)
    if out[0] != "optimal":
        raise NumericalBreakdown("phase 1 unbounded; inconsistent state")
    iters = out[1]
    t.refactor()
    art_level = float(t.xb[t.basis >= t.n].sum()) if np.any(t.basis >= t.n) else 0.0
    if art_level > feas_tol:
        y1 = t.binv.T @ cost1[t.basis]
        farkas = y1 * t.row_sign  # certificate in original row orientation
        return LpResult(status="infeasible", farkas=farkas, iterations=iters)

    # drive artificials out of the basis; rows that cannot pivot are redundant
    redundant = []
    for pos in range(t.r):
        if t.basis[pos] < t.n:
            continue
        row = t.binv[pos]
        piv_col = -1
        if t.sparse:
            vals = np.asarray((t.a.T @ (row * t.row_sign))).ravel()
        else:
            vals = t.a.T @ (row * t.row_sign)
        basic_mask = np.zeros(t.n, dtype=bool)
        basic_mask[t.basis[t.basis < t.n]] = True
        vals_abs = np.abs(vals)
        vals_abs[basic_mask] = 0.0
        j = int(np.argmax(vals_abs))
        if vals_abs[j] > 1e-9:
            piv_col = j
        if piv_col >= 0:
            u = t.binv @ t.column(piv_col)
            t.pivot(piv_col, pos, u)
        else:
            redundant.append(pos)
    t.refactor()

    # phase 2 on the original columns (artificials pinned at zero)
    cost2 = np.concatenate([c, np.zeros(t.r)])
    allow = np.concatenate([np.ones(t.n, dtype=bool), np.zeros(t.r, dtype=bool)])
    out = _run_phase(t, cost2, allow, max_iters, tol)
    iters += out[1]
    if out[0] == "unbounded":
        _, _, enter, u = out
        ray = np.zeros(t.n)
        ray[enter] = 1.0
        bsel = t.basis < t.n
        ray[t.basis[bsel]] = -u[bsel]
        return LpResult(status="unbounded", ray=ray, iterations=iters)

    t.refactor()
    x = np.zeros(t.n)
    bsel = t.basis < t.n
    x[t.basis[bsel]] = np.clip(t.xb[bsel], 0.0, None)
    y = (t.binv.T @ cost2[t.basis]) * t.row_sign
    value = float(c @ x)
    return LpResult(
        status="optimal", x=x, duals=y, value=value,
        redundant_rows=redundant, iterations=iters,
    )


def enumerate_vertices(lp: DenseLp, tol: float = 1e-9):
    """Brute-force all basic feasible solutions (test harness for small LPs)."""
    from itertools import combinations

    a = lp.a.toarray() if sp.issparse(lp.a) else np.asarray(lp.a, dtype=float)
    b = np.asarray(lp.b, dtype=float)
    r, n = a.shape
    rank = np.linalg.matrix_rank(a, tol=1e-10)
    best = None
    for cols in combinations(range(n), rank):
        sub = a[:, cols]
        sol, res, rk, _ = np.linalg.lstsq(sub, b, rcond=None)
        if rk < rank:
            continue
        if np.linalg.norm(sub @ sol - b) > tol * (1 + np.abs(b).max(initial=0)):
            continue
        if np.any(sol < -tol):
            continue
        x = np.zeros(n)
        x[list(cols)] = np.clip(sol, 0, None)
        val = float(lp.costs @ x)
        if best is None or val < best[0] - 1e-12:
            best = (val, x)
    return best
