"""Dense two-phase simplex with Bland's rule, in exact rational or float mode.

Problems are small (tens of variables), so a dense tableau is used. The
same pivoting code serves both modes: float mode stores the tableau as a
float64 array and compares against a tolerance, exact mode stores
``Fraction`` objects in an object array and compares against zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

EXACT = "exact"
FLOAT = "float"

FLOAT_TOL = 1e-9

Number = int | float | Fraction


@dataclass(frozen=True)
class LpProblem:
    """Linear program ``min/max c.x`` subject to rows and variable bounds.

    ``senses`` holds one of ``"<="``, ``"=="``, ``">="`` per row. A lower
    bound of ``None`` makes the variable free; an upper bound of ``None``
    leaves it unbounded above.
    """

    objective: Sequence[Number]
    rows: Sequence[Sequence[Number]] = ()
    senses: Sequence[str] = ()
    rhs: Sequence[Number] = ()
    maximize: bool = False
    lower: Sequence[Number | None] | None = None
    upper: Sequence[Number | None] | None = None

    @property
    def num_vars(self) -> int:
        return len(self.objective)

    def check(self) -> None:
        n = self.num_vars
        if not (len(self.rows) == len(self.senses) == len(self.rhs)):
            raise ValueError("rows, senses and rhs must have equal length")
        for row in self.rows:
            if len(row) != n:
                raise ValueError("row length does not match objective length")
        for s in self.senses:
            if s not in ("<=", "==", ">="):
                raise ValueError(f"unknown row sense {s!r}")
        for bounds in (self.lower, self.upper):
            if bounds is not None and len(bounds) != n:
                raise ValueError("bound vector length does not match objective")


@dataclass(frozen=True)
class LpSolution:
    status: str
    x: tuple = ()
    objective: Number | None = None
    duals: tuple = ()
    iterations: int = 0
    mode: str = FLOAT
    basis: tuple = field(default=(), repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    """Tableau ``[A | b]`` with an explicit reduced-cost row."""

    def __init__(self, a, b, basis, exact: bool):
        self.exact = exact
        self.tol = 0 if exact else FLOAT_TOL
        self.a = a
        self.b = b
        self.basis = list(basis)
        self.pivots = 0

    def pivot(self, r: int, j: int, cost_rows) -> None:
        a, b = self.a, self.b
        piv = a[r, j]
        a[r, :] = a[r, :] / piv
        b[r] = b[r] / piv
        col = a[:, j].copy()
        col[r] = 0
        if self.exact:
            for i in range(len(col)):
                if col[i] != 0:
                    a[i, :] = a[i, :] - col[i] * a[r, :]
                    b[i] = b[i] - col[i] * b[r]
        else:
            a -= np.outer(col, a[r, :])
            b -= col * b[r]
            a[:, j] = 0.0
            a[r, j] = 1.0
        for row in cost_rows:
            f = row[0][j]
            if f != 0:
                row[0][:] = row[0][:] - f * a[r, :]
                row[1] = row[1] - f * b[r]
        self.basis[r] = j
        self.pivots += 1

    def run(self, cost, allowed, limit: int) -> str:
        """Minimise with the reduced-cost row ``cost`` = [d, -z]."""
        tol = self.tol
        allowed_idx = np.asarray(allowed, dtype=int)
        while True:
            a, b = self.a, self.b
            d = cost[0]
            enter = -1
            if self.exact:
                for j in allowed:
                    if d[j] < 0:
                        enter = j
                        break
            else:
                hits = np.nonzero(d[allowed_idx] < -tol)[0]
                if len(hits):
                    enter = int(allowed_idx[hits[0]])
            if enter < 0:
                return OPTIMAL
            col = a[:, enter]
            best_r = -1
            best_ratio = None
            for r in range(len(b)):
                if col[r] > tol:
                    ratio = b[r] / col[r]
                    if (
                        best_r < 0
                        or ratio < best_ratio - tol
                        or (abs(ratio - best_ratio) <= tol and self.basis[r] < self.basis[best_r])
                    ):
                        best_r, best_ratio = r, ratio
            if best_r < 0:
                return UNBOUNDED
            self.pivot(best_r, enter, [cost])
            if self.pivots > limit:
                raise RuntimeError("simplex iteration limit exceeded")


def _convert(values, exact: bool):
    if exact:
        return np.array([Fraction(v) for v in values], dtype=object)
    return np.array([float(v) for v in values], dtype=float)


def solve_lp(problem: LpProblem, mode: str = FLOAT) -> LpSolution:
    """Solve ``problem`` by two-phase simplex with Bland's anti-cycling rule.

    In float mode rounding can still make Bland's rule cycle on degenerate
    problems; the solve is then repeated once with a deterministic ``1e-10``
    relative perturbation of the right-hand sides.

    Args:
        problem: the linear program.
        mode: ``"exact"`` for rational pivoting or ``"float"`` for float64.

    Returns:
        An ``LpSolution``. ``duals`` holds one shadow price per row, the
        derivative of the optimal objective with respect to that row's
        right-hand side, in the problem's own objective sense.
    """
    try:
        return _solve(problem, mode)
    except RuntimeError:
        if mode != FLOAT:
            raise
    m = len(problem.rhs)
    nudged = [float(b) + 1e-10 * (1.0 + abs(float(b))) * ((7 * i + 3) % (m + 11)) / (m + 11)
              for i, b in enumerate(problem.rhs)]
    return _solve(replace(problem, rhs=nudged), mode)


def _solve(problem: LpProblem, mode: str) -> LpSolution:
    problem.check()
    if mode not in (EXACT, FLOAT):
        raise ValueError(f"unknown mode {mode!r}")
    exact = mode == EXACT
    tol = 0 if exact else FLOAT_TOL
    zero = Fraction(0) if exact else 0.0
    n = problem.num_vars
    lower = list(problem.lower) if problem.lower is not None else [0] * n
    upper = list(problem.upper) if problem.upper is not None else [None] * n

    # Column map: each original variable becomes lb + z, or z+ - z- if free.
    columns: list[tuple[int, int]] = []
    for j in range(n):
        columns.append((j, 1))
        if lower[j] is None:
            columns.append((j, -1))
    shift = [zero if lower[j] is None else (Fraction(lower[j]) if exact else float(lower[j])) for j in range(n)]

    raw_rows = [list(r) for r in problem.rows]
    senses = list(problem.senses)
    rhs = list(problem.rhs)
    user_rows = len(raw_rows)
    for j in range(n):
        if upper[j] is not None:
            row = [0] * n
            row[j] = 1
            raw_rows.append(row)
            senses.append("<=")
            rhs.append(upper[j])
    m = len(raw_rows)

    nz_cols = len(columns)
    n_slack = sum(1 for s in senses if s != "==")
    width = nz_cols + n_slack + m
    dtype = object if exact else float
    a = np.zeros((m, width), dtype=dtype)
    if exact:
        a[:, :] = Fraction(0)
    b = np.zeros(m, dtype=dtype)
    if exact:
        b[:] = Fraction(0)
    sign = [1] * m
    slack_of_row = [-1] * m
    s_idx = nz_cols
    for r in range(m):
        coeffs = _convert(raw_rows[r], exact)
        val = Fraction(rhs[r]) if exact else float(rhs[r])
        val = val - sum((coeffs[j] * shift[j] for j in range(n)), zero)
        for c_idx, (j, sgn) in enumerate(columns):
            a[r, c_idx] = coeffs[j] * sgn
        if senses[r] != "==":
            a[r, s_idx] = 1 if senses[r] == "<=" else -1
            slack_of_row[r] = s_idx
            s_idx += 1
        if val < 0:
            a[r, :] = -a[r, :]
            val = -val
            sign[r] = -1
        b[r] = val
    art0 = nz_cols + n_slack
    init_cols = []
    basis = []
    need_phase1 = False
    for r in range(m):
        s = slack_of_row[r]
        if s >= 0 and a[r, s] == 1:
            init_cols.append(s)
            basis.append(s)
        else:
            a[r, art0 + r] = 1
            init_cols.append(art0 + r)
            basis.append(art0 + r)
            need_phase1 = True
    # Artificial columns for rows that already have a slack basis are kept as
    # all-zero columns and never enter.
    art_cols = set(range(art0, art0 + m))
    allowed = [j for j in range(width) if j not in art_cols]
    tab = _Tableau(a, b, basis, exact)
    limit = 200 * (m + width) + 1000

    cost_vec = np.zeros(width, dtype=dtype)
    if exact:
        cost_vec[:] = Fraction(0)
    obj = _convert(problem.objective, exact)
    if problem.maximize:
        obj = -obj
    for c_idx, (j, sgn) in enumerate(columns):
        cost_vec[c_idx] = obj[j] * sgn

    if need_phase1:
        d1 = np.zeros(width, dtype=dtype)
        if exact:
            d1[:] = Fraction(0)
        z1 = zero
        for r in range(m):
            if basis[r] >= art0:
                d1[basis[r]] = 1
        for r in range(m):
            if basis[r] >= art0:
                d1 = d1 - a[r, :]
                z1 = z1 - b[r]
        phase1 = [d1, z1]
        art_in = [j for j in range(width) if j < art0]
        tab.run(phase1, art_in, limit)
        infeas = -phase1[1]
        scale = 1.0 if exact else max(1.0, float(np.max(np.abs(b))) if m else 1.0)
        if infeas > tol * scale * 10:
            return LpSolution(INFEASIBLE, iterations=tab.pivots, mode=mode)
        # Drive remaining artificials out of the basis; drop redundant rows.
        keep = list(range(m))
        for r in range(m):
            if tab.basis[r] >= art0:
                row = tab.a[r, :art0]
                j_out = -1
                for j in range(art0):
                    if abs(row[j]) > tol:
                        j_out = j
                        break
                if j_out >= 0:
                    tab.pivot(r, j_out, [phase1])
                else:
                    keep.remove(r)
        if len(keep) < m:
            tab.a = tab.a[keep, :]
            tab.b = tab.b[keep]
            tab.basis = [tab.basis[r] for r in keep]
        row_ids = keep
    else:
        row_ids = list(range(m))

    d = cost_vec.copy()
    z = zero
    for r, j in enumerate(tab.basis):
        if d[j] != 0:
            f = d[j]
            d = d - f * tab.a[r, :]
            z = z - f * tab.b[r]
    phase2 = [d, z]
    status = tab.run(phase2, allowed, limit)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, iterations=tab.pivots, mode=mode)

    zvals = [zero] * width
    for r, j in enumerate(tab.basis):
        zvals[j] = tab.b[r]
    x = []
    for j in range(n):
        val = shift[j]
        for c_idx, (jj, sgn) in enumerate(columns):
            if jj == j:
                val = val + sgn * zvals[c_idx]
        if not exact:
            val = float(val)
        x.append(val)
    obj_val = sum((Fraction(problem.objective[j]) * x[j] if exact else float(problem.objective[j]) * x[j] for j in range(n)), zero)

    # Simplex multipliers pi = c_B B^-1, with B^-1 read from the initial
    # identity columns.
    cb = [(k, cost_vec[j]) for k, j in enumerate(tab.basis) if cost_vec[j] != 0]
    duals = []
    for r in range(user_rows):
        if r not in row_ids:
            duals.append(zero)
            continue
        col = tab.a[:, init_cols[r]]
        pi = sum((c * col[k] for k, c in cb), zero)
        # Cost of the initial column is zero for slacks and artificials.
        val = pi * sign[r]
        if problem.maximize:
            val = -val
        if not exact:
            val = float(val)
            if abs(val) < 1e-13:
                val = 0.0
        duals.append(val)
    return LpSolution(
        OPTIMAL,
        x=tuple(x),
        objective=obj_val,
        duals=tuple(duals),
        iterations=tab.pivots,
        mode=mode,
        basis=tuple(tab.basis),
    )
