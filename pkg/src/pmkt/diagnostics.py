"""Normative checks on assignments: feasibility, efficiency, envy and individual rationality."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray

from .lcs_preprocess import VPolytope
from .linprog import FLOAT, LpProblem, solve_lp
from .model import TOL, ConstraintSystem, Instance, equal_type_partition, personalized_prices

VERTEX, STRUCTURED = "vertex", "structured"


@dataclass(frozen=True)
class MembershipResult:
    member: bool
    mode: str
    residual: float
    weights: tuple[float, ...] = ()
    violation: float = 0.0
    headroom: float = 0.0


def _as_array(x: Any) -> NDArray[np.float64]:
    return np.array([[float(v) for v in row] for row in x], dtype=float)


def max_violation(x: NDArray[np.float64], system: ConstraintSystem) -> float:
    """Largest excess ``a.x - b`` over all inequalities, negativity included."""
    worst = max(0.0, float(-np.min(x))) if x.size else 0.0
    for c in system.all_constraints():
        worst = max(worst, float(np.sum(c.dense * x)) - float(c.b))
    return worst


def headroom(x: NDArray[np.float64], system: ConstraintSystem) -> float:
    """Total amount by which coordinates can be raised while staying in the inequalities."""
    n, m = system.shape
    cons = [c for c in system.all_constraints() if not c.is_trivial]
    rows = [c.dense.ravel().tolist() for c in cons]
    rhs = [max(0.0, float(c.b) - float(np.sum(c.dense * x))) for c in cons]
    sol = solve_lp(LpProblem([1.0] * (n * m), rows, ["<="] * len(rows), rhs, maximize=True, upper=[1.0] * (n * m)), FLOAT)
    return float(sol.objective) if sol.optimal else 0.0


def vertex_membership(x: NDArray[np.float64], vertices: NDArray[np.float64]) -> MembershipResult:
    """Convex weights reproducing ``x`` from the vertices, with an L1 slack."""
    k = len(vertices)
    flat = vertices.reshape(k, -1)
    d = flat.shape[1]
    target = x.ravel()
    # Variables: weights, positive slack, negative slack.
    obj = [0.0] * k + [1.0] * (2 * d)
    rows = []
    for j in range(d):
        row = flat[:, j].tolist() + [0.0] * (2 * d)
        row[k + j] = 1.0
        row[k + d + j] = -1.0
        rows.append(row)
    rows.append([1.0] * k + [0.0] * (2 * d))
    sol = solve_lp(LpProblem(obj, rows, ["=="] * (d + 1), target.tolist() + [1.0]), FLOAT)
    if not sol.optimal:
        return MembershipResult(False, VERTEX, float("inf"))
    resid = float(sol.objective)
    weights = tuple(float(w) for w in sol.x[:k])
    return MembershipResult(resid <= TOL.feasibility, VERTEX, resid, weights)


def membership(x: Any, feasible: ConstraintSystem | VPolytope) -> MembershipResult:
    """Whether ``x`` lies in the feasible set.

    Vertex mode (a polytope, or a system that lists its vertices) solves for
    convex weights. Structured mode checks every inequality and then that no
    coordinate can still be raised, unless the system is downward closed.
    """
    arr = _as_array(x)
    if isinstance(feasible, VPolytope):
        verts = np.array([[[float(v) for v in row] for row in vert] for vert in feasible.vertices])
        return vertex_membership(arr, verts)
    if feasible.vertex_array is not None:
        return vertex_membership(arr, feasible.vertex_array)
    viol = max_violation(arr, feasible)
    if viol > TOL.feasibility:
        return MembershipResult(False, STRUCTURED, viol, violation=viol)
    room = 0.0 if feasible.downward_closed else headroom(arr, feasible)
    return MembershipResult(room <= TOL.feasibility, STRUCTURED, max(viol, room), violation=viol, headroom=room)


# ---------------------------------------------------------------------------
# Pareto efficiency


@dataclass(frozen=True)
class ParetoResult:
    efficient: bool
    gain: float
    dominating: NDArray[np.float64] | None = field(default=None, repr=False)
    weak: bool = False


def pareto_test(x: Any, instance: Instance, system: ConstraintSystem, weak: bool = False) -> ParetoResult:
    """Search for a feasible assignment every agent weakly prefers.

    The default maximises the total utility gain; ``weak=True`` maximises the
    smallest individual gain instead. Without listed vertices the search runs
    over the inequality system, which gives the same answer for nonnegative
    utilities because the feasible set dominates its lower contour set.
    """
    arr = _as_array(x)
    v = instance.utility_matrix()
    n, m = arr.shape
    base = np.sum(v * arr, axis=1)
    verts = system.vertex_array
    if verts is not None:
        k = len(verts)
        per_agent = np.einsum("kil,il->ki", verts, v)
        # Variables: weights, then t for the weak variant.
        cols = k + 1
        rows = [[1.0] * k + [0.0]]
        senses = ["=="]
        rhs = [1.0]
        for i in range(n):
            row = per_agent[:, i].tolist() + [-1.0 if weak else 0.0]
            rows.append(row)
            senses.append(">=")
            rhs.append(float(base[i]))
        obj = [0.0] * k + [1.0] if weak else per_agent.sum(axis=1).tolist() + [0.0]
        sol = solve_lp(LpProblem(obj, rows, senses, rhs, maximize=True, lower=[0.0] * k + [None], upper=[None] * k + [1.0]), FLOAT)
        if not sol.optimal:
            return ParetoResult(False, float("nan"), weak=weak)
        lam = np.array(sol.x[:k])
        y = np.tensordot(lam, verts, axes=1)
    else:
        cons = [c for c in system.all_constraints() if not c.is_trivial]
        cols = n * m + 1
        rows = [c.dense.ravel().tolist() + [0.0] for c in cons]
        senses = ["<="] * len(rows)
        rhs = [float(c.b) for c in cons]
        for i in range(n):
            row = [0.0] * cols
            row[i * m : (i + 1) * m] = v[i].tolist()
            row[-1] = -1.0 if weak else 0.0
            rows.append(row)
            senses.append(">=")
            rhs.append(float(base[i]))
        obj = [0.0] * (n * m) + [1.0] if weak else v.ravel().tolist() + [0.0]
        sol = solve_lp(LpProblem(obj, rows, senses, rhs, maximize=True, lower=[0.0] * (n * m) + [None], upper=[None] * (n * m) + [1.0]), FLOAT)
        if not sol.optimal:
            return ParetoResult(False, float("nan"), weak=weak)
        y = np.array(sol.x[: n * m]).reshape(n, m)
    gain = float(sol.x[-1]) if weak else float(np.sum(v * y) - base.sum())
    efficient = gain <= TOL.pareto
    return ParetoResult(efficient, gain, None if efficient else y, weak)


# ---------------------------------------------------------------------------
# Envy


@dataclass(frozen=True)
class EnvyReport:
    pairs: tuple[tuple[int, int], ...]
    equal_type_pairs: tuple[tuple[int, int], ...]

    @property
    def equal_type_free(self) -> bool:
        return not self.equal_type_pairs


def envy_test(x: Any, instance: Instance, system: ConstraintSystem, tol: float = TOL.utility) -> EnvyReport:
    """All envy pairs ``(i, j)`` with ``u_i(x_j) > u_i(x_i) + tol``, equal-type ones flagged."""
    arr = _as_array(x)
    v = instance.utility_matrix()
    cross = v @ arr.T
    own = np.diag(cross)
    kind = {}
    for k, group in enumerate(equal_type_partition(instance, system)):
        for i in group:
            kind[i] = k
    pairs, same = [], []
    n = arr.shape[0]
    for i in range(n):
        for j in range(n):
            if i != j and cross[i, j] > own[i] + tol:
                pairs.append((i, j))
                if kind[i] == kind[j]:
                    same.append((i, j))
    return EnvyReport(tuple(pairs), tuple(same))


def in_consumption_set(bundle: NDArray[np.float64], system: ConstraintSystem, i: int, tol: float = TOL.feasibility) -> bool:
    rows, rhs, mask = system.consumption_set(i)
    if np.any(bundle < -tol) or np.any(bundle[mask] > tol):
        return False
    return bool(np.all(rows @ bundle <= rhs + tol)) if len(rows) else True


@dataclass(frozen=True)
class EnvyValueReport:
    checked: tuple[tuple[int, int], ...]
    violations: tuple[dict, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def envy_value_check(x: Any, p: Sequence[float], instance: Instance, system: ConstraintSystem) -> EnvyValueReport:
    """If ``i`` envies ``j`` then ``j``'s bundle and endowment cost more at ``i``'s prices.

    Only pairs facing the same personalised prices, where ``x_j`` is in ``i``'s
    consumption set, are checked; for other pairs the comparison is not
    implied by budget optimality. A violation means the input is not an
    equilibrium.
    """
    arr = _as_array(x)
    pers = personalized_prices(system, p)
    omega = instance.endowment_matrix()
    checked, bad = [], []
    for i, j in envy_test(arr, instance, system).pairs:
        if not np.allclose(pers[i], pers[j], atol=1e-12) or not in_consumption_set(arr[j], system, i):
            continue
        checked.append((i, j))
        bundle_gap = float(pers[i] @ (arr[j] - arr[i]))
        endow_gap = float(pers[i] @ (omega[j] - omega[i])) if omega is not None else None
        if bundle_gap <= -TOL.utility or (endow_gap is not None and endow_gap <= -TOL.utility):
            bad.append({"envier": i, "envied": j, "bundle_value_gap": bundle_gap, "endowment_value_gap": endow_gap,
                        "note": "input not an equilibrium"})
    return EnvyValueReport(tuple(checked), tuple(bad))


# ---------------------------------------------------------------------------
# Individual rationality


@dataclass(frozen=True)
class IrReport:
    walrasian_gaps: tuple[float, ...]
    plain_gaps: tuple[float, ...]

    @property
    def max_gap(self) -> float:
        return max(self.walrasian_gaps)


def ir_test(x: Any, instance: Instance, system: ConstraintSystem, p: Sequence[float]) -> IrReport:
    """Per-agent gap between the best bundle worth at most the endowment and ``x_i``.

    Raises:
        ValueError: if the instance has no endowments.
    """
    omega = instance.endowment_matrix()
    if omega is None:
        raise ValueError("individual rationality needs endowments")
    arr = _as_array(x)
    v = instance.utility_matrix()
    pers = personalized_prices(system, p)
    gaps, plain = [], []
    for i in range(instance.num_agents):
        rows, rhs, mask = system.consumption_set(i)
        upper = [0.0 if f else None for f in mask]
        sol = solve_lp(
            LpProblem(v[i].tolist(), rows.tolist() + [pers[i].tolist()], ["<="] * (len(rhs) + 1),
                      rhs.tolist() + [float(pers[i] @ omega[i])], maximize=True, upper=upper),
            FLOAT,
        )
        own = float(v[i] @ arr[i])
        gaps.append(float(sol.objective) - own)
        plain.append(float(v[i] @ omega[i]) - own)
    return IrReport(tuple(gaps), tuple(plain))
