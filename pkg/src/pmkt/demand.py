"""Budget sets, utility-maximising demand and cheapest-bundle demand.

Demand is computed in two stages: first the best utility attainable within
the budget and the consumption set, then the cheapest bundle reaching that
utility. Agents whose consumption set is a unit simplex (one row ``sum x <= 1``
plus forbidden cells) use a closed-form path that enumerates the LP's
candidate vertices; every other agent goes through the simplex solver.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .linprog import FLOAT, LpProblem, solve_lp
from .model import TOL, ConstraintSystem, Instance, InstanceError, personalized_prices

AUTO, LP, FAST = "auto", "lp", "fast"


@dataclass(frozen=True)
class BudgetSpec:
    agent: int
    prices: NDArray[np.float64]
    income: float


@dataclass(frozen=True)
class DemandResult:
    bundle: NDArray[np.float64]
    utility: float
    expenditure: float
    satiation: float
    satiated: bool


def income(instance: Instance, prices_row: NDArray[np.float64], agent: int, alpha: float | None = None) -> float:
    """``alpha + (1 - alpha) * p_i . omega_i``; exactly 1 without endowments."""
    omega = instance.endowment_matrix()
    if omega is None:
        return 1.0
    a = float(instance.alpha if alpha is None else alpha)
    return a + (1.0 - a) * float(prices_row @ omega[agent])


def budget(agent: int, p: Sequence[float], system: ConstraintSystem, instance: Instance, alpha: float | None = None) -> BudgetSpec:
    row = personalized_prices(system, p)[agent]
    return BudgetSpec(agent, row, income(instance, row, agent, alpha))


def _bounds(system: ConstraintSystem, i: int) -> list:
    mask = system.forbidden_mask(i)
    return [0.0 if f else None for f in mask]


def is_unit_demand(system: ConstraintSystem, i: int) -> bool:
    """Whether agent ``i``'s consumption set is ``{x >= 0 : sum x <= 1}`` minus forbidden cells."""
    # Systems are immutable, so the answer is memoised on the instance.
    memo = system.__dict__.setdefault("_unit_demand_memo", {})
    if i not in memo:
        memo[i] = _unit_demand(system, i)
    return memo[i]


def _unit_demand(system: ConstraintSystem, i: int) -> bool:
    rows, rhs, mask = system.consumption_set(i)
    if len(rows) == 0:
        return False
    allowed = ~mask
    covered = np.zeros(system.num_objects, dtype=bool)
    for row, b in zip(rows, rhs):
        if abs(b - 1.0) > 1e-12:
            return False
        if not np.all(np.isclose(row[allowed], 1.0) | np.isclose(row[allowed], 0.0)):
            return False
        support = allowed & (row > 0.5)
        if covered.any() and not np.array_equal(support, covered):
            return False
        covered = support
    return bool(np.array_equal(covered, allowed))


def satiation_value(agent: int, system: ConstraintSystem, instance: Instance) -> float:
    """Largest utility over the consumption set.

    Raises:
        InstanceError: if the consumption set is empty.
    """
    v = instance.utility_matrix()[agent]
    if is_unit_demand(system, agent):
        allowed = ~system.forbidden_mask(agent)
        return float(max(0.0, np.max(v[allowed]))) if allowed.any() else 0.0
    rows, rhs, _ = system.consumption_set(agent)
    sol = solve_lp(LpProblem(v.tolist(), rows.tolist(), ["<="] * len(rhs), rhs.tolist(), maximize=True, upper=_bounds(system, agent)), FLOAT)
    if sol.status == "infeasible":
        raise InstanceError(f"consumption set of agent {agent} is empty")
    if not sol.optimal:
        raise InstanceError(f"consumption set of agent {agent} is unbounded")
    return float(sol.objective)


# ---------------------------------------------------------------------------
# Unit-demand closed form


def _fast_candidates(v: NDArray, price: NDArray, m: float, allowed: NDArray) -> tuple[NDArray, NDArray]:
    """Vertices of ``{x >= 0 : sum x <= 1, price . x <= m}`` restricted to allowed cells."""
    idx = np.flatnonzero(allowed)
    L = len(v)
    cands = [np.zeros(L)]
    for l in idx:
        x = np.zeros(L)
        x[l] = 1.0 if price[l] <= m else m / price[l]
        cands.append(x)
    for a_pos in range(len(idx)):
        for b_pos in range(a_pos + 1, len(idx)):
            la, lb = idx[a_pos], idx[b_pos]
            pa, pb = price[la], price[lb]
            if abs(pa - pb) < 1e-15:
                continue
            t = (m - pb) / (pa - pb)
            if 0.0 < t < 1.0:
                x = np.zeros(L)
                x[la], x[lb] = t, 1.0 - t
                cands.append(x)
    arr = np.array(cands)
    return arr, arr @ v


def _fast_cheapest(v: NDArray, price: NDArray, target: float, allowed: NDArray) -> NDArray:
    """Cheapest point of ``{x >= 0 : sum x <= 1}`` with utility at least ``target``."""
    L = len(v)
    if target <= 0:
        return np.zeros(L)
    idx = np.flatnonzero(allowed)
    best, best_cost = None, np.inf
    for l in idx:
        if v[l] >= target - 1e-15 and v[l] > 0:
            x = np.zeros(L)
            x[l] = min(1.0, target / v[l])
            cost = price @ x
            if cost < best_cost - 1e-14:
                best, best_cost = x, cost
    for a_pos in range(len(idx)):
        for b_pos in range(a_pos + 1, len(idx)):
            la, lb = idx[a_pos], idx[b_pos]
            va, vb = v[la], v[lb]
            if abs(va - vb) < 1e-15:
                continue
            t = (target - vb) / (va - vb)
            if 0.0 < t < 1.0:
                x = np.zeros(L)
                x[la], x[lb] = t, 1.0 - t
                cost = price @ x
                if cost < best_cost - 1e-14:
                    best, best_cost = x, cost
    if best is None:
        raise InstanceError("no bundle reaches the requested utility")
    return best


def _fast_demand(v: NDArray, spec: BudgetSpec, allowed: NDArray) -> DemandResult:
    bliss = float(max(0.0, np.max(v[allowed]))) if allowed.any() else 0.0
    cands, utils = _fast_candidates(v, spec.prices, spec.income, allowed)
    best = float(np.max(utils))
    x = _fast_cheapest(v, spec.prices, best - TOL.utility * 1e-3, allowed)
    # Snap utility back to the stage-one value.
    u = float(v @ x)
    return DemandResult(x, u, float(spec.prices @ x), bliss, u >= bliss - TOL.utility)


# ---------------------------------------------------------------------------
# LP path


def _lp_demand(v: NDArray, spec: BudgetSpec, system: ConstraintSystem, bliss: float) -> DemandResult:
    i = spec.agent
    rows, rhs, _ = system.consumption_set(i)
    base_rows = rows.tolist()
    base_rhs = rhs.tolist()
    upper = _bounds(system, i)
    price = spec.prices.tolist()
    stage1 = solve_lp(
        LpProblem(v.tolist(), base_rows + [price], ["<="] * (len(base_rhs) + 1), base_rhs + [spec.income], maximize=True, upper=upper),
        FLOAT,
    )
    if not stage1.optimal:
        raise InstanceError(f"demand problem of agent {i} is {stage1.status}")
    best = float(stage1.objective)
    target = best - TOL.utility * 1e-3
    stage2 = solve_lp(
        LpProblem(
            price,
            base_rows + [price, v.tolist()],
            ["<="] * (len(base_rhs) + 1) + [">="],
            base_rhs + [spec.income, target],
            upper=upper,
        ),
        FLOAT,
    )
    x = np.maximum(np.array(stage2.x if stage2.optimal else stage1.x, dtype=float), 0.0)
    u = float(v @ x)
    return DemandResult(x, u, float(spec.prices @ x), bliss, u >= bliss - TOL.utility)


def cheapest_demand(instance: Instance, system: ConstraintSystem, spec: BudgetSpec, method: str = AUTO) -> DemandResult:
    """Cheapest bundle among the utility maximisers within budget.

    ``method`` selects the closed-form unit-demand path (``"fast"``), the
    simplex path (``"lp"``) or picks automatically.
    """
    i = spec.agent
    v = instance.utility_matrix()[i]
    unit = is_unit_demand(system, i)
    if method == FAST and not unit:
        raise ValueError(f"agent {i} does not have a unit-demand consumption set")
    if method in (AUTO, FAST) and unit:
        return _fast_demand(v, spec, ~system.forbidden_mask(i))
    return _lp_demand(v, spec, system, satiation_value(i, system, instance))


def all_demands(
    instance: Instance, system: ConstraintSystem, p: Sequence[float], alpha: float | None = None,
    method: str = AUTO, threads: int = 1,
) -> list[DemandResult]:
    """Demands of every agent at prices ``p``."""
    pers = personalized_prices(system, p)
    specs = [BudgetSpec(i, pers[i], income(instance, pers[i], i, alpha)) for i in range(instance.num_agents)]
    if threads > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda s: cheapest_demand(instance, system, s, method), specs))
    return [cheapest_demand(instance, system, s, method) for s in specs]


# ---------------------------------------------------------------------------
# Vectorised unit-demand demand over many price points


@lru_cache(maxsize=64)
def _pair_index(L: int) -> tuple[NDArray, NDArray]:
    a, b = np.triu_indices(L, k=1)
    return a, b


def unit_demand_batch(v: NDArray, prices: NDArray, incomes: NDArray, allowed: NDArray | None = None) -> NDArray:
    """Cheapest demand of one unit-demand agent at many (price, income) points.

    Args:
        v: utilities, shape (L,).
        prices: personalised prices, shape (P, L).
        incomes: shape (P,).
        allowed: boolean mask of non-forbidden objects.

    Returns:
        Bundles, shape (P, L).
    """
    P, L = prices.shape
    if allowed is None:
        allowed = np.ones(L, dtype=bool)
    v = np.where(allowed, v, 0.0)
    m = incomes[:, None]
    # Stage one: candidate vertices of the budget set.
    safe = np.where(prices > 0, prices, 1.0)
    single = np.where(prices <= m, 1.0, m / safe)
    single = np.where(allowed[None, :], single, 0.0)
    best = np.maximum(0.0, np.max(single * v[None, :], axis=1))
    ia, ib = _pair_index(L)
    if len(ia):
        pa, pb = prices[:, ia], prices[:, ib]
        diff = pa - pb
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (m - pb) / diff
            ok = (np.abs(diff) > 1e-15) & (t > 0) & (t < 1) & allowed[ia][None, :] & allowed[ib][None, :]
            util = np.where(ok, t * v[ia] + (1 - t) * v[ib], -np.inf)
        best = np.maximum(best, np.max(util, axis=1))
    target = best - TOL.utility * 1e-3
    # Stage two: cheapest point reaching the target utility.
    out = np.zeros((P, L))
    cost = np.full(P, np.inf)
    for l in range(L):
        if not allowed[l] or v[l] <= 0:
            continue
        amount = np.minimum(1.0, np.maximum(target, 0.0) / v[l])
        c = prices[:, l] * amount
        feasible = v[l] >= target - 1e-15
        better = feasible & (c < cost - 1e-14)
        cost = np.where(better, c, cost)
        out[better] = 0.0
        out[better, l] = amount[better]
    for a, b in zip(ia, ib):
        if not (allowed[a] and allowed[b]) or abs(v[a] - v[b]) < 1e-15:
            continue
        t = (target - v[b]) / (v[a] - v[b])
        ok = (t > 0) & (t < 1)
        c = t * prices[:, a] + (1 - t) * prices[:, b]
        better = ok & (c < cost - 1e-14)
        cost = np.where(better, c, cost)
        out[better] = 0.0
        out[better, a] = t[better]
        out[better, b] = 1 - t[better]
    out[target <= 0] = 0.0
    return out
