"""Equilibrium search, certificate recomputation and the grid oracle.

Equilibrium gap
---------------
``grid_oracle`` and the solver share one residual function of a price vector
``p`` and an assignment ``x``::

    gap = sum_i demand_gap_i**2
        + sum_c max(0, a_c.x - b_c)**2
        + sum_c (p_c / m * max(0, b_c - a_c.x))**2

where the sums over ``c`` run over the priced constraints and ``m`` is the
mean income at ``p``. Dividing by ``m`` keeps the gap from vanishing as all
prices shrink together when incomes come only from endowments. When ``x`` is the
demand selection at ``p`` the demand gaps vanish, so the gap measures excess
demand and complementary slackness only.

Search
------
1. Damped price adjustment ``p <- clamp(p + step * z(p), 0, ceiling)`` from
   zero, supply-proportional and random starts, stopping early on stalls.
2. Weight-space refinement seeded by the adjustment result: for agent
   weights ``theta`` the utilitarian program ``max sum_i theta_i v_i.x_i``
   over the feasible set has optimal assignments and optimal constraint
   duals. Any such pair already satisfies complementary slackness, and each
   agent's bundle is a cheapest utility maximiser for the amount it spends.
   Within the two optimal faces an assignment and prices are chosen to match
   spending to income, then ``theta`` is rescaled agent by agent.
3. Nelder-Mead on the gap over the price box as a last resort.

Every returned certificate is recomputed by ``verify`` from scratch.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize

from .demand import LP, all_demands, income, is_unit_demand, satiation_value, unit_demand_batch
from .diagnostics import (
    MembershipResult,
    envy_test,
    envy_value_check,
    in_consumption_set,
    membership,
    pareto_test,
)
from .linprog import FLOAT, LpProblem, solve_lp
from .model import TOL, ConstraintSystem, Instance, InstanceError, personalized_prices

GRID_LIMIT = 3


@dataclass(frozen=True)
class SolverConfig:
    alpha: float | None = None
    max_iters: int = 50_000
    restarts: int = 32
    tol: float = 1e-6
    step: float = 0.2
    step_floor: float = 1e-4
    seed: int = 0
    grid_resolution: float = 0.05
    jitter: float = 1e-8
    stall: int = 80
    weight_iters: int = 60
    search_iters: int = 400
    deep_starts: int = 4
    probe_every: int = 50
    threads: int | None = None

    def __post_init__(self) -> None:
        if self.tol <= 0 or self.step <= 0 or self.step_floor <= 0:
            raise ValueError("tolerances and steps must be positive")
        if self.alpha is not None and not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.restarts < 1 or self.max_iters < 1:
            raise ValueError("restarts and max_iters must be at least 1")

    def worker_count(self) -> int:
        if self.threads is not None:
            return max(1, self.threads)
        env = os.environ.get("PMKT_THREADS")
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                pass
        return 1

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out.pop("threads")
        return out


def _alpha(instance: Instance, alpha: float | None) -> float:
    return float(instance.alpha if alpha is None else alpha)


# ---------------------------------------------------------------------------
# Price space


def price_ceiling(system: ConstraintSystem, instance: Instance) -> float:
    """Upper end of the price box.

    With endowments: ``2N / min_c sum a_c * omega``. Otherwise
    ``N * L / b_min + 1`` with ``b_min`` the smallest priced right-hand side.

    Raises:
        InstanceError: if some priced constraint gets no endowment weight.
    """
    n, m = system.shape
    if not system.priced:
        return 0.0
    omega = instance.endowment_matrix()
    if omega is not None:
        weights = [float(np.sum(c.dense * omega)) for c in system.priced]
        if min(weights) <= 0:
            raise InstanceError(
                "every priced constraint needs positive endowment weight on its support"
            )
        return 2.0 * n / min(weights)
    return n * m / float(min(c.b for c in system.priced)) + 1.0


def excess(system: ConstraintSystem, x: NDArray[np.float64]) -> NDArray[np.float64]:
    """``a_c.x - b_c`` for every priced constraint."""
    if not system.priced:
        return np.zeros(0)
    return np.tensordot(system.priced_tensor, x, axes=([1, 2], [0, 1])) - system.priced_rhs


def income_scale(instance: Instance, system: ConstraintSystem, p: NDArray[np.float64], alpha: float | None = None) -> float:
    """Mean agent income at ``p``; 1 without endowments."""
    omega = instance.endowment_matrix()
    if omega is None or not system.priced:
        return 1.0
    a = _alpha(instance, alpha)
    value = float(np.mean(np.einsum("kil,il->k", system.priced_tensor, omega) @ p))
    return a + (1.0 - a) * value


def equilibrium_gap(
    p: NDArray[np.float64], z: NDArray[np.float64], demand_gaps: NDArray | None = None, scale: float = 1.0,
) -> float:
    """The shared residual; ``z`` is the excess vector at the assignment.

    Squared overdemand plus squared slackness products ``p_c * slack_c``,
    the latter measured in units of ``scale`` (the mean income), so the gap
    does not vanish by shrinking all prices when incomes shrink with them.
    """
    unit = scale if scale > 0 else 1.0
    g = float(np.sum(np.maximum(z, 0.0) ** 2) + np.sum((p / unit * np.maximum(-z, 0.0)) ** 2))
    if demand_gaps is not None:
        g += float(np.sum(np.asarray(demand_gaps) ** 2))
    return g


@dataclass(frozen=True)
class PhiResult:
    prices: NDArray[np.float64]
    excess: NDArray[np.float64]
    assignment: NDArray[np.float64]
    gap: float


def phi_step(
    p: Sequence[float], system: ConstraintSystem, instance: Instance, config: SolverConfig | None = None,
    step: float = 1.0, ceiling: float | None = None,
) -> PhiResult:
    """One price update ``clamp(p + step * z(p), 0, ceiling)`` at the demand selection."""
    config = config or SolverConfig()
    prices = np.asarray(p, dtype=float)
    top = price_ceiling(system, instance) if ceiling is None else ceiling
    demands = all_demands(instance, system, prices, config.alpha, threads=1)
    x = np.array([d.bundle for d in demands])
    z = excess(system, x)
    new = np.clip(prices + step * z, 0.0, top)
    return PhiResult(new, z, x, equilibrium_gap(prices, z, scale=income_scale(instance, system, prices, config.alpha)))


# ---------------------------------------------------------------------------
# Certificates


@dataclass
class EquilibriumCertificate:
    prices: NDArray[np.float64]
    assignment: NDArray[np.float64]
    alpha: float
    price_ceiling: float
    slack: tuple[float, ...]
    cs_residual: float
    residuals: dict[str, float]
    agents: list[dict[str, Any]]
    membership: MembershipResult
    checks: dict[str, Any] = field(default_factory=dict)
    tol: float = 1e-6
    converged: bool = False
    iterations: int = 0
    method: str = "verify"
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0

    @property
    def passed(self) -> bool:
        """Every equilibrium condition holds within tolerance."""
        return self.max_residual <= self.tol and self.membership.member

    def to_dict(self, instance: Instance | None = None, system: ConstraintSystem | None = None) -> dict[str, Any]:
        out: dict[str, Any] = {
            "alpha": _clean(self.alpha),
            "converged": bool(self.converged),
            "passed": bool(self.passed),
            "method": self.method,
            "iterations": int(self.iterations),
            "prices": [_clean(v) for v in self.prices],
            "price_ceiling": _clean(self.price_ceiling),
            "assignment": [[_clean(v) for v in row] for row in self.assignment],
            "slack": [_clean(v) for v in self.slack],
            "complementary_slackness": _clean(self.cs_residual),
            "residuals": {k: _clean(v) for k, v in sorted(self.residuals.items())},
            "tolerance": self.tol,
            "agents": [{k: _clean(v) for k, v in a.items()} for a in self.agents],
            "membership": {
                "member": bool(self.membership.member),
                "mode": self.membership.mode,
                "residual": _clean(self.membership.residual),
            },
            "checks": _clean(self.checks),
            "config": _clean(self.config),
        }
        if instance is not None:
            out["agent_ids"] = list(instance.agents)
            out["object_ids"] = list(instance.objects)
            if "utility_scales" in instance.metadata:
                out["utility_scales"] = [str(s) for s in instance.metadata["utility_scales"]]
        if system is not None:
            out["priced_constraints"] = [
                {"support": sorted([list(c) for c in con.support]), "b": str(con.b)} for con in system.priced
            ]
        return out


def _clean(value: Any) -> Any:
    """Round floats to 12 significant digits so certificates are stable text."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in sorted(value.items(), key=lambda kv: str(kv[0]))}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not np.isfinite(v):
            return str(v)
        if abs(v) < 1e-14:
            return 0.0
        return float(f"{v:.12g}")
    return value


def _agent_report(
    i: int, instance: Instance, system: ConstraintSystem, pers: NDArray, x: NDArray, alpha: float
) -> dict[str, Any]:
    v = instance.utility_matrix()[i]
    rows, rhs, mask = system.consumption_set(i)
    upper = [0.0 if f else None for f in mask]
    m = income(instance, pers[i], i, alpha)
    bundle = x[i]
    u = float(v @ bundle)
    spend = float(pers[i] @ bundle)
    best = solve_lp(
        LpProblem(v.tolist(), rows.tolist() + [pers[i].tolist()], ["<="] * (len(rhs) + 1), rhs.tolist() + [m],
                  maximize=True, upper=upper),
        FLOAT,
    )
    cheapest = solve_lp(
        LpProblem(pers[i].tolist(), rows.tolist() + [v.tolist()], ["<="] * len(rhs) + [">="], rhs.tolist() + [u],
                  upper=upper),
        FLOAT,
    )
    bliss = satiation_value(i, system, instance)
    best_u = float(best.objective) if best.optimal else float("nan")
    cheap = float(cheapest.objective) if cheapest.optimal else spend
    violation = 0.0
    if len(rows):
        violation = max(0.0, float(np.max(rows @ bundle - rhs)))
    violation = max(violation, float(np.max(-bundle)), float(np.max(bundle[mask])) if mask.any() else 0.0)
    return {
        "utility": u,
        "expenditure": spend,
        "income": m,
        "best_affordable": best_u,
        "satiation": bliss,
        "satiated": bool(u >= bliss - TOL.utility),
        "utility_gap": max(0.0, best_u - u),
        "cheapest_gap": max(0.0, spend - cheap),
        "budget_excess": max(0.0, spend - m),
        "consumption_violation": max(0.0, violation),
    }


def verify(
    instance: Instance,
    system: ConstraintSystem,
    p: Sequence[float],
    x: Any,
    alpha: float | None = None,
    tol: float = 1e-6,
    normative: bool = True,
    ceiling: float | None = None,
) -> EquilibriumCertificate:
    """Recompute every equilibrium condition for the candidate ``(p, x)``.

    Raises:
        ValueError: on dimension mismatches.
    """
    prices = np.asarray(p, dtype=float)
    arr = np.array([[float(v) for v in row] for row in x], dtype=float)
    if arr.shape != system.shape:
        raise ValueError(f"assignment has shape {arr.shape}, expected {system.shape}")
    if prices.shape != (system.num_priced,):
        raise ValueError(f"price vector has {prices.size} entries, expected {system.num_priced}")
    a = _alpha(instance, alpha)
    top = price_ceiling(system, instance) if ceiling is None else ceiling
    pers = personalized_prices(system, prices)
    agents = [_agent_report(i, instance, system, pers, arr, a) for i in range(instance.num_agents)]
    slack = -excess(system, arr)
    cs = float(np.max(prices * np.maximum(slack, 0.0))) if len(slack) else 0.0
    member = membership(arr, system)
    residuals = {
        "utility_gap": max(r["utility_gap"] for r in agents),
        "cheapest_gap": max(r["cheapest_gap"] for r in agents),
        "budget_excess": max(r["budget_excess"] for r in agents),
        "consumption_violation": max(r["consumption_violation"] for r in agents),
        "feasibility": float(member.residual),
        "complementary_slackness": cs,
        "price_range": max(0.0, float(-np.min(prices)) if len(prices) else 0.0,
                           float(np.max(prices)) - top if len(prices) else 0.0),
    }
    checks: dict[str, Any] = {}
    omega = instance.endowment_matrix()
    if omega is not None:
        avg = float(np.mean(np.sum(pers * omega, axis=1)))
        checks["average_endowment_value"] = avg
        checks["average_endowment_value_ok"] = avg <= 1.0 + tol
    if len(prices):
        checks["at_ceiling"] = bool(np.any(prices >= top - tol))
    if normative:
        par = pareto_test(arr, instance, system)
        # An allocation accepted at tolerance tol is only envy-free up to tol.
        envy = envy_test(arr, instance, system, max(TOL.utility, tol))
        ev = envy_value_check(arr, prices, instance, system)
        checks.update(
            pareto_efficient=par.efficient,
            pareto_gain=par.gain,
            envy_pairs=[list(e) for e in envy.pairs],
            equal_type_envy_pairs=[list(e) for e in envy.equal_type_pairs],
            envy_value_ok=ev.ok,
            envy_value_violations=list(ev.violations),
        )
    cert = EquilibriumCertificate(
        prices=prices, assignment=arr, alpha=a, price_ceiling=top, slack=tuple(float(s) for s in slack),
        cs_residual=cs, residuals=residuals, agents=agents, membership=member, checks=checks, tol=tol,
    )
    cert.converged = cert.passed
    return cert


# ---------------------------------------------------------------------------
# Weight-space refinement


class _Refiner:
    """Optimal-face machinery for one instance and system."""

    def __init__(self, instance: Instance, system: ConstraintSystem, alpha: float, ceiling: float):
        self.instance = instance
        self.system = system
        self.alpha = alpha
        self.ceiling = ceiling
        self.v = instance.utility_matrix()
        self.n, self.m = system.shape
        self.omega = instance.endowment_matrix()
        self.allowed = np.array([~system.forbidden_mask(i) for i in range(self.n)])
        rows = []
        for i, group in enumerate(system.individual):
            rows.extend(group)
        self.k_ind = len(rows)
        rows.extend(system.priced)
        self.rows = rows
        self.dense = np.array([c.dense.ravel() for c in rows]) if rows else np.zeros((0, self.n * self.m))
        self.rhs = np.array([float(c.b) for c in rows])
        self.verts = system.vertex_array
        self.bliss = np.array([satiation_value(i, system, instance) for i in range(self.n)])
        self.tensor = system.priced_tensor
        # Per-agent coefficient of each price in the endowment value.
        if self.omega is not None and len(self.tensor):
            self.endow_coef = np.einsum("kil,il->ik", self.tensor, self.omega)
        else:
            self.endow_coef = np.zeros((self.n, len(self.tensor)))

    def incomes(self, p: NDArray) -> NDArray:
        if self.omega is None:
            return np.ones(self.n)
        return self.alpha + (1.0 - self.alpha) * self.endow_coef @ p

    def spending(self, p: NDArray, x: NDArray) -> NDArray:
        if not len(p):
            return np.zeros(self.n)
        return np.einsum("k,kil,il->i", p, self.tensor, x)

    def satiated(self, x: NDArray) -> NDArray:
        return np.sum(self.v * x, axis=1) >= self.bliss - TOL.utility

    def mismatch(self, p: NDArray, x: NDArray) -> float:
        s, m = self.spending(p, x), self.incomes(p)
        sat = self.satiated(x)
        over = np.maximum(s - m, 0.0)
        under = np.where(sat, 0.0, np.maximum(m - s, 0.0))
        return float(np.max(over + under))

    def primal_face(self, theta: NDArray) -> tuple[float, NDArray, NDArray | None]:
        """Optimal value, a central optimal assignment and the optimal vertex indices."""
        c = (theta[:, None] * self.v) * self.allowed
        if self.verts is not None:
            values = np.einsum("kil,il->k", self.verts, c)
            best = float(values.max())
            face = np.flatnonzero(values >= best - 1e-10 * max(1.0, abs(best)))
            return best, self.verts[face].mean(axis=0), face
        upper = [None if ok else 0.0 for ok in self.allowed.ravel()]
        sol = solve_lp(LpProblem(c.ravel().tolist(), self.dense.tolist(), ["<="] * len(self.rhs), self.rhs.tolist(),
                                 maximize=True, upper=upper), FLOAT)
        return float(sol.objective), np.array(sol.x).reshape(self.n, self.m), None

    def dual_face(self, theta: NDArray, best: float, x: NDArray) -> NDArray | None:
        """Prices on the dual optimal face that best match spending to income at ``x``."""
        r = len(self.rows)
        k = len(self.system.priced)
        n = self.n
        c = ((theta[:, None] * self.v) * self.allowed).ravel()
        cells = np.flatnonzero(self.allowed.ravel())
        width = r + 2 * n
        rows, senses, rhs = [], [], []
        for cell in cells:
            rows.append(self.dense[:, cell].tolist() + [0.0] * (2 * n))
            senses.append(">=")
            rhs.append(float(c[cell]))
        rows.append(self.rhs.tolist() + [0.0] * (2 * n))
        senses.append("<=")
        rhs.append(best + 1e-10 * max(1.0, abs(best)))
        sat = self.satiated(x)
        for i in range(n):
            coef = np.zeros(width)
            priced_coef = np.einsum("kl,l->k", self.tensor[:, i, :], x[i]) if k else np.zeros(0)
            if self.omega is not None:
                priced_coef = priced_coef - (1.0 - self.alpha) * self.endow_coef[i]
            coef[self.k_ind : r] = priced_coef
            coef[r + i] = -1.0
            target = self.alpha if self.omega is not None else 1.0
            if sat[i]:
                rows.append(coef.tolist())
                senses.append("<=")
            else:
                coef[r + n + i] = 1.0
                rows.append(coef.tolist())
                senses.append("==")
            rhs.append(target)
        obj = [0.0] * r + [1.0] * (2 * n)
        sol = solve_lp(LpProblem(obj, rows, senses, rhs), FLOAT)
        if not sol.optimal:
            return None
        return np.maximum(np.array(sol.x[self.k_ind : r]), 0.0)

    def balance_primal(self, face: NDArray | None, best: float, theta: NDArray, p: NDArray, x: NDArray) -> NDArray:
        """Assignment on the primal optimal face that best matches spending to income at ``p``."""
        n, m = self.n, self.m
        mi = self.incomes(p)
        sat = self.satiated(x)
        pers = np.tensordot(p, self.tensor, axes=1) if len(p) else np.zeros((n, m))
        if face is not None:
            verts = self.verts[face]
            kf = len(verts)
            spend = np.einsum("kil,il->ki", verts, pers)
            width = kf + 2 * n
            rows = [[1.0] * kf + [0.0] * (2 * n)]
            senses = ["=="]
            rhs = [1.0]
            for i in range(n):
                row = spend[:, i].tolist() + [0.0] * (2 * n)
                row[kf + i] = -1.0
                if sat[i]:
                    senses.append("<=")
                else:
                    row[kf + n + i] = 1.0
                    senses.append("==")
                rows.append(row)
                rhs.append(float(mi[i]))
            sol = solve_lp(LpProblem([0.0] * kf + [1.0] * (2 * n), rows, senses, rhs), FLOAT)
            if not sol.optimal:
                return x
            lam = np.maximum(np.array(sol.x[:kf]), 0.0)
            lam = lam / lam.sum()
            return np.tensordot(lam, verts, axes=1)
        c = ((theta[:, None] * self.v) * self.allowed).ravel()
        d = n * m
        rows = [row.tolist() + [0.0] * (2 * n) for row in self.dense]
        senses = ["<="] * len(rows)
        rhs = self.rhs.tolist()
        rows.append(c.tolist() + [0.0] * (2 * n))
        senses.append(">=")
        rhs.append(best - 1e-10 * max(1.0, abs(best)))
        for i in range(n):
            row = [0.0] * (d + 2 * n)
            row[i * m : (i + 1) * m] = pers[i].tolist()
            row[d + i] = -1.0
            if sat[i]:
                senses.append("<=")
            else:
                row[d + n + i] = 1.0
                senses.append("==")
            rows.append(row)
            rhs.append(float(mi[i]))
        upper = [None if ok else 0.0 for ok in self.allowed.ravel()] + [None] * (2 * n)
        sol = solve_lp(LpProblem([0.0] * d + [1.0] * (2 * n), rows, senses, rhs, upper=upper), FLOAT)
        if not sol.optimal:
            return x
        return np.maximum(np.array(sol.x[:d]).reshape(n, m), 0.0)

    def support_prices(self, x: NDArray, pattern_tol: float = 1e-9) -> tuple[NDArray, float, NDArray] | None:
        """Prices supporting a fixed assignment, with weights chosen freely.

        For fixed ``x`` the optimality conditions are linear in the weights and
        the constraint duals jointly: dual feasibility everywhere, equality on
        cells ``x`` uses, zero duals on rows ``x`` leaves slack. Spending is
        matched to income as well as possible.
        """
        r = len(self.rows)
        k = len(self.system.priced)
        n, m = self.n, self.m
        flat = x.ravel()
        width = r + n + 2 * n
        rows, senses, rhs = [], [], []
        for cell in np.flatnonzero(self.allowed.ravel()):
            i = cell // m
            row = np.zeros(width)
            row[:r] = self.dense[:, cell]
            row[r + i] = -self.v.ravel()[cell]
            rows.append(row.tolist())
            senses.append("==" if flat[cell] > pattern_tol else ">=")
            rhs.append(0.0)
        sat = self.satiated(x)
        target = self.alpha if self.omega is not None else 1.0
        for i in range(n):
            row = np.zeros(width)
            coef = np.einsum("kl,l->k", self.tensor[:, i, :], x[i]) if k else np.zeros(0)
            if self.omega is not None:
                coef = coef - (1.0 - self.alpha) * self.endow_coef[i]
            row[self.k_ind : r] = coef
            row[r + n + i] = -1.0
            if sat[i]:
                senses.append("<=")
            else:
                row[r + 2 * n + i] = 1.0
                senses.append("==")
            rows.append(row.tolist())
            rhs.append(target)
        slack = self.rhs - self.dense @ flat
        upper = [0.0 if sl > pattern_tol * max(1.0, b) else None for sl, b in zip(slack, self.rhs)] + [None] * (3 * n)
        lower = [0.0] * r + [1e-8] * n + [0.0] * (2 * n)
        # A faint pull towards low prices keeps unneeded prices at zero.
        obj = [0.0] * self.k_ind + [1e-9] * k + [0.0] * n + [1.0] * (2 * n)
        sol = solve_lp(LpProblem(obj, rows, senses, rhs, lower=lower, upper=upper), FLOAT)
        if not sol.optimal:
            return None
        p = np.maximum(np.array(sol.x[self.k_ind : r]), 0.0)
        theta = np.array(sol.x[r : r + n])
        return p, self.mismatch(p, x), theta

    def polish(self, x0: NDArray, tol: float, rounds: int = 6) -> tuple[NDArray, NDArray, float] | None:
        """Snap an approximate assignment onto an exactly supported face.

        Cells and rows within ``pattern_tol`` of zero use or zero slack fix the
        support pattern; weights and prices supporting it are then solved for
        and the assignment is rebalanced on the resulting optimal face.
        """
        best = None
        for pattern_tol in (1e-4, 1e-6, 1e-3):
            x = x0
            for _ in range(rounds):
                held = self.support_prices(x, pattern_tol)
                if held is None:
                    break
                p, _, theta = held
                value, _, face = self.primal_face(theta)
                x_new = self.balance_primal(face, value, theta, p, x)
                held = self.support_prices(x_new)
                if held is not None and (best is None or held[1] < best[2]):
                    best = (held[0], x_new, held[1])
                    if held[1] <= 1e-13:
                        return best
                if np.allclose(x_new, x, atol=1e-12):
                    break
                x, pattern_tol = x_new, 1e-9
        return best

    def joint_step(self, x0: NDArray, p0: NDArray, pattern_tol: float) -> tuple[NDArray, NDArray] | None:
        """One linearised step on assignment, duals and weights together.

        The support pattern of ``x0`` (used cells, tight rows) is held fixed,
        so dual feasibility and complementary slackness stay linear; only the
        budget equations are bilinear and get linearised around ``(x0, p0)``.
        """
        n, m = self.n, self.m
        d = n * m
        r = len(self.rows)
        k = len(self.system.priced)
        flat0 = x0.ravel()
        used = flat0 > pattern_tol
        slack = self.rhs - self.dense @ flat0
        tight = slack <= pattern_tol * np.maximum(1.0, np.abs(self.rhs))
        if self.verts is not None:
            flat_verts = self.verts.reshape(len(self.verts), -1)
            keep = np.all(flat_verts[:, ~used] <= 1e-12, axis=1)
            if np.any(tight):
                keep &= np.all(np.abs(flat_verts @ self.dense[tight].T - self.rhs[tight]) <= 1e-9, axis=1)
            basis = flat_verts[keep]
            if not len(basis):
                return None
        else:
            basis = None
        kp = len(basis) if basis is not None else d
        width = kp + r + 3 * n
        y0, t0, e0 = kp, kp + r, kp + r + n
        rows, senses, rhs = [], [], []

        def primal_cells(cell_coef: NDArray) -> NDArray:
            # Map coefficients on assignment cells to the primal variables.
            return basis @ cell_coef if basis is not None else cell_coef

        if basis is not None:
            row = np.zeros(width)
            row[:kp] = 1.0
            rows.append(row)
            senses.append("==")
            rhs.append(1.0)
        else:
            for j in np.flatnonzero(tight):
                row = np.zeros(width)
                row[:d] = self.dense[j]
                rows.append(row)
                senses.append("==")
                rhs.append(float(self.rhs[j]))
            for j in np.flatnonzero(~tight):
                row = np.zeros(width)
                row[:d] = self.dense[j]
                rows.append(row)
                senses.append("<=")
                rhs.append(float(self.rhs[j]))
        vflat = self.v.ravel()
        for cell in np.flatnonzero(self.allowed.ravel()):
            row = np.zeros(width)
            row[y0 : y0 + r] = self.dense[:, cell]
            row[t0 + cell // m] = -vflat[cell]
            rows.append(row)
            senses.append("==" if used[cell] else ">=")
            rhs.append(0.0)
        pers0 = np.tensordot(p0, self.tensor, axes=1) if k else np.zeros((n, m))
        sat = self.satiated(x0)
        target = self.alpha if self.omega is not None else 1.0
        for i in range(n):
            row = np.zeros(width)
            cell_coef = np.zeros(d)
            cell_coef[i * m : (i + 1) * m] = pers0[i]
            row[:kp] = primal_cells(cell_coef)
            spend0 = np.einsum("kl,l->k", self.tensor[:, i, :], x0[i]) if k else np.zeros(0)
            coef = spend0.copy()
            if self.omega is not None:
                coef = coef - (1.0 - self.alpha) * self.endow_coef[i]
            row[y0 + self.k_ind : y0 + r] = coef
            row[e0 + i] = -1.0
            if sat[i]:
                senses.append("<=")
            else:
                row[e0 + n + i] = 1.0
                senses.append("==")
            rows.append(row)
            rhs.append(target + float(p0 @ spend0))
        upper = [None] * width
        if basis is None:
            for cell in range(d):
                if not used[cell]:
                    upper[cell] = 0.0
        for j in range(r):
            if not tight[j]:
                upper[y0 + j] = 0.0
        lower = [0.0] * width
        for i in range(n):
            lower[t0 + i] = 1e-8
        obj = [0.0] * width
        for j in range(k):
            obj[y0 + self.k_ind + j] = 1e-12
        for j in range(e0, width):
            obj[j] = 1.0
        sol = solve_lp(LpProblem(obj, [row.tolist() for row in rows], senses, rhs, lower=lower, upper=upper), FLOAT)
        if not sol.optimal:
            return None
        z = np.array(sol.x)
        prim = np.maximum(z[:kp], 0.0)
        if basis is not None:
            prim = prim / prim.sum()
            x = (prim @ basis).reshape(n, m)
        else:
            x = prim.reshape(n, m)
        p = np.maximum(z[y0 + self.k_ind : y0 + r], 0.0)
        return x, p

    def newton_polish(self, x0: NDArray, p0: NDArray, rounds: int = 12) -> tuple[NDArray, NDArray, float] | None:
        """Iterate :meth:`joint_step`, keeping the best exactly supported pair."""
        best = None
        for pattern_tol in (1e-6, 1e-4, 1e-8):
            x, p = x0, p0
            for _ in range(rounds):
                step = self.joint_step(x, p, pattern_tol)
                if step is None:
                    break
                x_new, p_new = step
                score = self.mismatch(p_new, x_new)
                if best is None or score < best[2]:
                    best = (p_new, x_new, score)
                if score <= 1e-13:
                    return best
                if np.allclose(x_new, x, atol=1e-15) and np.allclose(p_new, p, atol=1e-15):
                    break
                x, p = x_new, p_new
        return best

    def clearing(self, p: NDArray) -> tuple[float, NDArray] | None:
        """Best market-clearing selection from the demand correspondence at ``p``.

        Each agent's bundle may deviate from its cheapest-demand set only
        through a slack ``s_i`` (utility shortfall, overspending, excess over
        the cheapest cost); the objective adds the slack to the value of
        unused supply at positive prices.
        """
        n, m = self.n, self.m
        demands = all_demands(self.instance, self.system, p, self.alpha)
        pers = np.tensordot(p, self.tensor, axes=1) if len(p) else np.zeros((n, m))
        inc = self.incomes(p)
        cs_weight = np.tensordot(p, self.tensor, axes=1).ravel() if len(p) else np.zeros(n * m)
        if self.verts is not None:
            basis = self.verts.reshape(len(self.verts), -1)
            kp = len(basis)
            rows = [[1.0] * kp + [0.0] * n]
            senses, rhs = ["=="], [1.0]
            priced_b = float(p @ self.system.priced_rhs) if len(p) else 0.0
            obj = (-(basis @ cs_weight)).tolist() + [1.0] * n
        else:
            basis = None
            kp = n * m
            rows = [row.tolist() + [0.0] * n for row in self.dense]
            senses, rhs = ["<="] * len(rows), self.rhs.tolist()
            priced_b = float(p @ self.system.priced_rhs) if len(p) else 0.0
            obj = (-cs_weight).tolist() + [1.0] * n
        for i in range(n):
            cell = np.zeros(n * m)
            cell[i * m : (i + 1) * m] = pers[i]
            cost = basis @ cell if basis is not None else cell
            cell = np.zeros(n * m)
            cell[i * m : (i + 1) * m] = self.v[i]
            util = basis @ cell if basis is not None else cell
            slack = [0.0] * n
            slack[i] = -1.0
            rows.append(list(cost) + slack)
            senses.append("<=")
            rhs.append(float(inc[i]))
            rows.append(list(cost) + slack)
            senses.append("<=")
            rhs.append(float(demands[i].expenditure))
            rows.append(list(util) + [-v for v in slack])
            senses.append(">=")
            rhs.append(float(demands[i].utility))
        upper = None
        if basis is None:
            upper = [None if ok else 0.0 for ok in self.allowed.ravel()] + [None] * n
        sol = solve_lp(LpProblem(obj, rows, senses, rhs, upper=upper), FLOAT)
        if not sol.optimal:
            return None
        z = np.maximum(np.array(sol.x), 0.0)
        if basis is not None:
            lam = z[:kp] / max(z[:kp].sum(), 1e-300)
            x = (lam @ basis).reshape(n, m)
        else:
            x = z[:kp].reshape(n, m)
        return max(0.0, float(sol.objective) + priced_b), x

    def balanced_pair(self, theta: NDArray) -> tuple[NDArray, NDArray, float]:
        best, x, face = self.primal_face(theta)
        result = None
        for _ in range(3):
            p = self.dual_face(theta, best, x)
            if p is None:
                break
            score = self.mismatch(p, x)
            if result is None or score < result[2] - 1e-15:
                result = (p, x, score)
            if score <= 1e-12:
                break
            x_new = self.balance_primal(face, best, theta, p, x)
            score_new = self.mismatch(p, x_new)
            if score_new < result[2] - 1e-15:
                result = (p, x_new, score_new)
            if score_new <= 1e-12 or np.allclose(x_new, x, atol=1e-13):
                break
            x = x_new
        if result is None:
            k = len(self.system.priced)
            return np.zeros(k), x, float("inf")
        return result

    def refine(self, theta: NDArray, iters: int, tol: float) -> tuple[NDArray, NDArray, float, int]:
        theta = np.maximum(np.asarray(theta, dtype=float), 1e-12)
        best_state = None
        eta = 1.0
        last = float("inf")
        for it in range(1, iters + 1):
            p, x, score = self.balanced_pair(theta)
            if score > tol * 1e-2:
                held = self.support_prices(x)
                if held is not None and held[1] < score:
                    p, score = held[0], held[1]
            if best_state is None or score < best_state[2]:
                best_state = (p, x, score, it)
            if score <= tol * 1e-2:
                return p, x, score, it
            if score > last:
                eta = max(0.05, eta * 0.5)
            else:
                eta = min(1.0, eta * 1.1)
            last = score
            s, m = self.spending(p, x), self.incomes(p)
            sat = self.satiated(x)
            factor = np.ones(self.n)
            for i in range(self.n):
                if s[i] > m[i]:
                    factor[i] = (m[i] / s[i]) ** eta
                elif not sat[i]:
                    factor[i] = 2.0 if s[i] <= 1e-15 else (m[i] / s[i]) ** eta
            if np.allclose(factor, 1.0, atol=1e-15):
                break
            theta = theta * np.clip(factor, 0.5, 2.0)
        p, x, score, it = best_state
        return p, x, score, iters


# ---------------------------------------------------------------------------
# Solver


@dataclass
class _StartOutcome:
    cert: EquilibriumCertificate
    iterations: int
    prices: NDArray
    gap: float


def _phi_run(instance: Instance, system: ConstraintSystem, start: NDArray, config: SolverConfig, ceiling: float,
             rng: np.random.Generator, probe=None) -> tuple[NDArray, NDArray, float, int, Any]:
    """Damped, clamped price adjustment from ``start``.

    ``probe(p, x)`` is offered the best point every ``probe_every`` iterations
    when it has improved; a non-None return ends the run early.
    """
    p = start.copy()
    step = config.step
    best = (p.copy(), None, float("inf"))
    prev = float("inf")
    stall = 0
    jittered = False
    limit = max(1, config.max_iters // config.restarts)
    probed = float("inf")
    it = 0
    for it in range(1, limit + 1):
        demands = all_demands(instance, system, p, config.alpha)
        x = np.array([d.bundle for d in demands])
        z = excess(system, x)
        g = equilibrium_gap(p, z, scale=income_scale(instance, system, p, config.alpha))
        if g < best[2] * (1 - 1e-6):
            best = (p.copy(), x, g)
            stall = 0
        else:
            stall += 1
        if g <= config.tol**2:
            break
        if probe is not None and it % config.probe_every == 0 and best[2] < 0.9 * probed:
            probed = best[2]
            found = probe(best[0], best[1])
            if found is not None:
                return best[0], best[1], best[2], it, found
        if g > prev:
            step = max(config.step_floor, step / 2)
        prev = g
        if stall >= config.stall:
            if jittered:
                break
            jittered = True
            stall = 0
            p = np.clip(best[0] + config.jitter * rng.standard_normal(len(p)), 0.0, ceiling)
            continue
        p = np.clip(p + step * z, 0.0, ceiling)
    return best[0], best[1], best[2], it, None


def _theta_seeds(instance: Instance, system: ConstraintSystem, p: NDArray, alpha: float) -> list[NDArray]:
    v = instance.utility_matrix()
    n = instance.num_agents
    demands = all_demands(instance, system, p, alpha)
    theta = np.ones(n)
    known = []
    for i, d in enumerate(demands):
        if d.utility > 0 and d.expenditure > 0:
            theta[i] = d.expenditure / d.utility
            known.append(theta[i])
    fill = float(np.median(known)) if known else 1.0
    for i, d in enumerate(demands):
        if not (d.utility > 0 and d.expenditure > 0):
            theta[i] = fill
    top = np.max(np.abs(v), axis=1)
    top[top == 0] = 1.0
    return [theta, np.full(n, fill), 1.0 / top]


def _starts(system: ConstraintSystem, config: SolverConfig, ceiling: float) -> list[NDArray]:
    k = system.num_priced
    out = [np.zeros(k)]
    if k:
        b = system.priced_rhs
        out.append(np.clip(ceiling * 0.5 * b / b.max(), 0.0, ceiling))
    for r in range(len(out), config.restarts):
        rng = np.random.default_rng([config.seed, r])
        out.append(rng.uniform(0.0, ceiling, size=k))
    return out[: max(1, config.restarts)]


class _Found(Exception):
    """Raised inside the local search once an exact pair has been reached."""

    def __init__(self, pair: tuple[NDArray, NDArray, float]):
        self.pair = pair


def _snap(refiner: _Refiner, p: NDArray, x: NDArray, tol: float) -> tuple[NDArray, NDArray, float] | None:
    joint = refiner.newton_polish(x, p)
    if joint is None or joint[2] > 1e-13:
        held = refiner.polish(x, tol)
        if held is not None and (joint is None or held[2] < joint[2]):
            joint = held
    return joint


def _clearing_search(refiner: _Refiner, start: NDArray, ceiling: float, tol: float,
                     maxiter: int, attempts: int = 8) -> tuple[NDArray, NDArray, float] | None:
    """Local search on the clearing slack, snapping promising points onto exact pairs.

    A point is snapped whenever its clearing slack improves tenfold on the
    best seen so far; the search stops at the first pair within ``tol``.
    """
    state = {"best": np.inf, "tries": 0, "pair": None}

    def attempt(p: NDArray, x: NDArray) -> None:
        state["tries"] += 1
        pair = _snap(refiner, p, x, tol)
        if pair is None:
            return
        if state["pair"] is None or pair[2] < state["pair"][2]:
            state["pair"] = pair
        if pair[2] <= tol * 1e-2:
            raise _Found(pair)

    def value(q: NDArray) -> float:
        p = np.clip(q, 0.0, ceiling)
        found = refiner.clearing(p)
        if found is None:
            return 1e6 + float(np.sum((q - p) ** 2))
        if found[0] < 0.1 * state["best"] and state["tries"] < attempts:
            state["best"] = found[0]
            attempt(p, found[1])
        state["best"] = min(state["best"], found[0])
        return found[0] + float(np.sum((q - p) ** 2))

    scale = max(1e-3, 0.05 * float(np.max(start))) if len(start) else 1.0
    simplex = np.array([start] + [start + scale * e for e in np.eye(len(start))])
    try:
        res = minimize(value, start, method="Nelder-Mead",
                       options={"maxiter": maxiter, "xatol": 1e-10, "fatol": 1e-14, "initial_simplex": simplex})
        p = np.clip(res.x, 0.0, ceiling)
        found = refiner.clearing(p)
        if found is not None and state["tries"] < attempts + 1:
            attempt(p, found[1])
    except _Found as hit:
        return hit.pair
    return state["pair"]


def _candidate(refiner: _Refiner, pair: tuple[NDArray, NDArray, float] | None, method: str,
               config: SolverConfig, best: EquilibriumCertificate | None) -> EquilibriumCertificate | None:
    """Certificate for ``pair`` if it beats ``best``; otherwise ``best``."""
    if pair is None:
        return best
    c = verify(refiner.instance, refiner.system, pair[0], pair[1], refiner.alpha, config.tol,
               normative=False, ceiling=refiner.ceiling)
    # Prices at rounding-noise level are zeroed when that keeps the certificate valid.
    raw = np.asarray(pair[0], dtype=float)
    clean = np.where(raw <= 1e-8 * max(1.0, float(raw.max(initial=0.0))), 0.0, raw)
    if np.any(clean != raw):
        tidy = verify(refiner.instance, refiner.system, clean, pair[1], refiner.alpha, config.tol,
                      normative=False, ceiling=refiner.ceiling)
        if tidy.passed or not c.passed:
            c = tidy if tidy.max_residual <= max(c.max_residual, config.tol * 1e-3) else c
    c.method = method
    if best is None or (c.passed and not best.passed):
        return c
    return c if c.passed == best.passed and c.max_residual < best.max_residual else best


def _explore(index: int, start: NDArray, instance: Instance, system: ConstraintSystem, config: SolverConfig,
             ceiling: float, alpha: float) -> _StartOutcome:
    """Price adjustment from one start, with its best points snapped onto exact faces."""
    rng = np.random.default_rng([config.seed, index, 1])
    refiner = _Refiner(instance, system, alpha, ceiling) if system.priced else None

    def snapped(p: NDArray, x: NDArray, best: EquilibriumCertificate | None = None) -> EquilibriumCertificate | None:
        # An approximate allocation is never kept as is: it is snapped onto an exact face first.
        cert = _candidate(refiner, _snap(refiner, p, x, config.tol), "face-polish", config, best)
        if cert is None or not cert.passed:
            found = refiner.clearing(p)
            if found is not None:
                cert = _candidate(refiner, _snap(refiner, p, found[1], config.tol), "face-polish", config, cert)
        return cert

    def probe(p: NDArray, x: NDArray) -> EquilibriumCertificate | None:
        cert = snapped(p, x)
        return cert if cert is not None and cert.passed else None

    p, x, g, iters, found = _phi_run(instance, system, start, config, ceiling, rng, probe if refiner else None)
    if found is not None:
        return _StartOutcome(found, iters, p, g)
    if x is None:
        x = np.array([d.bundle for d in all_demands(instance, system, p, alpha)])
    cert = verify(instance, system, p, x, alpha, config.tol, normative=False, ceiling=ceiling)
    cert.method = "price-adjustment"
    if refiner is not None:
        cert = snapped(p, x, cert)
        # Neighbouring prices often expose the support pattern the end point misses.
        for shift in _neighbours(p, ceiling):
            if cert.passed:
                break
            found = refiner.clearing(shift)
            if found is not None:
                cert = _candidate(refiner, _snap(refiner, shift, found[1], config.tol), "face-polish", config, cert)
    return _StartOutcome(cert, iters, p, g)


def _neighbours(p: NDArray, ceiling: float, rel: float = 2e-3) -> list[NDArray]:
    out = []
    for j in range(len(p)):
        for sign in (1.0, -1.0):
            q = p.copy()
            q[j] = min(ceiling, max(0.0, q[j] + sign * rel * max(1.0, q[j])))
            out.append(q)
    return out


def _deepen(outcome: _StartOutcome, instance: Instance, system: ConstraintSystem, config: SolverConfig,
            ceiling: float, alpha: float) -> _StartOutcome:
    """Expensive searches from a price-adjustment end point."""
    refiner = _Refiner(instance, system, alpha, ceiling)
    best = outcome.cert
    searched = _clearing_search(refiner, outcome.prices, ceiling, config.tol, config.search_iters)
    best = _candidate(refiner, searched, "clearing-search", config, best)
    iters = outcome.iterations
    if not best.passed:
        for theta in _theta_seeds(instance, system, outcome.prices, alpha):
            pr, xr, score, used = refiner.refine(theta, config.weight_iters, config.tol)
            iters += used
            best = _candidate(refiner, (pr, xr, score), "weight-refinement", config, best)
            if best.passed:
                break
    return _StartOutcome(best, iters, outcome.prices, outcome.gap)


def _in_batches(tasks: list, run, workers: int) -> Iterator:
    """Yield ``(task, result)`` in task order, evaluating ``workers`` tasks at a time."""
    for lo in range(0, len(tasks), workers):
        batch = tasks[lo : lo + workers]
        if workers > 1 and len(batch) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, batch))
        else:
            results = [run(t) for t in batch]
        yield from zip(batch, results)


def _nelder_mead(instance: Instance, system: ConstraintSystem, start: NDArray, config: SolverConfig, ceiling: float,
                 alpha: float) -> EquilibriumCertificate:
    def objective(q: NDArray) -> float:
        p = np.clip(q, 0.0, ceiling)
        x = np.array([d.bundle for d in all_demands(instance, system, p, alpha)])
        return equilibrium_gap(p, excess(system, x), scale=income_scale(instance, system, p, alpha)) + float(np.sum((q - p) ** 2))

    res = minimize(objective, start, method="Nelder-Mead",
                   options={"maxiter": 2000, "xatol": 1e-10, "fatol": config.tol**2})
    p = np.clip(res.x, 0.0, ceiling)
    x = np.array([d.bundle for d in all_demands(instance, system, p, alpha)])
    cert = verify(instance, system, p, x, alpha, config.tol, normative=False, ceiling=ceiling)
    cert.method = "nelder-mead"
    cert.iterations = int(res.nit)
    return cert


def solve(instance: Instance, system: ConstraintSystem, config: SolverConfig | None = None) -> EquilibriumCertificate:
    """Search for an equilibrium and return an independently recomputed certificate.

    Non-convergence is reported through ``converged=False``, not raised.
    """
    config = config or SolverConfig()
    alpha = _alpha(instance, config.alpha)
    if config.alpha is None:
        config = SolverConfig(**{**asdict(config), "alpha": alpha})
    ceiling = price_ceiling(system, instance)
    starts = _starts(system, config, ceiling)
    workers = config.worker_count()
    best: EquilibriumCertificate | None = None
    total = 0
    explored: list[_StartOutcome] = []

    def better(c: EquilibriumCertificate) -> bool:
        return best is None or (c.passed and not best.passed) or (not best.passed and c.max_residual < best.max_residual)

    def run(k: int) -> _StartOutcome:
        return _explore(k, starts[k], instance, system, config, ceiling, alpha)

    def deepen(k: int) -> _StartOutcome:
        return _deepen(explored[k], instance, system, config, ceiling, alpha)

    deepened: set[int] = set()
    for k, out in _in_batches(list(range(len(starts))), run, workers):
        total += out.iterations
        explored.append(out)
        if better(out.cert):
            best = out.cert
        if best.passed:
            break
        if system.priced and len(explored) == min(workers, len(starts)):
            # Price adjustment can circle an equilibrium it never lands on:
            # search once from the first batch's best point before more starts.
            first = min(range(len(explored)), key=lambda j: (explored[j].gap, j))
            deepened.add(first)
            out = deepen(first)
            total += out.iterations - explored[first].iterations
            if better(out.cert):
                best = out.cert
            if best.passed:
                break
    if not best.passed and system.priced:
        # Second pass: deeper searches from the end points with the smallest gap.
        order = sorted((k for k in range(len(explored)) if k not in deepened), key=lambda k: (explored[k].gap, k))
        for k, out in _in_batches(order[: config.deep_starts], deepen, workers):
            total += out.iterations - explored[k].iterations
            if better(out.cert):
                best = out.cert
            if best.passed:
                break
    assert best is not None
    if not best.passed and system.priced:
        fallback = _nelder_mead(instance, system, best.prices, config, ceiling, alpha)
        total += fallback.iterations
        if fallback.max_residual < best.max_residual:
            best = fallback
    final = verify(instance, system, best.prices, best.assignment, alpha, config.tol, ceiling=ceiling)
    final.method = best.method
    final.iterations = total
    final.config = config.to_dict()
    final.converged = final.passed
    return final


# ---------------------------------------------------------------------------
# Grid oracle


@dataclass(frozen=True)
class GridResult:
    min_gap: float
    argmin: tuple[float, ...]
    step: float
    points: int
    near: tuple[tuple[float, ...], ...]


def grid_oracle(
    instance: Instance, system: ConstraintSystem, alpha: float | None = None, step: float | None = None,
    ceiling: float | None = None, threshold: float = 1e-2,
) -> GridResult:
    """Evaluate the equilibrium gap at every node of a regular grid over the price box.

    The default step is 5% of the price ceiling per axis. ``near`` lists nodes
    whose gap is below ``threshold``.

    Raises:
        ValueError: if there are more than three priced constraints.
    """
    k = system.num_priced
    if k > GRID_LIMIT:
        raise ValueError(f"grid oracle supports at most {GRID_LIMIT} priced constraints, got {k}")
    a = _alpha(instance, alpha)
    top = price_ceiling(system, instance) if ceiling is None else ceiling
    h = 0.05 * top if step is None else step
    count = int(np.floor(top / h + 1e-9)) + 1
    axis = np.array([round(i * h, 12) for i in range(count)])
    mesh = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), axis=-1).reshape(-1, k) if k else np.zeros((1, 0))
    n, m = system.shape
    omega = instance.endowment_matrix()
    if all(is_unit_demand(system, i) for i in range(n)):
        v = instance.utility_matrix()
        x = np.zeros((len(mesh), n, m))
        for i in range(n):
            pers = mesh @ system.priced_tensor[:, i, :] if k else np.zeros((len(mesh), m))
            inc = np.ones(len(mesh)) if omega is None else a + (1 - a) * pers @ omega[i]
            x[:, i, :] = unit_demand_batch(v[i], pers, inc, ~system.forbidden_mask(i))
    else:
        x = np.array([[d.bundle for d in all_demands(instance, system, q, a, method=LP)] for q in mesh])
    z = np.einsum("kil,pil->pk", system.priced_tensor, x) - system.priced_rhs if k else np.zeros((len(mesh), 0))
    if omega is not None and k:
        endowed = np.einsum("kil,il->k", system.priced_tensor, omega) / n
        scale = a + (1 - a) * mesh @ endowed
        scale = np.where(scale > 0, scale, 1.0)
    else:
        scale = np.ones(len(mesh))
    gaps = np.sum(np.maximum(z, 0.0) ** 2, axis=1) + np.sum((mesh / scale[:, None] * np.maximum(-z, 0.0)) ** 2, axis=1)
    best = int(np.argmin(gaps))
    near = tuple(tuple(float(v) for v in mesh[j]) for j in np.flatnonzero(gaps < threshold)[:100])
    return GridResult(float(gaps[best]), tuple(float(v) for v in mesh[best]), h, len(mesh), near)
