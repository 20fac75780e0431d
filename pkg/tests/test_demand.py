import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog as scipy_linprog

from conftest import hz_example, random_instance, roommates3
from pmkt.demand import FAST, LP, BudgetSpec, budget, cheapest_demand, income, satiation_value
from pmkt.model import Instance, personalized_prices
from pmkt.pipeline import build_system


def one_agent(v, forbid=None):
    data = {"agents": ["i"], "objects": [str(k) for k in range(len(v))], "quantities": [1] * len(v), "utilities": [v]}
    if forbid is not None:
        data["constraints"] = {"kind": "explicit", "constraints": [
            {"cells": [["i", str(k)] for k in range(len(v))], "b": 1},
            {"cells": [["i", str(forbid)]], "b": 0},
        ]}
    inst = Instance.from_dict(data)
    return inst, build_system(inst)


def hz_price(alpha):
    return 6 * alpha / (1 + 2 * alpha)


def test_satiation_value():
    inst, system = one_agent([100, 1])
    assert satiation_value(0, system, inst) == 100
    inst, system = one_agent([1, 1])
    assert satiation_value(0, system, inst) == 1


def test_satiation_with_forbidden_object():
    inst, system = one_agent([5, 3, 4], forbid=0)
    assert satiation_value(0, system, inst) == pytest.approx(4)
    allowed = ~system.forbidden_mask(0)
    assert satiation_value(0, system, inst) == pytest.approx(inst.utility_matrix()[0][allowed].max())


@pytest.mark.parametrize("alpha", [0.1, 0.5, 1.0])
def test_hz_budget_and_demand(alpha):
    inst = hz_example(alpha)
    system = build_system(inst)
    p = [hz_price(alpha), 0.0]
    spec = budget(0, p, system, inst)
    assert spec.income == pytest.approx(3 * alpha / (1 + 2 * alpha))
    for method in (FAST, LP):
        first = cheapest_demand(inst, system, spec, method)
        assert first.bundle == pytest.approx([0.5, 0.5], abs=1e-9)
        third = cheapest_demand(inst, system, budget(2, p, system, inst), method)
        assert third.bundle == pytest.approx([0, 1], abs=1e-9)
        assert third.satiated


def test_income_without_endowment_is_one():
    inst = hz_example(1.0)
    system = build_system(inst)
    assert budget(1, [5.0, 3.0], system, inst).income == 1.0
    assert income(hz_example(1.0, endowments=False), np.array([9.0, 9.0]), 0) == 1.0


def test_walrasian_income():
    inst = hz_example(0.5)
    # p.omega = 2 with omega = (1/3, 2/3)
    assert income(inst, np.array([2.0, 2.0]), 0, alpha=0.0) == pytest.approx(2.0)


def test_zero_prices_give_bliss_for_free():
    inst = hz_example(1.0)
    system = build_system(inst)
    d = cheapest_demand(inst, system, budget(0, [0.0, 0.0], system, inst))
    assert d.satiated
    assert d.expenditure == 0
    assert d.utility == pytest.approx(100)


def aux_cheaper(v, pers, x, rows, rhs, mask):
    """Cheapest cost among bundles at least as good as x (scipy)."""
    m = len(v)
    A = np.vstack([rows, -v[None, :]]) if len(rows) else -v[None, :]
    b = np.append(rhs, -(v @ x - 1e-9))
    bounds = [(0, 0) if f else (0, None) for f in mask]
    res = scipy_linprog(pers, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    return res.fun


def raise_room(x, pers, inc, rows, rhs, mask, k):
    """Largest feasible increase of coordinate k alone, within budget and X_i."""
    if mask[k]:
        return 0.0
    room = np.inf
    for r, bound in zip(rows, rhs):
        if r[k] > 0:
            room = min(room, (bound - r @ x) / r[k])
    if pers[k] > 0:
        room = min(room, (inc - pers @ x) / pers[k])
    return room


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 400), st.lists(st.floats(0, 3), min_size=8, max_size=8), st.sampled_from(["auto", LP]))
def test_demand_contracts(seed, raw, method):
    inst = random_instance(seed)
    system = build_system(inst)
    p = np.array(raw[: system.num_priced])
    pers = personalized_prices(system, p)
    v = inst.utility_matrix()
    for i in range(inst.num_agents):
        spec = budget(i, p, system, inst)
        d = cheapest_demand(inst, system, spec, method)
        rows, rhs, mask = system.consumption_set(i)
        x = d.bundle
        assert np.all(x >= -1e-12)
        assert pers[i] @ x <= spec.income + 1e-7
        # Cheapest-bundle property.
        assert aux_cheaper(v[i], pers[i], x, rows, rhs, mask) >= pers[i] @ x - 1e-7
        if not d.satiated:
            assert abs(pers[i] @ x - spec.income) <= 1e-7
        # Strictly positive utilities: no coordinate can be raised.
        for k in range(len(x)):
            assert raise_room(x, pers[i], spec.income, rows, rhs, mask, k) <= 1e-7


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 400), st.floats(0.1, 10))
def test_scaling_with_unit_slack(seed, scale):
    inst = random_instance(2 * seed + 1)  # odd seeds have alpha 1 and no endowments
    system = build_system(inst)
    p = np.random.default_rng(seed).uniform(0, 2, system.num_priced)
    for i in range(inst.num_agents):
        base = cheapest_demand(inst, system, budget(i, p, system, inst))
        spec = budget(i, scale * p, system, inst)
        scaled = cheapest_demand(inst, system, BudgetSpec(i, spec.prices, scale * spec.income))
        assert np.allclose(base.bundle, scaled.bundle, atol=1e-9)
        assert scaled.expenditure == pytest.approx(scale * base.expenditure, abs=1e-9)


def test_fast_path_needs_unit_demand():
    inst = Instance.from_dict({
        "agents": ["i", "j"], "objects": ["a", "b"], "quantities": [1, 1], "utilities": [[1, 1], [1, 1]],
        "constraints": {"kind": "explicit", "constraints": [
            {"cells": [["i", "a"]], "b": 1}, {"cells": [["i", "b"]], "b": 1},
            {"cells": [["i", "a"], ["j", "a"]], "b": 1}, {"cells": [["i", "b"], ["j", "b"]], "b": 1},
            {"cells": [["j", "a"], ["j", "b"]], "b": 1},
        ]},
    })
    system = build_system(inst)
    with pytest.raises(ValueError):
        cheapest_demand(inst, system, budget(0, [0.0, 0.0], system, inst), FAST)
    d = cheapest_demand(inst, system, budget(0, [0.0, 0.0], system, inst), LP)
    assert d.bundle == pytest.approx([1, 1])


def test_roommate_demand_at_cycle_prices():
    inst = roommates3()
    system = build_system(inst)
    from test_model import roommate_prices

    p = roommate_prices(system)
    for i in range(3):
        d = cheapest_demand(inst, system, budget(i, p, system, inst))
        # Every partner is affordable only in the one-third mix the prices support.
        assert d.expenditure == pytest.approx(1.0)
