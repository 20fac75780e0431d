import time

import numpy as np
import pytest

from conftest import hz_example, random_instance, roommates3
from pmkt.equilibrium import (
    SolverConfig,
    excess,
    grid_oracle,
    phi_step,
    price_ceiling,
    solve,
    verify,
)
from pmkt.model import Instance, dump_json, personalized_prices
from pmkt.pipeline import build_system, prepare
from test_model import cycle_index, roommate_prices

HZ_ALLOCATION = [[0.5, 0.5], [0.5, 0.5], [0, 1]]
CYCLES = ([(1, 0), (0, 2), (2, 1)], [(0, 1), (1, 2), (2, 0)])


def hz_price(alpha):
    return 6 * alpha / (1 + 2 * alpha)


def test_price_ceiling_without_endowments():
    inst = hz_example(1.0, endowments=False)
    assert price_ceiling(build_system(inst), inst) == 7


def test_price_ceiling_with_endowments():
    inst = hz_example(0.5)
    assert price_ceiling(build_system(inst), inst) == pytest.approx(6)


def test_price_ceiling_ignores_endowment_scale_without_endowment_mode():
    inst = hz_example(1.0, endowments=False)
    system = build_system(inst)
    doubled = inst.replace(quantities=(1, 2))
    assert price_ceiling(system, doubled) == price_ceiling(system, inst)


def test_phi_fixed_point():
    inst = hz_example(0.5)
    system = build_system(inst)
    step = phi_step([1.5, 0.0], system, inst)
    assert np.allclose(step.excess, 0)
    assert step.prices == pytest.approx([1.5, 0.0], abs=1e-12)


def test_phi_clamps_at_zero_and_ceiling():
    inst = hz_example(1.0, endowments=False)
    system = build_system(inst)
    at_zero = phi_step([0.0, 0.0], system, inst)
    assert at_zero.excess[1] < 0
    assert at_zero.prices[1] == 0
    near_top = phi_step([0.4, 0.0], system, inst, ceiling=0.5)
    assert near_top.excess[0] > 0
    assert near_top.prices[0] == 0.5


def test_roommates_solve():
    inst = roommates3()
    system = build_system(inst)
    start = time.perf_counter()
    cert = solve(inst, system, SolverConfig(seed=7))
    assert time.perf_counter() - start < 5
    assert cert.converged
    assert np.allclose(cert.assignment, np.full((3, 3), 1 / 3), atol=1e-4)
    slack = np.array(cert.slack)
    for cells in CYCLES:
        assert abs(slack[cycle_index(system, cells)]) <= 1e-6
    pers = personalized_prices(system, cert.prices)
    target = np.array([[0, 1, 2], [2, 0, 1], [1, 2, 0]], dtype=float)
    assert np.allclose(pers / pers.max(), target / 2, atol=1e-3)


def test_roommates_verify_cycle_prices():
    inst = roommates3()
    system = build_system(inst)
    x = np.full((3, 3), 1 / 3)
    cert = verify(inst, system, roommate_prices(system), x, tol=1e-9)
    assert cert.passed
    assert cert.max_residual <= 1e-9


@pytest.mark.parametrize("alpha", [0.1, 0.5, 1.0])
def test_hz_verify_and_solve(alpha):
    inst = hz_example(alpha)
    system = build_system(inst)
    cert = verify(inst, system, [hz_price(alpha), 0.0], HZ_ALLOCATION, tol=1e-9)
    assert cert.passed
    solved = solve(inst, system, SolverConfig(seed=0))
    assert solved.converged
    assert np.allclose(solved.assignment, HZ_ALLOCATION, atol=1e-4)


def test_hz_half_prices():
    inst = hz_example(0.5)
    cert = solve(inst, build_system(inst), SolverConfig(seed=0))
    assert cert.prices == pytest.approx([1.5, 0.0], abs=1e-4)


def test_perturbed_allocation_rejected():
    inst = hz_example(1.0)
    system = build_system(inst)
    x = [[0.6, 0.4], [0.5, 0.5], [0, 1]]
    cert = verify(inst, system, [2.0, 0.0], x)
    assert not cert.passed
    assert cert.residuals["feasibility"] > 1e-6 or cert.residuals["budget_excess"] > 1e-6


def test_single_agent_single_object():
    inst = Instance.from_dict({"agents": ["i"], "objects": ["a"], "quantities": [1], "utilities": [[1]]})
    cert = solve(inst, build_system(inst))
    assert cert.converged
    assert cert.assignment[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert all(p == 0 for p in cert.prices)


def test_grid_near_claimed_equilibrium():
    inst = hz_example(0.5)
    grid = grid_oracle(inst, build_system(inst), step=0.01)
    assert grid.min_gap < 1e-2
    assert abs(grid.argmin[0] - 1.5) <= 0.05 and grid.argmin[1] <= 0.05


def test_grid_walrasian_gap_bounded_below():
    inst = hz_example(0.5)
    grid = grid_oracle(inst, build_system(inst), alpha=0.0, step=0.01)
    assert grid.points == 601 * 601
    assert grid.min_gap > 1e-3


def test_grid_matches_solver_on_one_constraint():
    inst = Instance.from_dict({"agents": ["1", "2"], "objects": ["a"], "quantities": [1], "utilities": [[1], [1]]})
    system = build_system(inst)
    cert = solve(inst, system)
    grid = grid_oracle(inst, system, step=0.01)
    assert cert.converged
    assert abs(grid.argmin[0] - cert.prices[0]) <= 0.01


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 5, 8])
def test_certificate_properties(seed):
    inst = random_instance(seed)
    system = build_system(inst)
    cert = solve(inst, system, SolverConfig(seed=seed))
    assert cert.converged
    again = verify(inst, system, cert.prices, cert.assignment, tol=cert.tol)
    for key, value in cert.residuals.items():
        assert again.residuals[key] == pytest.approx(value, abs=1e-9)
    p = np.asarray(cert.prices)
    z = excess(system, cert.assignment)
    assert np.all(p >= 0) and np.all(p <= cert.price_ceiling)
    eps = SolverConfig().tol
    assert np.all((p <= eps) | (np.abs(z) <= eps))
    assert np.all((z >= -eps) | (p <= eps))
    if inst.has_endowments:
        pers = personalized_prices(system, p)
        assert np.mean(np.sum(pers * inst.endowment_matrix(), axis=1)) <= 1 + 1e-6


def test_deterministic_under_seed():
    prepared = prepare(hz_example(0.25))
    docs = [
        dump_json(solve(prepared.working, prepared.system, SolverConfig(seed=3)).to_dict(prepared.working, prepared.system))
        for _ in range(2)
    ]
    assert docs[0] == docs[1]


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(alpha=0.0)
    with pytest.raises(ValueError):
        SolverConfig(tol=0)
    assert SolverConfig(threads=3).worker_count() == 3


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("PMKT_THREADS", "2")
    assert SolverConfig().worker_count() == 2
