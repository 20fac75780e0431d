import itertools
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import same_polytope
from pmkt.diagnostics import vertex_membership
from pmkt.lcs_preprocess import VPolytope, lcs_facets
from pmkt.model import Instance, LinearConstraint
from pmkt.pipeline import build_system
from pmkt.structured_constraints import (
    RegionalSpec,
    SchoolChoiceSpec,
    bads_dual,
    check_bihierarchy,
    enumerate_bundles,
    enumerate_coalitions,
    max_matching,
    max_matching_bruteforce,
    primal_from_dual,
    regional_ceilings,
    regional_deterministic,
    regional_system,
    roommate_matchings,
    roommate_system,
    school_choice_ceilings,
    school_choice_deterministic,
    school_choice_system,
    supply_columns,
    unit_demand_rows,
)

F = Fraction


def regional_spec(floors, ceilings, regions=((0, 1), (2,))):
    return RegionalSpec(tuple(regions), tuple(F(v) for v in floors), tuple(F(v) for v in ceilings))


# Bihierarchy


def test_rows_and_columns_are_bihierarchy():
    shape = (3, 3)
    assert check_bihierarchy(unit_demand_rows(shape) + supply_columns(shape, [1, 1, 1]), shape).ok


def test_regional_caps_are_bihierarchy():
    shape = (3, 3)
    caps = [LinearConstraint.from_cells(shape, [(i, l) for i in range(3) for l in (0, 1)], 2)]
    assert check_bihierarchy(unit_demand_rows(shape) + supply_columns(shape, [1, 1, 1]) + caps, shape).ok


def test_crossing_sets_reported():
    shape = (2, 3)
    a = [(0, 0), (0, 1)]
    b = [(0, 1), (0, 2)]
    result = check_bihierarchy([a, b, [(0, 0), (1, 0)], [(1, 1), (0, 2)]], shape)
    assert not result.ok
    assert result.witness is not None


# Regional


def test_regional_ceilings_two_regions():
    out = regional_ceilings(regional_spec((1, 1), (3, 3)), 3)
    assert out == {frozenset({0}): 2, frozenset({1}): 2, frozenset({0, 1}): 3}


def test_regional_floorless_ceilings_are_sums():
    spec = RegionalSpec(((0,), (1,), (2,)), (F(0),) * 3, (F(1), F(2), F(1)))
    out = regional_ceilings(spec, 50)
    for union, value in out.items():
        assert value == sum(spec.ceilings[r] for r in union)


def naive_claim_holds(spec, n, derived):
    """The union bound dominates one member's floor plus the rest's bound."""
    for union, value in derived.items():
        if value > sum(spec.ceilings[r] for r in union):
            return False
        for r in union:
            rest = union - {r}
            if rest and value < spec.floors[r] + derived[rest]:
                return False
    return True


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 3)), min_size=1, max_size=3), st.integers(3, 8))
def test_regional_recursion_properties(quotas, n):
    floors = [lo for lo, _ in quotas]
    ceilings = [max(lo, lo + extra) for lo, extra in quotas]
    if sum(floors) > n:
        return
    spec = RegionalSpec(tuple((k,) for k in range(len(quotas))), tuple(map(F, floors)), tuple(map(F, ceilings)))
    derived = regional_ceilings(spec, n)
    assert naive_claim_holds(spec, n, derived)


def test_regional_example_system():
    spec = regional_spec((1, 1), (3, 3))
    system = regional_system(spec, 3, [1, 1, 1])
    caps = {c.support: c.b for c in system.priced}
    left = frozenset((i, l) for i in range(3) for l in (0, 1))
    right = frozenset((i, 2) for i in range(3))
    assert caps[left] == 2
    assert caps[right] == 1  # the supply column is tighter than the derived cap of 2
    assert caps[frozenset((i, l) for i in range(3) for l in range(3))] == 3


def test_regional_single_region():
    spec = RegionalSpec(((0, 1, 2),), (F(0),), (F(3),))
    system = regional_system(spec, 2, [1, 1, 1])
    hz = unit_demand_rows((2, 3)) + supply_columns((2, 3), [1, 1, 1])
    assert same_polytope(system, hz + [LinearConstraint.from_cells((2, 3), [(i, l) for i in range(2) for l in range(3)], 2)])


@pytest.mark.parametrize("quantities, floors, ceilings", [
    ([1, 1, 1], (1, 1), (3, 3)),
    ([1, 2, 1], (1, 1), (3, 3)),
    ([2, 1, 1], (0, 1), (2, 1)),
    ([1, 1, 2], (1, 0), (2, 2)),
])
def test_regional_matches_generic(quantities, floors, ceilings):
    spec = regional_spec(floors, ceilings)
    system = regional_system(spec, 3, quantities)
    poly = VPolytope.from_lists(regional_deterministic(spec, 3, quantities))
    assert same_polytope(system, lcs_facets(poly))


# School choice


def test_school_choice_first_step():
    spec = SchoolChoiceSpec(frozenset({0}), ((F(1), F(2)),), ((F(1), F(2)),))
    minority, majority = school_choice_ceilings(spec, 2, [2])
    assert minority[frozenset({0})] == 1
    assert majority[frozenset({0})] == 1


def test_school_choice_floorless():
    spec = SchoolChoiceSpec(frozenset({0, 1}), ((F(0), F(3)), (F(0), F(1))), ((F(0), F(1)), (F(0), F(3))))
    minority, majority = school_choice_ceilings(spec, 4, [5, 5])
    assert minority[frozenset({0})] == 2
    assert minority[frozenset({1})] == 1
    assert minority[frozenset({0, 1})] == 2
    assert majority[frozenset({0, 1})] == 2


@pytest.mark.parametrize("quotas", [
    (((1, 2), (0, 2)), ((1, 2), (1, 2))),
    (((0, 1), (0, 2)), ((0, 2), (0, 2))),
    (((1, 1), (1, 1)), ((0, 2), (0, 2))),
])
def test_school_choice_matches_generic(quotas):
    mino, majo = quotas
    spec = SchoolChoiceSpec(frozenset({0, 1}), tuple((F(a), F(b)) for a, b in mino), tuple((F(a), F(b)) for a, b in majo))
    system = school_choice_system(spec, 4, [2, 2])
    poly = VPolytope.from_lists(school_choice_deterministic(spec, 4, [2, 2]))
    assert same_polytope(system, lcs_facets(poly))


# Matching


def test_matching_small_graphs():
    assert max_matching([(0, 1), (1, 2), (2, 3)]) == 2
    assert max_matching([(0, 1), (1, 2), (2, 0)]) == 1
    assert max_matching([]) == 0


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=12))
def test_matching_against_networkx_and_bruteforce(edges):
    edges = [(a, b) for a, b in edges if a != b]
    g = nx.Graph(edges)
    expected = len(nx.max_weight_matching(g, maxcardinality=True))
    assert max_matching(edges) == expected
    assert max_matching_bruteforce(edges) == expected


def test_blossom_example():
    # Two triangles joined by a path force blossom contraction.
    edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 6), (6, 4), (6, 7)]
    assert max_matching(edges) == 4


# Roommates


def test_roommates3_cycles():
    system = roommate_system(3)
    by_support = {c.support: c.b for c in system.priced}
    assert by_support[frozenset({(1, 0), (0, 2), (2, 1)})] == 1
    assert by_support[frozenset({(0, 1), (1, 2), (2, 0)})] == 1


def test_roommates2_box():
    system = roommate_system(2)
    shape = (2, 2)
    box = [LinearConstraint.from_cells(shape, [c], 1) for c in [(0, 1), (1, 0), (0, 0), (1, 1)]]
    rows = unit_demand_rows(shape) + supply_columns(shape, [1, 1])
    poly = VPolytope.from_lists(roommate_matchings(2))
    assert len(poly.vertices) == 2
    assert same_polytope(system, lcs_facets(poly))
    assert same_polytope(system, rows + box)


@pytest.mark.parametrize("n", [3, 4])
def test_roommates_match_generic(n):
    poly = VPolytope.from_lists(roommate_matchings(n))
    if n == 4:
        assert len(poly.vertices) == 10
    assert same_polytope(roommate_system(n), lcs_facets(poly))


def test_odd_set_family_defines_same_polytope():
    assert same_polytope(roommate_system(4, full_families=False), roommate_system(4, full_families=True))


def symmetric_bistochastic(n, rng):
    """Random convex combination of roommate matchings plus a non-matching symmetric matrix."""
    mats = np.array([[[float(v) for v in row] for row in m] for m in roommate_matchings(n)])
    lam = rng.dirichlet(np.ones(len(mats)))
    return np.tensordot(lam, mats, axes=1)


@pytest.mark.parametrize("seed", range(10))
def test_roommate_system_accepts_matching_combinations(seed):
    rng = np.random.default_rng(seed)
    n = 3 + seed % 2
    x = symmetric_bistochastic(n, rng)
    system = roommate_system(n)
    assert all(float(c.value(x)) <= float(c.b) + 1e-9 for c in system.all_constraints())


def test_roommate_system_rejects_half_triangle():
    # Half-integral triangle: symmetric, bistochastic, outside the matching polytope.
    x = np.array([[0, .5, .5], [.5, 0, .5], [.5, .5, 0]])
    system = roommate_system(3)
    assert any(float(c.value(x)) > float(c.b) + 1e-9 for c in system.all_constraints())
    verts = np.array([[[float(v) for v in row] for row in m] for m in roommate_matchings(3)])
    assert not vertex_membership(x, verts).member


# Bads


def chores(floors, utilities):
    n, m = len(utilities), len(floors)
    return Instance.from_dict({
        "agents": [str(i) for i in range(n)], "objects": [f"b{l}" for l in range(m)],
        "quantities": floors, "utilities": utilities,
    })


def test_bads_single():
    dual = bads_dual(chores([1], [[-1], [-2]]))
    assert dual.quantities == (1,)
    x = [[0.25], [0.75]]
    primal = primal_from_dual(x)
    assert sum(r[0] for r in primal) + sum(r[0] for r in x) == 2


def test_bads_sign_flip():
    dual = bads_dual(chores([1], [[-3], [-1]]))
    assert dual.utilities == ((3,), (1,))


def test_bads_two_by_three_floors():
    from pmkt.equilibrium import SolverConfig, solve
    from pmkt.pipeline import prepare

    prepared = prepare(chores([1, 1], [[-3, -1], [-1, -2], [-2, -2]]))
    cert = solve(prepared.working, prepared.system, SolverConfig(seed=0))
    assert cert.converged
    primal = np.array(primal_from_dual(cert.assignment))
    assert np.all(primal.sum(axis=0) >= np.array([1, 1]) - 1e-6)


def test_bads_without_slack_rejected():
    from pmkt.model import InstanceError

    with pytest.raises(InstanceError):
        bads_dual(chores([1, 1], [[-1, -1], [-1, -1]]))


# Enumerators


def test_coalitions_bell_number():
    assert len(enumerate_coalitions(3).vertices) == 5


def test_bundles_not_independent():
    poly = enumerate_bundles(3, [[0, 1], [0, 2], [1, 2]], [1, 1, 1])
    for v in poly.vertices:
        assert sum(sum(row) for row in v) <= 1
    half = np.array([[0.5, 0, 0], [0, 0.5, 0], [0, 0, 0.5]])
    verts = np.array([[[float(e) for e in row] for row in v] for v in poly.vertices])
    assert not vertex_membership(half, verts).member
