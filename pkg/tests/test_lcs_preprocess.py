import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog as scipy_linprog
from scipy.spatial import ConvexHull

from conftest import contained, hz_example, roommates3, same_polytope
from pmkt.lcs_preprocess import VPolytope, classify, flatten, lcs_facets
from pmkt.model import CapacityError, LinearConstraint
from pmkt.pipeline import build_system
from pmkt.structured_constraints import roommate_matchings, roommate_system, supply_columns, unit_demand_rows


def hull_facets(points):
    """Facets of the lower contour set from scipy's convex hull, as (coefficients, rhs) with max coefficient 1."""
    pts = np.array(points, dtype=float)
    d = pts.shape[1]
    closure = {tuple(np.where(mask, p, 0.0)) for p in pts for mask in itertools.product([True, False], repeat=d)}
    hull = ConvexHull(np.array(sorted(closure)))
    out = set()
    for eq in hull.equations:
        a, b = eq[:-1], -eq[-1]
        if np.all(a >= -1e-9) and b > 1e-9:
            top = a.max()
            out.add((tuple(np.round(a / top, 9)), round(b / top, 9)))
    return out


def as_float_set(constraints, shape):
    out = set()
    for c in constraints:
        if c.b == 0:
            continue
        a = tuple(round(float(v), 9) for row in c.a for v in row)
        out.add((a, round(float(c.b), 9)))
    return out


def test_unit_square():
    poly = VPolytope.from_lists([[[0, 0]], [[1, 0]], [[0, 1]], [[1, 1]]])
    facets = lcs_facets(poly)
    assert sorted((c.a, c.b) for c in facets) == [(((0, 1),), 1), (((1, 0),), 1)]


def test_hz_two_by_two_matches_hull_and_rows():
    verts = [[[1, 0], [0, 1]], [[0, 1], [1, 0]]]
    facets = lcs_facets(VPolytope.from_lists(verts))
    flat = [[v for row in m for v in row] for m in verts]
    assert as_float_set(facets, (2, 2)) == hull_facets(flat)
    expected = unit_demand_rows((2, 2)) + supply_columns((2, 2), [1, 1])
    assert same_polytope(facets, expected)


@pytest.mark.parametrize("seed", range(6))
def test_random_vertex_sets_match_hull(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 5))
    k = int(rng.integers(2, 6))
    pts = rng.integers(0, 4, size=(k, d))
    pts[0] = np.maximum(pts[0], 1)
    poly = VPolytope.from_lists([[list(p)] for p in pts])
    assert as_float_set(lcs_facets(poly), (1, d)) == hull_facets(pts)


def test_roommates3_matches_structured():
    poly = VPolytope.from_lists(roommate_matchings(3))
    assert same_polytope(lcs_facets(poly), roommate_system(3))


def test_zero_coordinates_emitted_as_bounds():
    poly = VPolytope.from_lists([[[1, 0]], [[0, 0]]])
    facets = lcs_facets(poly)
    assert any(c.b == 0 and c.support == frozenset({(0, 1)}) for c in facets)


def test_cap_enforced():
    poly = VPolytope.from_lists([[[1] * 5]])
    with pytest.raises(CapacityError):
        lcs_facets(poly, cap=4)


def test_classify_example():
    shape = (2, 2)
    rows = unit_demand_rows(shape) + supply_columns(shape, [1, 1])
    bounds = [LinearConstraint.from_cells(shape, [(0, 0)], 0), LinearConstraint.from_cells(shape, [(0, 1)], 0)]
    system = classify(bounds + rows, shape)
    assert system.forbidden.support == frozenset({(0, 0), (0, 1)})
    assert [len(r) for r in system.individual] == [1, 1]
    assert {c.support for c in system.priced} == {frozenset({(0, 0), (1, 0)}), frozenset({(0, 1), (1, 1)})}


def test_hz_has_one_priced_row_per_object(hz):
    system = build_system(hz)
    assert system.num_priced == hz.num_objects


def test_roommates3_classification():
    system = build_system(roommates3())
    supports = {c.support for c in system.priced}
    assert frozenset({(1, 0), (0, 2), (2, 1)}) in supports
    assert frozenset({(0, 1), (1, 2), (2, 0)}) in supports
    for i in range(3):
        assert any(c.support == frozenset((i, l) for l in range(3)) for c in system.individual[i])
    assert all(len(c.agents) > 1 for c in system.priced)


def test_classify_idempotent():
    for inst in (hz_example(), roommates3()):
        system = build_system(inst)
        again = classify(flatten(system), system.shape, system.vertices)
        assert again.priced == system.priced
        assert again.individual == system.individual
        assert again.forbidden.a == system.forbidden.a


def dominated_by_hull(y, verts):
    """Is y <= x for some x in the convex hull of verts? (scipy LP)"""
    V = np.array(verts, dtype=float)
    k, d = V.shape
    res = scipy_linprog(np.zeros(k), A_ub=-V.T, b_ub=-np.asarray(y, dtype=float),
                        A_eq=np.ones((1, k)), b_eq=[1.0], bounds=[(0, None)] * k, method="highs")
    return res.status == 0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(0, 3), min_size=3, max_size=3), min_size=1, max_size=5),
       st.lists(st.fractions(min_value=0, max_value=3, max_denominator=7), min_size=3, max_size=3))
def test_soundness_and_completeness(verts, y):
    if not any(any(v) for v in verts):
        verts = verts + [[1, 1, 1]]
    poly = VPolytope.from_lists([[v] for v in verts])
    facets = lcs_facets(poly)
    for v in verts:
        assert all(c.value([v]) <= c.b for c in facets)
    inside = all(c.value([y]) <= c.b for c in facets)
    assert inside == dominated_by_hull(y, verts) or _on_boundary(y, facets)


def _on_boundary(y, facets):
    return any(abs(c.value([y]) - c.b) < Fraction(1, 10**6) for c in facets)


def test_inclusion_helper_detects_strict_containment():
    small = [LinearConstraint.from_cells((1, 2), [(0, 0), (0, 1)], 1)]
    big = [LinearConstraint.from_cells((1, 2), [(0, 0)], 1), LinearConstraint.from_cells((1, 2), [(0, 1)], 1)]
    assert contained(small, big)
    assert not contained(big, small)
