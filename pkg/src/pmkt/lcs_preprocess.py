"""Lower contour set of a vertex polytope, and classification of its facets.

The lower contour set of ``C = co(V)`` is ``{x >= 0 : x <= x' for some x' in C}``.
Its facets are found by the double description method applied to the
homogenised generators ``(1, v)`` for every vertex and ``(0, -e_j)`` for every
coordinate; each extreme ray ``(b, -a)`` of the dual cone gives an inequality
``a . x <= b`` with ``a >= 0``. All arithmetic is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import gcd, lcm
from typing import Iterable, Sequence

from .linprog import EXACT, FLOAT, OPTIMAL, LpProblem, solve_lp
from .model import CapacityError, ConstraintSystem, InstanceError, LinearConstraint, to_fraction

DEFAULT_CAP = 16

Matrix = tuple[tuple[Fraction, ...], ...]


@dataclass(frozen=True)
class VPolytope:
    """Convex hull of finitely many nonnegative N x L matrices."""

    vertices: tuple[Matrix, ...]

    def __post_init__(self) -> None:
        if not self.vertices:
            raise InstanceError("a vertex polytope needs at least one vertex")
        shape = (len(self.vertices[0]), len(self.vertices[0][0]))
        for v in self.vertices:
            if len(v) != shape[0] or any(len(row) != shape[1] for row in v):
                raise InstanceError("vertices have inconsistent shapes")
            if any(e < 0 for row in v for e in row):
                raise InstanceError("vertex entries must be nonnegative")

    @classmethod
    def from_lists(cls, vertices: Iterable[Sequence[Sequence]]) -> "VPolytope":
        out = []
        seen = set()
        for v in vertices:
            mat = tuple(tuple(to_fraction(e) for e in row) for row in v)
            if mat not in seen:
                seen.add(mat)
                out.append(mat)
        return cls(tuple(out))

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.vertices[0]), len(self.vertices[0][0]))


# ---------------------------------------------------------------------------
# Double description


def _dot(u: Sequence[int], v: Sequence[int]) -> int:
    return sum(a * b for a, b in zip(u, v) if a and b)


def _primitive(v: list[int]) -> list[int]:
    g = 0
    for e in v:
        if e:
            g = gcd(g, e)
    if g > 1:
        return [e // g for e in v]
    return v


def _independent_first(gens: list[list[int]]) -> list[int]:
    """Order generator indices so that a maximal independent subset comes first."""
    basis: list[tuple[int, list[Fraction]]] = []
    chosen: list[int] = []
    rest: list[int] = []
    for idx, g in enumerate(gens):
        vec = [Fraction(e) for e in g]
        for piv, row in basis:
            if vec[piv]:
                f = vec[piv] / row[piv]
                vec = [a - f * b for a, b in zip(vec, row)]
        piv = next((k for k, e in enumerate(vec) if e), -1)
        if piv >= 0:
            basis.append((piv, vec))
            chosen.append(idx)
        else:
            rest.append(idx)
    return chosen + rest


def extreme_rays(gens: list[list[int]], dim: int) -> list[list[int]]:
    """Extreme rays of the pointed cone ``{h : g . h >= 0 for every g}``.

    The generators must span ``R^dim`` so that the cone is pointed.
    """
    order = _independent_first(gens)
    lineality: list[list[int]] = [[1 if k == j else 0 for k in range(dim)] for j in range(dim)]
    rays: list[tuple[list[int], int]] = []
    for step, idx in enumerate(order):
        g = gens[idx]
        bit = 1 << step
        vals = [_dot(g, l) for l in lineality]
        piv = next((k for k, v in enumerate(vals) if v), -1)
        if piv >= 0:
            l0, s0 = lineality[piv], vals[piv]
            sgn = 1 if s0 > 0 else -1
            new_lin = []
            for k, l in enumerate(lineality):
                if k == piv:
                    continue
                vk = vals[k]
                new_lin.append(_primitive([s0 * a - vk * b for a, b in zip(l, l0)]) if vk else l)
            new_rays = []
            for r, z in rays:
                gr = _dot(g, r)
                if gr:
                    r = _primitive([abs(s0) * a - sgn * gr * b for a, b in zip(r, l0)])
                new_rays.append((r, z | bit))
            processed = (1 << step) - 1
            new_rays.append(([sgn * e for e in l0], processed))
            lineality, rays = new_lin, new_rays
            continue
        if lineality:
            raise InstanceError("generators do not span the space")
        pos, neg, zer = [], [], []
        for r, z in rays:
            v = _dot(g, r)
            if v > 0:
                pos.append((r, z, v))
            elif v < 0:
                neg.append((r, z, v))
            else:
                zer.append((r, z | bit))
        if not neg:
            rays = [(r, z) for r, z, _ in pos] + zer
            continue
        need = dim - 2
        zsets = [z for _, z in rays]
        created = []
        for rp, zp, vp in pos:
            for rn, zn, vn in neg:
                common = zp & zn
                if bin(common).count("1") < need:
                    continue
                adjacent = True
                for z in zsets:
                    if z != zp and z != zn and (z & common) == common:
                        adjacent = False
                        break
                if not adjacent:
                    continue
                new = _primitive([vp * b - vn * a for a, b in zip(rp, rn)])
                created.append((new, common | bit))
        rays = [(r, z) for r, z, _ in pos] + zer + created
    return [r for r, _ in rays]


def _redundant(idx: int, constraints: list[tuple[list[Fraction], Fraction]]) -> bool:
    """Whether constraint ``idx`` is implied by the others together with x >= 0.

    A float solve proposes an answer which is then proved exactly: a rounded
    dual vector certifies redundancy, a rounded primal point certifies the
    opposite. The exact simplex settles cases where neither proof checks out.
    """
    a, b = constraints[idx]
    others = [c for k, c in enumerate(constraints) if k != idx]
    rows = [c[0] for c in others]
    rhs = [c[1] for c in others]
    problem = LpProblem(a, rows, ["<="] * len(rows), rhs, maximize=True)
    approx = solve_lp(problem, FLOAT)
    if approx.status == OPTIMAL:
        y = [max(Fraction(v).limit_denominator(10**6), Fraction(0)) for v in approx.duals]
        covered = all(
            sum((y[k] * rows[k][j] for k in range(len(rows)) if y[k]), Fraction(0)) >= a[j]
            for j in range(len(a))
        )
        if covered and sum((y[k] * rhs[k] for k in range(len(rows)) if y[k]), Fraction(0)) <= b:
            return True
        x = [max(Fraction(v).limit_denominator(10**6), Fraction(0)) for v in approx.x]
        if sum(p * q for p, q in zip(a, x)) > b and all(
            sum(p * q for p, q in zip(row, x)) <= r for row, r in zip(rows, rhs)
        ):
            return False
    exact = solve_lp(problem, EXACT)
    return exact.status == OPTIMAL and exact.objective <= b


def lcs_facets(poly: VPolytope, cap: int = DEFAULT_CAP) -> list[LinearConstraint]:
    """Irredundant inequalities describing the lower contour set of ``poly``.

    Coordinates that vanish on every vertex are emitted as ``x_cell <= 0`` and
    removed before the facet computation; the dimension cap applies to the
    remaining coordinates.

    Raises:
        CapacityError: if more than ``cap`` coordinates are active.
    """
    n, m = poly.shape
    cells = [(i, l) for i in range(n) for l in range(m)]
    active = [k for k, (i, l) in enumerate(cells) if any(v[i][l] > 0 for v in poly.vertices)]
    if len(active) > cap:
        raise CapacityError(
            f"facet enumeration over {len(active)} coordinates exceeds the cap of {cap}; "
            "use a structured constraint specification instead"
        )
    out: list[LinearConstraint] = []
    for k, cell in enumerate(cells):
        if k not in active:
            out.append(LinearConstraint.from_cells((n, m), [cell], 0))
    d = len(active)
    if d == 0:
        return sorted(out, key=LinearConstraint.key)
    # Integer homogenised generators.
    gens: list[list[int]] = []
    points = []
    for v in poly.vertices:
        flat = [v[cells[k][0]][cells[k][1]] for k in active]
        points.append(flat)
    scale = 1
    for flat in points:
        for e in flat:
            scale = lcm(scale, e.denominator)
    for flat in points:
        gens.append(_primitive([scale] + [int(e * scale) for e in flat]))
    for j in range(d):
        gens.append([0] + [-1 if k == j else 0 for k in range(d)])
    rays = extreme_rays(gens, d + 1)
    facets: list[tuple[list[Fraction], Fraction]] = []
    for r in rays:
        # The ray (b, -a) encodes b - a.x >= 0.
        b = Fraction(r[0])
        a = [Fraction(-e) for e in r[1:]]
        if not any(a):
            continue
        top = max(a)
        facets.append(([e / top for e in a], b / top))
    facets = sorted(set((tuple(a), b) for a, b in facets))
    facets = [(list(a), b) for a, b in facets]
    k = 0
    while k < len(facets):
        if len(facets) > 1 and _redundant(k, facets):
            facets.pop(k)
        else:
            k += 1
    for a, b in facets:
        coeffs = {cells[active[j]]: a[j] for j in range(d) if a[j]}
        out.append(LinearConstraint.from_cells((n, m), coeffs.keys(), b, coeffs=coeffs))
    return sorted(out, key=LinearConstraint.key)


# ---------------------------------------------------------------------------
# Classification


def classify(
    constraints: Iterable[LinearConstraint],
    shape: tuple[int, int],
    vertices: tuple[Matrix, ...] | None = None,
    downward_closed: bool = False,
) -> ConstraintSystem:
    """Split inequalities into forbidden cells, individual rows and priced rows.

    All ``b = 0`` inequalities merge into one by cellwise maximum; a trivial
    ``(0, 0)`` is used when there is none. Rows touching one agent become that
    agent's individual constraints; rows touching several agents are priced,
    in sorted canonical order with duplicates removed.
    """
    n, m = shape
    zero_rows = []
    individual: list[list[LinearConstraint]] = [[] for _ in range(n)]
    priced: list[LinearConstraint] = []
    for c in constraints:
        if c.shape != shape:
            raise InstanceError("constraint shape does not match the system")
        if any(v < 0 for row in c.a for v in row) or c.b < 0:
            raise InstanceError("constraints must have nonnegative coefficients and bounds")
        if c.b == 0:
            zero_rows.append(c)
            continue
        agents = c.agents
        if not agents:
            continue
        if len(agents) == 1:
            individual[next(iter(agents))].append(c)
        else:
            priced.append(c)
    merged = [[Fraction(0)] * m for _ in range(n)]
    for c in zero_rows:
        for i, l in c.support:
            merged[i][l] = max(merged[i][l], c.a[i][l])
    forbidden = LinearConstraint(tuple(tuple(r) for r in merged), Fraction(0), "forbidden")

    def dedupe(rows: list[LinearConstraint]) -> tuple[LinearConstraint, ...]:
        # Same coefficients: only the tightest bound matters.
        seen: dict = {}
        for c in sorted(rows, key=lambda c: (c.b, c.key())):
            seen.setdefault(c.a, c)
        return tuple(sorted(seen.values(), key=LinearConstraint.key))

    return ConstraintSystem(
        n,
        m,
        forbidden,
        tuple(dedupe(rows) for rows in individual),
        dedupe(priced),
        vertices,
        downward_closed,
    )


def flatten(system: ConstraintSystem) -> list[LinearConstraint]:
    """All nontrivial inequalities of a classified system."""
    return [c for c in system.all_constraints() if not c.is_trivial]
