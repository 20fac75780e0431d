"""Closed-form inequality systems for structured allocation problems.

Each generator returns the inequalities of the lower contour set directly,
avoiding generic facet enumeration: regional floors and ceilings, controlled
school choice with two student types, roommates, plus the dual transform for
bads and enumerators of deterministic assignments.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from math import ceil
from typing import Any, Hashable, Iterable, Iterator, Mapping, Sequence

from .lcs_preprocess import VPolytope, classify
from .model import (
    CapacityError,
    Cell,
    ConstraintSystem,
    Instance,
    InstanceError,
    LinearConstraint,
    to_fraction,
)

REGION_CAP = 12
SCHOOL_CAP = 12
ROOMMATE_CAP = 6
FULL_FAMILY_DEFAULT_MAX = 4
ENUMERATION_CAP = 200_000

Matrix = tuple[tuple[Fraction, ...], ...]


# ---------------------------------------------------------------------------
# Maximum matching


def max_matching(edges: Iterable[tuple[Hashable, Hashable]]) -> int:
    """Size of a maximum matching, by augmenting paths with blossom contraction."""
    index: dict[Hashable, int] = {}
    adj: list[list[int]] = []
    for u, v in edges:
        if u == v:
            continue
        for w in (u, v):
            if w not in index:
                index[w] = len(adj)
                adj.append([])
        a, b = index[u], index[v]
        if b not in adj[a]:
            adj[a].append(b)
            adj[b].append(a)
    n = len(adj)
    match = [-1] * n

    def find_path(root: int) -> int:
        used = [False] * n
        parent = [-1] * n
        base = list(range(n))
        used[root] = True
        queue = deque([root])

        def lca(a: int, b: int) -> int:
            seen = [False] * n
            while True:
                a = base[a]
                seen[a] = True
                if match[a] == -1:
                    break
                a = parent[match[a]]
            while True:
                b = base[b]
                if seen[b]:
                    return b
                b = parent[match[b]]

        def mark(v: int, b: int, child: int, blossom: list[bool]) -> None:
            while base[v] != b:
                blossom[base[v]] = blossom[base[match[v]]] = True
                parent[v] = child
                child = match[v]
                v = parent[match[v]]

        while queue:
            v = queue.popleft()
            for to in adj[v]:
                if base[v] == base[to] or match[v] == to:
                    continue
                if to == root or (match[to] != -1 and parent[match[to]] != -1):
                    cur = lca(v, to)
                    blossom = [False] * n
                    mark(v, cur, to, blossom)
                    mark(to, cur, v, blossom)
                    for i in range(n):
                        if blossom[base[i]]:
                            base[i] = cur
                            if not used[i]:
                                used[i] = True
                                queue.append(i)
                elif parent[to] == -1:
                    parent[to] = v
                    if match[to] == -1:
                        return augment(to, parent)
                    used[match[to]] = True
                    queue.append(match[to])
        return 0

    def augment(v: int, parent: list[int]) -> int:
        while v != -1:
            pv = parent[v]
            nxt = match[pv]
            match[v] = pv
            match[pv] = v
            v = nxt
        return 1

    size = 0
    for v in range(n):
        if match[v] == -1:
            size += find_path(v)
    return size


def max_matching_bruteforce(edges: Sequence[tuple[Hashable, Hashable]]) -> int:
    """Maximum matching by trying every edge subset; meant for at most ~12 edges."""
    edge_list = sorted({tuple(sorted((u, v), key=repr)) for u, v in edges if u != v}, key=repr)
    best = 0
    for mask in range(1 << len(edge_list)):
        used: set[Hashable] = set()
        ok = True
        count = 0
        for k, (u, v) in enumerate(edge_list):
            if mask >> k & 1:
                if u in used or v in used:
                    ok = False
                    break
                used.update((u, v))
                count += 1
        if ok and count > best:
            best = count
    return best


# ---------------------------------------------------------------------------
# Bihierarchy


@dataclass(frozen=True)
class BihierarchyResult:
    ok: bool
    families: tuple[tuple[int, ...], tuple[int, ...]] = ((), ())
    witness: tuple[int, int] | None = None
    reason: str = ""


def _crosses(s: frozenset, t: frozenset) -> bool:
    return bool(s & t) and not (s <= t or t <= s)


def check_bihierarchy(sets: Sequence[LinearConstraint | Iterable[Cell]], shape: tuple[int, int]) -> BihierarchyResult:
    """Split constraint sets into a row-type and a column-type laminar family.

    Row-type sets lie inside one row or are unions of whole rows; column-type
    sets are the transpose. Sets of both types (singletons, the full grid) may
    go to either family. Returns a crossing pair when no valid split exists.
    """
    n, m = shape
    supports: list[frozenset[Cell]] = []
    for s in sets:
        supports.append(s.support if isinstance(s, LinearConstraint) else frozenset(tuple(c) for c in s))
    allowed: list[set[int]] = []
    for k, s in enumerate(supports):
        rows = {i for i, _ in s}
        cols = {l for _, l in s}
        row_type = len(rows) <= 1 or s == frozenset((i, l) for i in rows for l in range(m))
        col_type = len(cols) <= 1 or s == frozenset((i, l) for i in range(n) for l in cols)
        opts = set()
        if row_type:
            opts.add(0)
        if col_type:
            opts.add(1)
        if not opts:
            return BihierarchyResult(False, witness=(k, k), reason="set is neither row-type nor column-type")
        allowed.append(opts)
    count = len(supports)
    neighbours: list[list[int]] = [[] for _ in range(count)]
    for a in range(count):
        for b in range(a + 1, count):
            if _crosses(supports[a], supports[b]):
                neighbours[a].append(b)
                neighbours[b].append(a)
    colour = [-1] * count
    order = sorted(range(count), key=lambda k: len(allowed[k]))
    for start in order:
        if colour[start] != -1:
            continue
        # Components containing a forced set are seeded from it.
        comp, queue, seen = [], deque([start]), {start}
        while queue:
            v = queue.popleft()
            comp.append(v)
            for w in neighbours[v]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        forced = [v for v in comp if len(allowed[v]) == 1]
        seed = forced[0] if forced else start
        colour[seed] = min(allowed[seed])
        queue = deque([seed])
        while queue:
            v = queue.popleft()
            for w in neighbours[v]:
                want = 1 - colour[v]
                if colour[w] == -1:
                    if want not in allowed[w]:
                        return BihierarchyResult(False, witness=(min(v, w), max(v, w)), reason="crossing sets in one family")
                    colour[w] = want
                    queue.append(w)
                elif colour[w] == colour[v]:
                    return BihierarchyResult(False, witness=(min(v, w), max(v, w)), reason="crossing sets in one family")
        for v in comp:
            if colour[v] == -1:
                colour[v] = min(allowed[v])
    fam0 = tuple(k for k in range(count) if colour[k] == 0)
    fam1 = tuple(k for k in range(count) if colour[k] == 1)
    return BihierarchyResult(True, (fam0, fam1))


# ---------------------------------------------------------------------------
# Shared pieces


def unit_demand_rows(shape: tuple[int, int]) -> list[LinearConstraint]:
    n, m = shape
    return [LinearConstraint.from_cells(shape, [(i, l) for l in range(m)], 1, f"row {i}") for i in range(n)]


def supply_columns(shape: tuple[int, int], quantities: Sequence) -> list[LinearConstraint]:
    n, m = shape
    return [
        LinearConstraint.from_cells(shape, [(i, l) for i in range(n)], to_fraction(quantities[l]), f"supply {l}")
        for l in range(m)
    ]


def _matrix_from_choice(choice: Sequence[int | None], shape: tuple[int, int]) -> Matrix:
    n, m = shape
    return tuple(
        tuple(Fraction(1) if choice[i] == l else Fraction(0) for l in range(m)) for i in range(n)
    )


def _check_enumeration(options: int, agents: int) -> None:
    if options**agents > ENUMERATION_CAP:
        raise CapacityError(
            f"enumerating {options}^{agents} deterministic assignments exceeds the cap of {ENUMERATION_CAP}"
        )


# ---------------------------------------------------------------------------
# Regional floors and ceilings


@dataclass(frozen=True)
class RegionalSpec:
    regions: tuple[tuple[int, ...], ...]
    floors: tuple[Fraction, ...]
    ceilings: tuple[Fraction, ...]

    @classmethod
    def from_instance(cls, instance: Instance) -> "RegionalSpec":
        spec = instance.constraints
        try:
            regions = tuple(tuple(instance.object_index(o) for o in r) for r in spec["regions"])
        except (KeyError, ValueError) as exc:
            raise InstanceError(f"regional specification: {exc}") from exc
        floors = tuple(to_fraction(v) for v in spec.get("floors", [0] * len(regions)))
        ceilings = tuple(to_fraction(v) for v in spec["ceilings"])
        return cls(regions, floors, ceilings)

    def check(self, num_agents: int, quantities: Sequence) -> None:
        k = len(self.regions)
        if len(self.floors) != k or len(self.ceilings) != k:
            raise InstanceError("regional floors and ceilings need one entry per region")
        flat = [l for r in self.regions for l in r]
        if sorted(flat) != list(range(len(quantities))):
            raise InstanceError("regions must partition the objects")
        if sum(self.floors) > num_agents:
            raise InstanceError("regional floors exceed the number of agents")
        for r, lo, hi in zip(self.regions, self.floors, self.ceilings):
            if lo < 0 or lo > hi:
                raise InstanceError("regional floor must lie between zero and the ceiling")
            if lo > sum(to_fraction(quantities[l]) for l in r):
                raise InstanceError("regional floor exceeds the region's supply")


def regional_ceilings(spec: RegionalSpec, num_agents: int, cap: int = REGION_CAP) -> dict[frozenset[int], Fraction]:
    """Derived ceiling for every nonempty union of regions.

    Singletons: ``min(ceiling, N - other floors)``. A union takes the smallest
    of ``ceiling(R minus one region) + ceiling(that region)`` over its members,
    and ``N - floors outside R``.
    """
    k = len(spec.regions)
    if k > cap:
        raise CapacityError(f"{k} regions exceed the cap of {cap}")
    total_floor = sum(spec.floors, Fraction(0))
    n = Fraction(num_agents)
    out: dict[frozenset[int], Fraction] = {}
    for r in range(k):
        out[frozenset([r])] = min(spec.ceilings[r], n - (total_floor - spec.floors[r]))
    for size in range(2, k + 1):
        for combo in itertools.combinations(range(k), size):
            union = frozenset(combo)
            outside = total_floor - sum((spec.floors[r] for r in combo), Fraction(0))
            best = n - outside
            for r in combo:
                best = min(best, out[union - {r}] + out[frozenset([r])])
            out[union] = best
    return out


def regional_deterministic(spec: RegionalSpec, num_agents: int, quantities: Sequence) -> list[Matrix]:
    """0/1 assignments, each agent to at most one object, meeting supply and regional quotas."""
    m = len(quantities)
    _check_enumeration(m + 1, num_agents)
    region_of = {l: k for k, r in enumerate(spec.regions) for l in r}
    out = []
    for choice in itertools.product(list(range(m)) + [None], repeat=num_agents):
        taken = [l for l in choice if l is not None]
        counts = [0] * m
        for l in taken:
            counts[l] += 1
        if any(counts[l] > quantities[l] for l in range(m)):
            continue
        per_region = [0] * len(spec.regions)
        for l in taken:
            per_region[region_of[l]] += 1
        if all(lo <= c <= hi for c, lo, hi in zip(per_region, spec.floors, spec.ceilings)):
            out.append(_matrix_from_choice(choice, (num_agents, m)))
    return out


def regional_system(spec: RegionalSpec, num_agents: int, quantities: Sequence, with_vertices: bool = True) -> ConstraintSystem:
    """Unit-demand rows, supply columns and one ceiling per union of regions."""
    spec.check(num_agents, quantities)
    shape = (num_agents, len(quantities))
    ceilings = regional_ceilings(spec, num_agents)
    rows = unit_demand_rows(shape) + supply_columns(shape, quantities)
    for union, value in sorted(ceilings.items(), key=lambda kv: (len(kv[0]), sorted(kv[0]))):
        objs = [l for r in sorted(union) for l in spec.regions[r]]
        cells = [(i, l) for i in range(num_agents) for l in objs]
        rows.append(LinearConstraint.from_cells(shape, cells, value, f"regions {sorted(union)}"))
    vertices = None
    if with_vertices and (len(quantities) + 1) ** num_agents <= ENUMERATION_CAP:
        found = regional_deterministic(spec, num_agents, [to_fraction(q) for q in quantities])
        if not found:
            raise InstanceError("no deterministic assignment meets the regional quotas")
        vertices = tuple(found)
    return classify(rows, shape, vertices)


# ---------------------------------------------------------------------------
# Controlled school choice


@dataclass(frozen=True)
class SchoolChoiceSpec:
    minority: frozenset[int]
    minority_quotas: tuple[tuple[Fraction, Fraction], ...]
    majority_quotas: tuple[tuple[Fraction, Fraction], ...]

    @classmethod
    def from_instance(cls, instance: Instance) -> "SchoolChoiceSpec":
        spec = instance.constraints
        try:
            minority = frozenset(instance.agent_index(a) for a in spec["minority_agents"])
            quotas = spec["quotas"]
            mino, majo = [], []
            for obj in instance.objects:
                q = quotas[obj]
                mino.append((to_fraction(q["minority"][0]), to_fraction(q["minority"][1])))
                majo.append((to_fraction(q["majority"][0]), to_fraction(q["majority"][1])))
        except (KeyError, ValueError, IndexError, TypeError) as exc:
            raise InstanceError(f"school choice specification: {exc}") from exc
        return cls(minority, tuple(mino), tuple(majo))

    def groups(self, num_agents: int) -> tuple[list[int], list[int]]:
        mino = sorted(self.minority)
        majo = [i for i in range(num_agents) if i not in self.minority]
        return mino, majo

    def check(self, num_agents: int, quantities: Sequence) -> None:
        m = len(quantities)
        if len(self.minority_quotas) != m or len(self.majority_quotas) != m:
            raise InstanceError("school choice quotas need one entry per school")
        mino, majo = self.groups(num_agents)
        for l in range(m):
            (lo_m, hi_m), (lo_M, hi_M) = self.minority_quotas[l], self.majority_quotas[l]
            if lo_m < 0 or lo_M < 0 or lo_m > hi_m or lo_M > hi_M:
                raise InstanceError("school quota floors must lie between zero and the ceiling")
            if lo_m + lo_M > to_fraction(quantities[l]):
                raise InstanceError("school floors exceed its capacity")
        if sum(q[0] for q in self.minority_quotas) > len(mino):
            raise InstanceError("minority floors exceed the number of minority students")
        if sum(q[0] for q in self.majority_quotas) > len(majo):
            raise InstanceError("majority floors exceed the number of majority students")


def school_choice_ceilings(
    spec: SchoolChoiceSpec, num_agents: int, quantities: Sequence, cap: int = SCHOOL_CAP
) -> tuple[dict[frozenset[int], Fraction], dict[frozenset[int], Fraction]]:
    """Derived per-type ceilings for every nonempty set of schools."""
    m = len(quantities)
    if m > cap:
        raise CapacityError(f"{m} schools exceed the cap of {cap}")
    mino, majo = spec.groups(num_agents)
    q = [to_fraction(v) for v in quantities]

    def derive(own, other, population: int) -> dict[frozenset[int], Fraction]:
        total_floor = sum((lo for lo, _ in own), Fraction(0))
        pop = Fraction(population)
        out: dict[frozenset[int], Fraction] = {}
        for l in range(m):
            out[frozenset([l])] = min(own[l][1], q[l] - other[l][0], pop - (total_floor - own[l][0]))
        for size in range(2, m + 1):
            for combo in itertools.combinations(range(m), size):
                subset = frozenset(combo)
                best = pop - (total_floor - sum((own[l][0] for l in combo), Fraction(0)))
                for l in combo:
                    best = min(best, out[subset - {l}] + out[frozenset([l])])
                out[subset] = best
        return out

    return (
        derive(spec.minority_quotas, spec.majority_quotas, len(mino)),
        derive(spec.majority_quotas, spec.minority_quotas, len(majo)),
    )


def school_choice_deterministic(spec: SchoolChoiceSpec, num_agents: int, quantities: Sequence) -> list[Matrix]:
    m = len(quantities)
    _check_enumeration(m + 1, num_agents)
    out = []
    for choice in itertools.product(list(range(m)) + [None], repeat=num_agents):
        counts_m = [0] * m
        counts_M = [0] * m
        for i, l in enumerate(choice):
            if l is None:
                continue
            if i in spec.minority:
                counts_m[l] += 1
            else:
                counts_M[l] += 1
        ok = all(
            counts_m[l] + counts_M[l] <= quantities[l]
            and spec.minority_quotas[l][0] <= counts_m[l] <= spec.minority_quotas[l][1]
            and spec.majority_quotas[l][0] <= counts_M[l] <= spec.majority_quotas[l][1]
            for l in range(m)
        )
        if ok:
            out.append(_matrix_from_choice(choice, (num_agents, m)))
    return out


def school_choice_system(spec: SchoolChoiceSpec, num_agents: int, quantities: Sequence, with_vertices: bool = True) -> ConstraintSystem:
    """Rows, supply columns and per-type ceilings over every nonempty set of schools."""
    spec.check(num_agents, quantities)
    shape = (num_agents, len(quantities))
    ceil_m, ceil_M = school_choice_ceilings(spec, num_agents, quantities)
    mino, majo = spec.groups(num_agents)
    rows = unit_demand_rows(shape) + supply_columns(shape, quantities)
    for label, group, table in (("minority", mino, ceil_m), ("majority", majo, ceil_M)):
        if not group:
            continue
        for subset, value in sorted(table.items(), key=lambda kv: (len(kv[0]), sorted(kv[0]))):
            cells = [(i, l) for i in group for l in sorted(subset)]
            rows.append(LinearConstraint.from_cells(shape, cells, value, f"{label} {sorted(subset)}"))
    vertices = None
    if with_vertices and (len(quantities) + 1) ** num_agents <= ENUMERATION_CAP:
        found = school_choice_deterministic(spec, num_agents, [to_fraction(q) for q in quantities])
        if not found:
            raise InstanceError("no deterministic assignment meets the school quotas")
        vertices = tuple(found)
    return classify(rows, shape, vertices)


# ---------------------------------------------------------------------------
# Roommates


def roommate_matchings(n: int) -> list[Matrix]:
    """All matchings as symmetric 0/1 matrices; unmatched agents sit on the diagonal."""

    def rec(rest: list[int]) -> Iterator[list[tuple[int, int]]]:
        if not rest:
            yield []
            return
        i = rest[0]
        for tail in rec(rest[1:]):
            yield [(i, i)] + tail
        for j in rest[1:]:
            remaining = [k for k in rest[1:] if k != j]
            for tail in rec(remaining):
                yield [(i, j)] + tail

    out = []
    for pairs in rec(list(range(n))):
        x = [[Fraction(0)] * n for _ in range(n)]
        for i, j in pairs:
            x[i][j] = Fraction(1)
            x[j][i] = Fraction(1)
        out.append(tuple(tuple(r) for r in x))
    return out


def _pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def roommate_families(
    n: int, full_families: bool | None = None, prune: bool = True
) -> tuple[list[tuple[frozenset[Cell], int]], list[tuple[int, frozenset[Cell]]]]:
    """Pair-set families with their matching numbers, and per-agent star families.

    With ``full_families`` every orientation-free pair set is considered
    (default only for ``n <= 4``); otherwise only orientations of complete
    graphs on odd agent sets are used. ``prune`` drops a pair set when adding
    another pair keeps the matching number, since the larger set implies it.
    """
    if n > ROOMMATE_CAP:
        raise CapacityError(f"{n} roommates exceed the cap of {ROOMMATE_CAP}")
    if full_families is None:
        full_families = n <= FULL_FAMILY_DEFAULT_MAX
    if full_families and n > 5:
        raise CapacityError("full pair-set families are limited to five roommates")
    pairs = _pairs(n)
    match_cache: dict[int, int] = {}

    def k_of(mask: int) -> int:
        if mask not in match_cache:
            match_cache[mask] = max_matching([pairs[t] for t in range(len(pairs)) if mask >> t & 1])
        return match_cache[mask]

    f_family: list[tuple[frozenset[Cell], int]] = []
    if full_families:
        for choice in itertools.product((0, 1, 2), repeat=len(pairs)):
            mask = sum(1 << t for t, c in enumerate(choice) if c)
            if not mask:
                continue
            k = k_of(mask)
            if prune and any(
                not (mask >> t & 1) and k_of(mask | 1 << t) == k for t in range(len(pairs))
            ):
                continue
            cells = frozenset(pairs[t] if c == 1 else pairs[t][::-1] for t, c in enumerate(choice) if c)
            f_family.append((cells, k))
    else:
        for size in range(3, n + 1, 2):
            for group in itertools.combinations(range(n), size):
                inner = [(i, j) for i, j in pairs if i in group and j in group]
                for orient in itertools.product((0, 1), repeat=len(inner)):
                    cells = frozenset(p if o == 0 else p[::-1] for p, o in zip(inner, orient))
                    f_family.append((cells, (size - 1) // 2))
    j_family: list[tuple[int, frozenset[Cell]]] = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for orient in itertools.product((0, 1), repeat=len(others)):
            cells = {(i, i)}
            for j, o in zip(others, orient):
                cells.add((i, j) if o == 0 else (j, i))
            j_family.append((i, frozenset(cells)))
    return f_family, j_family


def roommate_system(n: int, full_families: bool | None = None, prune: bool = True) -> ConstraintSystem:
    """Inequality system whose nonnegative solutions form the lower contour set
    of the matching polytope with ``n`` roommates."""
    shape = (n, n)
    f_family, j_family = roommate_families(n, full_families, prune)
    rows = [
        LinearConstraint.from_cells(shape, sorted(cells), k, "pairs") for cells, k in f_family
    ]
    rows += [LinearConstraint.from_cells(shape, sorted(cells), 1, f"star {i}") for i, cells in j_family]
    return classify(rows, shape, tuple(roommate_matchings(n)))


# ---------------------------------------------------------------------------
# Bads


BADS_KEY = "bads_dual"


def bads_dual(instance: Instance) -> Instance:
    """Goods instance over "avoidance" objects for a unit-demand market for bads.

    Consuming ``a`` of the dual object means consuming ``1 - a`` of the bad.
    Dual supply is ``N - q``; dual utility is ``-v`` with the constant
    ``sum_l v_{i,l}`` dropped and recorded in the metadata.

    Raises:
        InstanceError: if utilities are not all negative or there is no slack.
    """
    n, m = instance.num_agents, instance.num_objects
    if not instance.is_bads:
        raise InstanceError("bads transform needs strictly negative utilities")
    floors = [to_fraction(q) for q in instance.quantities]
    if sum(floors) >= n:
        raise InstanceError("no slack; problem is pure HZ (use the base solver)")
    _check_enumeration(m + 1, n)
    vertices = []
    for choice in itertools.product(list(range(m)) + [None], repeat=n):
        counts = [sum(1 for c in choice if c == l) for l in range(m)]
        if all(counts[l] >= floors[l] for l in range(m)):
            vertices.append([[0 if choice[i] == l else 1 for l in range(m)] for i in range(n)])
    constants = [sum((to_fraction(v) for v in row), Fraction(0)) for row in instance.utilities]
    metadata = dict(instance.metadata)
    metadata[BADS_KEY] = {
        "objects": list(instance.objects),
        "floors": list(floors),
        "constants": constants,
    }
    return Instance(
        agents=instance.agents,
        objects=tuple(f"not {o}" for o in instance.objects),
        quantities=tuple(n - q for q in floors),
        utilities=tuple(tuple(-v for v in row) for row in instance.utilities),
        constraints={"kind": "vertices", "vertices": vertices},
        endowments=None,
        alpha=instance.alpha,
        metadata=metadata,
    )


def primal_from_dual(x_dual: Sequence[Sequence[float]]) -> list[list[float]]:
    """Map a dual assignment back to bad consumption ``1 - x``."""
    return [[1.0 - float(v) for v in row] for row in x_dual]


# ---------------------------------------------------------------------------
# Enumerated deterministic assignments


def coalition_objects(num_agents: int) -> list[frozenset[int]]:
    """Nonempty agent subsets in bitmask order: the objects of a coalition problem."""
    return [frozenset(i for i in range(num_agents) if mask >> i & 1) for mask in range(1, 1 << num_agents)]


def set_partitions(items: list[int]) -> Iterator[list[list[int]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1 :]


def enumerate_coalitions(num_agents: int) -> VPolytope:
    if num_agents > 6:
        raise CapacityError("coalition enumeration is limited to six agents")
    objects = coalition_objects(num_agents)
    position = {s: k for k, s in enumerate(objects)}
    vertices = []
    for part in set_partitions(list(range(num_agents))):
        x = [[0] * len(objects) for _ in range(num_agents)]
        for block in part:
            col = position[frozenset(block)]
            for i in block:
                x[i][col] = 1
        vertices.append(x)
    return VPolytope.from_lists(vertices)


def enumerate_bundles(
    num_agents: int,
    bundles: Sequence[Sequence[int]],
    item_quantities: Sequence,
    bundle_quantities: Sequence | None = None,
) -> VPolytope:
    """Assignments giving each agent at most one bundle within item supplies."""
    m = len(bundles)
    _check_enumeration(m + 1, num_agents)
    vertices = []
    for choice in itertools.product(list(range(m)) + [None], repeat=num_agents):
        use = [0] * len(item_quantities)
        copies = [0] * m
        for c in choice:
            if c is None:
                continue
            copies[c] += 1
            for item in bundles[c]:
                use[item] += 1
        if any(u > q for u, q in zip(use, item_quantities)):
            continue
        if bundle_quantities is not None and any(c > q for c, q in zip(copies, bundle_quantities)):
            continue
        vertices.append(_matrix_from_choice(choice, (num_agents, m)))
    return VPolytope.from_lists(vertices)


def enumerate_deterministic(instance: Instance) -> VPolytope:
    """Deterministic assignments for coalition and bundle instances."""
    spec = instance.constraints
    kind = spec["kind"]
    n = instance.num_agents
    if kind == "coalitions":
        if instance.num_objects != (1 << n) - 1:
            raise InstanceError("a coalition instance needs one object per nonempty agent subset")
        return enumerate_coalitions(n)
    if kind == "bundles":
        try:
            items = [str(i) for i in spec["items"]]
            qty = [to_fraction(q) for q in spec["item_quantities"]]
            bundles = [[items.index(str(i)) for i in b] for b in spec["bundles"]]
        except (KeyError, ValueError) as exc:
            raise InstanceError(f"bundle specification: {exc}") from exc
        if len(bundles) != instance.num_objects:
            raise InstanceError("a bundle instance needs one object per bundle")
        return enumerate_bundles(n, bundles, qty, [to_fraction(q) for q in instance.quantities])
    raise InstanceError(f"no enumerator for constraint kind {kind!r}")


def enumerate_hierarchy(instance: Instance, sets: Sequence[Mapping[str, Any]]) -> VPolytope:
    """0/1 assignments with unit demand and supply meeting every set's quotas."""
    n, m = instance.num_agents, instance.num_objects
    _check_enumeration(m + 1, n)
    quantities = [to_fraction(q) for q in instance.quantities]
    parsed = [
        (
            [(instance.agent_index(a), instance.object_index(o)) for a, o in s["cells"]],
            to_fraction(s.get("floor", 0)),
            to_fraction(s["ceiling"]),
        )
        for s in sets
    ]
    vertices = []
    for choice in itertools.product(list(range(m)) + [None], repeat=n):
        counts = [sum(1 for c in choice if c == l) for l in range(m)]
        if any(c > q for c, q in zip(counts, quantities)):
            continue
        ok = True
        for cells, lo, hi in parsed:
            total = sum(1 for i, l in cells if choice[i] == l)
            if not lo <= total <= hi:
                ok = False
                break
        if ok:
            vertices.append(_matrix_from_choice(choice, (n, m)))
    if not vertices:
        raise InstanceError("no deterministic assignment meets the hierarchy quotas")
    return VPolytope.from_lists(vertices)
