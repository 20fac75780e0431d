"""Dispatch from an instance's constraint specification to a classified system."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

from .lcs_preprocess import DEFAULT_CAP, VPolytope, classify, lcs_facets
from .model import (
    ConstraintSystem,
    Instance,
    InstanceError,
    LinearConstraint,
    parse_number,
    to_fraction,
)
from .structured_constraints import (
    ENUMERATION_CAP,
    RegionalSpec,
    SchoolChoiceSpec,
    bads_dual,
    check_bihierarchy,
    enumerate_deterministic,
    enumerate_hierarchy,
    regional_system,
    roommate_system,
    school_choice_system,
    supply_columns,
    unit_demand_rows,
)


def normalize_utilities(instance: Instance) -> tuple[Instance, list[Fraction]]:
    """Rescale each agent's utility vector to max-abs 1; returns the scales used."""
    scales = []
    rows = []
    for row in instance.utilities:
        top = max(abs(to_fraction(v)) for v in row)
        scale = top if top > 0 else Fraction(1)
        scales.append(scale)
        rows.append(tuple(to_fraction(v) / scale for v in row))
    metadata = dict(instance.metadata)
    metadata["utility_scales"] = list(scales)
    return instance.replace(utilities=tuple(rows), metadata=metadata), scales


def hz_vertices(instance: Instance) -> tuple | None:
    """Maximal integral assignments under unit demand and supply.

    Returns None when some quantity is fractional or enumeration is too large.
    """
    n, m = instance.num_agents, instance.num_objects
    q = [to_fraction(v) for v in instance.quantities]
    if any(v.denominator != 1 for v in q) or (m + 1) ** n > ENUMERATION_CAP:
        return None
    out = []
    for choice in itertools.product(list(range(m)) + [None], repeat=n):
        counts = [sum(1 for c in choice if c == l) for l in range(m)]
        if any(c > cap for c, cap in zip(counts, q)):
            continue
        if None in choice and any(c < cap for c, cap in zip(counts, q)):
            continue
        out.append(tuple(tuple(Fraction(int(choice[i] == l)) for l in range(m)) for i in range(n)))
    return tuple(out)


def _explicit_rows(instance: Instance, entries: list[Any]) -> list[LinearConstraint]:
    shape = (instance.num_agents, instance.num_objects)
    rows = []
    for entry in entries:
        if "a" in entry:
            rows.append(LinearConstraint.from_dict(entry, shape))
            continue
        cells = [(instance.agent_index(a), instance.object_index(o)) for a, o in entry["cells"]]
        coeffs = None
        if "coefficients" in entry:
            coeffs = {c: parse_number(v) for c, v in zip(cells, entry["coefficients"])}
        rows.append(LinearConstraint.from_cells(shape, cells, parse_number(entry["b"]), str(entry.get("label", "")), coeffs))
    return rows


def build_system(instance: Instance, cap: int = DEFAULT_CAP, full_families: bool | None = None) -> ConstraintSystem:
    """Classified inequality system for ``instance`` according to its constraint kind.

    Raises:
        InstanceError: on a malformed specification.
        CapacityError: when generic facet enumeration would exceed ``cap``.
    """
    spec = instance.constraints
    kind = instance.kind
    shape = (instance.num_agents, instance.num_objects)
    n, m = shape
    try:
        if kind == "hz":
            rows = unit_demand_rows(shape) + supply_columns(shape, instance.quantities)
            return classify(rows, shape, hz_vertices(instance))
        if kind == "hierarchy":
            sets = list(spec.get("sets", []))
            rows = unit_demand_rows(shape) + supply_columns(shape, instance.quantities)
            ceilings = []
            for s in sets:
                cells = [(instance.agent_index(a), instance.object_index(o)) for a, o in s["cells"]]
                ceilings.append(LinearConstraint.from_cells(shape, cells, parse_number(s["ceiling"]), str(s.get("label", ""))))
            verdict = check_bihierarchy(rows + ceilings, shape)
            if not verdict.ok:
                raise InstanceError(f"constraint sets are not a bihierarchy: {verdict.reason} {verdict.witness}")
            if all(to_fraction(parse_number(s.get("floor", 0))) == 0 for s in sets):
                return classify(rows + ceilings, shape, downward_closed=True)
            poly = enumerate_hierarchy(instance, sets)
            return classify(lcs_facets(poly, cap), shape, poly.vertices)
        if kind == "regional":
            return regional_system(RegionalSpec.from_instance(instance), n, instance.quantities)
        if kind == "school_choice":
            return school_choice_system(SchoolChoiceSpec.from_instance(instance), n, instance.quantities)
        if kind == "roommates":
            if n != m:
                raise InstanceError("a roommates instance needs one object per agent")
            flag = spec.get("full_families", full_families) if full_families is None else full_families
            return roommate_system(n, flag, bool(spec.get("prune", True)))
        if kind in ("coalitions", "bundles"):
            poly = enumerate_deterministic(instance)
            return classify(lcs_facets(poly, cap), shape, poly.vertices)
        if kind == "vertices":
            poly = VPolytope.from_lists(spec["vertices"])
            if poly.shape != shape:
                raise InstanceError("vertex matrices do not match the instance shape")
            return classify(lcs_facets(poly, cap), shape, poly.vertices)
        if kind == "explicit":
            return classify(_explicit_rows(instance, list(spec["constraints"])), shape, downward_closed=True)
    except (KeyError, TypeError) as exc:
        raise InstanceError(f"{kind} specification is missing or has a malformed field: {exc}") from exc
    raise InstanceError(f"unknown constraint kind {kind!r}")


@dataclass(frozen=True)
class Prepared:
    """An instance made ready for solving, with what is needed to map results back."""

    original: Instance
    working: Instance
    system: ConstraintSystem
    scales: tuple[Fraction, ...]
    bads: bool


def prepare(
    instance: Instance, system: ConstraintSystem | None = None, cap: int = DEFAULT_CAP,
    full_families: bool | None = None,
) -> Prepared:
    """Validate, move bads to their dual goods market, rescale utilities and build the system.

    Raises:
        InstanceError: listing every violated invariant.
    """
    from .model import validate

    report = validate(instance, system) if instance.is_bads or system is not None else None
    bads = instance.is_bads
    working = bads_dual(instance) if bads else instance
    working, scales = normalize_utilities(working)
    if system is None:
        system = build_system(working, cap, full_families)
    if report is None:
        report = validate(working, system)
    if not report.ok:
        raise InstanceError("; ".join(report.violations))
    if system.shape != (working.num_agents, working.num_objects):
        raise InstanceError("constraint system does not match the instance shape")
    return Prepared(instance, working, system, tuple(scales), bads)
