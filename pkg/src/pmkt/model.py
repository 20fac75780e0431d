"""Core domain types, the instance file schema, and validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

Number = int | float | Fraction
Cell = tuple[int, int]

CONSTRAINT_KINDS = (
    "hz",
    "hierarchy",
    "regional",
    "school_choice",
    "roommates",
    "coalitions",
    "bundles",
    "vertices",
    "explicit",
)


class InstanceError(ValueError):
    """Raised when an instance or constraint specification is malformed."""


class CapacityError(InstanceError):
    """Raised when a generic routine is asked to work above its size cap."""


@dataclass(frozen=True)
class Tolerances:
    """Shared numerical tolerances, stated once."""

    utility: float = 1e-9
    feasibility: float = 1e-7
    lp: float = 1e-9
    equilibrium: float = 1e-6
    pareto: float = 1e-7
    certificate: float = 1e-9


TOL = Tolerances()


# ---------------------------------------------------------------------------
# Number handling


def parse_number(value: Any) -> Number:
    """Parse a JSON number or a ``"num/den"`` string."""
    if isinstance(value, bool):
        raise InstanceError(f"expected a number, got {value!r}")
    if isinstance(value, (int, Fraction)):
        return value
    if isinstance(value, float):
        if not np.isfinite(value):
            raise InstanceError(f"non-finite number {value!r}")
        return value
    if isinstance(value, str):
        try:
            frac = Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InstanceError(f"cannot parse number {value!r}") from exc
        return frac.numerator if frac.denominator == 1 else frac
    raise InstanceError(f"expected a number, got {value!r}")


def format_number(value: Number) -> Any:
    """Serialise a number: rationals as strings, floats and ints unchanged."""
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator)
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, (int, np.integer)):
        return int(value)
    return float(value)


def format_rational(value: Number) -> str:
    """Serialise an exact rational as a ``"num/den"`` decimal string."""
    frac = Fraction(value)
    if frac.denominator == 1:
        return str(frac.numerator)
    return f"{frac.numerator}/{frac.denominator}"


def to_fraction(value: Number) -> Fraction:
    return value if isinstance(value, Fraction) else Fraction(value)


def _matrix(values: Any, rows: int, cols: int, name: str) -> tuple[tuple[Number, ...], ...]:
    if not isinstance(values, Sequence) or len(values) != rows:
        raise InstanceError(f"{name} must have {rows} rows")
    out = []
    for r, row in enumerate(values):
        if not isinstance(row, Sequence) or isinstance(row, str) or len(row) != cols:
            raise InstanceError(f"{name}[{r}] must have {cols} entries")
        out.append(tuple(parse_number(v) for v in row))
    return tuple(out)


# ---------------------------------------------------------------------------
# Instance


@dataclass(frozen=True)
class Instance:
    """An allocation problem: agents, objects, utilities and constraints."""

    agents: tuple[str, ...]
    objects: tuple[str, ...]
    quantities: tuple[Number, ...]
    utilities: tuple[tuple[Number, ...], ...]
    constraints: Mapping[str, Any] = field(default_factory=lambda: {"kind": "hz"})
    endowments: tuple[tuple[Number, ...], ...] | None = None
    alpha: Number = 1.0
    metadata: Mapping[str, Any] = field(default_factory=dict)

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    @property
    def num_objects(self) -> int:
        return len(self.objects)

    @property
    def kind(self) -> str:
        return str(self.constraints.get("kind", ""))

    @property
    def has_endowments(self) -> bool:
        return self.endowments is not None

    @property
    def is_bads(self) -> bool:
        return bool(self.utilities) and all(
            all(float(v) < 0 for v in row) for row in self.utilities
        )

    def utility_matrix(self) -> NDArray[np.float64]:
        return np.array([[float(v) for v in row] for row in self.utilities], dtype=float)

    def endowment_matrix(self) -> NDArray[np.float64] | None:
        if self.endowments is None:
            return None
        return np.array([[float(v) for v in row] for row in self.endowments], dtype=float)

    def quantity_vector(self) -> NDArray[np.float64]:
        return np.array([float(q) for q in self.quantities], dtype=float)

    def agent_index(self, agent: Any) -> int:
        if isinstance(agent, int) and not isinstance(agent, bool) and agent not in self.agents:
            return agent
        return self.agents.index(str(agent))

    def object_index(self, obj: Any) -> int:
        if isinstance(obj, int) and not isinstance(obj, bool) and obj not in self.objects:
            return obj
        return self.objects.index(str(obj))

    def replace(self, **changes: Any) -> "Instance":
        data = {
            "agents": self.agents,
            "objects": self.objects,
            "quantities": self.quantities,
            "utilities": self.utilities,
            "constraints": self.constraints,
            "endowments": self.endowments,
            "alpha": self.alpha,
            "metadata": self.metadata,
        }
        data.update(changes)
        return Instance(**data)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Instance":
        """Build an instance from the JSON schema, checking shapes."""
        if not isinstance(data, Mapping):
            raise InstanceError("instance must be a JSON object")
        for key in ("agents", "objects", "quantities", "utilities"):
            if key not in data:
                raise InstanceError(f"missing key {key!r}")
        agents = tuple(str(a) for a in data["agents"])
        objects = tuple(str(o) for o in data["objects"])
        quantities = data["quantities"]
        if not isinstance(quantities, Sequence) or len(quantities) != len(objects):
            raise InstanceError("quantities must have one entry per object")
        quantities = tuple(parse_number(q) for q in quantities)
        utilities = _matrix(data["utilities"], len(agents), len(objects), "utilities")
        endowments = None
        if data.get("endowments") is not None:
            endowments = _matrix(data["endowments"], len(agents), len(objects), "endowments")
        alpha = parse_number(data.get("alpha", 1.0))
        constraints = data.get("constraints", {"kind": "hz"})
        if not isinstance(constraints, Mapping) or "kind" not in constraints:
            raise InstanceError("constraints must be an object with a 'kind' tag")
        if constraints["kind"] not in CONSTRAINT_KINDS:
            raise InstanceError(f"unknown constraint kind {constraints['kind']!r}")
        metadata = dict(data.get("metadata", {}))
        return cls(
            agents=agents,
            objects=objects,
            quantities=quantities,
            utilities=utilities,
            constraints=dict(constraints),
            endowments=endowments,
            alpha=alpha,
            metadata=metadata,
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "agents": list(self.agents),
            "objects": list(self.objects),
            "quantities": [format_number(q) for q in self.quantities],
            "utilities": [[format_number(v) for v in row] for row in self.utilities],
        }
        if self.endowments is not None:
            out["endowments"] = [[format_number(v) for v in row] for row in self.endowments]
        out["alpha"] = format_number(self.alpha)
        out["constraints"] = _jsonable(self.constraints)
        if self.metadata:
            out["metadata"] = _jsonable(self.metadata)
        return out


def _jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (Fraction, float, np.floating, np.integer)) and not isinstance(value, bool):
        return format_number(value)
    return value


def load_instance(path: str | Path) -> Instance:
    """Read an instance JSON file."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return Instance.from_dict(data)


def dump_json(data: Any) -> str:
    """Byte-stable JSON serialisation used for every file the package writes."""
    return json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Constraints


@dataclass(frozen=True)
class LinearConstraint:
    """Inequality ``a . x <= b`` with ``a >= 0`` over agent-object cells."""

    a: tuple[tuple[Fraction, ...], ...]
    b: Fraction
    label: str = ""

    @classmethod
    def from_cells(
        cls, shape: tuple[int, int], cells: Iterable[Cell], b: Number, label: str = "",
        coeffs: Mapping[Cell, Number] | None = None,
    ) -> "LinearConstraint":
        n, m = shape
        a = [[Fraction(0)] * m for _ in range(n)]
        for i, l in cells:
            a[i][l] = to_fraction(coeffs[(i, l)]) if coeffs else Fraction(1)
        return cls(tuple(tuple(r) for r in a), to_fraction(b), label)

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.a), len(self.a[0]) if self.a else 0)

    @cached_property
    def support(self) -> frozenset[Cell]:
        return frozenset(
            (i, l) for i, row in enumerate(self.a) for l, v in enumerate(row) if v > 0
        )

    @cached_property
    def agents(self) -> frozenset[int]:
        return frozenset(i for i, _ in self.support)

    @cached_property
    def dense(self) -> NDArray[np.float64]:
        return np.array([[float(v) for v in row] for row in self.a], dtype=float)

    @property
    def is_trivial(self) -> bool:
        return not self.support and self.b == 0

    def row(self, i: int) -> tuple[Fraction, ...]:
        return self.a[i]

    def value(self, x: Any) -> Any:
        """``a . x`` for a float matrix or a matrix of Fractions."""
        if isinstance(x, np.ndarray) and x.dtype != object:
            return float(np.sum(self.dense * x))
        total = Fraction(0)
        for i, l in self.support:
            total += self.a[i][l] * to_fraction(x[i][l])
        return total

    def key(self) -> tuple:
        flat = tuple(v for row in self.a for v in row)
        return (tuple(sorted(self.support)), flat, self.b)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "a": [[format_rational(v) for v in row] for row in self.a],
            "b": format_rational(self.b),
        }
        if self.label:
            out["label"] = self.label
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], shape: tuple[int, int] | None = None) -> "LinearConstraint":
        a = data["a"]
        if shape is not None:
            if len(a) != shape[0] or any(len(r) != shape[1] for r in a):
                raise InstanceError("constraint coefficient matrix has the wrong shape")
        rows = tuple(tuple(to_fraction(parse_number(v)) for v in row) for row in a)
        b = to_fraction(parse_number(data["b"]))
        return cls(rows, b, str(data.get("label", "")))

    def normalized(self) -> "LinearConstraint":
        """Rescale so the largest coefficient equals one."""
        top = max((v for row in self.a for v in row), default=Fraction(0))
        if top <= 0:
            return self
        return LinearConstraint(
            tuple(tuple(v / top for v in row) for row in self.a), self.b / top, self.label
        )


@dataclass(frozen=True)
class ConstraintSystem:
    """Classified inequality system: forbidden cells, individual and priced rows.

    ``vertices`` optionally lists deterministic assignments whose convex hull is
    the feasible set; ``downward_closed`` records that the feasible set equals
    its own lower contour set, so satisfying the inequalities is membership.
    """

    num_agents: int
    num_objects: int
    forbidden: LinearConstraint
    individual: tuple[tuple[LinearConstraint, ...], ...]
    priced: tuple[LinearConstraint, ...]
    vertices: tuple[tuple[tuple[Fraction, ...], ...], ...] | None = None
    downward_closed: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_agents, self.num_objects)

    @property
    def num_priced(self) -> int:
        return len(self.priced)

    def all_constraints(self) -> list[LinearConstraint]:
        out = [self.forbidden]
        for rows in self.individual:
            out.extend(rows)
        out.extend(self.priced)
        return out

    @cached_property
    def priced_tensor(self) -> NDArray[np.float64]:
        """Coefficients of the priced constraints, shape (K, N, L)."""
        if not self.priced:
            return np.zeros((0, self.num_agents, self.num_objects))
        return np.stack([c.dense for c in self.priced])

    @cached_property
    def priced_rhs(self) -> NDArray[np.float64]:
        return np.array([float(c.b) for c in self.priced], dtype=float)

    @cached_property
    def _forbidden_masks(self) -> NDArray[np.bool_]:
        return np.array([[v > 0 for v in row] for row in self.forbidden.a], dtype=bool).reshape(
            self.num_agents, self.num_objects)

    def forbidden_mask(self, i: int) -> NDArray[np.bool_]:
        return self._forbidden_masks[i].copy()

    @cached_property
    def _consumption(self) -> tuple:
        out = []
        for i in range(self.num_agents):
            rows = np.array([[float(v) for v in c.a[i]] for c in self.individual[i]], dtype=float)
            rhs = np.array([float(c.b) for c in self.individual[i]], dtype=float)
            if rows.size == 0:
                rows = np.zeros((0, self.num_objects))
            out.append((rows, rhs, self.forbidden_mask(i)))
        return tuple(out)

    def consumption_set(self, i: int) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.bool_]]:
        """Agent ``i``'s consumption polytope as (rows, rhs, forbidden mask)."""
        return self._consumption[i]

    @cached_property
    def vertex_array(self) -> NDArray[np.float64] | None:
        if self.vertices is None:
            return None
        return np.array([[[float(v) for v in row] for row in vert] for vert in self.vertices], dtype=float)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "agents": self.num_agents,
            "objects": self.num_objects,
            "forbidden": self.forbidden.to_dict(),
            "individual": [[c.to_dict() for c in rows] for rows in self.individual],
            "priced": [c.to_dict() for c in self.priced],
            "downward_closed": self.downward_closed,
        }
        if self.vertices is not None:
            out["vertices"] = [[[format_rational(v) for v in row] for row in vert] for vert in self.vertices]
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ConstraintSystem":
        n, m = int(data["agents"]), int(data["objects"])
        shape = (n, m)
        forbidden = LinearConstraint.from_dict(data["forbidden"], shape)
        individual = tuple(
            tuple(LinearConstraint.from_dict(c, shape) for c in rows) for rows in data["individual"]
        )
        if len(individual) != n:
            raise InstanceError("system must list individual constraints for every agent")
        priced = tuple(LinearConstraint.from_dict(c, shape) for c in data["priced"])
        vertices = None
        if data.get("vertices") is not None:
            vertices = tuple(
                tuple(tuple(to_fraction(parse_number(v)) for v in row) for row in vert)
                for vert in data["vertices"]
            )
        return cls(n, m, forbidden, individual, priced, vertices, bool(data.get("downward_closed", False)))


# ---------------------------------------------------------------------------
# Prices and types


def personalized_prices(system: ConstraintSystem, p: Sequence[float] | NDArray[np.float64]) -> NDArray[np.float64]:
    """Matrix of personalised prices ``p_{i,l} = sum_c a^c_{i,l} p_c``.

    Raises:
        ValueError: if ``p`` does not have one entry per priced constraint.
    """
    prices = np.asarray(p, dtype=float)
    if prices.shape != (system.num_priced,):
        raise ValueError(
            f"price vector has {prices.size} entries but the system has {system.num_priced} priced constraints"
        )
    if system.num_priced == 0:
        return np.zeros(system.shape)
    return np.tensordot(prices, system.priced_tensor, axes=1)


def equal_type_partition(instance: Instance, system: ConstraintSystem) -> list[list[int]]:
    """Group agents with identical consumption sets, priced coefficients and endowments."""
    groups: dict[tuple, list[int]] = {}
    for i in range(system.num_agents):
        individual = tuple(sorted((c.a[i], c.b) for c in system.individual[i]))
        priced = tuple(c.a[i] for c in system.priced)
        endow = tuple(to_fraction(v) for v in instance.endowments[i]) if instance.endowments is not None else None
        key = (system.forbidden.a[i], individual, priced, endow)
        groups.setdefault(key, []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(instance: Instance, system: ConstraintSystem | None = None) -> ValidationReport:
    """List every violated instance invariant; an empty report means well-formed."""
    problems: list[str] = []
    n, m = instance.num_agents, instance.num_objects
    if n < 1:
        problems.append("empty agent set")
    if m < 1:
        problems.append("empty object set")
    if len(set(instance.agents)) != n:
        problems.append("agent ids must be unique")
    if len(set(instance.objects)) != m:
        problems.append("object ids must be unique")
    for l, q in enumerate(instance.quantities):
        if not float(q) > 0:
            name = instance.objects[l] if l < m else l
            problems.append(f"quantity must be positive (object {name})")
    alpha = float(instance.alpha)
    if not 0 < alpha <= 1:
        problems.append("alpha must lie in (0, 1]")
    u = instance.utility_matrix() if n and m else np.zeros((0, 0))
    if u.size:
        if instance.is_bads:
            pass
        elif np.any(u < 0):
            problems.append("utilities must be all nonnegative (goods) or all negative (bads)")
        else:
            for i in range(n):
                if not np.any(u[i] > 0):
                    problems.append(f"utility of agent {instance.agents[i]} has no positive entry")
    endow = instance.endowment_matrix()
    if endow is not None and np.any(endow < 0):
        problems.append("endowments must be nonnegative")
    if problems:
        return ValidationReport(tuple(problems))
    if instance.is_bads:
        return ValidationReport(())
    if system is None:
        from .pipeline import build_system

        try:
            system = build_system(instance)
        except InstanceError as exc:
            return ValidationReport((f"constraint specification invalid: {exc}",))
    if endow is not None:
        from .diagnostics import membership

        verdict = membership(endow, system)
        if not verdict.member:
            problems.append("endowment infeasible")
        for k, c in enumerate(system.priced):
            if float(np.sum(c.dense * endow)) <= 0:
                problems.append(f"endowment gives no weight to priced constraint {k}")
    return ValidationReport(tuple(problems))
