"""Symbolic monitoring capabilities, tasks, matching, and integration logic.

A capability describes what one collector can observe as a triple of
entity classes, typed attributes, and event types; a task describes what a
monitoring goal needs in the same vocabulary. `matches`/`mu` decide whether
a single collector covers a task, and `eval_integration` interprets the
operator expressions that recombine subtask outputs into the original
task's output. All types are immutable values; every operation is pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from fnmatch import fnmatchcase

from .errors import InputError


class UnresolvedReferenceError(InputError):
    """An expression leaf names a subtask with no supplied output."""


class IntegrationTypeError(InputError):
    """Operator applied to operands of the wrong shape or type."""


class Dtype(str, Enum):
    INT = "Int"
    REAL = "Real"
    BOOL = "Bool"
    STR = "Str"
    LIST = "List"
    SET = "Set"
    KEYVALUE = "KeyValue"
    TIMESERIES = "TimeSeries"


@dataclass(frozen=True)
class AttributeSpec:
    """One monitored property: its name and its data type.

    Matching is on the exact (name, dtype) pair; there is no implicit
    numeric coercion (an Int attribute does not satisfy a Real request).
    """

    name: str
    dtype: Dtype


class ImplClass(str, Enum):
    EXISTING = "Existing"
    NEW_USER = "NewUser"
    NEW_KERNEL = "NewKernel"
    NEW_HARDWARE = "NewHardware"


@dataclass(frozen=True)
class CapabilityTriple:
    name: str
    entities: frozenset[str]
    attributes: frozenset[AttributeSpec]
    events: frozenset[str]
    impl_class: ImplClass = ImplClass.EXISTING
    overhead: float = 0.1  # normalized performance impact in [0, 1]

    def __post_init__(self):
        if not self.entities or not self.events:
            raise ValueError(f"capability {self.name!r}: entities and events must be non-empty")
        if not 0.0 <= self.overhead <= 1.0:
            raise ValueError(f"capability {self.name!r}: overhead must be in [0, 1]")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    entities: frozenset[str]
    attributes: frozenset[AttributeSpec]
    events: frozenset[str]

    def __post_init__(self):
        if not self.entities or not self.events:
            raise ValueError(f"task {self.name!r}: entities and events must be non-empty")


def matches(task: TaskSpec, cap: CapabilityTriple) -> bool:
    """True iff a single capability covers all three task components."""
    return (
        task.entities <= cap.entities
        and task.attributes <= cap.attributes
        and task.events <= cap.events
    )


def mu(task: TaskSpec, catalog: list[CapabilityTriple]) -> int:
    """1 iff some catalog capability alone satisfies the task, else 0."""
    return 1 if any(matches(task, c) for c in catalog) else 0


# --- integration expressions --------------------------------------------

# Operator arities. sum/avg take an optional second operand naming the
# numeric record field; split's optional second operand is the delimiter
# (the unary form splits on whitespace).
_ARITY = {
    "and": (2, 2), "or": (2, 2), "not": (1, 1),
    "in": (2, 2), "subset": (2, 2), "union": (2, 2), "intersect": (2, 2),
    "match": (2, 2), "concat": (2, 2), "split": (1, 2), "contains": (2, 2),
    "gt": (2, 2), "lt": (2, 2), "eq": (2, 2),
    "sum": (1, 2), "avg": (1, 2),
    "name_join": (2, 2),
}


@dataclass(frozen=True)
class IntegrationExpr:
    """Operator AST node; leaves reference subtask output streams or literals."""

    op: str
    children: tuple["IntegrationExpr", ...] = ()
    ref: str | None = None       # subtask name, for op == "subtask"
    value: object = None         # constant, for op == "lit"
    binding: str | None = None   # collector bound to a subtask leaf

    def __post_init__(self):
        if self.op == "subtask":
            if not self.ref:
                raise ValueError("subtask leaf requires a ref")
        elif self.op == "lit":
            pass
        elif self.op in _ARITY:
            lo, hi = _ARITY[self.op]
            if not lo <= len(self.children) <= hi:
                raise ValueError(
                    f"operator {self.op!r} takes {lo}..{hi} operands, got {len(self.children)}"
                )
        else:
            raise ValueError(f"unknown operator {self.op!r}")

    @staticmethod
    def leaf(ref: str, binding: str | None = None) -> "IntegrationExpr":
        return IntegrationExpr("subtask", ref=ref, binding=binding)

    @staticmethod
    def lit(value) -> "IntegrationExpr":
        return IntegrationExpr("lit", value=value)

    def with_binding(self, binding: str) -> "IntegrationExpr":
        return IntegrationExpr("subtask", ref=self.ref, binding=binding)

    def leaves(self) -> list["IntegrationExpr"]:
        if self.op == "subtask":
            return [self]
        out = []
        for child in self.children:
            out.extend(child.leaves())
        return out

    def to_json(self) -> dict:
        if self.op == "subtask":
            doc = {"op": "subtask", "ref": self.ref}
            if self.binding is not None:
                doc["binding"] = self.binding
            return doc
        if self.op == "lit":
            return {"op": "lit", "value": self.value}
        return {"op": self.op, "children": [c.to_json() for c in self.children]}

    @classmethod
    def from_json(cls, doc) -> "IntegrationExpr":
        if not isinstance(doc, dict) or "op" not in doc:
            raise InputError("expression node must be an object with an 'op' field")
        op = doc["op"]
        if op == "subtask":
            return cls.leaf(doc.get("ref", ""), doc.get("binding"))
        if op == "lit":
            return cls.lit(doc.get("value"))
        children = tuple(cls.from_json(c) for c in doc.get("children", []))
        try:
            return cls(op, children)
        except ValueError as exc:
            raise InputError(str(exc)) from None


@dataclass(frozen=True)
class CollectedOutput:
    """Records produced by one subtask's collector."""

    subtask: str
    records: tuple[dict, ...]

    @staticmethod
    def of(subtask: str, records) -> "CollectedOutput":
        return CollectedOutput(subtask, tuple(dict(r) for r in records))


def _freeze(value):
    if isinstance(value, dict):
        return tuple(sorted((k, _freeze(v)) for k, v in value.items()))
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    return value


def _dedup(records):
    seen = set()
    out = []
    for r in records:
        key = _freeze(r)
        if key not in seen:
            seen.add(key)
            out.append(r)
    return out


def _as_records(value, op):
    if isinstance(value, list) and all(isinstance(r, dict) for r in value):
        return value
    raise IntegrationTypeError(f"{op}: expected a record stream")


def _as_number(value, op):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return value
    raise IntegrationTypeError(f"{op}: expected a number, got {type(value).__name__}")


def _as_str(value, op):
    if isinstance(value, str):
        return value
    raise IntegrationTypeError(f"{op}: expected a string, got {type(value).__name__}")


def _as_bool(value, op):
    if isinstance(value, bool):
        return value
    raise IntegrationTypeError(f"{op}: expected a boolean, got {type(value).__name__}")


def _numeric_collection(expr, outputs, op):
    """Evaluate sum/avg operands to a list of numbers.

    One operand: a numeric list. Two operands: a record stream plus a
    literal field name to project.
    """
    first = _eval(expr.children[0], outputs)
    if len(expr.children) == 1:
        if isinstance(first, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in first
        ):
            return first
        raise IntegrationTypeError(f"{op}: single operand must be a numeric list")
    fname = _eval(expr.children[1], outputs)
    fname = _as_str(fname, op)
    values = []
    for r in _as_records(first, op):
        if fname not in r:
            raise IntegrationTypeError(f"{op}: record missing field {fname!r}")
        values.append(_as_number(r[fname], op))
    return values


def _eval(expr: IntegrationExpr, outputs: dict[str, CollectedOutput]):
    op = expr.op
    if op == "subtask":
        if expr.ref not in outputs:
            raise UnresolvedReferenceError(f"no output supplied for subtask {expr.ref!r}")
        return [dict(r) for r in outputs[expr.ref].records]
    if op == "lit":
        return expr.value

    if op in ("union", "intersect"):
        left = _as_records(_eval(expr.children[0], outputs), op)
        right = _as_records(_eval(expr.children[1], outputs), op)
        if op == "union":
            return _dedup(left + right)
        right_keys = {_freeze(r) for r in right}
        return _dedup([r for r in left if _freeze(r) in right_keys])
    if op == "name_join":
        left = _as_records(_eval(expr.children[0], outputs), op)
        right = _as_records(_eval(expr.children[1], outputs), op)
        return _name_join_records(left, right)

    if op in ("and", "or"):
        a = _as_bool(_eval(expr.children[0], outputs), op)
        b = _as_bool(_eval(expr.children[1], outputs), op)
        return (a and b) if op == "and" else (a or b)
    if op == "not":
        return not _as_bool(_eval(expr.children[0], outputs), op)

    if op == "in":
        item = _eval(expr.children[0], outputs)
        coll = _eval(expr.children[1], outputs)
        if not isinstance(coll, list):
            raise IntegrationTypeError("in: right operand must be a collection")
        key = _freeze(item)
        return any(_freeze(v) == key for v in coll)
    if op == "subset":
        left = _eval(expr.children[0], outputs)
        right = _eval(expr.children[1], outputs)
        if not isinstance(left, list) or not isinstance(right, list):
            raise IntegrationTypeError("subset: both operands must be collections")
        rkeys = {_freeze(v) for v in right}
        return all(_freeze(v) in rkeys for v in left)

    if op == "match":
        s = _as_str(_eval(expr.children[0], outputs), op)
        pattern = _as_str(_eval(expr.children[1], outputs), op)
        return fnmatchcase(s, pattern)
    if op == "concat":
        return _as_str(_eval(expr.children[0], outputs), op) + _as_str(
            _eval(expr.children[1], outputs), op
        )
    if op == "split":
        s = _as_str(_eval(expr.children[0], outputs), op)
        if len(expr.children) == 1:
            return s.split()
        return s.split(_as_str(_eval(expr.children[1], outputs), op))
    if op == "contains":
        s = _as_str(_eval(expr.children[0], outputs), op)
        return _as_str(_eval(expr.children[1], outputs), op) in s

    if op in ("gt", "lt"):
        a = _as_number(_eval(expr.children[0], outputs), op)
        b = _as_number(_eval(expr.children[1], outputs), op)
        return a > b if op == "gt" else a < b
    if op == "eq":
        return _freeze(_eval(expr.children[0], outputs)) == _freeze(
            _eval(expr.children[1], outputs)
        )

    if op == "sum":
        return sum(_numeric_collection(expr, outputs, op))
    if op == "avg":
        values = _numeric_collection(expr, outputs, op)
        if not values:
            raise IntegrationTypeError("avg: empty collection")
        return sum(values) / len(values)

    raise IntegrationTypeError(f"unknown operator {op!r}")  # unreachable


def eval_expr(expr: IntegrationExpr, outputs: dict[str, CollectedOutput]):
    """Evaluate an expression to its raw value (record list, scalar, or list)."""
    return _eval(expr, outputs)


def eval_integration(expr: IntegrationExpr,
                     outputs: dict[str, CollectedOutput],
                     name: str = "result") -> CollectedOutput:
    """Evaluate and wrap as a CollectedOutput.

    Record-stream results pass through; scalar/list results are wrapped as
    a single record under the key "value".
    """
    value = _eval(expr, outputs)
    if isinstance(value, list) and all(isinstance(r, dict) for r in value):
        return CollectedOutput.of(name, value)
    return CollectedOutput.of(name, [{"value": value}])


def _name_join_records(cmds: list[dict], variables: list[dict]) -> list[dict]:
    names = []
    for r in variables:
        if "var_name" not in r:
            raise IntegrationTypeError("name_join: variable record missing field 'var_name'")
        names.append(_as_str(r["var_name"], "name_join"))
    out = []
    for r in cmds:
        if "cmd_str" not in r:
            raise IntegrationTypeError("name_join: command record missing field 'cmd_str'")
        cmd = _as_str(r["cmd_str"], "name_join")
        if any(v in cmd for v in names):
            out.append(r)
    return out


def lambda_name(cmds: CollectedOutput, variables: CollectedOutput) -> CollectedOutput:
    """Keep the command records whose cmd_str contains some variable name.

    Membership is plain case-sensitive substring matching; input order is
    preserved and each command appears at most once per input occurrence.
    """
    kept = _name_join_records(
        [dict(r) for r in cmds.records], [dict(r) for r in variables.records]
    )
    return CollectedOutput.of(cmds.subtask, kept)


# --- catalog / task file loading -----------------------------------------


def _attribute_from_json(doc, where: str) -> AttributeSpec:
    if not isinstance(doc, dict) or "name" not in doc or "dtype" not in doc:
        raise InputError(f"{where}: attribute entries need 'name' and 'dtype'")
    try:
        dtype = Dtype(doc["dtype"])
    except ValueError:
        raise InputError(f"{where}: unknown dtype {doc['dtype']!r}") from None
    return AttributeSpec(doc["name"], dtype)


def _strset(doc, key: str, where: str) -> frozenset[str]:
    values = doc.get(key)
    if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
        raise InputError(f"{where}: field {key!r} must be a list of strings")
    return frozenset(values)


def task_from_json(doc) -> TaskSpec:
    if not isinstance(doc, dict) or "name" not in doc:
        raise InputError("task document must be an object with a 'name'")
    where = f"task {doc['name']!r}"
    try:
        return TaskSpec(
            name=doc["name"],
            entities=_strset(doc, "entities", where),
            attributes=frozenset(
                _attribute_from_json(a, where) for a in doc.get("attributes", [])
            ),
            events=_strset(doc, "events", where),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None


def capability_from_json(doc) -> CapabilityTriple:
    if not isinstance(doc, dict) or "name" not in doc:
        raise InputError("capability document must be an object with a 'name'")
    where = f"capability {doc['name']!r}"
    impl = doc.get("impl_class", "Existing")
    try:
        impl_class = ImplClass(impl)
    except ValueError:
        raise InputError(f"{where}: unknown impl_class {impl!r}") from None
    overhead = doc.get("overhead", 0.1)
    if not isinstance(overhead, (int, float)) or isinstance(overhead, bool):
        raise InputError(f"{where}: overhead must be a number")
    try:
        return CapabilityTriple(
            name=doc["name"],
            entities=_strset(doc, "entities", where),
            attributes=frozenset(
                _attribute_from_json(a, where) for a in doc.get("attributes", [])
            ),
            events=_strset(doc, "events", where),
            impl_class=impl_class,
            overhead=float(overhead),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None


def load_catalog(text: str) -> list[CapabilityTriple]:
    """Parse a catalog: a JSON list, or one JSON capability object per line."""
    stripped = text.lstrip()
    if stripped.startswith("["):
        docs = json.loads(text)
    else:
        docs = [json.loads(line) for line in text.splitlines() if line.strip()]
    caps = [capability_from_json(d) for d in docs]
    names = [c.name for c in caps]
    if len(set(names)) != len(names):
        raise InputError("catalog capability names must be unique")
    return caps


def load_task(text: str) -> TaskSpec:
    doc = json.loads(text)
    if isinstance(doc, dict) and "task" in doc:
        doc = doc["task"]
    return task_from_json(doc)
