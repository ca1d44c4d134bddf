"""Audit-event ingestion and the typed provenance multigraph.

Events arrive as one JSON object per line (`ts`, `type`, `src`, `dst`); the
graph keeps every parallel edge because downstream features count event
frequencies, not distinct relations. After ingestion the graph is treated
as immutable and is safe to read from multiple threads.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InputError

# Default edge-type registry: syscall-level event names observable by the
# stock audit tooling, plus envvar_set for the shell-level extension stream.
DEFAULT_EDGE_TYPES = (
    "read", "write", "open", "close", "creat", "unlink", "link", "linkat",
    "unlinkat", "rmdir", "mkdir", "fork", "clone", "execute", "kill",
    "pipe", "fcntl", "socket", "connect", "sendto", "recvfrom", "sendmsg",
    "sendmmsg", "recvmsg", "recvmmsg", "getpeername", "dup", "dup2",
    "mq_open", "envvar_set",
)


class ParseError(InputError):
    """A record violates the event file format; the message names the field."""


class IntegrityError(InputError):
    """An event contradicts already-ingested state (e.g. entity kind flip)."""


class EntityKind(str, Enum):
    PROCESS = "process"
    FILE = "file"
    SOCKET = "socket"


@dataclass(frozen=True)
class Entity:
    id: str
    kind: EntityKind
    name: str
    attrs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EdgeType:
    name: str
    index: int


class EdgeTypeRegistry:
    """Append-only name→dense-index mapping for edge types.

    Indices are contiguous from 0 in insertion order; feature vector layouts
    depend on that, so entries are never removed or renumbered.
    """

    def __init__(self, names=DEFAULT_EDGE_TYPES):
        self._by_name: dict[str, EdgeType] = {}
        for name in names:
            self.register(name)

    def register(self, name: str) -> EdgeType:
        et = self._by_name.get(name)
        if et is None:
            et = EdgeType(name, len(self._by_name))
            self._by_name[name] = et
        return et

    def get(self, name: str) -> EdgeType:
        try:
            return self._by_name[name]
        except KeyError:
            raise ParseError(f"unknown edge type {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return len(self._by_name)

    @property
    def names(self) -> list[str]:
        return list(self._by_name)


@dataclass(frozen=True)
class Event:
    ts: int
    etype: EdgeType
    src: Entity
    dst: Entity


def _parse_entity(obj, which: str) -> Entity:
    if not isinstance(obj, dict):
        raise ParseError(f"field {which}: expected object")
    for key in ("id", "kind", "name"):
        if key not in obj:
            raise ParseError(f"field {which}.{key}: missing")
        if not isinstance(obj[key], str):
            raise ParseError(f"field {which}.{key}: expected string")
    try:
        kind = EntityKind(obj["kind"])
    except ValueError:
        raise ParseError(
            f"field {which}.kind: {obj['kind']!r} is not one of process/file/socket"
        ) from None
    attrs = obj.get("attrs", {})
    if not isinstance(attrs, dict):
        raise ParseError(f"field {which}.attrs: expected object")
    return Entity(obj["id"], kind, obj["name"], dict(attrs))


def parse_event_line(line: str, registry: EdgeTypeRegistry,
                     allow_new_types: bool = False) -> Event:
    """Parse one event record; unknown top-level fields are ignored."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ParseError("record is not a JSON object")
    if "ts" not in obj:
        raise ParseError("field ts: missing")
    ts = obj["ts"]
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise ParseError("field ts: expected integer")
    if ts < 0:
        raise ParseError("field ts: must be >= 0")
    tname = obj.get("type")
    if not isinstance(tname, str):
        raise ParseError("field type: missing or not a string")
    if tname not in registry:
        if allow_new_types:
            registry.register(tname)
        else:
            raise ParseError(f"unknown edge type {tname!r}")
    return Event(
        ts=ts,
        etype=registry.get(tname),
        src=_parse_entity(obj.get("src"), "src"),
        dst=_parse_entity(obj.get("dst"), "dst"),
    )


class ProvenanceGraph:
    """Directed typed multigraph of system entities.

    Vertices are keyed by caller-supplied ids (audit streams reuse display
    names across distinct inodes/pids, so names are not identifying).
    Construction is single-writer; reads after ingestion are thread-safe.
    """

    def __init__(self, registry: EdgeTypeRegistry | None = None):
        self.registry = registry if registry is not None else EdgeTypeRegistry()
        self.vertices: dict[str, Entity] = {}
        # edge tuples: (src id, dst id, edge-type index, ts)
        self.edges: list[tuple[str, str, int, int]] = []
        self._out: dict[str, list[int]] = {}
        self._in: dict[str, list[int]] = {}

    def __contains__(self, vertex_id: str) -> bool:
        return vertex_id in self.vertices

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def _touch(self, ent: Entity) -> None:
        known = self.vertices.get(ent.id)
        if known is None:
            self.vertices[ent.id] = ent
            self._out[ent.id] = []
            self._in[ent.id] = []
        elif known.kind is not ent.kind:
            raise IntegrityError(
                f"entity {ent.id!r} already registered as {known.kind.value}, "
                f"got {ent.kind.value}"
            )
        # first-seen name/attrs win; later sightings only confirm the kind

    def add_event(self, event: Event) -> None:
        """Append an edge, creating endpoints on first sight.

        Duplicate events produce parallel edges on purpose.
        """
        self._touch(event.src)
        self._touch(event.dst)
        idx = len(self.edges)
        self.edges.append((event.src.id, event.dst.id, event.etype.index, event.ts))
        self._out[event.src.id].append(idx)
        self._in[event.dst.id].append(idx)

    def entity(self, vertex_id: str) -> Entity:
        try:
            return self.vertices[vertex_id]
        except KeyError:
            raise InputError(f"unknown vertex {vertex_id!r}") from None

    def neighbors_k(self, vertex_id: str, k: int) -> set[str]:
        """All vertices within k undirected hops of ``vertex_id``, excluding it.

        The undirected view (and the self-exclusion) is what the locality
        post-processing expects: density is a statement about surroundings.
        """
        self.entity(vertex_id)
        if k < 1:
            raise ValueError("k must be >= 1")
        seen = {vertex_id}
        frontier = deque([(vertex_id, 0)])
        result: set[str] = set()
        while frontier:
            v, depth = frontier.popleft()
            if depth == k:
                continue
            for idx in self._out[v]:
                u = self.edges[idx][1]
                if u not in seen:
                    seen.add(u)
                    result.add(u)
                    frontier.append((u, depth + 1))
            for idx in self._in[v]:
                u = self.edges[idx][0]
                if u not in seen:
                    seen.add(u)
                    result.add(u)
                    frontier.append((u, depth + 1))
        return result

    def degree_by_type(self, vertex_id: str, direction: str) -> np.ndarray:
        """Per-edge-type event counts incident to a vertex (length = registry size)."""
        self.entity(vertex_id)
        if direction == "in":
            incident = self._in[vertex_id]
        elif direction == "out":
            incident = self._out[vertex_id]
        else:
            raise ValueError(f"direction must be 'in' or 'out', got {direction!r}")
        vec = np.zeros(len(self.registry), dtype=np.int64)
        for idx in incident:
            vec[self.edges[idx][2]] += 1
        return vec

    def edge_type_counts(self) -> np.ndarray:
        """Global per-type edge counts (length = registry size)."""
        counts = np.zeros(len(self.registry), dtype=np.int64)
        for _, _, t, _ in self.edges:
            counts[t] += 1
        return counts

    # --- snapshot serialization -------------------------------------------

    def to_snapshot(self) -> str:
        doc = {
            "format_version": 1,
            "edge_types": self.registry.names,
            "vertices": [
                {"id": e.id, "kind": e.kind.value, "name": e.name, "attrs": e.attrs}
                for e in self.vertices.values()
            ],
            "edges": [list(edge) for edge in self.edges],
        }
        return json.dumps(doc, separators=(",", ":")) + "\n"

    @classmethod
    def from_snapshot(cls, text: str) -> "ProvenanceGraph":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"invalid snapshot: {exc.msg}") from None
        if not isinstance(doc, dict) or doc.get("format_version") != 1:
            raise InputError("invalid snapshot: unsupported format_version")
        g = cls(EdgeTypeRegistry(doc["edge_types"]))
        for v in doc["vertices"]:
            g._touch(Entity(v["id"], EntityKind(v["kind"]), v["name"], dict(v["attrs"])))
        for src, dst, tidx, ts in doc["edges"]:
            if src not in g.vertices or dst not in g.vertices:
                raise InputError(f"snapshot edge references unknown vertex {src!r}/{dst!r}")
            idx = len(g.edges)
            g.edges.append((src, dst, tidx, ts))
            g._out[src].append(idx)
            g._in[dst].append(idx)
        return g


def ingest_lines(lines, registry: EdgeTypeRegistry | None = None,
                 allow_new_types: bool = False) -> ProvenanceGraph:
    """Build a graph from an iterable of event lines.

    Blank lines are skipped; parse failures carry the 1-based line number.
    """
    g = ProvenanceGraph(registry)
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            g.add_event(parse_event_line(line, g.registry, allow_new_types))
        except InputError as exc:
            raise type(exc)(f"line {lineno}: {exc}") from None
    return g
