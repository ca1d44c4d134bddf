import json
import random

import numpy as np
import pytest

from fead.provgraph import (
    EdgeTypeRegistry,
    Entity,
    EntityKind,
    Event,
    IntegrityError,
    ParseError,
    ProvenanceGraph,
    ingest_lines,
    parse_event_line,
)


def _line(ts, etype, src_id, src_kind, dst_id, dst_kind):
    return json.dumps({
        "ts": ts, "type": etype,
        "src": {"id": src_id, "kind": src_kind, "name": src_id},
        "dst": {"id": dst_id, "kind": dst_kind, "name": dst_id},
    })


def _event(reg, etype, src_id, src_kind, dst_id, dst_kind, ts=0):
    return Event(ts, reg.get(etype),
                 Entity(src_id, EntityKind(src_kind), src_id),
                 Entity(dst_id, EntityKind(dst_kind), dst_id))


class TestParsing:
    def test_basic_read_event(self):
        reg = EdgeTypeRegistry()
        line = ('{"ts":1,"type":"read",'
                '"src":{"id":"p1","kind":"process","name":"bash"},'
                '"dst":{"id":"f1","kind":"file","name":"/etc/passwd"}}')
        e = parse_event_line(line, reg)
        assert e.ts == 1
        assert e.etype.name == "read"
        assert e.src.id == "p1" and e.src.kind is EntityKind.PROCESS
        assert e.dst.id == "f1" and e.dst.name == "/etc/passwd"

    def test_connect_event(self):
        reg = EdgeTypeRegistry()
        line = ('{"ts":0,"type":"connect",'
                '"src":{"id":"p2","kind":"process","name":"curl"},'
                '"dst":{"id":"s1","kind":"socket","name":"10.0.0.5:443"}}')
        e = parse_event_line(line, reg)
        assert e.ts == 0
        assert e.etype.name == "connect"

    def test_unknown_edge_type_rejected(self):
        reg = EdgeTypeRegistry()
        line = _line(5, "telepathy", "p1", "process", "f1", "file")
        with pytest.raises(ParseError, match="telepathy"):
            parse_event_line(line, reg)

    def test_unknown_edge_type_registered_when_enabled(self):
        reg = EdgeTypeRegistry()
        line = _line(5, "telepathy", "p1", "process", "f1", "file")
        e = parse_event_line(line, reg, allow_new_types=True)
        assert e.etype.name == "telepathy"
        assert e.etype.index == len(reg) - 1

    def test_errors_name_the_field(self):
        reg = EdgeTypeRegistry()
        with pytest.raises(ParseError, match="ts"):
            parse_event_line('{"type":"read","src":{},"dst":{}}', reg)
        with pytest.raises(ParseError, match=r"src\.kind"):
            parse_event_line(
                '{"ts":1,"type":"read","src":{"id":"x","kind":"ghost","name":"x"},'
                '"dst":{"id":"y","kind":"file","name":"y"}}', reg)
        with pytest.raises(ParseError, match=r"dst\.name"):
            parse_event_line(
                '{"ts":1,"type":"read","src":{"id":"x","kind":"file","name":"x"},'
                '"dst":{"id":"y","kind":"file"}}', reg)

    def test_unknown_top_level_fields_ignored(self):
        reg = EdgeTypeRegistry()
        doc = json.loads(_line(1, "read", "p1", "process", "f1", "file"))
        doc["zzz_extra"] = {"anything": 1}
        assert parse_event_line(json.dumps(doc), reg).ts == 1

    def test_negative_ts_rejected(self):
        reg = EdgeTypeRegistry()
        with pytest.raises(ParseError, match="ts"):
            parse_event_line(_line(-1, "read", "p1", "process", "f1", "file"), reg)


class TestRegistry:
    def test_seed_contains_syscalls_and_extension(self):
        reg = EdgeTypeRegistry()
        for name in ("read", "execute", "mq_open", "envvar_set"):
            assert name in reg

    def test_indices_contiguous_and_append_only(self):
        reg = EdgeTypeRegistry()
        assert [reg.get(n).index for n in reg.names] == list(range(len(reg)))
        before = len(reg)
        reg.register("read")  # idempotent
        assert len(reg) == before
        et = reg.register("custom_probe")
        assert et.index == before


class TestGraph:
    def test_add_event_creates_endpoints(self):
        reg = EdgeTypeRegistry()
        g = ProvenanceGraph(reg)
        g.add_event(_event(reg, "read", "p1", "process", "f1", "file"))
        assert g.num_vertices == 2
        assert g.num_edges == 1

    def test_duplicate_events_make_parallel_edges(self):
        reg = EdgeTypeRegistry()
        g = ProvenanceGraph(reg)
        e = _event(reg, "read", "p1", "process", "f1", "file")
        g.add_event(e)
        g.add_event(e)
        assert g.num_vertices == 2
        assert g.num_edges == 2

    def test_kind_conflict_is_integrity_error(self):
        reg = EdgeTypeRegistry()
        g = ProvenanceGraph(reg)
        g.add_event(_event(reg, "read", "p1", "process", "f1", "file"))
        with pytest.raises(IntegrityError, match="p1"):
            g.add_event(_event(reg, "read", "p2", "process", "p1", "file"))

    def test_neighbors_on_path_graph(self):
        reg = EdgeTypeRegistry()
        g = ProvenanceGraph(reg)
        g.add_event(_event(reg, "fork", "a", "process", "b", "process"))
        g.add_event(_event(reg, "fork", "b", "process", "c", "process"))
        assert g.neighbors_k("b", 1) == {"a", "c"}
        assert g.neighbors_k("a", 2) == {"b", "c"}
        assert g.neighbors_k("a", 1) == {"b"}

    def test_neighbors_isolated_vertex_empty(self):
        reg = EdgeTypeRegistry()
        g = ProvenanceGraph(reg)
        g._touch(Entity("d", EntityKind.FILE, "d"))
        assert g.neighbors_k("d", 2) == set()

    def test_neighbors_monotone_in_k(self):
        g = _random_graph(seed=5, n=20, edges=40)
        for v in g.vertices:
            for k in range(1, 4):
                assert g.neighbors_k(v, k) <= g.neighbors_k(v, k + 1)

    def test_degree_by_type_counts(self):
        reg = EdgeTypeRegistry()
        g = ProvenanceGraph(reg)
        g.add_event(_event(reg, "read", "p1", "process", "v", "file"))
        g.add_event(_event(reg, "read", "p2", "process", "v", "file"))
        g.add_event(_event(reg, "write", "p1", "process", "v", "file"))
        vec = g.degree_by_type("v", "in")
        assert vec[reg.get("read").index] == 2
        assert vec[reg.get("write").index] == 1
        assert vec.sum() == 3
        out = g.degree_by_type("p1", "out")
        assert out.sum() == 2
        assert len(vec) == len(reg)

    def test_degree_of_isolated_vertex_is_zero(self):
        reg = EdgeTypeRegistry()
        g = ProvenanceGraph(reg)
        g._touch(Entity("d", EntityKind.SOCKET, "d"))
        assert g.degree_by_type("d", "in").sum() == 0
        assert g.degree_by_type("d", "out").sum() == 0

    def test_unknown_vertex_errors(self):
        g = ProvenanceGraph()
        with pytest.raises(Exception, match="ghost"):
            g.neighbors_k("ghost", 1)
        with pytest.raises(Exception, match="ghost"):
            g.degree_by_type("ghost", "in")

    def test_degree_sums_match_edge_counts(self):
        g = _random_graph(seed=9, n=15, edges=60)
        for v in g.vertices:
            assert g.degree_by_type(v, "in").sum() == len(g._in[v])
            assert g.degree_by_type(v, "out").sum() == len(g._out[v])
        assert sum(g.degree_by_type(v, "out").sum() for v in g.vertices) == g.num_edges


def _random_events(seed, n, edges):
    rng = random.Random(seed)
    kinds = ["process", "file", "socket"]
    ids = [f"v{i}" for i in range(n)]
    kind_of = {vid: rng.choice(kinds) for vid in ids}
    types = ["read", "write", "execute", "connect", "fork"]
    lines = []
    for ts in range(edges):
        s, d = rng.choice(ids), rng.choice(ids)
        lines.append(_line(ts, rng.choice(types), s, kind_of[s], d, kind_of[d]))
    return lines


def _random_graph(seed, n, edges):
    return ingest_lines(_random_events(seed, n, edges))


class TestOrderIndependence:
    def test_permuted_stream_same_structure(self):
        lines = _random_events(seed=3, n=12, edges=50)
        g1 = ingest_lines(lines)
        shuffled = lines[:]
        random.Random(99).shuffle(shuffled)
        g2 = ingest_lines(shuffled)
        assert set(g1.vertices) == set(g2.vertices)
        for v in g1.vertices:
            assert np.array_equal(g1.degree_by_type(v, "in"), g2.degree_by_type(v, "in"))
            assert np.array_equal(g1.degree_by_type(v, "out"), g2.degree_by_type(v, "out"))
            for k in (1, 2):
                assert g1.neighbors_k(v, k) == g2.neighbors_k(v, k)


class TestSnapshot:
    def test_roundtrip_is_byte_identical(self):
        g = _random_graph(seed=7, n=10, edges=30)
        snap = g.to_snapshot()
        g2 = ProvenanceGraph.from_snapshot(snap)
        assert g2.to_snapshot() == snap
        assert g2.num_vertices == g.num_vertices
        assert g2.num_edges == g.num_edges

    def test_ingest_reports_line_numbers(self):
        lines = [
            _line(1, "read", "p1", "process", "f1", "file"),
            '{"ts":2,"type":"read","src":{}}',
        ]
        with pytest.raises(ParseError, match="line 2"):
            ingest_lines(lines)
