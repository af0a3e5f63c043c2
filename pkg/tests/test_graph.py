import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedhgn.errors import ContractViolation, ParameterError, ParseError
from fedhgn.graph import (
    UNLABELED,
    EdgeType,
    HeteroGraph,
    Mask,
    Schema,
    SyntheticSpec,
    assign_masks,
    build_neighbor_index,
    dump_graph,
    generate_synthetic,
    graph_summary,
    load_graph,
)


def test_schema_rejects_gaps_and_unknown_types():
    with pytest.raises(ContractViolation):
        Schema(2, (EdgeType(1, 0, 1),))
    with pytest.raises(ContractViolation):
        Schema(2, (EdgeType(0, 0, 2),))
    with pytest.raises(ContractViolation):
        Schema(0, ())
    with pytest.raises(ContractViolation):
        Schema(2, (), ("only-one",))


def test_graph_invariants(toy_graph):
    s, e = toy_graph.schema, toy_graph.edges
    with pytest.raises(ContractViolation):
        HeteroGraph(s, (4, 3), (np.array([[5, 0]]), e[1]), 0, toy_graph.labels, toy_graph.masks, 2)
    with pytest.raises(ContractViolation):
        HeteroGraph(s, (4, 3), e, 0, np.array([0, 1, 0]), toy_graph.masks, 2)
    with pytest.raises(ContractViolation):
        HeteroGraph(s, (4, 3), e, 0, np.array([0, 1, 0, UNLABELED]), toy_graph.masks, 2)
    with pytest.raises(ContractViolation):
        HeteroGraph(s, (4, 3), e, 0, np.array([0, 1, 0, 2]), toy_graph.masks, 2)


def test_graph_arrays_are_read_only(toy_graph):
    with pytest.raises(ValueError):
        toy_graph.labels[0] = 1
    with pytest.raises(ValueError):
        toy_graph.edges[0][0, 0] = 1


def test_neighbor_index_matches_scan(toy_graph):
    idx = build_neighbor_index(toy_graph)
    assert list(idx.neighbors(0, 0)) == [0, 1]
    assert list(idx.neighbors(0, 1)) == [2]
    assert list(idx.neighbors(0, 2)) == []
    assert list(idx.neighbors(1, 0)) == [1, 2]
    assert list(idx.degree(0)) == [2, 1, 0, 1]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_neighbor_index_round_trips_edges(seed):
    g = generate_synthetic(SyntheticSpec(3, 4, 20, 30, 2), seed)
    idx = build_neighbor_index(g)
    for r, e in enumerate(g.edges):
        back = idx.edges(r)
        order = np.lexsort((e[:, 0], e[:, 1]))
        assert np.array_equal(back, e[order])
        for v in range(g.node_counts[g.schema.edge_types[r].dst_type]):
            oracle = sorted(int(u) for u, w in e if w == v)
            assert list(idx.neighbors(r, v)) == oracle


def test_synthetic_is_deterministic_and_shaped():
    spec = SyntheticSpec(4, 10, 50, 80, 3, 0.5, 0.9)
    a, b = generate_synthetic(spec, 3), generate_synthetic(spec, 3)
    assert a == b
    assert a != generate_synthetic(spec, 4)
    assert a.num_edges == 800 and a.node_counts == (50,) * 4
    assert all(et.dst_type == 0 and et.src_type == et.id % 4 for et in a.schema.edge_types)


def test_synthetic_planted_signal():
    g = generate_synthetic(SyntheticSpec(2, 3, 200, 400, 3, 1.0, 1.0), 0)
    for r, e in enumerate(g.edges):
        assert np.all(g.labels[e[:, 1]] == r % 3)


def test_synthetic_spec_validation():
    with pytest.raises(ParameterError):
        generate_synthetic(SyntheticSpec(homophily=1.5), 0)
    with pytest.raises(ParameterError):
        generate_synthetic(SyntheticSpec(label_fraction=0.0), 0)
    with pytest.raises(ParameterError):
        generate_synthetic(SyntheticSpec(nodes_per_type=0), 0)


def test_assign_masks_proportions():
    labels = np.array([0] * 100 + [UNLABELED] * 10)
    m = assign_masks(labels, np.random.default_rng(0))
    assert np.count_nonzero(m == Mask.TRAIN) == 60
    assert np.count_nonzero(m == Mask.VALID) == 20
    assert np.count_nonzero(m == Mask.TEST) == 20
    assert np.all(m[100:] == Mask.NONE)


def test_dump_round_trip_with_names(toy_graph):
    text = dump_graph(toy_graph, "header line")
    assert text.startswith("# header line\n")
    back = load_graph(text)
    assert back == toy_graph
    assert back.schema.edge_type_names == ("writes", "cites")


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(0, 5), st.integers(1, 20), st.integers(0, 30), st.integers(0, 999))
def test_dump_round_trip_property(ntypes, etypes, nodes, edges, seed):
    g = generate_synthetic(SyntheticSpec(ntypes, max(etypes, 1), nodes, edges + 1, 2, 0.7), seed)
    assert load_graph(dump_graph(g)) == g


def test_read_graph_errors():
    with pytest.raises(ParseError, match="line 2"):
        load_graph("ntypes 1\nbogus 1\n")
    with pytest.raises(ParseError, match="line 2"):
        load_graph("ntypes 1\nnodes x\n")
    with pytest.raises(ParseError):
        load_graph("nodes 0 3\n")


def test_summary(toy_graph):
    assert dict(graph_summary(toy_graph)) == {
        "ntypes": 2, "etypes": 2, "nodes": 7, "edges": 7, "train": 2, "valid": 1, "test": 1}
