from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedhgn.errors import ParameterError, ParseError
from fedhgn.graph import Mask, SyntheticSpec, generate_synthetic
from fedhgn.splitters import (
    default_p,
    dump_manifest,
    format_stats,
    manifest_stats,
    read_manifest,
    single_client,
    split_graph,
    split_random_edge_types,
    split_random_edges,
)


def _edge_keys(cg):
    """Multiset of central (etype, src, dst) triples held by a client."""
    out = Counter()
    s = cg.graph.schema
    for r, e in enumerate(cg.graph.edges):
        et = s.edge_types[r]
        src = cg.node_maps[et.src_type][e[:, 0]]
        dst = cg.node_maps[et.dst_type][e[:, 1]]
        out.update((cg.etype_map[r], int(a), int(b)) for a, b in zip(src, dst))
    return out


def _check_groups(m, K, p, n_items):
    groups = m.groups
    assert len(groups) == K + 2
    assert sum(len(g) for g in groups) == n_items
    assert all(len(m.owners[i]) == K for i in groups[K])
    assert all(len(m.owners[i]) == p for i in groups[K + 1])
    for k in range(K):
        assert all(m.owners[i] == (k,) for i in groups[k])
    sizes = [len(g) for g in groups]
    assert max(sizes) - min(sizes) <= 1


@pytest.mark.parametrize("seed", range(5))
def test_random_edges_invariants(seed):
    g = generate_synthetic(SyntheticSpec(3, 5, 60, 100, 3), seed)
    m = split_random_edges(g, 5, 3, seed)
    _check_groups(m, 5, 3, g.num_edges)
    held = [_edge_keys(c) for c in m.clients]
    ordinals = [(r, int(a), int(b)) for r, e in enumerate(g.edges) for a, b in e]
    for k in range(5):
        assert held[k] == Counter(key for key, own in zip(ordinals, m.owners) if k in own)
    assert sum(held, Counter()).keys() == set(ordinals)


def test_random_edge_types_invariants():
    g = generate_synthetic(SyntheticSpec(4, 14, 40, 30, 3), 0)
    m = split_random_edge_types(g, 5, 3, 0)
    _check_groups(m, 5, 3, 14)
    for k, c in enumerate(m.clients):
        assert set(c.etype_map) == {r for r, own in enumerate(m.owners) if k in own}
        for r_local, r in enumerate(c.etype_map):
            assert len(c.graph.edges[r_local]) == len(g.edges[r])


def test_target_labels_and_masks_follow_nodes():
    g = generate_synthetic(SyntheticSpec(3, 6, 50, 80, 3), 2)
    for c in split_graph(g, "RE", 3, seed=2).clients:
        t = c.ntype_map[c.graph.target_type]
        assert t == g.target_type
        nodes = c.node_maps[c.graph.target_type]
        assert np.array_equal(c.graph.labels, g.labels[nodes])
        assert np.array_equal(c.graph.masks, g.masks[nodes])
        assert c.graph.mask_count(Mask.TRAIN) > 0


def test_fixed_set_mode_uses_one_subset():
    g = generate_synthetic(SyntheticSpec(3, 6, 40, 60, 3), 0)
    m = split_random_edges(g, 5, 2, 0, p_mode="fixed_set")
    rem = {m.owners[i] for i in m.groups[6]}
    assert len(rem) == 1


def test_split_is_deterministic():
    g = generate_synthetic(SyntheticSpec(3, 6, 40, 60, 3), 0)
    a, b = split_random_edges(g, 3, seed=9), split_random_edges(g, 3, seed=9)
    assert a.same_assignment(b)
    assert not a.same_assignment(split_random_edges(g, 3, seed=10))


def test_expected_client_size():
    g = generate_synthetic(SyntheticSpec(2, 1, 50, 100, 2), 0)
    sizes = [c.graph.num_edges for s in range(100) for c in split_random_edges(g, 3, 2, s).clients]
    expected = 100 * (1 / 5 + 1 / 5 + (1 / 5) * (2 / 3))
    assert abs(np.mean(sizes) - expected) / expected < 0.1


def test_parameter_errors():
    g = generate_synthetic(SyntheticSpec(2, 3, 20, 20, 2), 0)
    with pytest.raises(ParameterError):
        split_graph(g, "RE", 2)
    with pytest.raises(ParameterError):
        split_graph(g, "RE", 4, p=4)
    with pytest.raises(ParameterError):
        split_graph(g, "RE", 4, p=1)
    with pytest.raises(ParameterError):
        split_graph(g, "XX", 3)
    with pytest.raises(ParameterError):
        split_graph(g, "RE", 3, p_mode="other")
    assert default_p(3) == 2 and default_p(5) == 3


def test_split_fails_without_training_nodes():
    g = generate_synthetic(SyntheticSpec(2, 3, 20, 2, 2, label_fraction=0.05), 0)
    with pytest.raises(ParameterError, match="without training nodes"):
        split_graph(g, "RET", 5, 3)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(["RE", "RET"]), st.integers(3, 6), st.integers(0, 999))
def test_manifest_round_trip(strategy, K, seed):
    g = generate_synthetic(SyntheticSpec(3, 12, 30, 40, 3, 1.0), seed)
    m = split_graph(g, strategy, K, seed=seed)
    back = read_manifest(dump_manifest(m, "hdr").splitlines(), g)
    assert back.same_assignment(m)
    for a, b in zip(m.clients, back.clients):
        assert a.graph == b.graph and a.etype_map == b.etype_map


def test_manifest_errors():
    with pytest.raises(ParseError):
        read_manifest(["etype 0 1\n"])
    with pytest.raises(ParseError, match="line 2"):
        read_manifest(["split RE 3 2 0\n", "edge x 1\n"])
    with pytest.raises(ParseError, match="line 1"):
        read_manifest(["bogus\n"])


def test_single_client_and_stats(toy_graph):
    c = single_client(toy_graph)
    assert c.graph is toy_graph and c.etype_map == (0, 1)
    g = generate_synthetic(SyntheticSpec(3, 6, 40, 60, 3), 0)
    stats = manifest_stats(split_graph(g, "RE", 3))
    text = format_stats(stats)
    assert text.splitlines()[0] == "client,ntypes,etypes,nodes,edges,train,valid,test"
    assert len(text.splitlines()) == 5
    assert stats["average"]["edges"] == pytest.approx(np.mean([r["edges"] for r in stats["clients"]]))
