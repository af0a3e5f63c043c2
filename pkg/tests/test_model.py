import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedhgn.errors import ConfigurationError, ContractViolation, ProtocolError
from fedhgn.graph import Mask
from fedhgn.model import (
    LocalParams,
    ModelConfig,
    alignment_grad,
    alignment_loss,
    alignment_targets,
    compose_edge_type_weight,
    forward,
    init_coeffs,
    init_embeddings,
    init_shared,
    objective,
    predict,
    prepare,
    read_checkpoint,
    shared_names,
    task_loss,
    write_checkpoint,
)
from fedhgn.numerics import finite_difference_check


def compose_oracle(beta, bases):
    B, n, m = bases.shape
    out = np.zeros((n, m))
    for a in range(n):
        for b in range(m):
            s = 0.0
            for i in range(B):
                s += beta[i] * bases[i, a, b]
            out[a, b] = s
    return out


def rgcn_oracle(g, weights, self_w, bias, emb):
    """Per-node loops over the raw edge lists."""
    n = emb[0].shape[0]
    h = np.asarray(emb, dtype=float)
    L = len(self_w)
    offsets = np.concatenate([[0], np.cumsum(g.node_counts)])
    for l in range(L):
        out = h @ self_w[l] + bias[l]
        for r, et in enumerate(g.schema.edge_types):
            e = g.edges[r]
            for v in range(g.node_counts[et.dst_type]):
                srcs = [u for u, w in e if w == v]
                if not srcs:
                    continue
                mean = np.mean([h[offsets[et.src_type] + u] for u in srcs], axis=0)
                out[offsets[et.dst_type] + v] += mean @ weights[l][r]
        h = np.maximum(out, 0.0) if l < L - 1 else out

    return h[offsets[g.target_type]:offsets[g.target_type + 1]]


def _setup(g, d=5, B=4, decoupled=True, seed=0):
    rng = np.random.default_rng(seed)
    R = g.schema.num_edge_types
    cfg = ModelConfig.build(d, 2, g.num_classes, R, B, decoupled)
    shared = init_shared(cfg, rng)
    for k in shared:
        if k.endswith(".bias"):
            shared[k] = rng.normal(0, 0.1, shared[k].shape)
    data = prepare(g)
    coeffs = init_coeffs(2, R, B, rng) if decoupled else None
    local = LocalParams(coeffs, init_embeddings(g.node_counts, d, rng), data.offsets)
    return cfg, data, shared, local


def test_compose_matches_triple_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        B, n, m = rng.integers(1, 6, size=3)
        beta, bases = rng.normal(size=B), rng.normal(size=(B, n, m))
        assert np.max(np.abs(compose_edge_type_weight(beta, bases) - compose_oracle(beta, bases))) <= 1e-12


def test_compose_rejects_wrong_length():
    with pytest.raises(ContractViolation):
        compose_edge_type_weight(np.ones(3), np.ones((2, 2, 2)))


def test_forward_matches_loop_oracle(toy_graph):
    cfg, data, shared, local = _setup(toy_graph)
    weights = [[compose_edge_type_weight(local.coeffs[l, r], shared[f"layer{l}.bases"]) for r in range(2)]
               for l in range(2)]
    oracle = rgcn_oracle(toy_graph, weights, [shared["layer0.self"], shared["layer1.self"]],
                         [shared["layer0.bias"], shared["layer1.bias"]], local.embeddings)
    assert np.max(np.abs(forward(cfg, data, shared, local) - oracle)) < 1e-12


def test_one_hot_decoupled_equals_plain(small_graph):
    R = small_graph.schema.num_edge_types
    cfg, data, shared, local = _setup(small_graph, d=6, B=R)
    one_hot = np.stack([np.eye(R)] * 2)
    dec = forward(cfg, data, shared, LocalParams(one_hot, local.embeddings, local.offsets))
    plain_cfg = ModelConfig(cfg.dims, R, R, decoupled=False)
    plain_shared = {k.replace("bases", "relations"): v for k, v in shared.items()}
    plain = forward(plain_cfg, data, plain_shared, LocalParams(None, local.embeddings, local.offsets))
    assert np.max(np.abs(dec - plain)) <= 1e-12


def test_plain_model_uses_etype_map(toy_graph):
    cfg = ModelConfig.build(4, 2, 2, 5, decoupled=False)
    rng = np.random.default_rng(0)
    shared = init_shared(cfg, rng)
    data = prepare(toy_graph)
    local = LocalParams(None, init_embeddings(toy_graph.node_counts, 4, rng), data.offsets)
    a = forward(cfg, data, shared, local, etype_map=(3, 4))
    swapped = dict(shared)
    for l in range(2):
        rel = shared[f"layer{l}.relations"].copy()
        rel[[0, 1, 3, 4]] = rel[[3, 4, 0, 1]]
        swapped[f"layer{l}.relations"] = rel
    assert np.array_equal(a, forward(cfg, data, swapped, local, etype_map=(0, 1)))


def test_shape_contracts(toy_graph):
    cfg, data, shared, local = _setup(toy_graph)
    with pytest.raises(ContractViolation):
        forward(cfg, data, shared, LocalParams(np.zeros((2, 3, 4)), local.embeddings, local.offsets))
    with pytest.raises(ContractViolation):
        forward(cfg, data, shared, LocalParams(local.coeffs, local.embeddings[:3], local.offsets))
    with pytest.raises(ConfigurationError):
        ModelConfig((4,), 2)


def test_shared_names_order():
    cfg = ModelConfig.build(4, 2, 3, 5, 2)
    assert shared_names(cfg) == ["layer0.bases", "layer0.self", "layer0.bias",
                                 "layer1.bases", "layer1.self", "layer1.bias"]
    assert init_shared(cfg, np.random.default_rng(0))["layer1.bases"].shape == (2, 4, 3)


# ---------------------------------------------------------------------------
# coefficients alignment


def ca_oracle(coeffs, peers):
    L, R, B = coeffs.shape
    total = 0.0
    for r in range(R):
        for l in range(L):
            best = None
            for p in peers:
                for slot in range(p.shape[1]):
                    s = 0.0
                    for i in range(B):
                        s += (p[l, slot, i] - coeffs[l, r, i]) ** 2
                    best = s if best is None or s < best else best
            if best is not None:
                total += best
    return total


def _ca_instance(rng):
    L, B = int(rng.integers(1, 3)), int(rng.integers(1, 6))
    coeffs = rng.normal(size=(L, int(rng.integers(1, 13)), B))
    peers = [rng.normal(size=(L, int(rng.integers(1, 13)), B)) for _ in range(int(rng.integers(1, 6)))]
    return coeffs, peers


def test_alignment_loss_matches_exhaustive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        coeffs, peers = _ca_instance(rng)
        assert alignment_loss(coeffs, peers) == ca_oracle(coeffs, peers)


def test_alignment_loss_permutation_invariant():
    rng = np.random.default_rng(1)
    for _ in range(50):
        coeffs, peers = _ca_instance(rng)
        base = alignment_loss(coeffs, peers)
        shuffled = [p[:, rng.permutation(p.shape[1])] for p in peers]
        shuffled = [shuffled[i] for i in rng.permutation(len(shuffled))]
        assert alignment_loss(coeffs, shuffled) == base


def test_alignment_ties_go_to_first_candidate():
    coeffs = np.zeros((1, 1, 2))
    peers = [np.array([[[1.0, 0.0]]]), np.array([[[0.0, 1.0], [-1.0, 0.0]]])]
    targets, weight = alignment_targets(coeffs, peers)
    assert np.array_equal(targets[0, 0], [1.0, 0.0]) and weight[0, 0, 0] == 1.0
    targets, _ = alignment_targets(coeffs, peers[::-1])
    assert np.array_equal(targets[0, 0], [0.0, 1.0])


def test_alignment_without_peers_is_zero():
    coeffs = np.ones((2, 3, 4))
    assert alignment_loss(coeffs, []) == 0.0
    assert alignment_loss(coeffs, [np.zeros((2, 0, 4))]) == 0.0
    assert np.array_equal(alignment_grad(coeffs, []), np.zeros_like(coeffs))


def test_alignment_rejects_incompatible_peers():
    with pytest.raises(ProtocolError):
        alignment_loss(np.ones((2, 3, 4)), [np.ones((2, 3, 5))])
    with pytest.raises(ProtocolError):
        alignment_loss(np.ones((2, 3, 4)), [np.ones((1, 3, 4))])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_alignment_grad_matches_finite_differences(seed):
    coeffs, peers = _ca_instance(np.random.default_rng(seed))
    fn = lambda p: (alignment_loss(p["c"], peers), {"c": alignment_grad(p["c"], peers)})
    assert finite_difference_check(fn, {"c": coeffs}) < 1e-5


# ---------------------------------------------------------------------------
# objective


def test_objective_gradients(tiny_graph):
    cfg, data, shared, local = _setup(tiny_graph, d=4, B=3)
    peers = [np.random.default_rng(5).normal(size=(2, 4, 3))]
    names = shared_names(cfg)

    def fn(p):
        loc = LocalParams(p["coeffs"], p["embeddings"], data.offsets)
        obj = objective(cfg, data, {n: p[n] for n in names}, loc, lam=0.5,
                        align=alignment_targets(p["coeffs"], peers))
        return obj.loss, {**obj.shared_grads, **obj.local_grads}

    params = {**shared, "coeffs": local.coeffs, "embeddings": local.embeddings}
    assert finite_difference_check(fn, params) < 1e-5


def test_objective_decomposes_into_task_and_align(tiny_graph):
    cfg, data, shared, local = _setup(tiny_graph, d=4, B=3)
    peers = [np.random.default_rng(6).normal(size=(2, 2, 3))]
    obj = objective(cfg, data, shared, local, lam=0.5, align=alignment_targets(local.coeffs, peers))
    assert obj.align == pytest.approx(alignment_loss(local.coeffs, peers), rel=1e-12)
    assert obj.loss == pytest.approx(obj.task + 0.5 * obj.align, rel=1e-12)
    train = data.split[Mask.TRAIN]
    logits = forward(cfg, data, shared, local)
    assert obj.task == pytest.approx(task_loss(logits, data.labels, train), rel=1e-12)
    plain = objective(cfg, data, shared, local, lam=0.0)
    g_align = alignment_grad(local.coeffs, peers)
    assert np.allclose(obj.local_grads["coeffs"], plain.local_grads["coeffs"] + 0.5 * g_align, atol=1e-14)


def test_task_loss_needs_nodes():
    with pytest.raises(ConfigurationError):
        task_loss(np.zeros((2, 2)), np.zeros(2, dtype=int), np.array([], dtype=int))


def test_predict_and_counts(toy_graph):
    cfg, data, shared, local = _setup(toy_graph)
    pred = predict(cfg, data, shared, local)
    assert pred.shape == (4,) and set(pred) <= {0, 1}


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip():
    rng = np.random.default_rng(0)
    tensors = {"a": rng.normal(size=(2, 3)), "b.bias": rng.normal(size=4), "s": np.array(1.5)}
    buf = io.BytesIO()
    write_checkpoint(buf, tensors)
    raw = buf.getvalue()
    assert raw[:4] == b"FHGN"
    back = read_checkpoint(io.BytesIO(raw))
    assert list(back) == list(tensors)
    assert all(np.array_equal(back[k], tensors[k]) for k in tensors)
    with pytest.raises(ProtocolError):
        read_checkpoint(io.BytesIO(raw[:-3]))
    with pytest.raises(ProtocolError):
        read_checkpoint(io.BytesIO(b"XXXX" + raw[4:]))


def test_prepare_mean_aggregators(toy_graph):
    data = prepare(toy_graph)
    a0 = data.aggs[0].toarray()
    # edge type 0: author -> paper; paper 0 has authors 0 and 1
    assert list(data.rows[0]) == [0, 1, 3]
    assert np.allclose(a0[0, 4:6], [0.5, 0.5]) and a0[0].sum() == pytest.approx(1.0)
    assert all(np.allclose(a.toarray().sum(axis=1), 1.0) for a in data.aggs)
