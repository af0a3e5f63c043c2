"""RGCN-style HGNN with basis-decomposed edge-type weights.

Layer ``l`` computes, for every node ``v`` (node types are ignored)::

    h_v' = act( h_v @ W0 + sum_r mean_{u in N_v^r} (h_u) @ W_r + b )

with ``act`` = ReLU except on the last layer. In the decoupled model
``W_r = sum_i beta[l, r, i] * bases[i]``; bases, ``W0`` and ``b`` are
schema-agnostic and may be aggregated by a server, while ``beta`` and the
input embedding tables stay on the client. The plain model (FedAvg,
FedProx, Central, Local) stores one weight per edge type instead.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, ContractViolation, NumericError, ProtocolError
from .graph import HeteroGraph, Mask, NeighborIndex, build_neighbor_index
from .numerics import DTYPE, Tape, Var

SharedParams = dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    dims: tuple[int, ...]          # d_0 .. d_L; d_L is the class count
    num_edge_types: int            # edge types the weights are indexed by
    num_bases: int = 20
    decoupled: bool = True

    def __post_init__(self):
        if len(self.dims) < 2:
            raise ConfigurationError("a model needs at least one layer")
        if self.decoupled and self.num_bases < 1:
            raise ConfigurationError("number of bases must be >= 1")

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    @classmethod
    def build(cls, d: int, num_layers: int, num_classes: int, num_edge_types: int,
              num_bases: int = 20, decoupled: bool = True) -> "ModelConfig":
        return cls((d,) * num_layers + (num_classes,), num_edge_types, num_bases, decoupled)


def shared_names(cfg: ModelConfig) -> list[str]:
    """Canonical order of shared tensors; the wire format relies on it."""
    names = []
    for l in range(cfg.num_layers):
        names.append(f"layer{l}.bases" if cfg.decoupled else f"layer{l}.relations")
        names += [f"layer{l}.self", f"layer{l}.bias"]
    return names


def shared_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    out = {}
    for l in range(cfg.num_layers):
        din, dout = cfg.dims[l], cfg.dims[l + 1]
        lead = cfg.num_bases if cfg.decoupled else cfg.num_edge_types
        out[f"layer{l}.bases" if cfg.decoupled else f"layer{l}.relations"] = (lead, din, dout)
        out[f"layer{l}.self"] = (din, dout)
        out[f"layer{l}.bias"] = (dout,)
    return out


def _xavier(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_shared(cfg: ModelConfig, rng: np.random.Generator) -> SharedParams:
    params = {}
    for name, shape in shared_shapes(cfg).items():
        params[name] = np.zeros(shape, dtype=DTYPE) if name.endswith(".bias") else _xavier(rng, shape)
    return params


def init_coeffs(num_layers: int, num_types: int, num_bases: int, rng: np.random.Generator) -> np.ndarray:
    bound = 1.0 / np.sqrt(num_bases)
    return rng.uniform(-bound, bound, size=(num_layers, num_types, num_bases))


def init_embeddings(node_counts: Sequence[int], dim: int, rng: np.random.Generator) -> np.ndarray:
    tables = [_xavier(rng, (n, dim)) for n in node_counts]
    return np.concatenate(tables, axis=0) if tables else np.zeros((0, dim))


@dataclass
class LocalParams:
    """Client-private parameters: coefficients and input embeddings.

    ``coeffs[l, r]`` is the basis coefficient vector of edge type ``r`` at
    layer ``l`` (``None`` for the plain model). ``embeddings`` stacks one
    table per node type; ``offsets[t]`` is where type ``t`` starts.
    """

    coeffs: np.ndarray | None
    embeddings: np.ndarray
    offsets: tuple[int, ...]

    def embedding_table(self, node_type: int) -> np.ndarray:
        return self.embeddings[self.offsets[node_type]:self.offsets[node_type + 1]]

    def copy(self) -> "LocalParams":
        return LocalParams(
            None if self.coeffs is None else self.coeffs.copy(), self.embeddings.copy(), self.offsets
        )

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {"embeddings": self.embeddings}
        if self.coeffs is not None:
            out["coeffs"] = self.coeffs
        return out

    def with_values(self, values: Mapping[str, np.ndarray]) -> "LocalParams":
        return replace(self, coeffs=values.get("coeffs"), embeddings=values["embeddings"])


def node_offsets(node_counts: Sequence[int]) -> tuple[int, ...]:
    return tuple(int(x) for x in np.concatenate([[0], np.cumsum(node_counts)]))


# ---------------------------------------------------------------------------
# graph preparation


@dataclass(frozen=True, eq=False)
class GraphData:
    """A graph with its neighbor index and the per-type mean aggregators.

    ``rows[r]`` holds the stacked ids of destinations with at least one
    type-``r`` in-neighbor and ``aggs[r]`` maps stacked node states to their
    neighbor means (one row per entry of ``rows[r]``).
    """

    graph: HeteroGraph
    index: NeighborIndex
    offsets: tuple[int, ...]
    rows: tuple[np.ndarray, ...]
    aggs: tuple[sp.csr_matrix, ...]
    target_rows: np.ndarray
    labels: np.ndarray
    split: dict[Mask, np.ndarray] = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return self.offsets[-1]

    def count(self, mask: Mask) -> int:
        return len(self.split[mask])


def prepare(g: HeteroGraph, index: NeighborIndex | None = None) -> GraphData:
    index = index or build_neighbor_index(g)
    offsets = node_offsets(g.node_counts)
    n = offsets[-1]
    rows, aggs = [], []
    for r, et in enumerate(g.schema.edge_types):
        deg = index.degree(r)
        dst = np.flatnonzero(deg)
        indptr = np.concatenate([[0], np.cumsum(deg[dst])])
        cols = index.indices[r] + offsets[et.src_type]
        vals = np.repeat(1.0 / deg[dst], deg[dst])
        aggs.append(sp.csr_matrix((vals, cols, indptr), shape=(len(dst), n)))
        rows.append(dst + offsets[et.dst_type])
    split = {m: g.mask_nodes(m) for m in (Mask.TRAIN, Mask.VALID, Mask.TEST)}
    t0 = offsets[g.target_type]
    return GraphData(g, index, offsets, tuple(rows), tuple(aggs),
                     np.arange(t0, offsets[g.target_type + 1]), np.asarray(g.labels), split)


# ---------------------------------------------------------------------------
# forward pass


def compose_edge_type_weight(beta: np.ndarray, bases: np.ndarray) -> np.ndarray:
    """``sum_i beta[i] * bases[i]``."""
    beta = np.asarray(beta, dtype=DTYPE)
    if beta.shape != (bases.shape[0],):
        raise ContractViolation(f"{beta.shape[0] if beta.ndim else 0} coefficients for {bases.shape[0]} bases")
    return np.tensordot(beta, bases, axes=1)


@dataclass
class _Graph:
    tape: Tape
    shared: dict[str, Var]
    coeffs: Var | None
    embeddings: Var
    hidden: Var


def _build(cfg: ModelConfig, data: GraphData, shared: Mapping[str, np.ndarray],
           local: LocalParams, etype_map: Sequence[int] | None) -> _Graph:
    g = data.graph
    n_types = g.schema.num_edge_types
    if cfg.decoupled:
        if local.coeffs is None or local.coeffs.shape != (cfg.num_layers, n_types, cfg.num_bases):
            got = None if local.coeffs is None else local.coeffs.shape
            raise ContractViolation(f"coefficients {got} do not match graph with {n_types} edge types")
    if local.embeddings.shape != (data.num_nodes, cfg.dims[0]):
        raise ContractViolation(f"embeddings {local.embeddings.shape} vs {data.num_nodes} nodes")
    if etype_map is None:
        etype_map = range(n_types)

    tape = Tape()
    sv = {}
    for name in shared_names(cfg):
        sv[name] = tape.leaf(shared[name])
    cv = tape.leaf(local.coeffs) if cfg.decoupled else None
    ev = tape.leaf(local.embeddings)

    h = ev
    for l in range(cfg.num_layers):
        z = tape.matmul(h, sv[f"layer{l}.self"])
        for r in range(n_types):
            if len(data.rows[r]) == 0:
                continue
            if cfg.decoupled:
                w = tape.combine(cv, sv[f"layer{l}.bases"], (l, r))
            else:
                w = tape.select(sv[f"layer{l}.relations"], etype_map[r])
            z = tape.add(z, tape.matmul(tape.gather_mean(h, data.aggs[r]), w), rows=data.rows[r])
        z = tape.add(z, sv[f"layer{l}.bias"])
        h = tape.relu(z) if l < cfg.num_layers - 1 else z
        if not np.all(np.isfinite(h.value)):
            raise NumericError(f"non-finite activation at layer {l}")
    return _Graph(tape, sv, cv, ev, h)


def forward(cfg: ModelConfig, data: GraphData, shared: Mapping[str, np.ndarray],
            local: LocalParams, etype_map: Sequence[int] | None = None) -> np.ndarray:
    """Logits for the target-type nodes, one row per node."""
    return _build(cfg, data, shared, local, etype_map).hidden.value[data.target_rows]


def task_loss(logits: np.ndarray, labels: np.ndarray, nodes: np.ndarray) -> float:
    """Mean softmax cross-entropy over ``nodes``."""
    if len(nodes) == 0:
        raise ConfigurationError("task loss over an empty mask")
    tape = Tape()
    z = tape.leaf(logits)
    return float(tape.softmax_xent(z, np.asarray(nodes), np.asarray(labels)[nodes]).value)


# ---------------------------------------------------------------------------
# coefficients alignment


def _check_peers(coeffs: np.ndarray, peers: Sequence[np.ndarray]) -> None:
    B = coeffs.shape[-1]
    for p in peers:
        if p.ndim != 3 or p.shape[0] != coeffs.shape[0] or (p.shape[1] and p.shape[2] != B):
            raise ProtocolError(f"peer coefficient set {p.shape} incompatible with {coeffs.shape}")


def _distances(candidates: np.ndarray, vec: np.ndarray) -> np.ndarray:
    # coordinate order accumulation, identical to a scalar loop
    acc = np.zeros(len(candidates))
    for i in range(len(vec)):
        acc += (candidates[:, i] - vec[i]) ** 2
    return acc


def _candidates(peers: Sequence[np.ndarray], layer: int) -> np.ndarray:
    blocks = [p[layer] for p in peers if p.shape[1]]
    if not blocks:
        return np.zeros((0, 0))
    return np.concatenate(blocks, axis=0)


def alignment_targets(coeffs: np.ndarray, peers: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Nearest peer vector for every ``(layer, type)`` plus a 0/1 weight.

    Ties go to the earliest candidate in received order. The weight is 0
    where the candidate pool is empty.
    """
    _check_peers(coeffs, peers)
    L, R, _ = coeffs.shape
    targets = np.zeros_like(coeffs)
    weight = np.zeros((L, R, 1))
    for l in range(L):
        cand = _candidates(peers, l)
        if len(cand) == 0:
            continue
        for r in range(R):
            targets[l, r] = cand[int(np.argmin(_distances(cand, coeffs[l, r])))]
            weight[l, r] = 1.0
    return targets, weight


def alignment_loss(coeffs: np.ndarray, peers: Sequence[np.ndarray]) -> float:
    """Sum over types and layers of the squared distance to the nearest peer vector."""
    _check_peers(coeffs, peers)
    L, R, _ = coeffs.shape
    cands = [_candidates(peers, l) for l in range(L)]
    total = 0.0
    for r in range(R):
        for l in range(L):
            if len(cands[l]):
                total += float(_distances(cands[l], coeffs[l, r]).min())
    return total


def alignment_grad(coeffs: np.ndarray, peers: Sequence[np.ndarray]) -> np.ndarray:
    targets, weight = alignment_targets(coeffs, peers)
    return 2.0 * (coeffs - targets) * weight


# ---------------------------------------------------------------------------
# client objective


@dataclass(frozen=True)
class Objective:
    loss: float
    task: float
    align: float
    shared_grads: dict[str, np.ndarray]
    local_grads: dict[str, np.ndarray]


def objective(cfg: ModelConfig, data: GraphData, shared: Mapping[str, np.ndarray],
              local: LocalParams, *, lam: float = 0.0,
              align: tuple[np.ndarray, np.ndarray] | None = None,
              etype_map: Sequence[int] | None = None,
              corrupt: Mapping[str, float] | None = None) -> Objective:
    """Task loss on the training mask plus ``lam`` times the alignment term.

    ``align`` carries the (targets, weight) pair from
    :func:`alignment_targets`; peers are constants. ``corrupt`` is passed to
    :attr:`Tape.corrupt` (gradient-check mutation tests only).
    """
    train = data.split[Mask.TRAIN]
    if len(train) == 0:
        raise ConfigurationError("client has no training nodes")
    gr = _build(cfg, data, shared, local, etype_map)
    tape = gr.tape
    tape.corrupt = dict(corrupt or {})
    loss = tape.softmax_xent(gr.hidden, data.target_rows[train], data.labels[train])
    task = float(loss.value)
    align_value = 0.0
    if lam != 0.0 and align is not None and gr.coeffs is not None:
        d = tape.sqdist(gr.coeffs, align[0], align[1])
        align_value = float(d.value)
        loss = tape.add(loss, tape.scale(d, lam))
    if not np.isfinite(loss.value):
        raise NumericError("non-finite client loss")
    grads = tape.backward(loss)
    names = shared_names(cfg)
    sg = dict(zip(names, grads[:len(names)]))
    lg = {"embeddings": grads[-1]}
    if gr.coeffs is not None:
        lg["coeffs"] = grads[len(names)]
    return Objective(float(loss.value), task, align_value, sg, lg)


def predict(cfg: ModelConfig, data: GraphData, shared: Mapping[str, np.ndarray],
            local: LocalParams, etype_map: Sequence[int] | None = None) -> np.ndarray:
    return np.argmax(forward(cfg, data, shared, local, etype_map), axis=1)


def correct_counts(data: GraphData, pred: np.ndarray) -> dict[Mask, tuple[int, int]]:
    """``(n, correct)`` for the valid and test masks."""
    out = {}
    for m in (Mask.VALID, Mask.TEST):
        nodes = data.split[m]
        out[m] = (len(nodes), int(np.count_nonzero(pred[nodes] == data.labels[nodes])))
    return out


# ---------------------------------------------------------------------------
# checkpoints: b"FHGN", version, then (name, rank, dims, float64 payload) records

CHECKPOINT_MAGIC = b"FHGN"
CHECKPOINT_VERSION = 1


def write_checkpoint(out: BinaryIO, tensors: Mapping[str, np.ndarray]) -> None:
    out.write(CHECKPOINT_MAGIC + bytes([CHECKPOINT_VERSION]))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        out.write(struct.pack("<I", len(raw)) + raw)
        out.write(struct.pack("<I", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(arr.tobytes(order="C"))


def read_checkpoint(stream: BinaryIO) -> dict[str, np.ndarray]:
    data = stream.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ProtocolError("not a checkpoint file")
    if data[4] != CHECKPOINT_VERSION:
        raise ProtocolError(f"unsupported checkpoint version {data[4]}")
    pos, out = 5, {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            size = int(np.prod(dims)) * 8
            if pos + size > len(data):
                raise ProtocolError(f"truncated tensor {name}")
            out[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(dims).copy()
            pos += size
    except struct.error:
        raise ProtocolError("truncated checkpoint") from None
    return out
