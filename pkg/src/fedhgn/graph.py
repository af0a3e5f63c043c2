"""Heterogeneous graphs with type-segmented node ids."""

from __future__ import annotations

import enum
import io
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, TextIO

import numpy as np

from .errors import ContractViolation, ParameterError, ParseError
from .numerics import STREAM_MASK, STREAM_SYNTH, derive_rng

log = logging.getLogger(__name__)

UNLABELED = -1


class Mask(enum.IntEnum):
    NONE = 0
    TRAIN = 1
    VALID = 2
    TEST = 3

    @classmethod
    def parse(cls, text: str) -> "Mask":
        try:
            return cls[text.upper()]
        except KeyError:
            raise ParseError(f"unknown mask {text!r}") from None


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EdgeType:
    id: int
    src_type: int
    dst_type: int


@dataclass(frozen=True)
class Schema:
    node_type_count: int
    edge_types: tuple[EdgeType, ...]
    # client-local only; never copied into protocol messages
    node_type_names: tuple[str, ...] | None = None
    edge_type_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.node_type_count < 1:
            raise ContractViolation("a schema needs at least one node type")
        for i, et in enumerate(self.edge_types):
            if et.id != i:
                raise ContractViolation(f"edge type ids must be contiguous, got {et.id} at {i}")
            if not (0 <= et.src_type < self.node_type_count and 0 <= et.dst_type < self.node_type_count):
                raise ContractViolation(f"edge type {i} refers to an unknown node type")
        if self.node_type_names is not None and len(self.node_type_names) != self.node_type_count:
            raise ContractViolation("one name per node type required")
        if self.edge_type_names is not None and len(self.edge_type_names) != len(self.edge_types):
            raise ContractViolation("one name per edge type required")
        if self.node_type_count + len(self.edge_types) <= 2:
            log.debug("degenerate schema with %d node and %d edge types",
                      self.node_type_count, len(self.edge_types))

    @property
    def num_edge_types(self) -> int:
        return len(self.edge_types)


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    """Typed nodes and edges plus labels/masks on the target node type.

    ``edges[r]`` is an ``(E_r, 2)`` array of ``(src, dst)`` indices local to
    the source and destination node types of edge type ``r``.
    """

    schema: Schema
    node_counts: tuple[int, ...]
    edges: tuple[np.ndarray, ...]
    target_type: int
    labels: np.ndarray
    masks: np.ndarray
    num_classes: int

    def __post_init__(self):
        s = self.schema
        object.__setattr__(self, "node_counts", tuple(int(n) for n in self.node_counts))
        object.__setattr__(
            self, "edges", tuple(_frozen(np.reshape(e, (-1, 2)), np.int64) for e in self.edges)
        )
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "masks", _frozen(self.masks, np.int8))
        if len(self.node_counts) != s.node_type_count:
            raise ContractViolation("one node count per node type required")
        if len(self.edges) != s.num_edge_types:
            raise ContractViolation("one edge list per edge type required")
        for et, e in zip(s.edge_types, self.edges):
            if len(e) and (
                e[:, 0].min() < 0 or e[:, 0].max() >= self.node_counts[et.src_type]
                or e[:, 1].min() < 0 or e[:, 1].max() >= self.node_counts[et.dst_type]
            ):
                raise ContractViolation(f"edge type {et.id} has endpoints out of range")
        if not 0 <= self.target_type < s.node_type_count:
            raise ContractViolation("target type out of range")
        n = self.node_counts[self.target_type]
        if self.labels.shape != (n,) or self.masks.shape != (n,):
            raise ContractViolation("labels and masks must cover every target node")
        labeled = self.labels != UNLABELED
        if np.any(self.masks[labeled] == Mask.NONE) or np.any(self.masks[~labeled] != Mask.NONE):
            raise ContractViolation("labeled nodes need exactly one split mask, unlabeled none")
        if labeled.any() and self.labels[labeled].max() >= self.num_classes:
            raise ContractViolation("num_classes must exceed every label id")
        if np.any(self.labels < UNLABELED):
            raise ContractViolation("negative label id")

    @property
    def num_edges(self) -> int:
        return sum(len(e) for e in self.edges)

    @property
    def num_nodes(self) -> int:
        return sum(self.node_counts)

    def mask_nodes(self, mask: Mask) -> np.ndarray:
        return np.flatnonzero(self.masks == mask)

    def mask_count(self, mask: Mask) -> int:
        return int(np.count_nonzero(self.masks == mask))

    def __eq__(self, other) -> bool:
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.node_counts == other.node_counts
            and self.target_type == other.target_type
            and self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.masks, other.masks)
            and all(np.array_equal(a, b) for a, b in zip(self.edges, other.edges))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class NeighborIndex:
    """Per edge type, in-neighbors of every destination node in CSR form.

    ``indices[r][indptr[r][v]:indptr[r][v+1]]`` lists N_v^r in ascending
    source order.
    """

    indptr: tuple[np.ndarray, ...]
    indices: tuple[np.ndarray, ...]

    def neighbors(self, r: int, v: int) -> np.ndarray:
        p = self.indptr[r]
        return self.indices[r][p[v]:p[v + 1]]

    def degree(self, r: int) -> np.ndarray:
        return np.diff(self.indptr[r])

    def edges(self, r: int) -> np.ndarray:
        """Flatten back to ``(src, dst)`` pairs sorted by destination then source."""
        dst = np.repeat(np.arange(len(self.indptr[r]) - 1), self.degree(r))
        return np.stack([self.indices[r], dst], axis=1)


def build_neighbor_index(g: HeteroGraph) -> NeighborIndex:
    indptr, indices = [], []
    for et, e in zip(g.schema.edge_types, g.edges):
        n_dst = g.node_counts[et.dst_type]
        order = np.lexsort((e[:, 0], e[:, 1]))
        counts = np.bincount(e[:, 1], minlength=n_dst)
        indptr.append(_frozen(np.concatenate([[0], np.cumsum(counts)]), np.int64))
        indices.append(_frozen(e[order, 0], np.int64))
    return NeighborIndex(tuple(indptr), tuple(indices))


# ---------------------------------------------------------------------------
# synthetic graphs


@dataclass(frozen=True)
class SyntheticSpec:
    node_type_count: int = 4
    edge_type_count: int = 10
    nodes_per_type: int = 150
    edges_per_type: int = 150
    num_classes: int = 3
    label_fraction: float = 0.5
    homophily: float = 0.9

    def validate(self) -> None:
        for name in ("node_type_count", "edge_type_count", "nodes_per_type",
                     "edges_per_type", "num_classes"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ParameterError("label_fraction must lie in (0, 1]")
        if not 0.0 <= self.homophily <= 1.0:
            raise ParameterError("homophily must lie in [0, 1]")


def generate_synthetic(spec: SyntheticSpec, seed: int) -> HeteroGraph:
    """Seeded graph whose target labels are planted in its relational structure.

    Node type 0 is the target type. Edge type ``r`` runs from node type
    ``r % node_type_count`` into the target type and is preferred by class
    ``r % num_classes``. Every node carries a latent community (its class for
    target nodes). With probability ``homophily`` an edge of type ``r`` joins
    a class-``c`` target to a community-``c`` source, ``c`` being the class
    preferring ``r``; otherwise both endpoints are uniform.
    """
    spec.validate()
    rng = derive_rng(seed, STREAM_SYNTH)
    n, C = spec.nodes_per_type, spec.num_classes
    community = [rng.permutation(n) % C for _ in range(spec.node_type_count)]
    members = [[np.flatnonzero(comm == c) for c in range(C)] for comm in community]
    target_class = community[0]

    edge_types, edges = [], []
    for r in range(spec.edge_type_count):
        src_t = r % spec.node_type_count
        c = r % C
        planted = rng.random(spec.edges_per_type) < spec.homophily
        dst = rng.integers(0, n, spec.edges_per_type)
        src = rng.integers(0, n, spec.edges_per_type)
        k = int(planted.sum())
        if k and len(members[0][c]) and len(members[src_t][c]):
            dst[planted] = rng.choice(members[0][c], k)
            src[planted] = rng.choice(members[src_t][c], k)
        edge_types.append(EdgeType(r, src_t, 0))
        edges.append(np.stack([src, dst], axis=1))

    labeled = rng.random(n) < spec.label_fraction
    labels = np.where(labeled, target_class, UNLABELED)
    masks = assign_masks(labels, derive_rng(seed, STREAM_MASK))
    schema = Schema(spec.node_type_count, tuple(edge_types))
    return HeteroGraph(schema, (n,) * spec.node_type_count, tuple(edges), 0, labels, masks, C)


def assign_masks(labels: np.ndarray, rng: np.random.Generator,
                 fractions: tuple[float, float] = (0.6, 0.2)) -> np.ndarray:
    """60/20/20 train/valid/test over labeled nodes."""
    masks = np.full(len(labels), Mask.NONE, dtype=np.int8)
    idx = np.flatnonzero(labels != UNLABELED)
    idx = idx[rng.permutation(len(idx))]
    n_train = int(round(fractions[0] * len(idx)))
    n_valid = int(round(fractions[1] * len(idx)))
    masks[idx[:n_train]] = Mask.TRAIN
    masks[idx[n_train:n_train + n_valid]] = Mask.VALID
    masks[idx[n_train + n_valid:]] = Mask.TEST
    return masks


# ---------------------------------------------------------------------------
# text dump
#
#   ntypes <k>
#   nodes <type> <count>            one per node type
#   target <type>
#   classes <n>
#   etype <id> <srctype> <dsttype>  one per edge type
#   name ntype|etype <id> <text>    optional, client-local names
#   edge <etype> <srctype> <dsttype> <u> <v>
#   label <node> <class> <mask>


def write_graph(g: HeteroGraph, out: TextIO, header: str | None = None) -> None:
    if header:
        out.write(f"# {header}\n")
    s = g.schema
    out.write(f"ntypes {s.node_type_count}\n")
    for t, c in enumerate(g.node_counts):
        out.write(f"nodes {t} {c}\n")
    out.write(f"target {g.target_type}\n")
    out.write(f"classes {g.num_classes}\n")
    for et in s.edge_types:
        out.write(f"etype {et.id} {et.src_type} {et.dst_type}\n")
    for kind, names in (("ntype", s.node_type_names), ("etype", s.edge_type_names)):
        for i, name in enumerate(names or ()):
            out.write(f"name {kind} {i} {name}\n")
    for et, e in zip(s.edge_types, g.edges):
        for u, v in e:
            out.write(f"edge {et.id} {et.src_type} {et.dst_type} {u} {v}\n")
    for v in np.flatnonzero(g.labels != UNLABELED):
        out.write(f"label {v} {g.labels[v]} {Mask(g.masks[v]).name.lower()}\n")


def dump_graph(g: HeteroGraph, header: str | None = None) -> str:
    buf = io.StringIO()
    write_graph(g, buf, header)
    return buf.getvalue()


def read_graph(lines: Iterable[str]) -> HeteroGraph:
    ntypes = None
    counts: dict[int, int] = {}
    target, classes = 0, None
    etypes: dict[int, EdgeType] = {}
    names: dict[str, dict[int, str]] = {"ntype": {}, "etype": {}}
    edges: dict[int, list[tuple[int, int]]] = {}
    label_rows: list[tuple[int, int, Mask]] = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            if tok[0] == "ntypes":
                ntypes = int(tok[1])
            elif tok[0] == "nodes":
                counts[int(tok[1])] = int(tok[2])
            elif tok[0] == "target":
                target = int(tok[1])
            elif tok[0] == "classes":
                classes = int(tok[1])
            elif tok[0] == "etype":
                i = int(tok[1])
                etypes[i] = EdgeType(i, int(tok[2]), int(tok[3]))
            elif tok[0] == "name":
                names[tok[1]][int(tok[2])] = line.split(None, 3)[3]
            elif tok[0] == "edge":
                r = int(tok[1])
                etypes.setdefault(r, EdgeType(r, int(tok[2]), int(tok[3])))
                edges.setdefault(r, []).append((int(tok[4]), int(tok[5])))
            elif tok[0] == "label":
                label_rows.append((int(tok[1]), int(tok[2]), Mask.parse(tok[3])))
            else:
                raise ParseError(f"unknown record {tok[0]!r}", lineno)
        except (IndexError, KeyError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"malformed record: {line}", lineno) from None
    if ntypes is None:
        raise ParseError("missing 'ntypes' header")
    node_counts = tuple(counts.get(t, 0) for t in range(ntypes))
    n_target = node_counts[target]
    labels = np.full(n_target, UNLABELED, dtype=np.int64)
    masks = np.zeros(n_target, dtype=np.int8)
    for v, c, m in label_rows:
        labels[v], masks[v] = c, m
    if classes is None:
        classes = int(labels.max()) + 1 if n_target else 1
    ets = tuple(etypes[i] for i in range(len(etypes)))

    def _names(kind, n):
        got = names[kind]
        return tuple(got.get(i, "") for i in range(n)) if got else None

    schema = Schema(ntypes, ets, _names("ntype", ntypes), _names("etype", len(ets)))
    edge_arrays = tuple(np.array(edges.get(i, []), dtype=np.int64).reshape(-1, 2) for i in range(len(ets)))
    return HeteroGraph(schema, node_counts, edge_arrays, target, labels, masks, classes)


def load_graph(text: str) -> HeteroGraph:
    return read_graph(text.splitlines())


def graph_summary(g: HeteroGraph) -> Mapping[str, int]:
    return {
        "ntypes": g.schema.node_type_count,
        "etypes": g.schema.num_edge_types,
        "nodes": g.num_nodes,
        "edges": g.num_edges,
        "train": g.mask_count(Mask.TRAIN),
        "valid": g.mask_count(Mask.VALID),
        "test": g.mask_count(Mask.TEST),
    }
