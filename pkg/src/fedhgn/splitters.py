"""Random Edges (RE) and Random Edge Types (RET) client splits.

Items (edges or edge types) are shuffled and cut into K+2 near-equal
groups: group k < K belongs to client k alone, group K to every client, and
each item of group K+1 to p clients.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .errors import ParameterError, ParseError
from .graph import EdgeType, HeteroGraph, Mask, Schema, graph_summary
from .numerics import STREAM_SPLIT, derive_rng

MAX_ATTEMPTS = 16
STRATEGIES = ("RE", "RET")
P_MODES = ("per_item", "fixed_set")


@dataclass(frozen=True, eq=False)
class ClientGraph:
    """One client's graph with the maps back to the central graph.

    ``etype_map[r]`` is the central id of local edge type ``r`` (only FedAvg
    style baselines use it); ``ntype_map`` and ``node_maps`` do the same for
    node types and nodes.
    """

    graph: HeteroGraph
    etype_map: tuple[int, ...]
    ntype_map: tuple[int, ...]
    node_maps: tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class SplitManifest:
    strategy: str
    K: int
    p: int
    seed: int
    owners: tuple[tuple[int, ...], ...]   # per edge ordinal (RE) or edge type (RET)
    p_mode: str = "per_item"
    clients: tuple[ClientGraph, ...] = field(default=(), repr=False)

    def group_of(self, item: int) -> int:
        own = self.owners[item]
        if len(own) == 1:
            return own[0]
        if len(own) == self.K:
            return self.K
        return self.K + 1

    @property
    def groups(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.K + 2)]
        for i in range(len(self.owners)):
            out[self.group_of(i)].append(i)
        return out

    def same_assignment(self, other: "SplitManifest") -> bool:
        return (self.strategy, self.K, self.p, self.seed, self.owners) == (
            other.strategy, other.K, other.p, other.seed, other.owners)


def default_p(K: int) -> int:
    return math.ceil(K / 2)


def _check(K: int, p: int, p_mode: str) -> None:
    if K < 3:
        raise ParameterError(f"splitting needs K >= 3, got {K}")
    if not 1 < p < K:
        raise ParameterError(f"p must satisfy 1 < p < K, got p={p}, K={K}")
    if p_mode not in P_MODES:
        raise ParameterError(f"unknown p_mode {p_mode!r}")


def _assign(n_items: int, K: int, p: int, rng: np.random.Generator, p_mode: str) -> list[tuple[int, ...]]:
    perm = rng.permutation(n_items)
    owners: list[tuple[int, ...]] = [()] * n_items
    groups = np.array_split(perm, K + 2)
    for k in range(K):
        for i in groups[k]:
            owners[i] = (k,)
    everyone = tuple(range(K))
    for i in groups[K]:
        owners[i] = everyone
    fixed = tuple(sorted(int(x) for x in rng.choice(K, p, replace=False)))
    for i in groups[K + 1]:
        if p_mode == "per_item":
            owners[i] = tuple(sorted(int(x) for x in rng.choice(K, p, replace=False)))
        else:
            owners[i] = fixed
    return owners


def _edge_ordinals(g: HeteroGraph) -> list[tuple[int, int]]:
    return [(r, j) for r, e in enumerate(g.edges) for j in range(len(e))]


def client_graph(g: HeteroGraph, kept: dict[int, np.ndarray]) -> ClientGraph:
    """Subgraph holding ``kept[r]`` (row indices into ``g.edges[r]``) per edge type.

    Nodes are those touched by kept edges; node and edge types without any
    local member are dropped, except the target type.
    """
    s = g.schema
    etypes = [r for r in sorted(kept) if len(kept[r])]
    used: list[list[np.ndarray]] = [[] for _ in range(s.node_type_count)]
    for r in etypes:
        et, e = s.edge_types[r], g.edges[r][kept[r]]
        used[et.src_type].append(e[:, 0])
        used[et.dst_type].append(e[:, 1])
    node_sets = [np.unique(np.concatenate(u)) if u else np.zeros(0, np.int64) for u in used]
    ntypes = [t for t in range(s.node_type_count) if len(node_sets[t]) or t == g.target_type]
    new_t = {t: i for i, t in enumerate(ntypes)}

    edge_types, edges = [], []
    for i, r in enumerate(etypes):
        et, e = s.edge_types[r], g.edges[r][kept[r]]
        src = np.searchsorted(node_sets[et.src_type], e[:, 0])
        dst = np.searchsorted(node_sets[et.dst_type], e[:, 1])
        edge_types.append(EdgeType(i, new_t[et.src_type], new_t[et.dst_type]))
        edges.append(np.stack([src, dst], axis=1))
    targets = node_sets[g.target_type]
    schema = Schema(
        len(ntypes), tuple(edge_types),
        None if s.node_type_names is None else tuple(s.node_type_names[t] for t in ntypes),
        None if s.edge_type_names is None else tuple(s.edge_type_names[r] for r in etypes),
    )
    sub = HeteroGraph(schema, tuple(len(node_sets[t]) for t in ntypes), tuple(edges),
                      new_t[g.target_type], g.labels[targets], g.masks[targets], g.num_classes)
    return ClientGraph(sub, tuple(etypes), tuple(ntypes), tuple(node_sets[t] for t in ntypes))


def derive_clients(g: HeteroGraph, m: SplitManifest) -> tuple[ClientGraph, ...]:
    kept: list[dict[int, list[int]]] = [{} for _ in range(m.K)]
    if m.strategy == "RE":
        for (r, j), own in zip(_edge_ordinals(g), m.owners):
            for k in own:
                kept[k].setdefault(r, []).append(j)
    else:
        for r, own in enumerate(m.owners):
            for k in own:
                kept[k][r] = list(range(len(g.edges[r])))
    return tuple(
        client_graph(g, {r: np.array(rows, dtype=np.int64) for r, rows in kk.items()}) for kk in kept
    )


def _split(g: HeteroGraph, strategy: str, K: int, p: int | None, seed: int, p_mode: str) -> SplitManifest:
    p = default_p(K) if p is None else p
    _check(K, p, p_mode)
    n_items = g.num_edges if strategy == "RE" else g.schema.num_edge_types
    for attempt in range(MAX_ATTEMPTS):
        s = seed + attempt
        owners = _assign(n_items, K, p, derive_rng(s, STREAM_SPLIT), p_mode)
        m = SplitManifest(strategy, K, p, s, tuple(owners), p_mode)
        clients = derive_clients(g, m)
        if all(c.graph.mask_count(Mask.TRAIN) > 0 for c in clients):
            return SplitManifest(strategy, K, p, s, tuple(owners), p_mode, clients)
    raise ParameterError(
        f"{strategy} split left a client without training nodes after {MAX_ATTEMPTS} attempts"
    )


def split_random_edges(g: HeteroGraph, K: int, p: int | None = None, seed: int = 0,
                       p_mode: str = "per_item") -> SplitManifest:
    return _split(g, "RE", K, p, seed, p_mode)


def split_random_edge_types(g: HeteroGraph, K: int, p: int | None = None, seed: int = 0,
                            p_mode: str = "per_item") -> SplitManifest:
    return _split(g, "RET", K, p, seed, p_mode)


def split_graph(g: HeteroGraph, strategy: str, K: int, p: int | None = None, seed: int = 0,
                p_mode: str = "per_item") -> SplitManifest:
    if strategy not in STRATEGIES:
        raise ParameterError(f"unknown split strategy {strategy!r}")
    return _split(g, strategy, K, p, seed, p_mode)


def single_client(g: HeteroGraph) -> ClientGraph:
    """The unsplit graph as one client (K=1)."""
    s = g.schema
    return ClientGraph(g, tuple(range(s.num_edge_types)), tuple(range(s.node_type_count)),
                       tuple(np.arange(n) for n in g.node_counts))


STAT_COLUMNS = ("ntypes", "etypes", "nodes", "edges", "train", "valid", "test")


def manifest_stats(m: SplitManifest) -> dict[str, object]:
    per_client = [dict(graph_summary(c.graph)) for c in m.clients]
    avg = {col: float(np.mean([row[col] for row in per_client])) for col in STAT_COLUMNS}
    return {"clients": per_client, "average": avg}


def format_stats(stats: dict[str, object]) -> str:
    clients = stats["clients"]
    lines = ["client," + ",".join(STAT_COLUMNS)]
    for k, row in enumerate(clients):
        lines.append(f"{k}," + ",".join(str(row[c]) for c in STAT_COLUMNS))
    lines.append("average," + ",".join(f"{stats['average'][c]:.1f}" for c in STAT_COLUMNS))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# manifest text:  split RE|RET K p seed  /  edge <ordinal> <c,...>  /  etype <r> <c,...>


def write_manifest(m: SplitManifest, out: TextIO, header: str | None = None) -> None:
    if header:
        out.write(f"# {header}\n")
    out.write(f"# p_mode {m.p_mode}\n")
    out.write(f"split {m.strategy} {m.K} {m.p} {m.seed}\n")
    tag = "edge" if m.strategy == "RE" else "etype"
    for i, own in enumerate(m.owners):
        out.write(f"{tag} {i} {','.join(map(str, own))}\n")


def dump_manifest(m: SplitManifest, header: str | None = None) -> str:
    buf = io.StringIO()
    write_manifest(m, buf, header)
    return buf.getvalue()


def read_manifest(lines: Iterable[str], g: HeteroGraph | None = None) -> SplitManifest:
    head = None
    p_mode = "per_item"
    owners: dict[int, tuple[int, ...]] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if line.startswith("# p_mode"):
            p_mode = line.split()[-1]
            continue
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            if tok[0] == "split":
                head = (tok[1], int(tok[2]), int(tok[3]), int(tok[4]))
            elif tok[0] in ("edge", "etype"):
                owners[int(tok[1])] = tuple(int(x) for x in tok[2].split(","))
            else:
                raise ParseError(f"unknown record {tok[0]!r}", lineno)
        except (IndexError, ValueError):
            raise ParseError(f"malformed manifest line: {line}", lineno) from None
    if head is None:
        raise ParseError("missing 'split' header")
    m = SplitManifest(*head, tuple(owners[i] for i in range(len(owners))), p_mode)
    if g is not None:
        m = SplitManifest(*head, m.owners, p_mode, derive_clients(g, m))
    return m
