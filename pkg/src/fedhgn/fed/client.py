"""Client state, local training and the client message loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigurationError, ContractViolation, NumericError, ProtocolError
from ..graph import HeteroGraph, Mask
from ..model import (
    GraphData,
    LocalParams,
    init_embeddings,
    ModelConfig,
    alignment_targets,
    correct_counts,
    objective,
    predict,
    prepare,
    shared_names,
)
from ..numerics import STREAM_EMBED, derive_rng, sgd_step
from ..splitters import ClientGraph, single_client
from . import protocol as P
from .config import PROX_ALGOS, TrainerConfig

log = logging.getLogger(__name__)


def proximal_penalty(params: Mapping[str, np.ndarray], global_snapshot: Mapping[str, np.ndarray],
                     mu: float) -> tuple[float, dict[str, np.ndarray]]:
    """``(mu/2) * ||w - w_global||^2`` over all shared tensors, and its gradient."""
    if mu < 0:
        raise ConfigurationError("mu must be non-negative")
    value, grads = 0.0, {}
    for name, w in params.items():
        g = global_snapshot[name]
        if w.shape != g.shape:
            raise ContractViolation(f"{name}: {w.shape} vs global {g.shape}")
        diff = w - g
        value += 0.5 * mu * float(np.sum(diff * diff))
        grads[name] = mu * diff
    return value, grads


def model_for(cfg: TrainerConfig, local_edge_types: int) -> ModelConfig:
    if cfg.decoupled:
        return ModelConfig.build(cfg.d, cfg.layers, cfg.num_classes, local_edge_types, cfg.bases, True)
    n = cfg.num_edge_types or local_edge_types
    return ModelConfig.build(cfg.d, cfg.layers, cfg.num_classes, n, cfg.bases, False)


@dataclass
class ClientHandle:
    """Everything one client holds: its data, model shape and private parameters."""

    client_id: int
    data: GraphData
    model: ModelConfig
    local: LocalParams
    cfg: TrainerConfig
    etype_map: tuple[int, ...] | None = None
    snapshots: dict[int, LocalParams] = field(default_factory=dict)

    @classmethod
    def create(cls, client_id: int, graph: ClientGraph | HeteroGraph, cfg: TrainerConfig) -> "ClientHandle":
        cg = graph if isinstance(graph, ClientGraph) else single_client(graph)
        g = cg.graph
        data = prepare(g)
        model = model_for(cfg, g.schema.num_edge_types)
        emb = init_embeddings(g.node_counts, cfg.d, derive_rng(cfg.seed, STREAM_EMBED, client_id))
        etype_map = cg.etype_map if cfg.algo in ("fedavg", "fedprox") else None
        return cls(client_id, data, model, LocalParams(None, emb, data.offsets), cfg, etype_map)

    @property
    def n_train(self) -> int:
        return self.data.count(Mask.TRAIN)

    @property
    def type_counts(self) -> tuple[int, ...]:
        if not self.model.decoupled:
            return ()
        return (self.data.graph.schema.num_edge_types,) * self.model.num_layers

    def shared_from(self, tensors: Sequence[np.ndarray]) -> dict[str, np.ndarray]:
        names = shared_names(self.model)
        if len(tensors) != len(names):
            raise ProtocolError(f"expected {len(names)} shared tensors, got {len(tensors)}")
        return {n: np.array(t, dtype=np.float64) for n, t in zip(names, tensors)}

    def evaluate(self, shared: Mapping[str, np.ndarray]) -> dict[Mask, tuple[int, int]]:
        with np.errstate(over="ignore", invalid="ignore"):
            return correct_counts(self.data, predict(self.model, self.data, shared, self.local, self.etype_map))


@dataclass(frozen=True)
class LocalUpdate:
    shared: dict[str, np.ndarray]
    coeffs: np.ndarray | None
    n_train: int


def client_local_update(h: ClientHandle, shared_in: Mapping[str, np.ndarray],
                        peers: Sequence[np.ndarray] = (), round_no: int = 0) -> LocalUpdate:
    """E full-batch SGD epochs on ``task + lam * align`` (+ proximal term for FedProx).

    Embeddings stay in ``h``; the returned update carries only what is
    uploaded.
    """
    cfg = h.cfg
    if h.n_train == 0:
        raise ConfigurationError(f"client {h.client_id} has an empty training mask")
    shared = {k: np.array(v, dtype=np.float64) for k, v in shared_in.items()}
    anchor = {k: v.copy() for k, v in shared.items()}
    local = h.local
    use_align = h.model.decoupled and cfg.lam != 0.0 and any(p.shape[1] for p in peers)
    # overflow is detected explicitly below, numpy's warnings would only be noise
    with np.errstate(over="ignore", invalid="ignore"):
        local = _epochs(h, shared, anchor, local, peers, use_align, round_no)
    h.local = local
    return LocalUpdate(shared, None if local.coeffs is None else local.coeffs.copy(), h.n_train)


def _epochs(h: ClientHandle, shared: dict, anchor: Mapping, local: LocalParams,
            peers: Sequence[np.ndarray], use_align: bool, round_no: int) -> LocalParams:
    # updates ``shared`` in place
    cfg = h.cfg
    for epoch in range(cfg.E):
        align = alignment_targets(local.coeffs, peers) if use_align else None
        try:
            obj = objective(h.model, h.data, shared, local, lam=cfg.lam, align=align, etype_map=h.etype_map)
        except NumericError as exc:
            raise NumericError(f"client {h.client_id}: {exc} at round {round_no} epoch {epoch + 1}") from None
        loss, grads = obj.loss, obj.shared_grads
        if cfg.algo in PROX_ALGOS:
            value, prox = proximal_penalty(shared, anchor, cfg.mu)
            loss += value
            grads = {k: grads[k] + prox[k] for k in grads}
        if not np.isfinite(loss):
            raise NumericError(f"client {h.client_id}: non-finite loss at round {round_no} epoch {epoch + 1}")
        shared.update(sgd_step(shared, grads, cfg.eta))
        local = local.with_values(sgd_step(local.as_dict(), obj.local_grads, cfg.eta))
    return local


class ClientWorker:
    """Serves one client over a link until the server sends Stop."""

    def __init__(self, handle: ClientHandle, link):
        self.h = handle
        self.link = link
        self.error: BaseException | None = None
        self._round_start: tuple[int, LocalParams] | None = None

    def _send(self, m: P.RoundMessage) -> None:
        self.link.send(P.encode_message(m))

    def run(self) -> None:
        try:
            self._loop()
        except BaseException as exc:  # surfaced to the server as a closed link
            self.error = exc
            log.exception("client %d failed", self.h.client_id)
            self.link.close()

    def _loop(self) -> None:
        h = self.h
        self._send(P.Join(0, h.client_id, h.n_train, h.type_counts))
        while True:
            m = P.decode_message(self.link.recv())
            if isinstance(m, P.Ack):
                if h.model.decoupled:
                    h.local = replace(h.local, coeffs=np.array(m.own_coeffs))
                h.snapshots = {0: h.local.copy()}
            elif isinstance(m, P.ServerToClient):
                self._train(m)
            elif isinstance(m, P.EvalRequest):
                self._evaluate(m)
            elif isinstance(m, P.Stop):
                return

    def _train(self, m: P.ServerToClient) -> None:
        h = self.h
        # a repeated round (server retry) restarts from the same state
        if self._round_start is not None and self._round_start[0] == m.round:
            h.local = self._round_start[1].copy()
        else:
            self._round_start = (m.round, h.local.copy())
        try:
            upd = client_local_update(h, h.shared_from(m.shared), m.peers, m.round)
        except NumericError as exc:
            log.warning("%s", exc)
            h.local = self._round_start[1].copy()
            self._send(P.Abort(m.round, P.AbortReason.NUMERIC))
            return
        names = shared_names(h.model)
        self._send(P.ClientToServer(m.round, tuple(upd.shared[n] for n in names), upd.coeffs, upd.n_train))

    def _evaluate(self, m: P.EvalRequest) -> None:
        h = self.h
        if m.mode is P.EvalMode.FINAL:
            h.local = h.snapshots[m.keep_round].copy()
        try:
            counts = h.evaluate(h.shared_from(m.shared))
        except NumericError:
            self._send(P.Abort(m.round, P.AbortReason.NUMERIC))
            return
        (nv, cv), (nt, ct) = counts[Mask.VALID], counts[Mask.TEST]
        self._send(P.EvalReply(m.round, nv, cv, nt, ct))
        if m.mode is P.EvalMode.VALID:
            h.snapshots[m.round] = h.local.copy()
            for r in [r for r in h.snapshots if r not in (m.round, m.keep_round)]:
                del h.snapshots[r]
