"""The server side of the synchronous round protocol."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import ConfigurationError, ProtocolError, RunFailure, TransportError
from ..model import ModelConfig, init_coeffs, init_shared, shared_names, shared_shapes
from ..numerics import STREAM_COEFF, STREAM_SAMPLE, STREAM_SHARED, STREAM_SHUFFLE, derive_rng
from . import protocol as P
from .config import TrainerConfig
from .report import ClientResult, RoundRecord, TrainingReport, weighted_accuracy

log = logging.getLogger(__name__)


def sample_size(K: int, C: float) -> int:
    if not 0.0 < C <= 1.0:
        raise ConfigurationError(f"client fraction C must lie in (0, 1], got {C}")
    # the epsilon keeps e.g. 0.3 * 10 from rounding up to 4
    return min(max(math.ceil(C * K - 1e-9), 1), K)


def sample_clients(K: int, C: float, rng: np.random.Generator) -> list[int]:
    """Uniform sample of ``max(ceil(C*K), 1)`` distinct ids, ascending."""
    return sorted(int(k) for k in rng.choice(K, sample_size(K, C), replace=False))


def aggregate_round(updates: Sequence[tuple[int, int, Mapping[str, np.ndarray]]]) -> dict[str, np.ndarray]:
    """``sum_k (N_k / N) * params_k`` over ``(client_id, N_k, params)``, summed in client-id order."""
    if not updates:
        raise ProtocolError("aggregation needs at least one update")
    updates = sorted(updates, key=lambda u: u[0])
    total = sum(n for _, n, _ in updates)
    if total <= 0:
        raise ProtocolError("aggregation over zero training samples")
    names = list(updates[0][2])
    out = {name: np.zeros_like(np.asarray(updates[0][2][name], dtype=np.float64)) for name in names}
    for cid, n, params in updates:
        if list(params) != names:
            raise ProtocolError(f"client {cid} sent tensors {list(params)}, expected {names}")
        w = n / total
        for name in names:
            p = np.asarray(params[name], dtype=np.float64)
            if p.shape != out[name].shape:
                raise ProtocolError(f"client {cid}: {name} has shape {p.shape}, expected {out[name].shape}")
            out[name] += w * p
    return out


class EarlyStopping:
    """Tracks the best validation round; improvement must be strict."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_round = 0
        self.best_valid = -1.0
        self.waited = 0

    def update(self, t: int, valid: float) -> bool:
        if valid > self.best_valid:
            self.best_round, self.best_valid, self.waited = t, valid, 0
            return True
        self.waited += 1
        return False

    @property
    def exhausted(self) -> bool:
        return self.waited >= self.patience


@dataclass
class ServerState:
    round: int
    shared: dict[str, np.ndarray]
    coeff_registry: dict[int, np.ndarray]
    client_meta: dict[int, int]                  # client id -> N_k
    sampled: list[int] = field(default_factory=list)
    best_round: int = 0
    best_valid: float = -1.0
    best_shared: dict[str, np.ndarray] = field(default_factory=dict)


class _Diverged(Exception):
    pass


class Server:
    def __init__(self, cfg: TrainerConfig, links: Sequence):
        self.cfg = cfg
        self.links = list(links)
        self.model: ModelConfig | None = None
        self.state: ServerState | None = None
        self.conn: dict[int, object] = {}

    # -- messaging ---------------------------------------------------------

    def _send(self, k: int, m: P.RoundMessage) -> None:
        self.conn[k].send(P.encode_message(m))

    def _recv(self, k: int, t: int, kinds: tuple[type, ...], deadline: float):
        """Next message of ``kinds`` for round ``t``; stale ones are dropped. None on timeout."""
        link = self.conn[k]
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            try:
                m = P.decode_message(link.recv(remaining))
            except TimeoutError:
                return None
            if isinstance(m, P.Abort) and m.round == t:
                return m
            if isinstance(m, kinds) and m.round == t:
                return m
            log.debug("dropping stale %s for round %d from client %d", type(m).__name__, m.round, k)

    def _tensors(self, params: Mapping[str, np.ndarray]) -> tuple[np.ndarray, ...]:
        return tuple(params[n] for n in shared_names(self.model))

    def _params(self, k: int, tensors: Sequence[np.ndarray]) -> dict[str, np.ndarray]:
        names, shapes = shared_names(self.model), shared_shapes(self.model)
        if len(tensors) != len(names):
            raise ProtocolError(f"client {k} sent {len(tensors)} tensors, expected {len(names)}")
        for n, t in zip(names, tensors):
            if t.shape != shapes[n]:
                raise ProtocolError(f"client {k}: {n} has shape {t.shape}, expected {shapes[n]}")
        return dict(zip(names, tensors))

    # -- setup -------------------------------------------------------------

    def _handshake(self) -> dict[int, P.Join]:
        joins: dict[int, P.Join] = {}
        deadline = time.monotonic() + self.cfg.timeout
        for link in self.links:
            try:
                m = P.decode_message(link.recv(max(deadline - time.monotonic(), 1e-3)))
            except TimeoutError:
                raise RunFailure("a client did not join before the timeout") from None
            if not isinstance(m, P.Join):
                raise ProtocolError(f"expected Join, got {type(m).__name__}")
            if m.client_id in joins:
                raise ProtocolError(f"client id {m.client_id} joined twice")
            joins[m.client_id] = m
            self.conn[m.client_id] = link
        return joins

    def _setup(self) -> list[int]:
        cfg = self.cfg
        joins = self._handshake()
        ids = sorted(joins)
        if cfg.decoupled:
            self.model = ModelConfig.build(cfg.d, cfg.layers, cfg.num_classes, 0, cfg.bases, True)
        else:
            if cfg.num_edge_types < 1:
                raise ConfigurationError(f"{cfg.algo} needs the central edge-type count")
            self.model = ModelConfig.build(cfg.d, cfg.layers, cfg.num_classes, cfg.num_edge_types,
                                           cfg.bases, False)
        shared = init_shared(self.model, derive_rng(cfg.seed, STREAM_SHARED))
        registry: dict[int, np.ndarray] = {}
        for k in ids:
            coeffs = None
            if cfg.decoupled:
                counts = joins[k].type_counts
                if len(counts) != cfg.layers or len(set(counts)) != 1:
                    raise ProtocolError(f"client {k} reported type counts {counts} for {cfg.layers} layers")
                stream = 0 if cfg.identical_init else k
                coeffs = init_coeffs(cfg.layers, counts[0], cfg.bases, derive_rng(cfg.seed, STREAM_COEFF, stream))
                registry[k] = coeffs
            self._send(k, P.Ack(0, self._tensors(shared), coeffs))
        meta = {k: joins[k].n_train for k in ids}
        self.state = ServerState(0, shared, registry, meta, best_shared=dict(shared))
        return ids

    # -- rounds ------------------------------------------------------------

    def _peers(self, t: int, k: int) -> tuple[np.ndarray, ...]:
        if not self.cfg.decoupled:
            return ()
        others = [self.state.coeff_registry[j] for j in sorted(self.state.coeff_registry) if j != k]
        order = derive_rng(self.cfg.seed, STREAM_SHUFFLE, t, k).permutation(len(others))
        return tuple(others[i] for i in order)

    def _train_round(self, t: int, sampled: list[int]) -> dict[int, P.ClientToServer]:
        shared = self._tensors(self.state.shared)
        for k in sampled:
            self._send(k, P.ServerToClient(t, shared, self._peers(t, k)))
        deadline = time.monotonic() + self.cfg.timeout
        updates, aborted = {}, []
        for k in sampled:
            m = self._recv(k, t, (P.ClientToServer,), deadline)
            if m is None:
                log.warning("round %d: client %d timed out, treated as unsampled", t, k)
            elif isinstance(m, P.Abort):
                aborted.append(k)
            else:
                updates[k] = m
        if aborted:
            raise _Diverged(f"round {t}: clients {aborted} aborted local training")
        return updates

    def _evaluate(self, t: int, ids: list[int], mode: P.EvalMode, keep: int,
                  shared: Mapping[str, np.ndarray]) -> list[ClientResult]:
        tensors = self._tensors(shared)
        for k in ids:
            self._send(k, P.EvalRequest(t, mode, keep, tensors))
        deadline = time.monotonic() + self.cfg.timeout
        out = []
        for k in ids:
            m = self._recv(k, t, (P.EvalReply,), deadline)
            if m is None:
                raise TransportError(f"client {k} did not answer the evaluation of round {t}")
            if isinstance(m, P.Abort):
                raise _Diverged(f"round {t}: client {k} produced non-finite outputs")
            out.append(ClientResult(k, m.n_valid, m.valid_correct, m.n_test, m.test_correct))
        return out

    def _retry(self, what: str, fn):
        for attempt in (0, 1):
            try:
                return fn()
            except (TransportError, ProtocolError) as exc:
                if attempt:
                    raise RunFailure(f"{what} failed twice: {exc}") from exc
                log.warning("%s failed (%s), retrying once", what, exc)

    def run(self, on_round: Callable[[ServerState], None] | None = None) -> TrainingReport:
        cfg = self.cfg
        ids = self._setup()
        st = self.state
        stopper = EarlyStopping(cfg.patience)
        rng = derive_rng(cfg.seed, STREAM_SAMPLE)
        report = TrainingReport(cfg.algo)
        started = time.perf_counter()
        t = 0
        try:
            while t < cfg.max_rounds:
                t += 1
                st.round = t
                st.sampled = [ids[i] for i in sample_clients(len(ids), cfg.C, rng)]
                updates = self._retry(f"round {t}", lambda: self._train_round(t, st.sampled))
                if updates:
                    agg = aggregate_round(
                        [(k, m.n_train, self._params(k, m.shared)) for k, m in updates.items()])
                    if not all(np.all(np.isfinite(v)) for v in agg.values()):
                        raise _Diverged(f"round {t}: aggregated parameters are not finite")
                    st.shared = agg
                    for k, m in updates.items():
                        if m.own_coeffs is not None:
                            st.coeff_registry[k] = m.own_coeffs
                        st.client_meta[k] = m.n_train
                results = self._retry(
                    f"evaluation {t}",
                    lambda: self._evaluate(t, ids, P.EvalMode.VALID, stopper.best_round, st.shared))
                valid = weighted_accuracy((r.n_valid, r.valid_correct) for r in results)
                test = weighted_accuracy((r.n_test, r.test_correct) for r in results)
                seconds = time.perf_counter() - started if cfg.record_time else 0.0
                report.rounds.append(RoundRecord(t, valid, test, seconds))
                if stopper.update(t, valid):
                    st.best_shared = dict(st.shared)
                st.best_round, st.best_valid = stopper.best_round, stopper.best_valid
                if on_round is not None:
                    on_round(st)
                if stopper.exhausted:
                    report.stop_reason = "patience"
                    break
        except _Diverged as exc:
            log.warning("%s; restoring round %d", exc, stopper.best_round)
            report.stop_reason = "diverged"
        # tagged past the last round so replies still queued from it are dropped
        try:
            final = self._retry("final evaluation", lambda: self._evaluate(
                t + 1, ids, P.EvalMode.FINAL, stopper.best_round, st.best_shared))
        except _Diverged as exc:
            raise RunFailure(f"restored round {stopper.best_round} is not finite: {exc}") from None
        for k in ids:
            self._send(k, P.Stop(t + 1))
        report.clients = final
        report.best_round = stopper.best_round
        report.best_valid = max(stopper.best_valid, 0.0)
        report.shared = st.best_shared
        return report
