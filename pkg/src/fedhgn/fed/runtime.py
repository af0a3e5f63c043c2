"""End-to-end training runs: federated algorithms and the Central/Local baselines."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import replace
from typing import Callable, Sequence

from ..errors import ConfigurationError, NumericError, RunFailure
from ..graph import HeteroGraph, Mask
from ..model import init_shared
from ..numerics import STREAM_SHARED, derive_rng
from ..splitters import ClientGraph, single_client
from .client import ClientHandle, ClientWorker, client_local_update
from .config import TRANSPORTS, TrainerConfig
from .report import ClientResult, RoundRecord, TrainingReport, combine_local, weighted_accuracy
from .server import EarlyStopping, Server, ServerState
from .transport import SocketListener, connect, queue_pair

log = logging.getLogger(__name__)


def _as_client(g: ClientGraph | HeteroGraph) -> ClientGraph:
    return g if isinstance(g, ClientGraph) else single_client(g)


def central_edge_types(clients: Sequence[ClientGraph]) -> int:
    return max((max(c.etype_map) + 1 for c in clients if c.etype_map), default=0)


def run_federated_training(cfg: TrainerConfig, clients: Sequence[ClientGraph | HeteroGraph],
                           transport: str = "inprocess",
                           on_round: Callable[[ServerState], None] | None = None,
                           client_ids: Sequence[int] | None = None) -> TrainingReport:
    """Runs the server and one worker thread per client over ``transport``."""
    if transport not in TRANSPORTS:
        raise ConfigurationError(f"unknown transport {transport!r}")
    if cfg.algo == "central":
        raise ConfigurationError("use train_central for the central baseline")
    if not clients:
        raise ConfigurationError("need at least one client")
    cgs = [_as_client(c) for c in clients]
    if cfg.algo in ("fedavg", "fedprox") and cfg.num_edge_types == 0:
        cfg = replace(cfg, num_edge_types=central_edge_types(cgs))
    if cfg.algo == "local":
        if len(cgs) != 1:
            raise ConfigurationError("the local baseline trains one client per run; use run_local")
        cfg = replace(cfg, num_edge_types=cgs[0].graph.schema.num_edge_types)
    ids = list(client_ids) if client_ids is not None else list(range(len(cgs)))
    handles = [ClientHandle.create(k, cg, cfg) for k, cg in zip(ids, cgs)]

    listener = None
    if transport == "inprocess":
        pairs = [queue_pair() for _ in handles]
        server_links = [a for a, _ in pairs]
        workers = [ClientWorker(h, b) for h, (_, b) in zip(handles, pairs)]
        starts = [w.run for w in workers]
    else:
        listener = SocketListener()
        workers = []

        def start(h):
            w = ClientWorker(h, connect(listener.address, cfg.timeout))
            workers.append(w)
            w.run()
        starts = [lambda h=h: start(h) for h in handles]
    threads = [threading.Thread(target=s, daemon=True) for s in starts]
    for th in threads:
        th.start()
    try:
        if listener is not None:
            server_links = listener.accept(len(handles), cfg.timeout)
        server = Server(cfg, server_links)
        try:
            report = server.run(on_round)
        except Exception as exc:
            errors = [w.error for w in workers if w.error is not None]
            if errors and not isinstance(exc, RunFailure):
                raise RunFailure(f"client failure: {errors[0]}") from errors[0]
            raise
    finally:
        if listener is not None:
            listener.close()
    for th in threads:
        th.join(cfg.timeout)
    if listener is not None:
        for link in server_links:
            link.close()
    return report


def run_local(cfg: TrainerConfig, clients: Sequence[ClientGraph | HeteroGraph],
              transport: str = "inprocess") -> TrainingReport:
    """Every client trains alone with the plain model until its own early stop."""
    cfg = replace(cfg, algo="local")
    reports = [run_federated_training(cfg, [c], transport, client_ids=[k]) for k, c in enumerate(clients)]
    return combine_local(reports)


def train_central(graph: HeteroGraph | ClientGraph, cfg: TrainerConfig,
                  on_round: Callable[[int, dict], None] | None = None) -> TrainingReport:
    """Single trainer on the whole graph with the per-edge-type model.

    A round is E epochs, followed by validation and early stopping, exactly
    as in a one-client federated run.
    """
    cg = _as_client(graph)
    cfg = replace(cfg, algo="central", num_edge_types=cg.graph.schema.num_edge_types)
    h = ClientHandle.create(0, cg, cfg)
    shared = init_shared(h.model, derive_rng(cfg.seed, STREAM_SHARED))
    stopper = EarlyStopping(cfg.patience)
    best_shared, best_local = shared, h.local.copy()
    report = TrainingReport("central")
    started = time.perf_counter()
    for t in range(1, cfg.max_rounds + 1):
        try:
            shared = client_local_update(h, shared, (), t).shared
            counts = h.evaluate(shared)
        except NumericError as exc:
            log.warning("%s; restoring round %d", exc, stopper.best_round)
            report.stop_reason = "diverged"
            break
        valid = weighted_accuracy([counts[Mask.VALID]])
        test = weighted_accuracy([counts[Mask.TEST]])
        seconds = time.perf_counter() - started if cfg.record_time else 0.0
        report.rounds.append(RoundRecord(t, valid, test, seconds))
        if stopper.update(t, valid):
            best_shared, best_local = shared, h.local.copy()
        if on_round is not None:
            on_round(t, shared)
        if stopper.exhausted:
            report.stop_reason = "patience"
            break
    h.local = best_local
    counts = h.evaluate(best_shared)
    report.clients = [ClientResult(0, *counts[Mask.VALID], *counts[Mask.TEST])]
    report.best_round, report.best_valid = stopper.best_round, max(stopper.best_valid, 0.0)
    report.shared = best_shared
    return report
