"""Multi-seed experiments, sweeps and gradient checks on top of the runtime."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .config import SYNTHETIC, ExperimentConfig
from .errors import ConfigurationError
from .fed import TrainerConfig, TrainingReport, run_federated_training, run_local, train_central
from .graph import HeteroGraph, SyntheticSpec, generate_synthetic, load_graph
from .model import (
    LocalParams,
    ModelConfig,
    alignment_loss,
    alignment_targets,
    init_coeffs,
    init_embeddings,
    init_shared,
    objective,
    prepare,
    shared_names,
    write_checkpoint,
)
from .numerics import STREAM_CHECK, derive_rng, finite_difference_check
from .splitters import single_client, split_graph

log = logging.getLogger(__name__)

SWEEP_PARAMS = {"B": "B", "bases": "B", "lambda": "lam", "lam": "lam"}


def synthetic_spec(cfg: ExperimentConfig) -> SyntheticSpec:
    return SyntheticSpec(cfg.syn_node_types, cfg.syn_edge_types, cfg.syn_nodes, cfg.syn_edges,
                         cfg.syn_classes, cfg.syn_label_fraction, cfg.syn_homophily)


def load_dataset(cfg: ExperimentConfig) -> HeteroGraph:
    if cfg.dataset == SYNTHETIC:
        return generate_synthetic(synthetic_spec(cfg), cfg.data_seed)
    try:
        with open(cfg.dataset, encoding="utf-8") as fh:
            return load_graph(fh.read())
    except FileNotFoundError:
        raise ConfigurationError(f"dataset not found: {cfg.dataset}") from None


def trainer_config(cfg: ExperimentConfig, g: HeteroGraph, seed: int) -> TrainerConfig:
    return TrainerConfig(
        num_classes=g.num_classes, algo=cfg.algo, num_edge_types=g.schema.num_edge_types,
        d=cfg.d, layers=cfg.L, bases=cfg.B, C=cfg.C, E=cfg.E, eta=cfg.eta, lam=cfg.lam,
        mu=cfg.mu, patience=cfg.patience, max_rounds=cfg.max_rounds, seed=seed,
        identical_init=cfg.identical_init, timeout=cfg.timeout, record_time=cfg.record_time,
    )


def run_seed(cfg: ExperimentConfig, g: HeteroGraph, seed: int) -> TrainingReport:
    tc = trainer_config(cfg, g, seed)
    if cfg.algo == "central":
        return train_central(g, tc)
    if cfg.K == 1:
        clients = [single_client(g)]
    else:
        clients = split_graph(g, cfg.strategy, cfg.K, cfg.p or None, seed, cfg.p_mode).clients
    if cfg.algo == "local":
        return run_local(tc, clients, cfg.transport)
    return run_federated_training(tc, clients, cfg.transport)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


def format_pm(mean: float, std: float) -> str:
    """Percentages as ``81.87±2.33``."""
    return f"{100 * mean:.2f}±{100 * std:.2f}"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: dict[int, TrainingReport]

    @property
    def test_accs(self) -> list[float]:
        return [self.reports[s].test_acc for s in self.config.seeds]

    @property
    def summary(self) -> tuple[float, float]:
        return mean_std(self.test_accs)

    def summary_text(self) -> str:
        lines = [self.config.header()]
        for s in self.config.seeds:
            rep = self.reports[s]
            lines.append(f"seed {s} best_round {rep.best_round} test_acc {rep.test_acc:.6f}")
        mean, std = self.summary
        lines.append(f"aggregate algo {self.config.algo} n {len(self.config.seeds)} "
                     f"mean {mean:.6f} std {std:.6f} test_acc {format_pm(mean, std)}")
        return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, g: HeteroGraph | None = None) -> ExperimentResult:
    cfg.validate()
    if cfg.algo == "central" and (cfg.K != 1 or cfg.strategy != "RET"):
        log.warning("algo=central trains on the unsplit graph; K and strategy are ignored")
    g = load_dataset(cfg) if g is None else g
    return ExperimentResult(cfg, {s: run_seed(cfg, g, s) for s in cfg.seeds})


def write_outputs(result: ExperimentResult, out_dir: str | None = None) -> list[str]:
    """Per-seed reports and checkpoints plus ``summary.txt``; returns the paths written."""
    out_dir = out_dir or result.config.out
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for s, rep in result.reports.items():
        path = os.path.join(out_dir, f"report_seed{s}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(result.config.header(s) + "\n" + rep.to_text())
        paths.append(path)
        if rep.shared:
            path = os.path.join(out_dir, f"model_seed{s}.fhgn")
            with open(path, "wb") as fh:
                write_checkpoint(fh, rep.shared)
            paths.append(path)
    path = os.path.join(out_dir, "summary.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(result.summary_text())
    paths.append(path)
    return paths


@dataclass(frozen=True)
class SweepRow:
    param: str
    value: float
    mean: float
    std: float


def run_sweep(cfg: ExperimentConfig, param: str, values: Sequence[float],
              g: HeteroGraph | None = None) -> list[SweepRow]:
    if param not in SWEEP_PARAMS:
        raise ConfigurationError(f"sweep parameter must be B or lambda, got {param!r}")
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    key = SWEEP_PARAMS[param]
    g = load_dataset(cfg) if g is None else g
    rows = []
    for v in values:
        v = int(v) if key == "B" else float(v)
        res = run_experiment(replace(cfg, **{key: v}), g)
        rows.append(SweepRow(param, v, *res.summary))
    return rows


def format_sweep(rows: Sequence[SweepRow], header: str | None = None) -> str:
    lines = [header] if header else []
    lines.append("param,value,mean,std")
    lines += [f"{r.param},{r.value:g},{r.mean:.6f},{r.std:.6f}" for r in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# gradient checks


@dataclass(frozen=True)
class GradcheckResult:
    task: float
    align: float
    combined: float
    align_grad_max: float
    tolerance: float = 1e-5

    @property
    def passed(self) -> bool:
        return max(self.task, self.align, self.combined) < self.tolerance

    def lines(self) -> list[str]:
        out = []
        for name in ("task", "align", "combined"):
            err = getattr(self, name)
            out.append(f"check {name} max_rel_err {err:.3e} {'pass' if err < self.tolerance else 'fail'}")
        out.append(f"align_grad_max_abs {self.align_grad_max:.3e}")
        out.append(f"result {'pass' if self.passed else 'fail'}")
        return out


TINY_GRAPH = SyntheticSpec(node_type_count=2, edge_type_count=3, nodes_per_type=15,
                           edges_per_type=20, num_classes=3, label_fraction=1.0, homophily=0.9)


def gradcheck(seed: int = 0, lam: float = 0.5, d: int = 8, L: int = 2, B: int = 4,
              num_peers: int = 2, epsilon: float = 1e-6, spec: SyntheticSpec = TINY_GRAPH,
              corrupt: dict[str, float] | None = None) -> GradcheckResult:
    """Finite-difference checks of the task loss, the alignment loss and their sum."""
    g = generate_synthetic(spec, seed)
    data = prepare(g)
    R = g.schema.num_edge_types
    model = ModelConfig.build(d, L, g.num_classes, R, B, True)
    rng = derive_rng(seed, STREAM_CHECK)
    shared = init_shared(model, rng)
    for name in shared:
        if name.endswith(".bias"):
            shared[name] = rng.normal(0.0, 0.1, shared[name].shape)
    coeffs = init_coeffs(L, R, B, rng)
    peers = [init_coeffs(L, int(rng.integers(1, R + 2)), B, rng) for _ in range(num_peers)]
    emb = init_embeddings(g.node_counts, d, rng)
    names = shared_names(model)

    def split(params):
        local = LocalParams(params["coeffs"], params["embeddings"], data.offsets)
        return {n: params[n] for n in names}, local

    def full(lam_):
        def fn(params):
            sh, local = split(params)
            align = alignment_targets(local.coeffs, peers) if lam_ else None
            obj = objective(model, data, sh, local, lam=lam_, align=align, corrupt=corrupt)
            return obj.loss, {**obj.shared_grads, **obj.local_grads}
        return fn

    def align_only(params):
        targets, weight = alignment_targets(params["coeffs"], peers)
        grad = 2.0 * (params["coeffs"] - targets) * weight * lam
        return lam * alignment_loss(params["coeffs"], peers), {"coeffs": grad}

    params = {**shared, "coeffs": coeffs, "embeddings": emb}
    task = finite_difference_check(full(0.0), params, epsilon)
    align = finite_difference_check(align_only, {"coeffs": coeffs}, epsilon)
    combined = finite_difference_check(full(lam), params, epsilon)
    grad_max = float(np.max(np.abs(align_only({"coeffs": coeffs})[1]["coeffs"])))
    return GradcheckResult(task, align, combined, grad_max)
