"""Experiment configuration: flat ``key=value`` files with ``#`` comments."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, Mapping

from .errors import ConfigurationError, ParseError
from .fed.config import ALGOS, TRANSPORTS
from .splitters import P_MODES, STRATEGIES

SEED_ENV = "FEDHGN_SEED"
SYNTHETIC = "synthetic"
ALIASES = {"lambda": "lam", "layers": "L", "bases": "B"}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = SYNTHETIC       # graph dump path, or "synthetic"
    strategy: str = "RET"
    K: int = 3
    p: int = 0                     # 0 means ceil(K/2)
    p_mode: str = "per_item"
    algo: str = "fedhgn"
    C: float = 1.0
    d: int = 64
    L: int = 2
    B: int = 20
    lam: float = 0.5
    E: int = 3
    eta: float = 0.1
    patience: int = 10
    mu: float = 0.01
    max_rounds: int = 500
    seeds: tuple[int, ...] = (0,)
    transport: str = "inprocess"
    out: str = "results"
    timeout: float = 300.0
    identical_init: bool = False
    record_time: bool = False
    # synthetic benchmark
    data_seed: int = 0
    syn_node_types: int = 4
    syn_edge_types: int = 10
    syn_nodes: int = 150
    syn_edges: int = 150
    syn_classes: int = 3
    syn_label_fraction: float = 0.5
    syn_homophily: float = 0.9

    def validate(self) -> "ExperimentConfig":
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {', '.join(STRATEGIES)}")
        if self.algo not in ALGOS:
            raise ConfigurationError(f"algo must be one of {', '.join(ALGOS)}")
        if self.transport not in TRANSPORTS:
            raise ConfigurationError(f"transport must be one of {', '.join(TRANSPORTS)}")
        if self.p_mode not in P_MODES:
            raise ConfigurationError(f"p_mode must be one of {', '.join(P_MODES)}")
        if self.K < 1:
            raise ConfigurationError("K must be >= 1")
        if self.K == 2:
            raise ConfigurationError("splits need K >= 3 (or K = 1 for the unsplit graph)")
        if self.K >= 3 and self.p and not 1 < self.p < self.K:
            raise ConfigurationError(f"p must satisfy 1 < p < K, got p={self.p}")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise ConfigurationError("seeds must be non-negative")
        return self

    def header(self, seed: int | None = None) -> str:
        """One-line rendering of the resolved config, used as the first line of outputs."""
        parts = [f"{k}={_render(v)}" for k, v in asdict(self).items()]
        if seed is not None:
            parts.append(f"seed={seed}")
        return "# fedhgn " + " ".join(parts)


def _render(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v).lower() if isinstance(v, bool) else str(v)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def canonical_key(key: str) -> str:
    key = ALIASES.get(key, key)
    if key not in _FIELDS:
        raise ConfigurationError(f"unknown config key {key!r}")
    return key


def convert(key: str, text: str):
    key = canonical_key(key)
    default = _FIELDS[key].default
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from None
    return text


def parse_config_lines(lines: Iterable[str]) -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", lineno)
        key, value = line.split("=", 1)
        try:
            values[canonical_key(key.strip())] = convert(key.strip(), value)
        except ConfigurationError as exc:
            raise ParseError(str(exc), lineno) from None
    return values


def load_config(path: str | None = None, overrides: Mapping[str, object] | None = None,
                env: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Defaults, then ``FEDHGN_SEED``, then the file, then explicit overrides."""
    env = os.environ if env is None else env
    cfg = ExperimentConfig()
    if env.get(SEED_ENV):
        cfg = replace(cfg, seeds=convert("seeds", env[SEED_ENV]))
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = replace(cfg, **parse_config_lines(fh))
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except ParseError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    if overrides:
        cfg = replace(cfg, **{canonical_key(k): v for k, v in overrides.items()})
    return cfg.validate()
