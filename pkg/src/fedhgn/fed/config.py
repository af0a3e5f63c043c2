"""Training hyperparameters shared by the server, the clients and the baselines."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigurationError

ALGOS = ("fedhgn", "fedavg", "fedprox", "central", "local")
DECOUPLED_ALGOS = ("fedhgn",)
PROX_ALGOS = ("fedprox",)
TRANSPORTS = ("inprocess", "socket")


@dataclass(frozen=True)
class TrainerConfig:
    num_classes: int
    algo: str = "fedhgn"
    num_edge_types: int = 0       # central edge-type count; plain models only
    d: int = 64
    layers: int = 2
    bases: int = 20
    C: float = 1.0
    E: int = 3
    eta: float = 0.1
    lam: float = 0.5
    mu: float = 0.01
    patience: int = 10
    max_rounds: int = 500
    seed: int = 0
    identical_init: bool = False
    timeout: float = 300.0
    record_time: bool = False

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ConfigurationError(f"unknown algorithm {self.algo!r}; choose from {', '.join(ALGOS)}")
        if self.num_classes < 2:
            raise ConfigurationError("need at least two classes")
        if not 0.0 < self.C <= 1.0:
            raise ConfigurationError(f"client fraction C must lie in (0, 1], got {self.C}")
        if self.E < 0:
            raise ConfigurationError("E must be >= 0")
        if self.eta <= 0:
            raise ConfigurationError("learning rate must be positive")
        if self.lam < 0 or self.mu < 0:
            raise ConfigurationError("lam and mu must be non-negative")
        if self.d < 1 or self.layers < 1 or self.bases < 1:
            raise ConfigurationError("d, layers and bases must be >= 1")
        if self.patience < 1 or self.max_rounds < 1:
            raise ConfigurationError("patience and max_rounds must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")
        if self.timeout <= 0:
            raise ConfigurationError("timeout must be positive")

    @property
    def decoupled(self) -> bool:
        return self.algo in DECOUPLED_ALGOS
