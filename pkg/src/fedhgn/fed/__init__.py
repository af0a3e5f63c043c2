"""Federated runtime: protocol, transports, server, clients and baselines."""

from .client import ClientHandle, client_local_update, proximal_penalty
from .config import ALGOS, TrainerConfig
from .report import TrainingReport, weighted_accuracy
from .runtime import run_federated_training, run_local, train_central
from .server import aggregate_round, sample_clients

__all__ = [
    "ALGOS", "ClientHandle", "TrainerConfig", "TrainingReport", "aggregate_round",
    "client_local_update", "proximal_penalty", "run_federated_training", "run_local",
    "sample_clients", "train_central", "weighted_accuracy",
]
