"""Training reports as line-delimited records."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..errors import ConfigurationError

STOP_REASONS = ("patience", "max_rounds", "diverged", "independent")


@dataclass(frozen=True)
class RoundRecord:
    round: int
    valid_acc: float
    test_acc: float
    seconds: float = 0.0


@dataclass(frozen=True)
class ClientResult:
    client_id: int
    n_valid: int
    valid_correct: int
    n_test: int
    test_correct: int

    @property
    def valid_acc(self) -> float:
        return self.valid_correct / self.n_valid if self.n_valid else 0.0

    @property
    def test_acc(self) -> float:
        return self.test_correct / self.n_test if self.n_test else 0.0


def weighted_accuracy(per_client: Iterable[tuple[int, int]]) -> float:
    """``sum(correct) / sum(n)`` over ``(n, correct)`` pairs."""
    pairs = list(per_client)
    total = sum(n for n, _ in pairs)
    if total <= 0:
        raise ConfigurationError("weighted accuracy over zero samples")
    return sum(c for _, c in pairs) / total


@dataclass
class TrainingReport:
    algo: str
    rounds: list[RoundRecord] = field(default_factory=list)
    clients: list[ClientResult] = field(default_factory=list)
    best_round: int = 0
    best_valid: float = 0.0
    stop_reason: str = "max_rounds"
    # best-round shared parameters; not part of the text report
    shared: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def test_acc(self) -> float:
        """Weighted test accuracy at the best validation round."""
        return weighted_accuracy((c.n_test, c.test_correct) for c in self.clients)

    @property
    def valid_acc(self) -> float:
        return weighted_accuracy((c.n_valid, c.valid_correct) for c in self.clients)

    @property
    def last_test_acc(self) -> float:
        return self.rounds[-1].test_acc if self.rounds else self.test_acc

    def lines(self) -> list[str]:
        out = [
            f"round {r.round} algo {self.algo} valid_acc {r.valid_acc:.6f} "
            f"test_acc {r.test_acc:.6f} seconds {r.seconds:.3f}"
            for r in self.rounds
        ]
        for c in self.clients:
            out.append(
                f"client {c.client_id} n_valid {c.n_valid} valid_acc {c.valid_acc:.6f} "
                f"n_test {c.n_test} test_acc {c.test_acc:.6f}"
            )
        out.append(
            f"final algo {self.algo} best_round {self.best_round} rounds {len(self.rounds)} "
            f"stop {self.stop_reason} valid_acc {self.valid_acc:.6f} test_acc {self.test_acc:.6f} "
            f"last_test_acc {self.last_test_acc:.6f}"
        )
        return out

    def to_text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def combine_local(reports: Sequence[TrainingReport], algo: str = "local") -> TrainingReport:
    """Per-client results from independent single-client runs as one report."""
    clients = [c for rep in reports for c in rep.clients]
    return TrainingReport(algo, [], clients, 0, 0.0, "independent")


def parse_report(text: str) -> dict[str, object]:
    """Reads back the ``final`` line and the per-client lines of a report."""
    out: dict[str, object] = {"rounds": 0, "clients": []}
    for line in text.splitlines():
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        if tok[0] == "round":
            out["rounds"] = int(out["rounds"]) + 1
        elif tok[0] == "client":
            out["clients"].append({tok[i]: tok[i + 1] for i in range(0, len(tok) - 1, 2)})
        elif tok[0] == "final":
            out.update({tok[i]: tok[i + 1] for i in range(1, len(tok) - 1, 2)})
    return out
