import numpy as np
import pytest

from fedhgn.graph import EdgeType, HeteroGraph, Mask, Schema, SyntheticSpec, generate_synthetic

TINY = SyntheticSpec(node_type_count=2, edge_type_count=3, nodes_per_type=15,
                     edges_per_type=20, num_classes=3, label_fraction=1.0)
SMALL = SyntheticSpec(node_type_count=3, edge_type_count=6, nodes_per_type=40,
                      edges_per_type=60, num_classes=3, label_fraction=1.0)


@pytest.fixture
def tiny_graph():
    return generate_synthetic(TINY, 0)


@pytest.fixture
def small_graph():
    return generate_synthetic(SMALL, 1)


@pytest.fixture
def toy_graph():
    """Two node types, hand-written edges, four labelled target nodes."""
    schema = Schema(2, (EdgeType(0, 1, 0), EdgeType(1, 0, 0)), ("paper", "author"), ("writes", "cites"))
    edges = (np.array([[0, 0], [1, 0], [2, 1], [0, 3]]), np.array([[1, 0], [2, 0], [3, 2]]))
    labels = np.array([0, 1, 0, 1])
    masks = np.array([Mask.TRAIN, Mask.TRAIN, Mask.VALID, Mask.TEST])
    return HeteroGraph(schema, (4, 3), edges, 0, labels, masks, 2)


_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, passed, detail)`` records one acceptance line and returns ``passed``."""
    def record(n: int, passed: bool, detail: str) -> bool:
        _CRITERIA[n] = (bool(passed), detail)
        print(f"criterion {n} {'PASS' if passed else 'FAIL'}: {detail}")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if passed else 'FAIL'}  {detail}")
