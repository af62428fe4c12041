import numpy as np
import pytest

from toydown.hierarchy import Hierarchy, district_weights


@pytest.fixture
def fig1():
    """Three-level tree: root with children of 2, 4 and 2 leaves."""
    return Hierarchy.from_level_counts([[3], [2, 4, 2]])


@pytest.fixture
def fig1_district(fig1):
    # one of two, one of four, both of two
    return district_weights(fig1, [4, 6, 10, 11])


def random_hierarchy(rng: np.random.Generator, max_nodes: int = 500, max_depth: int = 4):
    """Uniform-depth tree with irregular family sizes and at most ``max_nodes`` nodes."""
    while True:
        depth = int(rng.integers(2, max_depth + 1))
        rows, width = [], 1
        for _ in range(depth - 1):
            row = rng.integers(1, 6, size=width).tolist()
            rows.append(row)
            width = sum(row)
        h = Hierarchy.from_level_counts(rows)
        if h.n_nodes <= max_nodes:
            return h


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
