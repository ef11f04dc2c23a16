from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gridcascade import Bus, Line, build_grid, load_fixture, solve_flows, synth_grid, SynthSpec


def make_grid(buses, lines):
    """``buses``: (id, demand, capacity); ``lines``: (id, from, to, b[, limit])."""
    bs = [Bus(i, float(d), float(c)) for i, d, c in buses]
    ls = [Line(l[0], l[1], l[2], float(l[3]), real_limit=(l[4] if len(l) > 4 else None)) for l in lines]
    return build_grid(bs, ls)


@pytest.fixture
def triangle():
    # bus 1 injects 1 MW, bus 2 withdraws it; bus 3 is a pass-through generator site
    return make_grid(
        [("1", 0, 1), ("2", 1, 0), ("3", 0, 0)],
        [("a", "1", "2", 1), ("b", "1", "3", 1), ("c", "3", "2", 1)],
    )


@pytest.fixture
def path3():
    return make_grid(
        [("A", 0, 100), ("B", 0, 0), ("C", 50, 0)],
        [("ab", "A", "B", 1), ("bc", "B", "C", 1)],
    )


@pytest.fixture(scope="session")
def fixture_grid():
    return load_fixture()


@pytest.fixture(scope="session")
def fixture_flows(fixture_grid):
    return solve_flows(fixture_grid)


@pytest.fixture(scope="session")
def small_planted():
    return synth_grid(SynthSpec(n_nodes=60, n_edges=80, alpha=5.0, seed=3))


def random_connected(rng, n, extra=2, gen_share=0.4):
    """Random connected grid (spanning tree plus extras) with balanced demand."""
    buses = []
    has_gen = False
    for i in range(n):
        gen = rng.random() < gen_share or (i == n - 1 and not has_gen)
        has_gen |= gen
        buses.append((f"n{i}", 0.0 if gen else float(rng.uniform(1, 20)), float(rng.uniform(10, 60)) if gen else 0.0))
    if all(d == 0 for _, d, _ in buses):
        buses[0] = (buses[0][0], 5.0, buses[0][2])
    lines = []
    for i in range(1, n):
        lines.append((f"l{i}", f"n{int(rng.integers(0, i))}", f"n{i}", float(rng.uniform(0.5, 5))))
    for k in range(extra):
        a, b = rng.choice(n, 2, replace=False)
        lines.append((f"x{k}", f"n{a}", f"n{b}", float(rng.uniform(0.5, 5))))
    return make_grid(buses, lines)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
