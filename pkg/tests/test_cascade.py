import numpy as np
import pytest

from conftest import make_grid, random_connected
from oracles import dc_flows_dense
from gridcascade import (
    LimitSet, Physics, SimulationError, attack_the_grid, proportional_limits, real_limits,
    solve_flows, topological_limits,
)
from gridcascade import cascade as cascade_mod
from gridcascade.cascade import GridState, damage_metrics, rebalance
from gridcascade.grid import balance


def test_topological_path_islands(path3):
    tr = attack_the_grid(path3, topological_limits(path3), ["B", "A", "C"], Physics.TOPOLOGICAL)
    assert tr.n_rounds == 1
    assert set(tr.records[0].lost) == {"A", "C"}
    assert tr.records[0].giant_component_damage == 1.0 and tr.records[0].blackout_damage == 1.0


def test_remove_generator_blacks_out():
    g = make_grid([("G", 0, 100), ("L", 100, 0)], [("l", "G", "L", 1)])
    tr = attack_the_grid(g, topological_limits(g), ["G", "L"])
    assert tr.records[0].blackout_damage == 1.0
    assert tr.records[0].lost == ("L",)


@pytest.fixture
def diamond():
    return make_grid(
        [("G", 0, 100), ("A", 0, 0), ("B", 0, 0), ("D", 90, 0)],
        [("ga", "G", "A", 1, 1000), ("ad", "A", "D", 1, 1000), ("gb", "G", "B", 1, 60), ("bd", "B", "D", 1, 1000)],
    )


def test_diamond_single_trip(diamond):
    # the oracle confirms the detour carries the full 90 MW once A is gone
    f = dc_flows_dense(3, [(0, 1, 1), (1, 2, 1)], [90, 0, -90])
    assert f[0] == pytest.approx(90) and f[0] > 60
    tr = attack_the_grid(diamond, real_limits(diamond), ["A", "G", "B", "D"])
    r1 = tr.records[0]
    assert [t for t, _ in r1.tripped] == ["gb"]
    assert set(r1.lost) == {"G", "B", "D"}
    assert r1.blackout_damage == 1.0


def test_trip_is_strict(diamond):
    lim = LimitSet("real", diamond.line_ids, [1000, 1000, 90, 1000])
    tr = attack_the_grid(diamond, lim, ["A"])
    assert tr.records[0].tripped == () and tr.records[0].blackout_damage == 0.0


@pytest.mark.parametrize("demand, caps, served, dispatch", [
    ([60], [100], [60], [60]),
    ([100], [40], [40], [40]),
    ([100, 0, 0], [0, 30, 10], [40, 0, 0], [0, 30, 10]),
    ([30, 30], [0, 100], [30, 30], [0, 60]),
])
def test_balance_pro_rata(demand, caps, served, dispatch):
    n = len(demand)
    s, d, e = balance(np.array(demand, float), np.array(caps, float), np.zeros(n, int), 1)
    np.testing.assert_allclose(s, served)
    np.testing.assert_allclose(d, dispatch)
    assert e.all()


def test_rebalance_deenergizes_without_removing():
    g = make_grid([("g", 0, 10), ("d", 5, 0), ("x", 3, 0)], [("1", "g", "d", 1)])
    st = rebalance(GridState(g, topological_limits(g)))
    assert st.served.tolist() == [0.0, 5.0, 0.0] and st.bus_alive.all()


def test_damage_metrics_bounds(small_planted):
    st = rebalance(GridState(small_planted, topological_limits(small_planted)))
    assert damage_metrics(st, small_planted) == (0.0, 0.0)
    st.kill_buses(np.arange(small_planted.n_buses))
    assert damage_metrics(st, small_planted) == (1.0, 1.0)


def test_half_giant_is_half_damage():
    # two equal halves joined by one line; cut the joint line
    n = 8
    buses = [(f"b{i}", 5, 20 if i in (0, 4) else 0) for i in range(n)]
    lines = [(f"l{i}", f"b{i}", f"b{i+1}", 1) for i in range(n - 1)]
    g = make_grid(buses, lines)
    st = rebalance(GridState(g, topological_limits(g)))
    st.kill_lines([3])
    rebalance(st)
    assert damage_metrics(st, g)[0] == 0.5


def test_unknown_target_rejected(triangle):
    with pytest.raises(ValueError, match="unknown node"):
        attack_the_grid(triangle, topological_limits(triangle), ["nope"])


def test_solver_failure_keeps_partial_trace(small_planted, monkeypatch):
    real = cascade_mod.solve_islands
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] > 3:
            raise ArithmeticError("boom")
        return real(*a, **k)

    monkeypatch.setattr(cascade_mod, "solve_islands", flaky)
    with pytest.raises(SimulationError) as err:
        attack_the_grid(small_planted, real_limits(small_planted), small_planted.bus_ids)
    assert 1 <= err.value.trace.n_rounds < small_planted.n_buses


def check_trace(tr, grid):
    seen = set()
    prev_b = prev_g = 0.0
    for r in tr.records:
        assert not set(r.targets) & set(r.lost)
        assert not (set(r.targets) | set(r.lost)) & seen
        seen |= set(r.targets) | set(r.lost)
        assert r.blackout_damage >= prev_b - 1e-12 and 0 <= r.blackout_damage <= 1
        assert r.giant_component_damage >= prev_g - 1e-12 and 0 <= r.giant_component_damage <= 1
        prev_b, prev_g = r.blackout_damage, r.giant_component_damage
    assert seen | set(tr.initially_lost) == set(grid.bus_ids)


@pytest.mark.parametrize("alpha", [1.05, 2.0, 50.0])
def test_trace_invariants_on_random_grids(alpha):
    rng = np.random.default_rng(int(alpha * 100))
    for _ in range(30):
        g = random_connected(rng, int(rng.integers(4, 15)), extra=4)
        lim = proportional_limits(g, solve_flows(g), alpha)
        order = [g.bus_ids[i] for i in rng.permutation(g.n_buses)]
        check_trace(attack_the_grid(g, lim, order), g)


def test_alpha_fifty_round_one_trips_only_light_lines(fixture_grid, fixture_flows):
    # a 50x tolerance is only exceeded on lines that start nearly unloaded
    lim = proportional_limits(fixture_grid, fixture_flows, 50.0)
    absf = np.abs(fixture_flows.flows)
    light = np.quantile(absf, 0.1)
    clean = 0
    for b in fixture_grid.bus_ids:
        tripped = attack_the_grid(fixture_grid, lim, [b]).records[0].tripped
        clean += not tripped
        assert all(absf[fixture_grid.line_index(t)] <= light for t, _ in tripped)
    assert clean >= 0.9 * fixture_grid.n_buses


def test_alpha_stats_rows(small_planted):
    lim = proportional_limits(small_planted, solve_flows(small_planted), 5.0)
    tr = attack_the_grid(small_planted, lim, small_planted.bus_ids, record_alpha=True)
    assert tr.alpha_stats.shape == (tr.n_rounds + 1, 2)
    assert tr.alpha_stats[0, 0] == pytest.approx(5.0) and tr.alpha_stats[0, 1] == pytest.approx(0.2)
    topo = attack_the_grid(small_planted, topological_limits(small_planted), small_planted.bus_ids,
                           Physics.TOPOLOGICAL, record_alpha=True)
    assert topo.alpha_stats is None
