import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_grid
from gridcascade import (
    Bus, GridParseError, GridValidationError, Line, SynthSpec, VoltageClass, build_grid,
    grid_hash, load_grid, save_grid, synth_grid, topology_stats,
)
from gridcascade.grid import SynthRecord


def write(tmp_path, nodes, edges):
    n, e = tmp_path / "nodes.csv", tmp_path / "edges.csv"
    n.write_text(nodes)
    e.write_text(edges)
    return n, e


def test_two_bus_file(tmp_path):
    n, e = write(tmp_path, "id,demand_mw,generation_mw\nG,0,100\nL,100,0\n", "id,from,to,susceptance\nl1,G,L,1\n")
    g = load_grid(n, e)
    assert (g.n_buses, g.n_lines) == (2, 1)
    assert g.bus("G").dispatched_generation == 100
    assert g.bus("L").voltage_class is VoltageClass.V132


def test_unknown_bus_named(tmp_path):
    n, e = write(tmp_path, "id,demand_mw,generation_mw\nG,0,100\n", "id,from,to,susceptance\nl1,G,X,1\n")
    with pytest.raises(GridValidationError, match="unknown bus X"):
        load_grid(n, e)


def test_malformed_row_reports_line(tmp_path):
    n, e = write(tmp_path, "id,demand_mw,generation_mw\nG,0,100\nL,abc,0\n", "id,from,to,susceptance\nl1,G,L,1\n")
    with pytest.raises(GridParseError) as err:
        load_grid(n, e)
    assert err.value.lineno == 3


@pytest.mark.parametrize("edges, msg", [
    ("id,from,to,susceptance\nl1,G,L,0\n", "susceptance"),
    ("id,from,to,reactance\nl1,G,L,-2\n", "reactance"),
    ("id,from,to,susceptance\nl1,G,L,1\nl1,G,L,1\n", "duplicate"),
    ("id,from,to,susceptance,limit_mw\nl1,G,L,1,0\n", "limit"),
    ("id,from,to,susceptance,voltage_kv\nl1,G,L,1,220\n", "voltage"),
])
def test_edge_validation(tmp_path, edges, msg):
    n, e = write(tmp_path, "id,demand_mw,generation_mw\nG,0,100\nL,100,0\n", edges)
    with pytest.raises(GridValidationError, match=msg):
        load_grid(n, e)


def test_reactance_column_converts(tmp_path):
    n, e = write(tmp_path, "id,demand_mw,generation_mw\nG,0,100\nL,100,0\n", "id,from,to,reactance\nl1,G,L,0.25\n")
    assert load_grid(n, e).line("l1").susceptance == 4.0


def test_bus_voltage_is_max_incident():
    g = build_grid(
        [Bus("a", 0, 10), Bus("b", 5, 0), Bus("c", 5, 0)],
        [Line("1", "a", "b", 1, VoltageClass.V275), Line("2", "b", "c", 1, VoltageClass.V400)],
    )
    assert [g.bus(x).voltage_class for x in "abc"] == [275, 400, 400]


def test_invariants_rejected():
    with pytest.raises(GridValidationError):
        Bus("a", -1, 0)
    with pytest.raises(GridValidationError):
        Bus("a", 0, 1, dispatched_generation=2)
    with pytest.raises(GridValidationError):
        Line("l", "a", "a", 1)
    with pytest.raises(GridValidationError):
        Line("l", "a", "b", math.inf)


def test_grid_is_immutable(triangle):
    with pytest.raises(AttributeError):
        triangle.demand = None
    with pytest.raises(ValueError):
        triangle.demand[0] = 3.0


def test_deenergized_component_flagged():
    g = make_grid([("g", 0, 10), ("d", 5, 0), ("x", 3, 0), ("y", 2, 0)],
                  [("1", "g", "d", 1), ("2", "x", "y", 1)])
    assert sorted(g.deenergized_buses) == ["x", "y"]
    assert g.served_demand().sum() == 5


def test_round_trip_identity(tmp_path, small_planted):
    n, e = tmp_path / "n.csv", tmp_path / "e.csv"
    save_grid(small_planted, n, e)
    again = load_grid(n, e)
    assert again == small_planted
    save_grid(again, tmp_path / "n2.csv", tmp_path / "e2.csv")
    assert (tmp_path / "e2.csv").read_bytes() == e.read_bytes()
    assert grid_hash(again) == grid_hash(small_planted)


def test_topology_triangle_and_path(triangle, path3):
    t = topology_stats(triangle)
    assert (t.node_count, t.edge_count, t.mean_degree, t.mean_clustering) == (3, 3, 2.0, 1.0)
    assert topology_stats(path3).mean_unweighted_distance == pytest.approx(4 / 3)


def test_topology_parallel_lines():
    g = make_grid([("a", 0, 5), ("b", 5, 0)], [("1", "a", "b", 1), ("2", "a", "b", 1)])
    t = topology_stats(g)
    assert t.mean_degree == 2.0 and t.mean_unweighted_distance == 1.0


def test_topology_empty():
    t = topology_stats(build_grid([], []))
    assert t.node_count == 0 and t.mean_degree == 0


def test_fixture_statistics(fixture_grid):
    t = topology_stats(fixture_grid)
    assert (t.node_count, t.edge_count) == (512, 698)
    assert abs(t.mean_degree - 2.73) <= 0.1


def test_synth_deterministic_and_planted():
    spec = SynthSpec(n_nodes=10, seed=1, alpha=5.0)
    g1, rec = synth_grid(spec, return_record=True)
    assert g1 == synth_grid(spec)
    assert isinstance(rec, SynthRecord)
    f = np.abs(rec.initial_flows)
    lim = np.array([l.real_limit for l in g1.lines])
    np.testing.assert_allclose(lim[f > 0] / f[f > 0], 5.0, rtol=1e-15, atol=0)


def test_synth_infeasible():
    with pytest.raises(ValueError):
        synth_grid(SynthSpec(n_nodes=4, n_edges=7))
    with pytest.raises(ValueError):
        synth_grid(SynthSpec(n_nodes=5, n_edges=3))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(5, 40))
def test_synth_output_always_loads(tmp_path_factory, seed, n):
    g = synth_grid(SynthSpec(n_nodes=n, seed=seed, alpha=2.0))
    assert g.n_components == 1
    d = tmp_path_factory.mktemp("s")
    save_grid(g, d / "n.csv", d / "e.csv")
    assert load_grid(d / "n.csv", d / "e.csv") == g


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["demand", "cap", "dispatch", "loop", "sus", "limit", "dangling"]), st.floats(-1e6, 0))
def test_corruptions_rejected(kind, bad):
    buses = [Bus("a", 1, 5), Bus("b", 3, 0)]
    lines = [Line("l", "a", "b", 1)]
    with pytest.raises(GridValidationError):
        if kind == "demand":
            Bus("x", bad - 1e-9, 0)
        elif kind == "cap":
            Bus("x", 0, bad - 1e-9)
        elif kind == "dispatch":
            Bus("x", 0, 1, dispatched_generation=2 - bad)
        elif kind == "loop":
            Line("x", "a", "a", 1)
        elif kind == "sus":
            Line("x", "a", "b", bad)
        elif kind == "limit":
            Line("x", "a", "b", 1, real_limit=bad)
        else:
            build_grid(buses, lines + [Line("m", "a", "zz", 1)])
