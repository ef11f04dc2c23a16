import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_grid, random_connected
from oracles import dc_flows_dense
from gridcascade import NumericalError, build_grid, solve_flows
from gridcascade.dcflow import build_system, select_slack, solve_islands


def oracle_for(grid, p):
    idx = {b: i for i, b in enumerate(grid.bus_ids)}
    lines = [(idx[l.from_bus], idx[l.to_bus], l.susceptance) for l in grid.lines]
    return dc_flows_dense(grid.n_buses, lines, p)


def test_triangle_flows(triangle):
    f = solve_flows(triangle)
    np.testing.assert_allclose(f.flows, [2 / 3, 1 / 3, 1 / 3], rtol=0, atol=1e-12)
    assert f.flow("a") == pytest.approx(2 / 3, abs=1e-12)


def test_build_system_shapes(triangle):
    sys_ = build_system(triangle, ["1", "2", "3"])
    assert sys_.slack == "1"
    assert sys_.incidence.shape == (3, 2)
    assert set(np.unique(sys_.incidence.toarray())) <= {-1.0, 0.0, 1.0}
    two = make_grid([("g", 0, 1), ("d", 1, 0)], [("l", "g", "d", 2)])
    assert build_system(two, ["g", "d"]).incidence.toarray().tolist() == [[-1.0]]
    one = make_grid([("g", 0, 1)], [])
    assert build_system(one, ["g"]).incidence.shape == (0, 0)


def test_no_slack_candidate(triangle):
    with pytest.raises(ValueError, match="no slack candidate"):
        select_slack(triangle, ["2", "3"])


def test_slack_rule_tie_breaks_by_id():
    g = make_grid([("b", 0, 5), ("a", 0, 5), ("c", 10, 0)], [("1", "a", "c", 1), ("2", "b", "c", 1)])
    assert select_slack(g, g.bus_ids) == "a"


def test_zero_injection_zero_flow(small_planted):
    f = solve_flows(small_planted, np.zeros(small_planted.n_buses))
    assert not f.flows.any()


def test_susceptance_scaling_cancels():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g = random_connected(rng, 5)
        doubled = build_grid(g.buses, [l.__class__(l.id, l.from_bus, l.to_bus, 2 * l.susceptance) for l in g.lines])
        np.testing.assert_allclose(solve_flows(doubled).flows, solve_flows(g).flows, rtol=1e-12, atol=1e-12)


def test_unbalanced_rejected(triangle):
    with pytest.raises(ValueError, match="unbalanced"):
        solve_flows(triangle, [1.0, 0.0, 0.0])


def test_deenergized_lines_carry_zero():
    g = make_grid([("g", 0, 10), ("d", 5, 0), ("x", 3, 0), ("y", 2, 0)],
                  [("1", "g", "d", 1), ("2", "x", "y", 1)])
    f = solve_flows(g)
    assert f.flow("2") == 0.0 and f.flow("1") == pytest.approx(5.0)


def test_singular_system_raises_numerical():
    # a zero-susceptance line can only arrive through a bug; feed it straight to the solver
    frm, to = np.array([0]), np.array([1])
    with pytest.raises(NumericalError) as err:
        solve_islands(frm, to, np.array([0.0]), np.array([1.0, -1.0]), np.array([0, 0]), np.array([0]))
    assert err.value.component is not None


def test_kcl_and_oracle_on_random_grids():
    rng = np.random.default_rng(11)
    for _ in range(300):
        n = int(rng.integers(2, 6))
        g = random_connected(rng, n, extra=int(rng.integers(0, 3)))
        p = rng.normal(size=n)
        p -= p.mean()
        f = solve_flows_unchecked(g, p)
        ref = oracle_for(g, p)
        assert np.allclose(f, ref, rtol=1e-9, atol=1e-9 * max(1, np.abs(ref).max()))


def solve_flows_unchecked(g, p):
    # arbitrary balanced injections, independent of the grid's own energization
    labels = np.zeros(g.n_buses, np.int64)
    slack = np.array([int(np.argmax(g.capacity))])
    return solve_islands(g.line_from, g.line_to, g.susceptance, p, labels, slack)[0]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**9))
def test_antisymmetry_and_superposition(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    g = random_connected(rng, n, extra=2)
    p1, p2 = rng.normal(size=(2, n))
    p1 -= p1.mean()
    p2 -= p2.mean()
    f1, f2 = solve_flows_unchecked(g, p1), solve_flows_unchecked(g, p2)
    np.testing.assert_allclose(solve_flows_unchecked(g, p1 + p2), f1 + f2, atol=1e-9)
    flipped = build_grid(g.buses, [l.__class__(l.id, l.to_bus, l.from_bus, l.susceptance) if k == 0 else l
                                   for k, l in enumerate(g.lines)])
    f_flip = solve_flows_unchecked(flipped, p1)
    np.testing.assert_allclose(f_flip[0], -f1[0], atol=1e-12)
    np.testing.assert_allclose(f_flip[1:], f1[1:], atol=1e-12)


def test_flows_invariant_to_slack():
    rng = np.random.default_rng(2)
    g = random_connected(rng, 6, extra=3)
    p = rng.normal(size=6)
    p -= p.mean()
    labels = np.zeros(6, np.int64)
    base = solve_islands(g.line_from, g.line_to, g.susceptance, p, labels, np.array([0]))[0]
    for s in range(1, 6):
        other = solve_islands(g.line_from, g.line_to, g.susceptance, p, labels, np.array([s]))[0]
        np.testing.assert_allclose(other, base, atol=1e-10)


def test_sparse_path_matches_oracle(fixture_grid, fixture_flows):
    # the fixture exceeds the dense threshold, so this exercises the sparse factorisation
    ref = oracle_for(fixture_grid, fixture_grid.injections())
    np.testing.assert_allclose(fixture_flows.flows, ref, rtol=1e-9, atol=1e-9)
    assert fixture_flows.residual <= 1e-8 * max(1, np.abs(fixture_flows.injections).max())
