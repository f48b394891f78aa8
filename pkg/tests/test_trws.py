import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bonegraph.graphmodel import FactorGraph, GraphParams, build_graph, dump_graph, load_graph
from bonegraph.imagecore import BFG, CBG, SHADOW, TISSUE, column_violations
from bonegraph.trws import SolverConfig, brute_force_map, solve
from instances import random_graph


def check_report(g, rep):
    assert all(b >= a for a, b in zip(rep.lower_bounds, rep.lower_bounds[1:]))
    assert rep.energy == pytest.approx(g.energy(rep.labeling), abs=1e-9)
    assert rep.energy >= rep.lower_bounds[-1] - 1e-6


def test_decoupled_nodes(rng):
    un = rng.random((12, 2))
    g = FactorGraph((3, 4), un, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int8),
                    np.zeros((0, 2, 2)))
    rep = solve(g)
    np.testing.assert_array_equal(rep.labeling.ravel(), un.argmin(axis=1))
    assert rep.energy == pytest.approx(un.min(axis=1).sum())
    assert rep.gap == pytest.approx(0.0, abs=1e-12)


def test_zero_pairwise_lattice(rng):
    p = GraphParams(scheme=BFG, k1=0.1, k2=0.1, k3=0.1)
    un = rng.random((4, 3, 3))
    g = build_graph((4, 3), un, p)
    g = FactorGraph(g.shape, g.unary, g.edge_i, g.edge_j, g.edge_dir, np.zeros_like(g.tables), g.mu)
    rep = solve(g)
    np.testing.assert_array_equal(rep.labeling.ravel(), g.unary.argmin(axis=1))


@pytest.mark.parametrize("scheme", [CBG, BFG])
def test_chains_exact(scheme):
    for seed in range(30):
        g = random_graph(seed, (8, 1), scheme, thickness=2)
        rep = solve(g)
        _, best = brute_force_map(g)
        check_report(g, rep)
        assert abs(rep.energy - best) < 1e-9, seed


def test_loopy_bounds():
    for seed in range(40):
        g = random_graph(1000 + seed, (4, 4), CBG)
        rep = solve(g)
        _, best = brute_force_map(g)
        check_report(g, rep)
        assert rep.lower_bounds[-1] <= best + 1e-9 <= rep.energy + 2e-9


def test_brute_force_single_node():
    g = FactorGraph((1, 1), np.array([[0.7, 0.2, 0.5]]), np.zeros(0, np.int64), np.zeros(0, np.int64),
                    np.zeros(0, np.int8), np.zeros((0, 3, 3)))
    lab, e = brute_force_map(g)
    assert lab.ravel().tolist() == [1] and e == pytest.approx(0.2)


def test_brute_force_three_chain():
    un = np.array([[0.1, 3.0], [0.2, 2.0], [4.0, 0.1]]).reshape(3, 1, 2)
    g = build_graph((3, 1), un, GraphParams(mu=1.0, k3=1.0), np.zeros((3, 1)))
    lab, e = brute_force_map(g)
    assert lab.ravel().tolist() == [0, 0, 1]
    assert e == pytest.approx(g.energy(lab), abs=1e-12)
    # explicit enumeration of all 8 labelings
    energies = {code: g.energy([(code >> 2) & 1, (code >> 1) & 1, code & 1]) for code in range(8)}
    assert min(energies.values()) == pytest.approx(e)


def test_brute_force_ties_lexicographic():
    g = FactorGraph((1, 2), np.zeros((2, 2)), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int8),
                    np.zeros((0, 2, 2)))
    lab, _ = brute_force_map(g)
    assert lab.ravel().tolist() == [0, 0]


def test_brute_force_limit():
    g = random_graph(0, (5, 5), BFG)
    with pytest.raises(ValueError):
        brute_force_map(g)


def test_solves_from_dump(tmp_path):
    g = random_graph(7, (3, 3), CBG)
    dump_graph(g, tmp_path / "g.txt")
    a, b = solve(g), solve(load_graph(tmp_path / "g.txt"))
    np.testing.assert_array_equal(a.labeling, b.labeling)
    assert a.energy == b.energy


@given(seed=st.integers(0, 10 ** 6))
def test_cbg_solutions_are_ordered(seed):
    g = random_graph(seed, (6, 5), CBG)
    rep = solve(g)
    check_report(g, rep)
    lm = rep.labelmap(CBG)
    assert set(np.unique(lm.labels)) <= {TISSUE, SHADOW}
    assert not column_violations(lm.labels, CBG).any()


def test_max_iters_respected():
    g = random_graph(3, (6, 6), BFG)
    rep = solve(g, SolverConfig(max_iters=2, rel_gap_tol=0.0))
    assert rep.iterations_run <= 2 and len(rep.lower_bounds) == rep.iterations_run
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
