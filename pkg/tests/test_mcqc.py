import numpy as np
import pytest

from msds.errors import InvalidParameterError, StaleGraphError
from msds.geometry import is_connected_graph
from msds.graph import build_graph
from msds.ibtree import IBtree
from msds.mcqc import find_connect_set, gadg, gasm
from msds.oracle import brute_distance, random_corpus, random_query, standard_greedy, unit_grid

from conftest import mkset


def walkthrough_instance(g):
    q = mkset("q", [(0, 0), (1, 0), (2, 0)], g)
    sets = [
        mkset("N1", [(x, 0) for x in range(7, 16)], g),
        mkset("N2", [(x, 0) for x in range(3, 8)], g),
        mkset("N5", [(0, 1), (0, 2), (0, 3)], g),
        mkset("N3", [(40, 40), (41, 40)], g),
        mkset("N4", [(20, 30)], g),
    ]
    return q, sets


def test_greedy_walkthrough(grid6):
    q, sets = walkthrough_instance(grid6)
    tree = IBtree.build(sets, 2)
    graph = build_graph(tree, 1.0)
    res = gadg(tree, graph, q, 1.0, 3)
    assert res.selected == [("N2", 5), ("N1", 8), ("N5", 3)]
    assert res.total_coverage == 3 + 5 + 8 + 3
    assert gasm(tree, q, 1.0, 3) == res


def test_truncates_when_nothing_connected(grid6):
    q = mkset("q", [(0, 0)], grid6)
    sets = [mkset(f"d{i}", [(30 + i, 30)], grid6) for i in range(4)]
    tree = IBtree.build(sets, 2)
    res = gasm(tree, q, 2.0, 3)
    assert res.selected == [] and res.truncated and res.total_coverage == 1
    assert gadg(tree, build_graph(tree, 2.0), q, 2.0, 3) == res


def test_query_covering_everything_gives_zero_increments():
    g = unit_grid(3)
    q = mkset("q", [(c, r) for c in range(8) for r in range(8)], g)
    sets = [mkset(f"d{i}", [(i, i)], g) for i in range(6)]
    tree = IBtree.build(sets, 2)
    res = gasm(tree, q, 1.0, 3)
    assert res.increments() == [0, 0, 0]
    assert res.total_coverage == 64


def test_k_one_equals_first_round(rng):
    g = unit_grid(8)
    sets = random_corpus(rng, g, 60)
    tree = IBtree.build(sets, 4)
    graph = build_graph(tree, 3.0)
    q = random_query(rng, sets, g)
    one = gasm(tree, q, 3.0, 1)
    assert gadg(tree, graph, q, 3.0, 1) == one
    assert gasm(tree, q, 3.0, 4).selected[:1] == one.selected


def test_find_connect_set_extremes(rng):
    g = unit_grid(8)
    sets = random_corpus(rng, g, 50, region=(0, 0, 60, 60))
    tree = IBtree.build(sets, 3)
    far = mkset("p", [(255, 255)], g)
    assert find_connect_set(tree, far, 2.0) == []
    assert len(find_connect_set(tree, far, 1e9)) == len(tree.leaves())


def test_find_connect_set_superset(rng):
    g = unit_grid(7)
    sets = random_corpus(rng, g, 80, max_cells=20)
    tree = IBtree.build(sets, 4)
    for _ in range(30):
        probe = random_query(rng, sets, g, max_cells=10)
        delta = float(rng.choice([0, 1, 3, 8]))
        leaves = find_connect_set(tree, probe, delta)
        found = {c.id for l in leaves for c in l.children}
        for s in sets:
            if brute_distance(s, probe) <= delta:
                assert s.dataset_id in found


def test_gadg_needs_matching_graph(rng):
    g = unit_grid(7)
    sets = random_corpus(rng, g, 30)
    tree = IBtree.build(sets, 4)
    graph = build_graph(tree, 2.0)
    q = random_query(rng, sets, g)
    with pytest.raises(InvalidParameterError):
        gadg(tree, graph, q, 3.0, 2)
    tree.update(sets[0])
    with pytest.raises(StaleGraphError):
        gadg(tree, graph, q, 2.0, 2)


@pytest.mark.parametrize("kind", ["clustered", "uniform", "corridor", "mixed"])
def test_three_way_agreement(kind, rng):
    g = unit_grid(8)
    for _ in range(8):
        sets = random_corpus(rng, g, int(rng.integers(5, 60)), kind=kind, max_cells=30)
        tree = IBtree.build(sets, int(rng.choice([2, 4, 10])))
        q = random_query(rng, sets, g, max_cells=20)
        delta = float(rng.choice([0, 1, 2, 5, 10]))
        k = int(rng.integers(1, 8))
        a = gasm(tree, q, delta, k)
        b = gadg(tree, build_graph(tree, delta), q, delta, k)
        c = standard_greedy(sets, q, delta, k)
        assert a == b == c
        assert a.total_coverage == len(q) + sum(a.increments())
        by_id = {s.dataset_id: s for s in sets}
        for i in range(1, len(a.selected) + 1):
            assert is_connected_graph([q] + [by_id[d] for d in a.ids()[:i]], delta)
