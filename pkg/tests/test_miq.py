import numpy as np
import pytest

from msds.errors import InvalidParameterError
from msds.geometry import SpatialSet, intersection_count
from msds.ibtree import IBtree
from msds.miq import leaf_bounds, mbr_bound, search
from msds.oracle import brute_miq, hash_miq, random_corpus, random_query, unit_grid

from conftest import mkset


def test_mbr_bound_cases(grid4):
    q = mkset("q", [(0, 0), (1, 1), (5, 5), (6, 6)], grid4)
    assert mbr_bound(q, (10, 10, 15, 15)) == 0
    assert mbr_bound(q, (4, 4, 10, 10)) == 2
    assert mbr_bound(q, (0, 0, 15, 15)) == len(q)


def test_leaf_bounds_full_posting_counts(grid4):
    a = mkset("a", [(1, 1), (2, 2)], grid4)
    b = mkset("b", [(1, 1), (3, 3)], grid4)
    tree = IBtree.build([a, b], f=2)
    q = mkset("q", [(1, 1), (3, 3), (9, 9)], grid4)
    bounds = leaf_bounds(q, tree.root)
    assert (bounds.lb, bounds.ub) == (1, 2)
    miss = mkset("m", [(0, 3), (3, 0)], grid4)
    bounds = leaf_bounds(miss, tree.root)
    assert (bounds.lb, bounds.ub) == (0, 0)


def test_leaf_bounds_sandwich_random(rng):
    g = unit_grid(7)
    for trial in range(30):
        sets = random_corpus(rng, g, 60, max_cells=40, n_clusters=2)
        tree = IBtree.build(sets, int(rng.choice([2, 5, 10])))
        q = random_query(rng, sets, g)
        for leaf in tree.leaves():
            b = leaf_bounds(q, leaf)
            exact = [intersection_count(q, c.set) for c in leaf.children]
            assert b.lb <= min(exact) <= max(exact) <= b.ub <= b.mbr <= len(q)


def test_search_rejects_bad_k(grid4):
    tree = IBtree.build([mkset("a", [(0, 0)], grid4)], 2)
    with pytest.raises(InvalidParameterError):
        search(tree, mkset("q", [(0, 0)], grid4), 0)


def test_search_query_equals_dataset(rng):
    g = unit_grid(8)
    sets = random_corpus(rng, g, 100)
    tree = IBtree.build(sets, 5)
    target = sets[17]
    res = search(tree, target.with_id("q"), 1)
    assert res.scores() == [len(target)]
    assert brute_miq(sets, target, 1).entries == res.entries


def test_search_disjoint_query_empty(grid6):
    sets = [mkset(f"d{i}", [(i, i)], grid6) for i in range(10)]
    tree = IBtree.build(sets, 3)
    assert search(tree, mkset("q", [(40, 2)], grid6), 5).entries == []


@pytest.mark.parametrize("f", [2, 10, 100])
def test_search_matches_oracle(f, rng):
    g = unit_grid(9)
    sets = random_corpus(rng, g, 200, max_cells=100)
    tree = IBtree.build(sets, f)
    for _ in range(20):
        q = random_query(rng, sets, g, max_cells=120)
        want = brute_miq(sets, q, 10)
        assert hash_miq(sets, q, 10).entries == want.entries
        got = search(tree, q, 10)
        assert got.entries == want.entries


def test_search_k_monotone(rng):
    g = unit_grid(8)
    sets = random_corpus(rng, g, 150)
    tree = IBtree.build(sets, 4)
    q = random_query(rng, sets, g)
    big = search(tree, q, 50).entries
    for k in (1, 3, 10, 25):
        assert search(tree, q, k).entries == big[:k]


def test_search_ties_break_by_id(grid4):
    sets = [mkset(n, [(1, 1)], grid4) for n in ("c", "a", "b")]
    tree = IBtree.build(sets, 1)
    q = mkset("q", [(1, 1)], grid4)
    assert search(tree, q, 2).entries == [("a", 1), ("b", 1)]


def test_trace_records_overlapping_leaves(rng):
    g = unit_grid(8)
    sets = random_corpus(rng, g, 100)
    tree = IBtree.build(sets, 3)
    q = random_query(rng, sets, g)
    trace = []
    search(tree, q, 5, trace=trace)
    assert trace
    assert all(b.lb <= b.ub <= b.mbr for b in trace)
