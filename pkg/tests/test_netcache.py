import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cachekit.netcache import (BipartiteNet, PlacementError, TreeNet, dump_placement,
                               exhaustive_placement_opt, femto_greedy, femto_objective,
                               hierarchical_greedy, hierarchical_local_search, leaf_fill,
                               load_network, random_bipartite, random_tree, tree_routing_savings,
                               tree_served_requests)

from oracles import subsets_with_capacity


def femto_loop(net, lam, placement):
    total = 0.0
    for j in range(len(net.users)):
        for n in range(lam.shape[1]):
            d = net.mbs_delay[j]
            for i, c in enumerate(net.cache_ids):
                if n in placement.get(c, ()) and np.isfinite(net.delay[i, j]):
                    d = min(d, net.delay[i, j])
            total += lam[j, n] * (net.mbs_delay[j] - d)
    return total


def tree_loop(net, placement):
    total = 0.0
    for u in range(net.n_leaves):
        for n in range(net.n_files):
            base = net.d0 + net.d[u]
            cost = base
            if n in placement.get(0, ()):
                cost = min(cost, net.d[u])
            for v in range(net.n_leaves):
                if n in placement.get(v + 1, ()):
                    cost = min(cost, 0.0 if v == u else (net.dprime[u, v] if net.cooperative else base))
            total += net.lam[u, n] * net.sizes[n] * (base - cost)
    return total


def femto_opt(net, lam):
    best = 0.0
    for combo in subsets_with_capacity(lam.shape[1], net.capacity):
        pl = {c: s for c, s in zip(net.cache_ids, combo)}
        best = max(best, femto_loop(net, lam, pl))
    return best


def tree_opt(net, value):
    best = 0.0
    for combo in subsets_with_capacity(net.n_files, net.capacities()):
        best = max(best, value({i: s for i, s in enumerate(combo)}))
    return best


SPEC = {"users": ["a", "b"],
        "caches": [{"id": 0, "capacity": None}, {"id": 1, "capacity": 1}, {"id": 2, "capacity": 1}],
        "edges": [["a", 0, 10], ["b", 0, 10], ["a", 1, 1], ["b", 1, 2], ["b", 2, 1]],
        "demand": [["a", 0, 5], ["a", 1, 1], ["b", 1, 4], ["b", 2, 2]]}


def test_json_roundtrip(tmp_path):
    net, lam = BipartiteNet.from_dict(SPEC)
    assert lam.shape == (2, 3)
    assert not net.connected[1, 0]
    p = tmp_path / "net.json"
    p.write_text(json.dumps(net.to_dict(lam)))
    net2, lam2 = load_network(p)
    assert np.array_equal(lam, lam2) and np.array_equal(net.delay, net2.delay)
    assert json.loads(dump_placement({2: [1], 1: [0]})) == {"1": [0], "2": [1]}


def test_network_validation():
    bad = dict(SPEC, edges=SPEC["edges"] + [["a", 2, 20]])
    with pytest.raises(ValueError):
        BipartiteNet.from_dict(bad)
    with pytest.raises(ValueError):
        BipartiteNet.from_dict({"users": ["a"]})
    with pytest.raises(ValueError):
        BipartiteNet(("a",), (0,), [1], [[1.0]], [2.0])


def test_femto_examples():
    net, lam = BipartiteNet.from_dict(SPEC)
    assert femto_objective(net, lam, {}) == 0.0
    one = BipartiteNet(("u",), (1,), [3], [[2.0]], [7.0])
    rates = np.array([[1.0, 2.0, 0.5]])
    assert femto_objective(one, rates, {1: [0, 1, 2]}) == pytest.approx(3.5 * 5.0)
    with pytest.raises(PlacementError):
        femto_objective(one, rates, {1: [0, 1, 2, 0, 3]})


def test_femto_single_cache_is_top_m():
    net = BipartiteNet(("u", "v"), (1,), [2], [[1.0, 1.0]], [5.0, 5.0])
    lam = np.tile([0.1, 0.5, 0.3, 0.05], (2, 1))
    assert femto_greedy(net, lam) == {1: [1, 2]}


def test_femto_greedy_half_approx_random():
    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        net, lam = random_bipartite(rng, 3, 2, 5, 2)
        greedy = femto_objective(net, lam, femto_greedy(net, lam))
        assert greedy == pytest.approx(femto_loop(net, lam, femto_greedy(net, lam)))
        ratios.append(greedy / femto_opt(net, lam))
    assert min(ratios) >= 0.5


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_femto_objective_matches_loop(seed):
    rng = np.random.default_rng(seed)
    net, lam = random_bipartite(rng, 3, 3, 4, 2)
    pl = {c: sorted(rng.choice(4, 2, replace=False).tolist()) for c in net.cache_ids}
    assert femto_objective(net, lam, pl) == pytest.approx(femto_loop(net, lam, pl))


def test_exhaustive_counts_and_agreement():
    seen = []
    exhaustive_placement_opt([1], 3, lambda pl: seen.append(pl) or 0.0)
    assert len(seen) == 3
    rng = np.random.default_rng(5)
    net, lam = random_bipartite(rng, 3, 2, 4, 2)
    _, val = exhaustive_placement_opt(net.capacity, 4, lambda pl: femto_objective(net, lam, pl),
                                      net.cache_ids)
    assert val == pytest.approx(femto_opt(net, lam))
    with pytest.raises(ValueError):
        exhaustive_placement_opt([5] * 6, 20, lambda pl: 0.0)


@given(st.integers(0, 10_000), st.booleans())
@settings(max_examples=40, deadline=None)
def test_tree_savings_match_loop(seed, symmetric):
    rng = np.random.default_rng(seed)
    net = random_tree(rng, 3, 5, 2, 1, symmetric=symmetric)
    pl = {0: [int(rng.integers(5))]}
    pl.update({u: sorted(rng.choice(5, 2, replace=False).tolist()) for u in range(1, 4)})
    assert tree_routing_savings(net, pl) == pytest.approx(tree_loop(net, pl))


def test_tree_validation():
    with pytest.raises(ValueError):
        TreeNet(np.ones((2, 3)), 1, 0, 1.0, 1.0, 5.0)
    net = TreeNet(np.ones((2, 3)), 1, 0, 1.0, 1.0, 0.5)
    with pytest.raises(PlacementError):
        net.matrix({1: [0, 1]})


def test_local_search_single_leaf_top_b():
    lam = np.array([[0.1, 0.4, 0.05, 0.3, 0.15]])
    net = TreeNet(lam, 2, 0, 1.0, 1.0, 5.0, cooperative=False)
    pl = hierarchical_local_search(net, seed=0)
    assert sorted(pl[1]) == [1, 3]


def test_local_search_three_quarters_symmetric():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        net = random_tree(rng, 3, 4, 1, 0, symmetric=True)
        got = tree_routing_savings(net, hierarchical_local_search(net, seed=seed))
        assert got >= 0.75 * tree_opt(net, lambda pl: tree_loop(net, pl)) - 1e-9


def test_local_search_generalized_rule_never_decreases():
    rng = np.random.default_rng(1)
    net = random_tree(rng, 3, 5, 1, 1, symmetric=False)
    start = {0: [0], 1: [1], 2: [2], 3: [3]}
    out = hierarchical_local_search(net, seed=0, rule="generalized", initial=start)
    assert tree_routing_savings(net, out) >= tree_routing_savings(net, start)
    with pytest.raises(ValueError):
        hierarchical_local_search(net, rule="bogus")


def test_hier_greedy_boundaries():
    rng = np.random.default_rng(0)
    lam = rng.random((3, 6))
    none = TreeNet(lam, 1, 0, 1.0, 1.0, 1.0)
    pl = hierarchical_greedy(none)
    assert pl[0] == []
    assert tree_served_requests(none, pl) == pytest.approx(lam.max(axis=1).sum())
    full = TreeNet(lam, 1, 6, 1.0, 1.0, 1.0)
    assert tree_served_requests(full, hierarchical_greedy(full)) == pytest.approx(lam.sum())


def test_leaf_fill_skips_parent_files():
    net = TreeNet(np.array([[0.5, 0.3, 0.2]]), 1, 1, 1.0, 1.0, 1.0)
    assert leaf_fill(net, [0]) == {0: [0], 1: [1]}


def test_hier_greedy_one_minus_inv_e():
    bound = 1 - 1 / math.e
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        net = TreeNet(rng.random((3, 6)), 1, 2, 1.0, 1.0, 1.0)
        got = tree_served_requests(net, hierarchical_greedy(net))
        assert got >= bound * tree_opt(net, lambda pl: tree_served_requests(net, pl)) - 1e-9
