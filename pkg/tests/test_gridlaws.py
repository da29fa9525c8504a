import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cachekit.gridlaws import (DensityError, GridSpec, PlacementGrid, canonical_placement,
                               density_cost, evaluate_link_load, loglog_fit, round_density,
                               scaling_experiment, solve_density)

from oracles import density_dual_bisection, density_lr_scan


def random_spec(rng, k_choices=(4, 16, 64)):
    k = int(rng.choice(k_choices))
    n = int(rng.integers(3, 20))
    m = float(rng.integers(1, n))
    if n > m * k:
        m = float(math.ceil(n / k)) + 1
    if not m < n:
        n = int(m) + 2
    p = np.sort(rng.dirichlet(np.full(n, 0.7)))[::-1]
    return GridSpec(k, n, m, p)


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(4, 2, 2.0, [0.5, 0.5])  # M < N fails
    with pytest.raises(ValueError):
        GridSpec(4, 9, 2.0, np.full(9, 1 / 9))  # N > M K
    with pytest.raises(ValueError):
        GridSpec(4, 2, 1.0, [0.1, 0.9])
    with pytest.raises(ValueError):
        GridSpec(8, 4, 1.0, np.full(4, 0.25)).side


def test_uniform_popularity_is_flat():
    sol = solve_density(GridSpec(16, 10, 3.0, np.full(10, 0.1)))
    assert sol.d == pytest.approx(np.full(10, 0.3))
    assert (sol.l, sol.r) == (1, 11)


def test_two_content_toy():
    spec = GridSpec(4, 2, 1.0, [0.9, 0.1])
    sol = solve_density(spec)
    assert sol.d == pytest.approx(density_dual_bisection(spec.pop, 4, 1.0), abs=1e-6)
    # the unconstrained split 0.9^(2/3) : 0.1^(2/3) would put content 1 below 1/K
    assert sol.d == pytest.approx([0.75, 0.25], abs=1e-12)
    assert sol.cost == pytest.approx(density_cost(sol.d, spec.pop))


def test_zipf_middle_ratios():
    spec = GridSpec.zipf(0.6, 64, 64, 2.0)
    sol = solve_density(spec)
    mid = np.arange(sol.l - 1, sol.r - 1)
    assert mid.size > 1
    p, d = spec.pop[mid], sol.d[mid]
    assert d / d[0] == pytest.approx((p / p[0]) ** (2 / 3), rel=1e-9)
    assert np.all((d > 1 / 64) & (d < 1))


@pytest.mark.parametrize("seed", range(5))
def test_matches_independent_solvers(seed):
    rng = np.random.default_rng(seed)
    for _ in range(10):
        spec = random_spec(rng)
        sol = solve_density(spec)
        assert sol.d == pytest.approx(density_dual_bisection(spec.pop, spec.k, spec.m_cache), abs=1e-6)
        assert sol.d == pytest.approx(density_lr_scan(spec.pop, spec.k, spec.m_cache), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_density_invariants(seed):
    spec = random_spec(np.random.default_rng(seed))
    sol = solve_density(spec)
    d, k = sol.d, spec.k
    assert np.all(d >= 1 / k - 1e-12) and np.all(d <= 1 + 1e-12)
    assert d.sum() <= spec.m_cache + 1e-9
    assert np.all(d[:sol.l - 1] == 1.0)
    assert d[sol.r - 1:] == pytest.approx(np.full(spec.n_catalog - sol.r + 1, 1 / k))
    mid = slice(sol.l - 1, sol.r - 1)
    kkt = spec.pop[mid] * d[mid] ** -1.5
    if kkt.size:
        assert kkt == pytest.approx(np.full(kkt.size, kkt[0]), rel=1e-6)
    assert np.all(np.diff(d) <= 1e-12)


def test_cost_monotone_in_cache():
    costs = [solve_density(GridSpec.zipf(0.8, 256, 200, m)).cost for m in (1.0, 1.5, 2.0, 4.0, 10.0, 50.0)]
    assert np.all(np.diff(costs) <= 1e-12)


def test_round_density_examples():
    assert round_density([1.0, 0.3, 0.05], 64) == pytest.approx([1.0, 0.25, 1 / 64])
    assert round_density([0.25, 1 / 16], 16).tolist() == [0.25, 1 / 16]
    with pytest.warns(RuntimeWarning):
        out = round_density([0.001], 64)
    assert out.tolist() == [1 / 64]
    with pytest.raises(ValueError):
        round_density([0.5], 8)


@settings(max_examples=100, deadline=None)
@given(st.floats(1 / 256, 1.0), st.sampled_from([4, 16, 64, 256]))
def test_round_density_enumeration(x, k):
    powers = [4.0 ** -i for i in range(int(round(math.log(k, 4))) + 1)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        got = round_density([x], k)[0]
    # values within 1e-9 relative of a power snap to it
    assert got == max([q for q in powers if q <= x * (1 + 1e-9)], default=powers[-1])
    if x >= 1 / k:
        # rounding costs at most a factor 2 in 1/sqrt(d)
        assert got <= x * (1 + 1e-9) and 1 / math.sqrt(got) <= 2 / math.sqrt(x) + 1e-12


def test_rounded_cost_bound():
    for tau in (0.6, 0.8, 1.2):
        spec = GridSpec.zipf(tau, 256, 300, 3.0)
        d = solve_density(spec).d
        dr = round_density(d, 256)
        per = (1 / np.sqrt(dr) - 1) * spec.pop
        ref = (1 / np.sqrt(d) - 1) * spec.pop
        assert np.all(per <= 2 * ref + spec.pop + 1e-12)
        assert density_cost(dr, spec.pop) <= 2 * density_cost(d, spec.pop) + 1


def test_figure_placement():
    d = np.array([1.0, 0.25] + [1 / 16] * 7)
    spec = GridSpec(64, 9, 2.0, np.full(9, 1 / 9))
    pl = canonical_placement(d, spec)
    assert len(pl.replicas[0]) == 64
    reps1 = pl.replicas[1]
    assert len(reps1) == 16
    rows, cols = reps1 // 8, reps1 % 8
    # a 2x2 tiling: one residue class in each coordinate
    assert len(set(rows % 2)) == 1 and len(set(cols % 2)) == 1
    for n in range(2, 9):
        assert len(pl.replicas[n]) == 4
    assert pl.loads().max() <= 2
    assert all(0 in c for c in pl.node_contents())


def test_eight_sixteenth_contents_fit():
    d = np.array([1.0, 0.25] + [1 / 16] * 8)
    pl = canonical_placement(d, GridSpec(64, 10, 2.0, np.full(10, 0.1)))
    assert pl.loads().max() <= 2
    assert len(pl.replicas[9]) == 4


def test_singleton_placement():
    spec = GridSpec(16, 30, 2.0, np.full(30, 1 / 30))
    pl = canonical_placement(np.full(30, 1 / 16), spec)
    assert all(len(r) == 1 for r in pl.replicas)
    assert pl.loads().max() <= 2


def test_placement_counts_random():
    rng = np.random.default_rng(7)
    done = 0
    while done < 50:
        k = int(rng.choice([16, 64, 256]))
        nu = int(round(math.log(k, 4)))
        n = int(rng.integers(2, 40))
        d = np.sort(4.0 ** -rng.integers(0, nu + 1, size=n))[::-1]
        m = float(math.ceil(d.sum()))
        if not m < n:
            continue
        spec = GridSpec(k, n, m, np.full(n, 1 / n))
        pl = canonical_placement(d, spec)
        counts = np.array([len(r) for r in pl.replicas])
        assert np.array_equal(counts, np.rint(d * k).astype(int))
        assert pl.loads().max() <= m
        done += 1


def test_placement_rejects_bad_input():
    spec = GridSpec(16, 4, 1.0, np.full(4, 0.25))
    with pytest.raises(ValueError):
        canonical_placement([0.3, 0.25, 0.25, 0.25], spec)
    with pytest.raises(ValueError):
        canonical_placement([1.0, 0.25, 0.25, 0.25], spec)


def test_link_load_zero_when_everywhere():
    pl = PlacementGrid(4, [np.arange(16)])
    ll = evaluate_link_load(pl, [1.0])
    assert ll.max_load == 0 and ll.avg_hops == 0


def test_link_load_two_by_two():
    pl = PlacementGrid(2, [np.array([0])])
    ll = evaluate_link_load(pl, [1.0])
    assert ll.avg_hops == pytest.approx(1.0)
    # four requests, four hops in total, eight undirected links
    assert ll.links.sum() == pytest.approx(4.0)


def test_link_load_rejects_missing():
    with pytest.raises(Exception):
        evaluate_link_load(PlacementGrid(2, [np.array([], dtype=int)]), [1.0])


def brute_hops(pl, pop):
    s = pl.side
    total = 0.0
    for n, reps in enumerate(pl.replicas):
        for v in range(s * s):
            best = min(min(abs(v // s - u // s), s - abs(v // s - u // s))
                       + min(abs(v % s - u % s), s - abs(v % s - u % s)) for u in reps)
            total += pop[n] * best
    return total / (s * s)


def test_hops_and_load_ratio():
    for tau, k, n, m in ((0.6, 64, 40, 2.0), (0.8, 256, 100, 3.0), (1.2, 256, 200, 2.0), (1.7, 64, 60, 2.0)):
        spec = GridSpec.zipf(tau, k, n, m)
        dr = round_density(solve_density(spec).d, k)
        pl = canonical_placement(dr, spec)
        ll = evaluate_link_load(pl, spec.pop)
        assert ll.avg_hops == pytest.approx(brute_hops(pl, spec.pop))
        # each request crosses avg_hops links, spread over 2K links
        assert ll.avg_load == pytest.approx(ll.avg_hops / 2)
        assert ll.links.sum() == pytest.approx(k * ll.avg_hops)
        ratio = ll.avg_load / density_cost(dr, spec.pop)
        assert 0.25 <= ratio <= 4


def test_loglog_fit_exact():
    x = np.array([10.0, 100.0, 1000.0])
    s, b, r2 = loglog_fit(x, 3 * x ** 0.7)
    assert s == pytest.approx(0.7) and math.exp(b) == pytest.approx(3) and r2 == pytest.approx(1)


@pytest.mark.parametrize("tau,target", [(0.6, 0.5), (1.2, 0.3)])
def test_scaling_slopes(tau, target):
    fit = scaling_experiment("k-then-n", tau, [100, 1000, 10_000, 100_000])
    assert abs(fit.slope - target) <= 0.1
    assert len(fit.rows) == 4 and fit.rows[0]["N"] == 100


def test_scaling_errors():
    with pytest.raises(ValueError):
        scaling_experiment("k-then-n", 0.6, [100, 1000])
    with pytest.raises(ValueError):
        scaling_experiment("bogus", 0.6, [100, 1000, 10_000])
    with pytest.raises(ValueError):
        scaling_experiment("scaling-m", 0.6, [100, 1000, 10_000], m_factor=0.5)


def test_budget_exactly_at_floor():
    # N = M K leaves exactly one replica per content
    sol = solve_density(GridSpec(4, 8, 2.0, np.full(8, 1 / 8)))
    assert sol.d == pytest.approx(np.full(8, 0.25))
    assert sol.cost == pytest.approx(1.0)
