import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cachekit.popularity import PowerLaw
from cachekit.traces import (SBMConfig, SNMConfig, Trace, TraceFormatError, alive_count, gen_irm,
                             gen_located_irm, gen_poisson_irm, gen_replacement_irm, gen_sbm,
                             gen_snm, read_trace, sample_shots, sbm_kernel, snm_classify,
                             snm_posterior_mean, write_trace)


def test_irm_delta_and_determinism():
    pop = np.zeros(5)
    pop[2] = 1.0
    assert gen_irm(pop, 5, seed=0).contents.tolist() == [3, 3, 3, 3, 3]
    p = PowerLaw(0.8, 100).pmf()
    assert gen_irm(p, 1000, seed=4) == gen_irm(p, 1000, seed=4)
    assert gen_irm(p, 1000, seed=4) != gen_irm(p, 1000, seed=5)


def test_irm_top_frequency_concentration():
    p = PowerLaw(0.8, 100).pmf()
    tr = gen_irm(p, 100_000, seed=11)
    sd = math.sqrt(1e5 * p[0] * (1 - p[0]))
    assert abs(tr.counts(100)[0] - 1e5 * p[0]) <= 3 * sd


def test_irm_total_variation():
    p = PowerLaw(0.8, 1000).pmf()
    tvs = [0.5 * np.abs(gen_irm(p, 10**6, seed=s).counts(1000) / 1e6 - p).sum() for s in range(3)]
    assert np.median(tvs) <= 0.02


def test_poisson_irm_counts_and_rates():
    tr = gen_poisson_irm(PowerLaw(0.5, 10).pmf(), 1.0, 1e4, seed=2)
    assert abs(len(tr) - 1e4) <= 3 * 100
    assert np.all(np.diff(tr.times) >= 0) and tr.times.max() < 1e4
    two = gen_poisson_irm([0.5, 0.5], 2.0, 1e4, seed=3)
    rates = two.counts(2) / 1e4
    assert rates == pytest.approx([1.0, 1.0], rel=0.05)
    assert len(gen_poisson_irm([1.0], 1.0, 0.0, seed=0)) == 0


def test_poisson_irm_marks_chi_square():
    p = PowerLaw(0.8, 20).pmf()
    tr = gen_poisson_irm(p, 1.0, 1.2e5, seed=7)
    obs = tr.counts(20)
    assert stats.chisquare(obs, obs.sum() * p).pvalue > 0.01


def test_located_irm_shapes():
    p = PowerLaw(0.8, 50).pmf()
    tr = gen_located_irm(p, 5000, 3, seed=1)
    assert set(np.unique(tr.locations)) == {0, 1, 2}
    local = np.zeros((3, 2))
    local[0, 0] = local[2, 1] = 1.0
    loc = gen_located_irm(local, 500, 2, seed=1)
    assert np.all(loc.contents[loc.locations == 0] == 1)
    assert np.all(loc.contents[loc.locations == 1] == 3)
    with pytest.raises(ValueError):
        gen_located_irm(local, 10, 3, seed=0)


def test_replacement_irm_introduces_fresh_ids():
    p = PowerLaw(0.8, 100).pmf()
    tr = gen_replacement_irm(p, 10_000, 0.05, seed=0)
    assert tr.contents.max() > 100
    assert gen_replacement_irm(p, 2000, 0.0, seed=1).contents.max() <= 100
    with pytest.raises(ValueError):
        gen_replacement_irm(p, 10, 1.5)


def test_snm_alive_count_matches_nu_t():
    cfg = SNMConfig(nu=5.0, duration=10.0, tau=0.5, mean_popularity=1.0, horizon=2000.0)
    shots = sample_shots(cfg, np.random.default_rng(0))
    t = np.random.default_rng(1).uniform(0, cfg.horizon, 2000)
    assert alive_count(shots, t).mean() == pytest.approx(50.0, rel=0.1)


def test_snm_zero_tau_heights_are_mean():
    cfg = SNMConfig(nu=2.0, duration=5.0, tau=0.0, mean_popularity=0.3, horizon=50.0)
    _, shots = gen_snm(cfg, seed=0, return_shots=True)
    assert np.allclose(shots.height, 0.3)


def test_snm_request_volume():
    cfg = SNMConfig(nu=3.0, duration=4.0, tau=0.4, mean_popularity=0.5, horizon=3000.0)
    tr, shots = gen_snm(cfg, seed=5, return_shots=True)
    # Campbell: sum of height times the part of each shot inside [0, H)
    live = np.clip(np.minimum(shots.arrival + 4.0, 3000.0) - np.maximum(shots.arrival, 0.0), 0, None)
    expect = float(np.sum(shots.height * live))
    assert abs(len(tr) - expect) <= 4 * math.sqrt(expect)
    assert len(tr) == pytest.approx(3.0 * 3000.0 * 4.0 * 0.5, rel=0.1)
    assert np.all(np.diff(tr.times) >= 0)


def test_snm_horizontal_shots_behave_like_irm():
    # every shot spans the whole horizon, so per-content counts scale with height
    cfg = SNMConfig(nu=0.05, duration=2000.0, tau=0.5, mean_popularity=2.0, horizon=1000.0)
    tr, shots = gen_snm(cfg, seed=9, return_shots=True)
    live = np.clip(np.minimum(shots.arrival + 2000.0, 1000.0) - np.maximum(shots.arrival, 0.0), 0, None)
    full = live == 1000.0
    k = np.bincount(tr.contents, minlength=len(shots) + 1)[1:]
    ratio = k[full] / (shots.height[full] * 1000.0)
    assert full.sum() >= 10
    assert ratio.mean() == pytest.approx(1.0, abs=0.05)


def test_snm_config_validation():
    with pytest.raises(ValueError):
        SNMConfig(1.0, 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        SNMConfig(0.0, 1.0, 0.5, 1.0, 1.0)


def _posterior_oracle(k, age, cfg):
    # dense log-spaced trapezoid over the prior support
    alpha, xmin = 1.0 / cfg.tau, cfg.mean_popularity * (1 - cfg.tau)
    p = np.geomspace(xmin, xmin * 1e9 ** cfg.tau * 10, 400_001)
    logw = k * np.log(p * age) - p * age - (alpha + 1) * np.log(p)
    w = np.exp(logw - logw.max())
    return np.trapezoid(w * p, p) / np.trapezoid(w, p)


@pytest.mark.parametrize("k,age", [(0, 1.0), (4, 9.94), (10, 2.0), (50, 5.0), (3, 0.1)])
def test_posterior_mean_matches_grid(k, age):
    cfg = SNMConfig(nu=1.0, duration=10.0, tau=0.6, mean_popularity=0.5, horizon=10.0)
    assert snm_posterior_mean(k, age, cfg) == pytest.approx(_posterior_oracle(k, age, cfg), rel=1e-4)


def test_classify_symmetry_and_monotonicity():
    cfg = SNMConfig(nu=1.0, duration=10.0, tau=0.6, mean_popularity=0.5, horizon=10.0)
    assert snm_posterior_mean(10, 3.0, cfg) > snm_posterior_mean(0, 3.0, cfg)
    sel = snm_classify([(5, 2.0), (5, 2.0)], cfg, 0.5)
    assert sel.size == math.ceil(0.5 * 2)
    assert snm_classify([(5, 2.0), (5, 2.0)], cfg, 1.0).tolist() == [0, 1]
    with pytest.raises(ValueError):
        snm_classify([(1, 0.0)], cfg, 0.5)
    with pytest.raises(ValueError):
        snm_classify([(1, 1.0)], cfg, 0.0)


@given(st.lists(st.tuples(st.integers(0, 30), st.floats(0.5, 10.0)), min_size=1, max_size=25),
       st.floats(0.01, 1.0))
@settings(max_examples=30, deadline=None)
def test_classify_selection_size(obs, gamma):
    cfg = SNMConfig(nu=1.0, duration=10.0, tau=0.6, mean_popularity=0.5, horizon=10.0)
    assert snm_classify(obs, cfg, gamma, "frequency").size == math.ceil(gamma * len(obs))


def _classifier_losses(seed, cfg, gamma=0.1):
    tr, shots = gen_snm(cfg, seed, return_shots=True)
    t0 = cfg.horizon
    alive = np.flatnonzero((shots.arrival > 0) & (shots.arrival + cfg.duration > t0))
    k = np.bincount(tr.contents, minlength=len(shots) + 1)[1:]
    obs = {int(i + 1): (int(k[i]), float(t0 - shots.arrival[i])) for i in alive}
    h = shots.height
    best = np.sort(h[alive])[::-1][:math.ceil(gamma * alive.size)].sum()
    return [best - h[np.asarray(snm_classify(obs, cfg, gamma, est)) - 1].sum()
            for est in ("posterior", "frequency")]


def test_posterior_classifier_beats_frequency():
    cfg = SNMConfig(nu=20.0, duration=10.0, tau=0.6, mean_popularity=0.5, horizon=30.0)
    losses = np.array([_classifier_losses(s, cfg) for s in range(20)])
    post, freq = losses.mean(axis=0)
    assert post <= freq


def test_sbm_rows_average_to_global():
    p0 = PowerLaw(0.8, 200).pmf()
    for locs in (1, 3, 8):
        p = gen_sbm(SBMConfig(locs, p0), seed=locs)
        assert np.abs(p.mean(axis=1) - p0).max() <= 1e-12
        if locs == 1:
            assert np.allclose(p[:, 0], p0)


def test_sbm_kernel_peaks_at_own_location():
    x = np.array([0.3])
    y = np.array([0.1, 0.3, 0.8])
    k = sbm_kernel(x[:, None], y[None, :])
    assert np.argmax(k[0]) == 1
    assert sbm_kernel(0.0, 0.9) == pytest.approx(sbm_kernel(0.0, 0.1))


def test_trace_roundtrip(tmp_path):
    tr = gen_located_irm(PowerLaw(0.8, 30).pmf(), 200, 3, seed=0)
    path = tmp_path / "t.csv"
    write_trace(tr, path, ["cachekit test"])
    assert path.read_text().startswith("# cachekit test\n")
    assert read_trace(path) == tr
    poisson = gen_poisson_irm([0.5, 0.5], 1.0, 50.0, seed=1)
    write_trace(poisson, path)
    assert np.array_equal(read_trace(path).times, poisson.times)


def test_trace_reader_defaults_and_errors(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,5\n2,3\n")
    tr = read_trace(p)
    assert tr.contents.tolist() == [5, 3] and tr.locations.tolist() == [0, 0]
    p.write_text("time,content_id\n2,1\n1,1\n")
    with pytest.raises(TraceFormatError, match="a.csv:3"):
        read_trace(p)
    p.write_text("1,x\n")
    with pytest.raises(TraceFormatError):
        read_trace(p)
    p.write_text("1,0\n")
    with pytest.raises(TraceFormatError):
        read_trace(p)
    p.write_text("1\n")
    with pytest.raises(TraceFormatError):
        read_trace(p)


def test_trace_invariants():
    with pytest.raises(ValueError):
        Trace([2.0, 1.0], [1, 1])
    with pytest.raises(ValueError):
        Trace([1.0], [1, 2])
    assert Trace.from_sequence([3, 1]).times.tolist() == [1.0, 2.0]
