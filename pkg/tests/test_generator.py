"""Synthetic traffic generation: samplers, presence process, stream writers."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from tlens.generator import (
    BACKGROUND_ID_BASE,
    DEST_ID_BASE,
    OBSERVER_B_FILL_BASE,
    SOURCE_ID_BASE,
    WINDOW_SPAN_US,
    ScenarioError,
    SyntheticScenario,
    ZipfMandelbrotSampler,
    generate_stream,
    generate_two_observers,
    renewal_gap_pmf,
    sample_zipf_mandelbrot,
    simulate_presence,
)
from tlens.ingest import WindowSpec, parse_records, scan_windows


def test_sampler_degenerate_support(rng):
    s = ZipfMandelbrotSampler(0.5, 2.0, 1)
    assert s.sample(rng) == 1
    assert s.sample(rng, 100).tolist() == [1] * 100


def test_sampler_two_point_exact_probabilities(rng):
    # delta=0, lambda=2 on {1, 2}: mass (1, 1/4) -> p = (0.8, 0.2)
    s = ZipfMandelbrotSampler(0.0, 2.0, 2)
    assert s.pmf.tolist() == pytest.approx([0.8, 0.2])
    draws = s.sample(rng, 100_000)
    share = float((draws == 2).mean())
    sigma = math.sqrt(0.2 * 0.8 / 100_000)
    assert abs(share - 0.2) < 3 * sigma


def test_sampler_chi_square_against_pmf(rng):
    s = ZipfMandelbrotSampler(1.0, 1.5, 50)
    n = 200_000
    draws = s.sample(rng, n)
    observed = np.bincount(draws, minlength=51)[1:]
    _, p_value = scipy_stats.chisquare(observed, s.pmf * n)
    assert p_value > 1e-4


def test_sampler_validation(rng):
    with pytest.raises(ValueError):
        ZipfMandelbrotSampler(0.0, 2.0, 0)
    with pytest.raises(ValueError):
        ZipfMandelbrotSampler(-1.0, 2.0, 10)
    with pytest.raises(ValueError):
        ZipfMandelbrotSampler(0.0, 0.0, 10)
    assert 1 <= sample_zipf_mandelbrot(1.0, 2.0, 8, rng) <= 8


def test_gap_pmf_is_distribution():
    f = renewal_gap_pmf(0.8, 10.0, 64)
    assert f[0] == 0.0
    assert (f >= 0.0).all()
    assert f.sum() <= 1.0 + 1e-12
    assert f[1] == pytest.approx(10.0 / 11.0)


def test_gap_pmf_reconstructs_curve():
    """Renewal identity: the pmf convolves back to C(t) exactly."""
    for alpha, beta in ((1.0, 5.0), (0.8, 10.0), (0.3, 2.0), (1.0, 0.1)):
        horizon = 48
        f = renewal_gap_pmf(alpha, beta, horizon)
        t = np.arange(horizon + 1, dtype=float)
        c = beta / (beta + t**alpha)
        u = np.zeros(horizon + 1)
        u[0] = 1.0
        for k in range(1, horizon + 1):
            u[k] = float(np.dot(f[1 : k + 1], u[k - 1 :: -1]))
        assert np.abs(u - c).max() < 1e-12, (alpha, beta)


def test_gap_pmf_validation():
    with pytest.raises(ValueError):
        renewal_gap_pmf(1.2, 5.0, 16)
    with pytest.raises(ValueError):
        renewal_gap_pmf(0.8, 0.0, 16)
    with pytest.raises(ValueError):
        renewal_gap_pmf(0.8, 5.0, 0)


def test_presence_matches_curve_at_scale():
    """Pooled conditional revisit rates track beta/(beta+t**alpha)."""
    n_sources, n_windows = 50_000, 48
    alpha, beta = 0.8, 10.0
    rng = np.random.default_rng(99)
    presence = simulate_presence(n_sources, n_windows, alpha, beta, rng)
    grid = np.zeros((n_sources, n_windows), dtype=bool)
    for w, idx in enumerate(presence):
        grid[idx, w] = True
    for t in (1, 2, 5, 10, 20, 40):
        num = int((grid[:, :-t] & grid[:, t:]).sum())
        den = int(grid[:, :-t].sum())
        expected = beta / (beta + t**alpha)
        assert abs(num / den - expected) < 0.015, t


def test_presence_respects_anchors():
    rng = np.random.default_rng(5)
    anchors = np.array([0, 3, 3, 7])
    presence = simulate_presence(4, 8, 0.8, 10.0, rng, anchors=anchors)
    for source, anchor in enumerate(anchors):
        assert source in presence[anchor]
        for w in range(anchor):
            assert source not in presence[w]


def test_presence_anchor_validation():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        simulate_presence(3, 8, 0.8, 10.0, rng, anchors=np.array([0, 1]))
    with pytest.raises(ValueError):
        simulate_presence(2, 8, 0.8, 10.0, rng, anchors=np.array([0, 8]))
    with pytest.raises(ValueError):
        simulate_presence(2, 8, 0.8, 10.0, rng, anchors=np.array([-1, 0]))


def _scenario(**overrides):
    kwargs = dict(n_sources=500, n_windows=8, n_valid=1024, seed=21)
    kwargs.update(overrides)
    return SyntheticScenario(**kwargs)


def test_generate_stream_window_shape(tmp_path):
    scenario = _scenario()
    truth = generate_stream(scenario, tmp_path / "s.csv")
    windows = list(scan_windows(tmp_path / "s.csv", WindowSpec(1024)))
    assert len(windows) == 8
    for w, win in enumerate(windows):
        assert len(win.src) == 1024
        assert win.timestamps.min() >= w * WINDOW_SPAN_US
        assert win.timestamps.max() < (w + 1) * WINDOW_SPAN_US
    assert truth.natural and len(truth.natural) == 8


def test_generate_stream_balance_arithmetic(tmp_path):
    truth = generate_stream(_scenario(), tmp_path / "s.csv")
    for nat, cut, added in zip(truth.natural, truth.trimmed, truth.topped):
        assert nat - cut + added == 1024
        assert cut == 0 or added == 0


def test_generate_stream_realized_counts_match_file(tmp_path):
    truth = generate_stream(_scenario(), tmp_path / "s.csv")
    counts = np.zeros(500, dtype=np.int64)
    for rec in parse_records(tmp_path / "s.csv"):
        if rec.src < BACKGROUND_ID_BASE:
            counts[rec.src - SOURCE_ID_BASE] += 1
    assert counts.tolist() == truth.realized_source_packets.tolist()


def test_generate_stream_rows_subset_of_presence(tmp_path):
    """Trimming only removes sources; every emitted row was present."""
    truth = generate_stream(_scenario(n_valid=256), tmp_path / "s.csv")
    windows = list(scan_windows(tmp_path / "s.csv", WindowSpec(256)))
    for w, win in enumerate(windows):
        rows = {int(s) for s in win.src if int(s) < BACKGROUND_ID_BASE}
        allowed = {SOURCE_ID_BASE + int(i) for i in truth.presence[w]}
        assert rows <= allowed


def test_generate_stream_destination_range(tmp_path):
    scenario = _scenario(n_destinations=64)
    generate_stream(scenario, tmp_path / "s.csv")
    for rec in parse_records(tmp_path / "s.csv"):
        assert DEST_ID_BASE <= rec.dst < DEST_ID_BASE + 64


def test_generate_stream_deterministic(tmp_path):
    scenario = _scenario()
    generate_stream(scenario, tmp_path / "a.csv")
    generate_stream(scenario, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv.truth.json").read_text() == (
        tmp_path / "b.csv.truth.json"
    ).read_text()


def test_generate_stream_binary_matches_csv(tmp_path):
    scenario = _scenario()
    generate_stream(scenario, tmp_path / "s.csv", fmt="csv")
    generate_stream(scenario, tmp_path / "s.bin", fmt="binary")
    csv_recs = list(parse_records(tmp_path / "s.csv"))
    bin_recs = list(parse_records(tmp_path / "s.bin"))
    assert csv_recs == bin_recs


def test_generate_stream_seed_changes_output(tmp_path):
    generate_stream(_scenario(seed=1), tmp_path / "a.csv")
    generate_stream(_scenario(seed=2), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "b.csv").read_bytes()


def test_generate_stream_topup_only_scenario(tmp_path):
    # every present source emits exactly 1 packet; 100 sources can never
    # fill 512 slots, so every window is topped up and none is trimmed
    scenario = _scenario(n_sources=100, n_valid=512, intensity_max=1)
    truth = generate_stream(scenario, tmp_path / "s.csv")
    assert all(c == 0 for c in truth.trimmed)
    assert all(t > 0 for t in truth.topped)
    windows = list(scan_windows(tmp_path / "s.csv", WindowSpec(512)))
    background = {
        int(s) for w in windows for s in w.src if int(s) >= BACKGROUND_ID_BASE
    }
    assert background
    assert all(BACKGROUND_ID_BASE <= b < OBSERVER_B_FILL_BASE for b in background)


def test_generate_stream_infeasible_without_background(tmp_path):
    scenario = _scenario(n_sources=10, n_valid=4096, intensity_max=1, background_pool=0)
    with pytest.raises(ScenarioError, match="sources would fill"):
        generate_stream(scenario, tmp_path / "s.csv")


def test_generate_stream_sidecar_contents(tmp_path):
    truth = generate_stream(_scenario(), tmp_path / "s.csv")
    sidecar = json.loads(truth.sidecar_path.read_text())
    assert sidecar["scenario"]["seed"] == 21
    assert sidecar["natural"] == truth.natural
    assert sidecar["trimmed"] == truth.trimmed
    assert sidecar["topped"] == truth.topped
    assert sidecar["id_bases"]["destination"] == DEST_ID_BASE


def test_scenario_validation():
    with pytest.raises(ScenarioError, match="cauchy_alpha"):
        _scenario(cauchy_alpha=1.5)
    with pytest.raises(ScenarioError, match="cauchy_alpha"):
        _scenario(cauchy_alpha=0.0)
    with pytest.raises(ScenarioError, match="zm_lambda"):
        _scenario(zm_lambda=7.0)
    with pytest.raises(ScenarioError, match="zm_delta"):
        _scenario(zm_delta=-1.0)
    with pytest.raises(ScenarioError, match="n_valid"):
        _scenario(n_valid=0)
    with pytest.raises(ScenarioError, match="seed"):
        _scenario(seed=-1)
    with pytest.raises(ScenarioError, match="background_pool"):
        _scenario(background_pool=-5)


def _pair(tmp_path, **overrides):
    kwargs = dict(n_sources=3000, n_windows=6, n_valid=4096, seed=13)
    kwargs.update(overrides)
    scenario = SyntheticScenario(**kwargs)
    truth = generate_two_observers(scenario, tmp_path / "a.csv", tmp_path / "b.csv")
    return scenario, truth


def test_two_observers_visibility_rule(tmp_path):
    scenario, truth = _pair(tmp_path)
    d = truth.stream.realized_source_packets
    threshold = math.sqrt(scenario.n_valid)
    # d = 1 gives log2(d) = 0: never visible; d >= sqrt(N): always visible
    assert not truth.visible[d == 1].any()
    assert truth.visible[d >= threshold].all()
    assert not truth.visible[d == 0].any()
    assert truth.visible_count == int(truth.visible.sum())


def test_two_observers_b_stream_shape(tmp_path):
    scenario, truth = _pair(tmp_path)
    windows = list(scan_windows(truth.path_b, WindowSpec(truth.n_valid_b)))
    assert len(windows) == scenario.n_windows
    seen = []
    for win in windows:
        assert len(win.src) == truth.n_valid_b
        for s in win.src:
            s = int(s)
            if s < BACKGROUND_ID_BASE:
                seen.append(s - SOURCE_ID_BASE)
            else:
                assert OBSERVER_B_FILL_BASE <= s < DEST_ID_BASE
    # each visible source echoes exactly once, in one window
    assert sorted(seen) == np.flatnonzero(truth.visible).tolist()


def test_two_observers_deterministic(tmp_path):
    scenario = SyntheticScenario(n_sources=800, n_windows=4, n_valid=1024, seed=3)
    generate_two_observers(scenario, tmp_path / "a1.csv", tmp_path / "b1.csv")
    generate_two_observers(scenario, tmp_path / "a2.csv", tmp_path / "b2.csv")
    assert (tmp_path / "b1.csv").read_bytes() == (tmp_path / "b2.csv").read_bytes()
    assert (tmp_path / "a1.csv").read_bytes() == (tmp_path / "a2.csv").read_bytes()


def test_two_observers_b_sidecar(tmp_path):
    _, truth = _pair(tmp_path)
    sidecar = json.loads(truth.sidecar_b_path.read_text())
    assert sidecar["role"] == "observer_b"
    assert sidecar["n_valid_b"] == truth.n_valid_b
    assert sidecar["visible_sources"] == truth.visible_count
