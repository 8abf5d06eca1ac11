import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asyncspad.acquisition import (HistogramData, active_bin_counts, build_histogram, derive_rng,
                                   photon_driven_detections, simulate, simulate_gated)
from asyncspad.errors import EstimationError
from asyncspad.estimator import (_cyclic_coverage, coates_estimate, cyclic_errors,
                                 denominator_gated, denominator_photon_driven,
                                 histogram_from_stream, modulo_rmse)
from asyncspad.model import AcquisitionConfig, PixelFlux
from asyncspad.schedule import ShiftSchedule, schedule_for, uniform_shift_schedule


def _gated_denominator_bruteforce(stream, sch, dead_bins):
    B = stream.num_bins
    d = np.zeros(B, dtype=np.int64)
    starts = sch.cycle_starts(dead_bins)
    hit = dict(zip(stream.cycle.tolist(), stream.bin_abs.tolist()))
    for l in range(sch.num_cycles):
        length = hit[l + 1] - starts[l] + 1 if l + 1 in hit else sch.active_bins
        for k in range(length):
            d[(sch.shifts[l] + k) % B] += 1
    return d


def test_cyclic_coverage_wraps_and_repeats():
    np.testing.assert_array_equal(_cyclic_coverage([3], [4], 5), [1, 1, 0, 1, 1])
    np.testing.assert_array_equal(_cyclic_coverage([1], [12], 5), [2, 3, 3, 2, 2])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(1, 100), st.integers(0, 50), st.integers(0, 2**31))
def test_gated_denominator_matches_bruteforce(B, m, n_d, seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 60))
    sch = uniform_shift_schedule(B, L, m, n_d, shuffle_seed=seed)
    cfg = AcquisitionConfig.in_bins(B, n_d, 10**7, active_bins=m, mode="uniform")
    r = rng.uniform(0, 0.3, B)
    stream = simulate_gated(cfg, r, sch, derive_rng(seed))
    d = denominator_gated(stream, sch, n_d)
    np.testing.assert_array_equal(d, _gated_denominator_bruteforce(stream, sch, n_d))
    counts = build_histogram(stream).counts[:-1]
    assert np.all(d >= counts)


def test_gated_denominator_examples():
    B, L = 10, 7
    sch = ShiftSchedule(np.zeros(L, dtype=int), B, np.zeros(L, dtype=int))
    cfg = AcquisitionConfig.in_bins(B, 0, L * B)
    certain = simulate_gated(cfg, np.full(B, 40.0), sch, 0)
    np.testing.assert_array_equal(denominator_gated(certain, sch, 0), [L] + [0] * (B - 1))
    dark = simulate_gated(cfg, np.zeros(B), sch, 0)
    np.testing.assert_array_equal(denominator_gated(dark, sch, 0), [L] * B)


def test_synchronous_denominator_decays_geometrically():
    B, L, phi = 20, 20_000, 0.1
    cfg = AcquisitionConfig.in_bins(B, 0, L * B)
    stream = simulate(cfg, np.full(B, phi), seed=3)
    d = denominator_gated(stream, schedule_for(cfg), 0)
    q = 1 - math.exp(-phi)
    expected = L * (1 - q) ** np.arange(B)
    sd = np.sqrt(L * (1 - q) ** np.arange(B) * (1 - (1 - q) ** np.arange(B)))
    assert np.all(np.abs(d - expected) <= 4 * sd + 1)


def test_uniform_shifting_flattens_denominator():
    B, phi = 50, 0.1
    cfg = AcquisitionConfig.in_bins(B, 0, 10 * B * B * 2, mode="uniform")
    stream = simulate(cfg, np.full(B, phi), seed=1)
    d = histogram_from_stream(stream, cfg).denominators
    assert d.std() / d.mean() <= 0.1
    sync = AcquisitionConfig.in_bins(B, 0, 10 * B * B * 2)
    ds = histogram_from_stream(simulate(sync, np.full(B, phi), seed=1), sync).denominators
    assert ds.std() / ds.mean() > 0.5


def test_photon_driven_denominator_examples():
    np.testing.assert_array_equal(denominator_photon_driven(np.zeros(8), 80, 5), [10] * 8)
    counts = np.array([3, 0, 1, 0, 2, 0, 0, 0])
    np.testing.assert_array_equal(denominator_photon_driven(counts, 80, 0), [10] * 8)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 64), st.integers(0, 150), st.integers(1, 6000), st.integers(0, 2**31))
def test_photon_driven_denominator_matches_active_counts(B, n_d, total, seed):
    rng = np.random.default_rng(seed)
    r = rng.uniform(0, 0.5, B)
    det = photon_driven_detections(r, total, n_d, derive_rng(seed))
    counts = np.bincount(det % B, minlength=B)
    last = int(det[-1]) if det.size else None
    d = denominator_photon_driven(counts, total, n_d, last)
    np.testing.assert_array_equal(d, active_bin_counts(det, total, n_d, B))


def test_photon_driven_denominator_example_trace():
    B, n_d, total = 50, 7, 5000
    det = photon_driven_detections(np.full(B, 0.08), total, n_d, derive_rng(12))
    counts = np.bincount(det % B, minlength=B)
    d = denominator_photon_driven(counts, total, n_d, int(det[-1]))
    np.testing.assert_array_equal(d, active_bin_counts(det, total, n_d, B))


def test_coates_examples():
    hist = HistogramData(np.array([0, 10, 5, 0, 85]), np.array([50, 100, 5, 0]), 100)
    est = coates_estimate(hist)
    assert est.r_hat[0] == 0
    assert est.q_hat[1] == pytest.approx(0.1)
    assert est.r_hat[1] == pytest.approx(0.105360516, abs=1e-9)
    # saturated bin uses (D - 1/2) / D
    assert est.q_hat[2] == pytest.approx(0.9)
    assert est.usable_bins.tolist() == [True, True, True, False]
    assert est.tau_hat == 3


def test_coates_ties_go_to_lowest_bin():
    hist = HistogramData(np.array([1, 2, 2, 0]), np.array([10, 4, 4]), 3)
    assert coates_estimate(hist).tau_hat == 2


def test_coates_requires_a_usable_bin():
    with pytest.raises(EstimationError):
        coates_estimate(HistogramData(np.zeros(4, dtype=int), np.zeros(3, dtype=int), 0))
    with pytest.raises(ValueError):
        coates_estimate(HistogramData(np.zeros(4, dtype=int), None, 0))
    with pytest.raises(ValueError):
        coates_estimate(HistogramData(np.zeros(4, dtype=int), np.ones(4, dtype=int), 0))


@given(st.lists(st.integers(0, 50), min_size=3, max_size=30), st.integers(2, 1000),
       st.integers(0, 2**31))
def test_argmax_invariant_to_scaling_denominators(extra, scale, seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(0, 20, len(extra))
    d = n + 1 + np.array(extra)  # strictly unsaturated
    est = coates_estimate(HistogramData(np.append(n, 0), d, 0))
    scaled = coates_estimate(HistogramData(np.append(n * scale, 0), d * scale, 0))
    assert est.tau_hat == scaled.tau_hat


def test_depth_estimate_json_keys():
    hist = HistogramData(np.array([0, 10, 0]), np.array([40, 40]), 40)
    data = json.loads(coates_estimate(hist).to_json())
    assert list(data) == ["tau_hat", "depth_m", "r_hat", "usable_fraction"]
    assert data["tau_hat"] == 2
    assert data["depth_m"] == pytest.approx(1.5 * 299_792_458.0 * 100e-12 / 2)


def test_modulo_rmse_examples():
    assert modulo_rmse([5, 7], [5, 7], 1000).rmse_bins == 0
    rep = modulo_rmse([1000], [1], 1000, bin_width=100e-12)
    assert rep.rmse_bins == 1
    assert rep.rmse_relative == pytest.approx(0.001)
    assert rep.rmse_meters == pytest.approx(299_792_458.0 * 100e-12 / 2)
    assert math.isnan(modulo_rmse([1], [2], 10).rmse_meters)
    with pytest.raises(ValueError):
        modulo_rmse([], [], 10)


def test_modulo_rmse_random_guess_ceiling():
    rng = np.random.default_rng(0)
    est = rng.integers(1, 1001, 100_000)
    tru = rng.integers(1, 1001, 100_000)
    assert modulo_rmse(est, tru, 1000).rmse_bins == pytest.approx(1000 / math.sqrt(12), rel=0.01)


@given(st.lists(st.tuples(st.integers(1, 97), st.integers(1, 97)), min_size=1, max_size=50),
       st.integers(0, 96))
def test_modulo_rmse_symmetry_and_shift_invariance(pairs, k):
    B = 97
    est, tru = map(np.array, zip(*pairs))
    base = modulo_rmse(est, tru, B).rmse_bins
    assert modulo_rmse(tru, est, B).rmse_bins == pytest.approx(base)
    assert modulo_rmse((est + k - 1) % B + 1, (tru + k - 1) % B + 1, B).rmse_bins == pytest.approx(base)
    assert 0 <= base <= B / 2
    assert np.all(np.abs(cyclic_errors(est, tru, B)) <= B / 2)


def test_histogram_from_stream_checks_schedule():
    cfg = AcquisitionConfig.in_bins(20, 2, 2000, active_bins=5, mode="uniform")
    stream = simulate(cfg, PixelFlux(0.5, 0.05, 3), seed=0)
    other = uniform_shift_schedule(20, 7, 5, 2)
    with pytest.raises(ValueError):
        histogram_from_stream(stream, cfg, other)


def test_consistency_small():
    B, L = 20, 20_000
    cfg = AcquisitionConfig.in_bins(B, 0, L * B, mode="uniform")
    r = np.full(B, 0.05)
    r[4] += 0.5
    est = coates_estimate(histogram_from_stream(simulate(cfg, r, seed=0), cfg))
    assert np.max(np.abs(est.r_hat - r)) <= 0.03
