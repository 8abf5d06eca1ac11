import json
import math

import numpy as np
import pytest

from asyncspad.acquisition import simulate
from asyncspad.design import grid_search_attenuation, optimal_active_time
from asyncspad.errors import EstimationError
from asyncspad.estimator import coates_estimate, cyclic_errors, histogram_from_stream
from asyncspad.harness import (ConfigError, SceneSpec, SweepSpec, analyze_stream, build_config,
                               grid_to_csv, oracle_table, parse_config_text, read_grid_csv,
                               run_scene, run_sweep, stream_from_csv, sweep_to_csv)
from asyncspad.model import AcquisitionConfig, Mode, PixelFlux
from asyncspad.pipeline import run_trials
from asyncspad.schedule import schedule_for


def test_parse_config_aliases_and_comments():
    p = parse_config_text("B = 1000  # bins\n# a comment\nt_d_bins=100\nPhi_Sig = 0.5, 1\n")
    assert p == {"num_bins": "1000", "dead_bins": "100", "phi_sig": "0.5, 1"}


def test_build_config_time_keys_and_optimal_active_time():
    cfg = build_config({"num_bins": "1000", "dead_time": "10e-9", "total_time": "2.5e-6",
                        "mode": "uniform", "active_bins": "opt", "phi_bkg": "0.05"})
    assert cfg.dead_bins == 100 and cfg.total_bins == 25_000
    assert cfg.mode is Mode.UNIFORM_SHIFT
    assert cfg.active_bins == optimal_active_time(0.05, 100)


@pytest.mark.parametrize("params", [
    {"dead_bins": "1", "total_bins": "100"},
    {"num_bins": "ten", "dead_bins": "1", "total_bins": "100"},
    {"num_bins": "10", "dead_bins": "1.5", "total_bins": "100"},
    {"num_bins": "10", "dead_bins": "1", "total_bins": "100", "mode": "bogus"},
    {"num_bins": "10", "dead_bins": "1", "total_bins": "100", "attenuation": "2"},
])
def test_build_config_rejects_bad_values(params):
    with pytest.raises(ValueError):
        build_config(params)


def test_sweep_spec_axes_and_order():
    spec = SweepSpec.from_params(parse_config_text(
        "num_bins = 50\ndead_bins = 5\ntotal_bins = 5000\nphi_sig = 1, 2\nphi_bkg = 0.01, 0.1, 0.2\n"
        "mode = sync, uniform\n"), trials=3, seed=1)
    pts = list(spec.points())
    assert len(pts) == 12
    assert pts[0] == {"mode": "sync", "total_bins": "5000", "phi_bkg": "0.01", "phi_sig": "1"}
    assert pts[1]["phi_sig"] == "2"
    with pytest.raises(ConfigError):
        SweepSpec({}, {"phi_sig": []})
    with pytest.raises(ConfigError):
        SweepSpec({}, trials=0)
    with pytest.raises(ConfigError):
        SweepSpec.from_params({"num_bins": "5", "total_bins": "50", "phi_sig": "1"})


def _sweep(text, **kw):
    return run_sweep(SweepSpec.from_params(parse_config_text(text), **kw))


def test_sweep_near_noiseless_point():
    rows = _sweep("num_bins = 1000\ndead_bins = 100\ntotal_bins = 25000\nphi_sig = 1\n"
                  "phi_bkg = 1e-4\n", trials=200, seed=0, mode="sync")
    assert rows[0]["rmse_relative"] < 0.01


def test_sweep_pileup_ceiling_point():
    rows = _sweep("num_bins = 1000\ndead_bins = 100\ntotal_bins = 25000\nphi_sig = 0.1\n"
                  "phi_bkg = 0.5\n", trials=300, seed=0, mode="sync")
    assert 0.25 <= rows[0]["rmse_relative"] <= 0.30


def test_sweep_uniform_beats_synchronous_with_long_exposure():
    # at 2.5 ms there are enough cycles for shifting to spread the detection opportunities
    text = "num_bins = 1000\ndead_bins = 100\ntotal_bins = 25000000\nphi_sig = 2\nphi_bkg = 0.2\n"
    sync = _sweep(text, trials=60, seed=2, mode="sync")[0]["rmse_bins"]
    uni = _sweep(text, trials=60, seed=2, mode="uniform")[0]["rmse_bins"]
    assert uni < sync and sync >= 5 * uni


def test_sweep_csv_columns_and_determinism():
    text = "num_bins = 40\ndead_bins = 4\ntotal_bins = 4000\nphi_sig = 0.5, 1\nphi_bkg = 0.05\n"
    a = sweep_to_csv(_sweep(text, trials=5, seed=3))
    b = sweep_to_csv(_sweep(text, trials=5, seed=3))
    assert a == b
    lines = a.splitlines()
    assert lines[0].split(",") == ["point", "mode", "phi_sig", "phi_bkg", "attenuation",
                                   "active_bins", "dead_bins", "total_bins", "num_bins", "trials",
                                   "rmse_bins", "rmse_relative", "rmse_meters"]
    assert len(lines) == 3
    timed = _sweep(text, trials=5, seed=3, timing=True)
    assert sweep_to_csv(timed, timing=True).splitlines()[0].endswith(",runtime_s")


def _rmse_and_se(res, B):
    e2 = cyclic_errors(res.estimated_bins, res.true_bins, B).astype(float) ** 2
    rmse = math.sqrt(e2.mean())
    se = e2.std(ddof=1) / math.sqrt(e2.size) / (2 * max(rmse, 1e-9))
    return rmse, se


@pytest.mark.parametrize("mode", ["sync", "uniform", "photon"])
def test_rmse_nonincreasing_in_signal(mode):
    B, bkg = 1000, 0.05
    cfg = AcquisitionConfig.in_bins(B, 100, 250_000, mode=mode,
                                    active_bins=optimal_active_time(bkg, 100) if mode == "uniform" else None)
    curve = [_rmse_and_se(run_trials(cfg, s, bkg, 100, seed=4, point_index=k), B)
             for k, s in enumerate([0.05, 0.2, 0.8, 3.2])]
    for (r0, s0), (r1, s1) in zip(curve, curve[1:]):
        assert r1 <= r0 + 2 * math.hypot(s0, s1)


def test_rmse_rises_when_exposure_shrinks_at_fixed_signal_energy():
    B, bkg, energy = 1000, 0.05, 2e5
    rmse = []
    for k, total in enumerate([1_000_000, 100_000, 3_000]):
        cfg = AcquisitionConfig.in_bins(B, 100, total, mode="photon")
        rmse.append(run_trials(cfg, energy / total, bkg, 100, seed=5, point_index=k).report.rmse_bins)
    assert rmse[0] < 0.05 * B
    assert rmse[-1] > rmse[0] + 0.1 * B


def test_grid_csv_round_trip():
    grid = np.array([[1.2345678, 2.0], [3.5, 1e-7]])
    text = grid_to_csv(grid)
    assert text.splitlines()[0] == "1.23457,2"
    np.testing.assert_allclose(read_grid_csv(text), grid, rtol=1e-5)
    for bad in ("", "1,2\n3\n", "1,x\n"):
        with pytest.raises(ConfigError):
            read_grid_csv(bad)


def test_scene_high_sbr_recovers_every_pixel():
    cfg = AcquisitionConfig.in_bins(1000, 10, 100 * 1010)
    depth = np.full((4, 4), 6.0)
    res = run_scene(SceneSpec(depth, np.ones((4, 4)), 5.0, 1e-3, cfg, seed=0))
    assert np.all(res.estimated_bins == res.true_bins)
    assert res.report.rmse_bins == 0
    report = json.loads(res.report_json())
    assert report["rows"] == 4 and len(report["pixels"]) == 16
    assert list(report)[:5] == ["rows", "cols", "rmse_bins", "rmse_relative", "rmse_meters"]


def _random_depths(shape, seed=0):
    return np.random.default_rng(seed).uniform(1.0, 14.0, shape)


def test_scene_strong_ambient_photon_driven_beats_synchronous():
    depth, refl = _random_depths((6, 6)), np.ones((6, 6))
    rmse = {}
    for mode in ("sync", "photon"):
        cfg = AcquisitionConfig.in_bins(1000, 100, 250_000, mode=mode)
        rmse[mode] = run_scene(SceneSpec(depth, refl, 0.22, 0.011, cfg, seed=1)).report.rmse_bins
    assert rmse["photon"] < rmse["sync"]


def test_scene_two_albedos():
    depth = _random_depths((6, 6))
    refl = np.where(np.arange(6)[None, :] < 3, 1.0, 0.1) * np.ones((6, 6))
    total, sig, bkg = 250_000, 5.0, 0.05
    # synchronous attenuation tuned on the bright material
    tuned = grid_search_attenuation("sync", AcquisitionConfig.in_bins(1000, 100, total), (sig, bkg),
                                    np.geomspace(1e-3, 1, 13), 60, seed=3).best
    errs = {}
    for mode, att in (("sync", tuned), ("photon", 1.0)):
        cfg = AcquisitionConfig.in_bins(1000, 100, total, mode=mode, attenuation=att)
        res = run_scene(SceneSpec(depth, refl, sig, bkg, cfg, seed=1))
        err = np.abs(cyclic_errors(res.estimated_bins, res.true_bins, 1000))
        errs[mode] = (err[:, :3].mean(), err[:, 3:].mean())
    assert errs["photon"][0] <= 1 and errs["photon"][1] <= 1
    assert errs["sync"][0] <= 1
    assert errs["sync"][1] > 50


def test_scene_validation():
    cfg = AcquisitionConfig.in_bins(100, 1, 10_000)
    with pytest.raises(ConfigError):
        SceneSpec(np.ones((2, 2)), np.ones((2, 3)), 1.0, 0.01, cfg)
    with pytest.raises(ConfigError):
        SceneSpec(np.ones((2, 2)), np.zeros((2, 2)), 1.0, 0.01, cfg)
    with pytest.raises(ConfigError):
        run_scene(SceneSpec(np.full((1, 1), 100.0), np.ones((1, 1)), 1.0, 0.01, cfg))


def test_scene_dark_pixel_is_flagged():
    cfg = AcquisitionConfig.in_bins(100, 1, 1000)
    res = run_scene(SceneSpec(np.full((1, 2), 1.0), np.ones((1, 2)), 1e-12, 0.0, cfg))
    assert res.failed.all()
    assert np.isnan(res.depth_estimate).all()
    assert json.loads(res.report_json())["failed_pixels"] == 2


@pytest.mark.parametrize("mode", ["sync", "uniform", "photon"])
def test_analyze_round_trip(tmp_path, mode):
    cfg = AcquisitionConfig.in_bins(200, 20, 100_000, active_bins=60, mode=mode)
    stream = simulate(cfg, PixelFlux(0.5, 0.02, 77), seed=6)
    path = tmp_path / "stream.csv"
    path.write_text(stream.to_csv())
    sch = None if mode == "photon" else schedule_for(cfg)
    expected = coates_estimate(histogram_from_stream(stream, cfg, sch), cfg.bin_width)
    got = analyze_stream(path, cfg)
    assert got.to_json() == expected.to_json()


def test_analyze_empty_stream(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("cycle,bin_abs,bin_mod\n")
    with pytest.raises(EstimationError):
        analyze_stream(path, AcquisitionConfig.in_bins(100, 5, 10_000, mode="photon"))
    path.write_text("")
    with pytest.raises(EstimationError):
        analyze_stream(path, AcquisitionConfig.in_bins(100, 5, 10_000))


def test_analyze_single_photon_driven_detection(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("cycle,bin_abs,bin_mod\n1,2036,37\n")
    est = analyze_stream(path, AcquisitionConfig.in_bins(100, 5, 10_000, mode="photon"))
    assert est.tau_hat == 37


def test_stream_schedule_mismatch():
    cfg = AcquisitionConfig.in_bins(10, 0, 100)
    with pytest.raises(ValueError):
        stream_from_csv("cycle,bin_abs,bin_mod\n11,105,6\n", cfg)
    with pytest.raises(ValueError):
        stream_from_csv("cycle,bin_abs,bin_mod\n1,2,3\n1,4,5\n", cfg)
    photon = AcquisitionConfig.in_bins(10, 5, 100, mode="photon")
    with pytest.raises(ValueError):
        stream_from_csv("cycle,bin_abs,bin_mod\n1,2,3\n2,4,5\n", photon)


def test_oracle_table_sums_to_one():
    cfg = AcquisitionConfig.in_bins(3, 0, 30, mode="uniform")
    text = oracle_table(cfg, PixelFlux(0.5, 0.1, 2), 2)
    lines = text.splitlines()
    assert lines[0] == "n1,n2,n3,n4,probability"
    probs = [float(line.rsplit(",", 1)[1]) for line in lines[1:]]
    assert sum(probs) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ConfigError):
        oracle_table(AcquisitionConfig.in_bins(3, 0, 30, mode="photon"), PixelFlux(0.5, 0.1, 2), 2)
