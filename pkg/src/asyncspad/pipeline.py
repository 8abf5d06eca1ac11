"""Simulate -> histogram -> estimate, repeated over Monte Carlo trials."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .acquisition import derive_rng, simulate
from .errors import EstimationError
from .estimator import RmseReport, coates_estimate, histogram_from_stream, modulo_rmse
from .model import AcquisitionConfig, Mode, PixelFlux
from .schedule import schedule_for


@dataclass(frozen=True, eq=False)
class TrialResults:
    true_bins: np.ndarray
    estimated_bins: np.ndarray
    report: RmseReport
    runtime_s: float


def estimate_once(cfg: AcquisitionConfig, flux, rng, schedule=None):
    """One acquisition and its depth estimate; returns ``(estimate, histogram)``.

    An acquisition without detections or without a usable bin yields
    ``estimate = None``.
    """
    stream = simulate(cfg, flux, rng, schedule)
    hist = histogram_from_stream(stream, cfg, schedule)
    if stream.num_detections == 0:
        return None, hist
    try:
        return coates_estimate(hist, cfg.bin_width), hist
    except EstimationError:
        return None, hist


def run_trials(cfg: AcquisitionConfig, signal, background, trials, seed=0, point_index=0,
               fixed_tau=None) -> TrialResults:
    """Depth RMSE over ``trials`` acquisitions of one operating point.

    Each trial draws its true bin uniformly over ``1..B`` (unless
    ``fixed_tau``) from the substream ``(seed, point_index, trial)``, so a
    trial's outcome does not depend on which other trials ran.  An acquisition
    with no usable bin is scored as a guess of bin 1.
    """
    schedule = None if cfg.mode is Mode.PHOTON_DRIVEN else schedule_for(cfg)
    true_bins = np.empty(trials, dtype=np.int64)
    est_bins = np.empty(trials, dtype=np.int64)
    start = time.perf_counter()
    for t in range(trials):
        rng = derive_rng(seed, point_index, t)
        tau = int(fixed_tau) if fixed_tau is not None else int(rng.integers(1, cfg.num_bins + 1))
        est, _ = estimate_once(cfg, PixelFlux(signal, background, tau), rng, schedule)
        true_bins[t] = tau
        est_bins[t] = est.tau_hat if est is not None else 1
    elapsed = time.perf_counter() - start
    report = modulo_rmse(est_bins, true_bins, cfg.num_bins, cfg.bin_width)
    return TrialResults(true_bins, est_bins, report, elapsed / max(trials, 1))
