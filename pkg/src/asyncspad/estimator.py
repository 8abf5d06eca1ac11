"""Denominator sequences, the generalized Coates estimator and depth error metrics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .acquisition import HistogramData, TimestampStream, build_histogram
from .errors import EstimationError
from .model import SPEED_OF_LIGHT, AcquisitionConfig, Mode, bin_to_depth
from .schedule import ShiftSchedule, schedule_for


def _cyclic_coverage(starts, lengths, num_bins):
    """How many of the ranges ``[start, start + length)`` (mod B) cover each bin."""
    starts = np.asarray(starts, dtype=np.int64) % num_bins
    full, rem = np.divmod(np.asarray(lengths, dtype=np.int64), num_bins)
    ends = starts + rem
    diff = np.bincount(starts, minlength=num_bins + 1)[: num_bins + 1].astype(np.int64)
    diff -= np.bincount(np.minimum(ends, num_bins), minlength=num_bins + 1)[: num_bins + 1]
    wrapped = ends > num_bins
    if np.any(wrapped):
        diff[0] += int(wrapped.sum())
        diff -= np.bincount(ends[wrapped] - num_bins, minlength=num_bins + 1)[: num_bins + 1]
    return np.cumsum(diff)[:num_bins] + int(full.sum())


def denominator_gated(stream: TimestampStream, sch: ShiftSchedule, dead_bins: int) -> np.ndarray:
    """Detection opportunities per bin for a gated stream.

    Each cycle contributes one opportunity to every bin from its first active
    bin up to and including the detection bin, or to its whole window when
    nothing was detected.
    """
    lengths = np.full(sch.num_cycles, sch.active_bins, dtype=np.int64)
    if stream.num_detections:
        idx = stream.cycle - 1
        offset = stream.bin_abs - sch.cycle_starts(dead_bins)[idx]
        if np.any(offset < 0) or np.any(offset >= sch.active_bins):
            raise ValueError("stream detections do not fall inside the scheduled windows")
        lengths[idx] = offset + 1
    return _cyclic_coverage(sch.shifts, lengths, stream.num_bins)


def _bins_per_residue(total_bins, num_bins):
    base, extra = divmod(total_bins, num_bins)
    return base + (np.arange(num_bins) < extra).astype(np.int64)


def denominator_photon_driven(counts, total_bins, dead_bins, last_detection=None) -> np.ndarray:
    """Closed-form denominators for free-running acquisition.

    ``D_i = N_tot / B - sum_{j=1..n_d} N_{i-j}``: every bin instant is an
    opportunity unless blanked by a detection in one of the ``n_d`` preceding
    bins.  Instants per residue are counted exactly when ``B`` does not divide
    ``N_tot``, and the dead bins of ``last_detection`` that fall past the end
    of the acquisition are given back.
    """
    n = np.asarray(counts, dtype=np.int64)
    num_bins = n.size
    full, rem = divmod(dead_bins, num_bins)
    ext = np.concatenate(([0], np.cumsum(np.concatenate((n, n)))))
    i = np.arange(num_bins)
    blanked = full * int(n.sum()) + ext[i + num_bins] - ext[i + num_bins - rem]
    d = _bins_per_residue(total_bins, num_bins) - blanked
    if last_detection is not None and dead_bins > 0:
        first_lost = max(total_bins, last_detection + 1)
        lost = last_detection + dead_bins + 1 - first_lost
        if lost > 0:
            d += _cyclic_coverage([first_lost], [lost], num_bins)
    return np.maximum(d, 0)


def histogram_from_stream(stream: TimestampStream, cfg: AcquisitionConfig, schedule=None) -> HistogramData:
    """Counts plus the denominator sequence matching the acquisition mode."""
    hist = build_histogram(stream)
    if cfg.mode is Mode.PHOTON_DRIVEN:
        last = int(stream.bin_abs[-1]) if stream.num_detections else None
        d = denominator_photon_driven(hist.counts[:-1], cfg.total_bins, cfg.dead_bins, last)
    else:
        if schedule is None:
            schedule = schedule_for(cfg)
        if schedule.num_cycles != stream.num_cycles:
            raise ValueError("stream and schedule disagree on the number of cycles")
        d = denominator_gated(stream, schedule, cfg.dead_bins)
    return HistogramData(counts=hist.counts, denominators=d, num_cycles=hist.num_cycles)


@dataclass(frozen=True, eq=False)
class DepthEstimate:
    r_hat: np.ndarray
    q_hat: np.ndarray
    tau_hat: int
    depth_m: float
    usable_bins: np.ndarray

    @property
    def usable_fraction(self):
        return float(self.usable_bins.mean())

    def to_dict(self):
        return {
            "tau_hat": int(self.tau_hat),
            "depth_m": float(self.depth_m),
            "r_hat": [float(v) for v in self.r_hat],
            "usable_fraction": self.usable_fraction,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def coates_estimate(hist: HistogramData, bin_width: float = 100e-12) -> DepthEstimate:
    """Generalized Coates estimate of the incident waveform and its peak bin.

    Bins with no opportunity (``D_i = 0``) are reported as ``r_hat = 0`` and
    excluded from the peak search.  A bin that detected on every opportunity
    uses ``(D_i - 1/2) / D_i`` so the flux estimate stays finite.  Ties go to
    the lowest bin.
    """
    if hist.denominators is None:
        raise ValueError("histogram has no denominator sequence")
    n = np.asarray(hist.counts[: hist.num_bins], dtype=float)
    d = np.asarray(hist.denominators, dtype=float)
    if d.shape != n.shape:
        raise ValueError(f"{d.size} denominators for {n.size} histogram bins")
    usable = d > 0
    if not usable.any():
        raise EstimationError("no bin had a detection opportunity")
    q_hat = np.zeros_like(d)
    q_hat[usable] = np.minimum(n[usable], d[usable] - 0.5) / d[usable]
    r_hat = -np.log1p(-q_hat)
    tau_hat = int(np.argmax(np.where(usable, q_hat, -np.inf))) + 1
    depth = float(bin_to_depth(tau_hat, bin_width))
    return DepthEstimate(r_hat=r_hat, q_hat=q_hat, tau_hat=tau_hat, depth_m=depth, usable_bins=usable)


@dataclass(frozen=True)
class RmseReport:
    rmse_bins: float
    rmse_relative: float
    rmse_meters: float
    trials: int


def cyclic_errors(estimates, truths, num_bins):
    """Signed cyclic bin error in ``(-B/2, B/2]``."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    half = num_bins / 2
    return half - np.mod(est - tru + half, num_bins)


def modulo_rmse(estimates, truths, num_bins, bin_width=None) -> RmseReport:
    """RMSE of depth-bin estimates measured on the cyclic ``B``-bin range."""
    est = np.asarray(estimates)
    tru = np.asarray(truths)
    if est.size == 0 or est.shape != tru.shape:
        raise ValueError("need equal-length, non-empty estimate and truth lists")
    e = cyclic_errors(est, tru, num_bins)
    rmse = float(np.sqrt(np.mean(e * e)))
    meters = rmse * SPEED_OF_LIGHT * bin_width / 2 if bin_width else math.nan
    return RmseReport(rmse_bins=rmse, rmse_relative=rmse / num_bins, rmse_meters=meters, trials=int(est.size))
