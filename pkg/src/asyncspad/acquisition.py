"""Monte Carlo photon acquisition with a dead-time limited SPAD.

Both samplers draw the first photon of a SPAD window by inverting the
cumulative incident rate: with independent Poisson arrivals per bin, the
first arrival after activation lands in the first bin whose cumulative rate
exceeds an Exp(1) draw.  This is exact for arbitrary waveforms and costs
``O(log B)`` per detection.
"""
from __future__ import annotations

import bisect
import csv
import io
import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InstanceTooLarge, StreamFormatError
from .model import (
    AcquisitionConfig,
    Mode,
    PixelFlux,
    detection_probs,
    incidence_probs,
    make_impulse_waveform,
    validate_waveform,
)
from .schedule import ShiftSchedule

STREAM_HEADER = ("cycle", "bin_abs", "bin_mod")
MAX_ENUMERATION = 10**6


def derive_rng(master_seed, *indices):
    """Generator for the substream ``(master_seed, *indices)``.

    Identical arguments always give an identical stream, independently of how
    many other substreams were drawn before.
    """
    if isinstance(master_seed, np.random.Generator):
        return master_seed
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(i) for i in indices))
    return np.random.Generator(np.random.PCG64(ss))


def apply_attenuation(flux: PixelFlux, attenuation: float) -> PixelFlux:
    if not 0 < attenuation <= 1:
        raise ValueError(f"attenuation must lie in (0, 1], got {attenuation}")
    return replace(flux, signal=flux.signal * attenuation, background=flux.background * attenuation)


def effective_waveform(cfg: AcquisitionConfig, flux) -> np.ndarray:
    """Waveform reaching the detector after the configured attenuation.

    ``flux`` is either a :class:`PixelFlux` or an explicit per-bin vector.
    """
    if isinstance(flux, PixelFlux):
        return make_impulse_waveform(apply_attenuation(flux, cfg.attenuation), cfg.num_bins)
    return validate_waveform(flux, cfg.num_bins) * cfg.attenuation


@dataclass(frozen=True, eq=False)
class TimestampStream:
    """Detections of one acquisition.

    ``cycle`` is the 1-based SPAD cycle of each detection, ``bin_abs`` its
    0-based position on the acquisition timeline and ``bin_mod`` the
    resynchronized 1-based histogram bin.
    """

    cycle: np.ndarray
    bin_abs: np.ndarray
    bin_mod: np.ndarray
    num_cycles: int
    empty_cycles: int
    num_bins: int

    @property
    def num_detections(self):
        return int(self.bin_mod.size)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(STREAM_HEADER)
        for row in zip(self.cycle.tolist(), self.bin_abs.tolist(), self.bin_mod.tolist()):
            writer.writerow(row)
        return buf.getvalue()


def read_stream_rows(text, num_bins, check_phase=True):
    """Parse stream CSV text into ``(cycle, bin_abs, bin_mod)`` arrays.

    With ``check_phase`` each ``bin_mod`` must equal ``bin_abs mod B + 1``,
    which holds whenever the laser runs on a fixed B-bin period.  Synchronous
    acquisition re-triggers the laser every SPAD cycle, so its streams are
    read with the check off and validated against their schedule instead.
    """
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        return tuple(np.zeros(0, dtype=np.int64) for _ in range(3))
    header = [h.strip() for h in next(csv.reader([lines[0]]))]
    if tuple(header) != STREAM_HEADER:
        raise StreamFormatError(f"expected header {','.join(STREAM_HEADER)}, got {lines[0]!r}", 1)
    rows = []
    for lineno, fields in enumerate(csv.reader(lines[1:]), start=2):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != 3:
            raise StreamFormatError(f"expected 3 fields, got {len(fields)}", lineno)
        try:
            cyc, b_abs, b_mod = (int(f) for f in fields)
        except ValueError:
            raise StreamFormatError(f"non-integer field in {fields!r}", lineno) from None
        if not 1 <= b_mod <= num_bins:
            raise StreamFormatError(f"bin_mod {b_mod} outside [1, {num_bins}]", lineno)
        if b_abs < 0 or cyc < 1:
            raise StreamFormatError("negative bin_abs or cycle < 1", lineno)
        if check_phase and b_abs % num_bins + 1 != b_mod:
            raise StreamFormatError(f"bin_mod {b_mod} inconsistent with bin_abs {b_abs}", lineno)
        if rows and (cyc < rows[-1][0] or b_abs <= rows[-1][1]):
            raise StreamFormatError("rows must be ordered by cycle and time", lineno)
        rows.append((cyc, b_abs, b_mod))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy()


def _cumulative_rate(r):
    cum = np.concatenate(([0.0], np.cumsum(r)))
    return cum, float(cum[-1])


def _first_crossing(cum, total, num_bins, target):
    """Smallest absolute boundary ``x`` with cumulative rate ``>= target``."""
    periods = np.floor(target / total)
    resid = np.clip(target - periods * total, 0.0, total)
    idx = np.searchsorted(cum, resid, side="left")
    return periods.astype(np.int64) * num_bins + idx


def sample_gated(r, shifts, active_bins, rng):
    """First-detection position within each gated window.

    Returns an integer array with the 0-based offset of the detection from
    the window start, or ``-1`` when the window saw no photon.  Windows may be
    longer than one laser period.
    """
    r = np.asarray(r, dtype=float)
    shifts = np.asarray(shifts, dtype=np.int64)
    num_bins = r.size
    pos = np.full(shifts.size, -1, dtype=np.int64)
    cum, total = _cumulative_rate(r)
    if total <= 0 or shifts.size == 0:
        return pos
    e = rng.standard_exponential(shifts.size)
    x = _first_crossing(cum, total, num_bins, cum[shifts] + e)
    offset = np.maximum(x - 1 - shifts, 0)
    hit = offset < active_bins
    pos[hit] = offset[hit]
    return pos


def simulate_gated(cfg: AcquisitionConfig, flux, sch: ShiftSchedule, seed=0) -> TimestampStream:
    """Gated acquisition: one window of ``m`` bins per scheduled cycle."""
    if not cfg.mode.gated:
        raise ValueError("simulate_gated needs a synchronous or uniform-shift config")
    r = effective_waveform(cfg, flux)
    pos = sample_gated(r, sch.shifts, sch.active_bins, derive_rng(seed))
    hit = np.flatnonzero(pos >= 0)
    starts = sch.cycle_starts(cfg.dead_bins)
    return TimestampStream(
        cycle=hit + 1,
        bin_abs=starts[hit] + pos[hit],
        bin_mod=(sch.shifts[hit] + pos[hit]) % cfg.num_bins + 1,
        num_cycles=sch.num_cycles,
        empty_cycles=int(sch.num_cycles - hit.size),
        num_bins=cfg.num_bins,
    )


def photon_driven_detections(r, total_bins, dead_bins, rng):
    """Absolute detection bins of a free-running SPAD over ``[0, total_bins)``.

    The SPAD is active from bin 0; a detection in bin ``k`` blanks bins
    ``k+1 .. k+dead_bins`` and activity resumes at ``k + dead_bins + 1``.
    """
    r = np.asarray(r, dtype=float)
    num_bins = r.size
    cum_arr, total = _cumulative_rate(r)
    if total <= 0:
        return np.zeros(0, dtype=np.int64)
    cum = cum_arr.tolist()
    out = []
    a = 0
    chunk = max(64, min(1 << 16, int(total_bins * total / num_bins / max(1, dead_bins)) + 64))
    draws = iter(())
    while a < total_bins:
        e = next(draws, None)
        if e is None:
            draws = iter(rng.standard_exponential(chunk).tolist())
            e = next(draws)
        q, rem = divmod(a, num_bins)
        target = q * total + cum[rem] + e
        periods = math.floor(target / total)
        resid = min(max(target - periods * total, 0.0), total)
        x = periods * num_bins + bisect.bisect_left(cum, resid)
        k = max(x - 1, a)
        if k >= total_bins:
            break
        out.append(k)
        a = k + dead_bins + 1
    return np.array(out, dtype=np.int64)


def simulate_photon_driven(cfg: AcquisitionConfig, flux, seed=0) -> TimestampStream:
    """Free-running acquisition over the whole time budget."""
    if cfg.mode is not Mode.PHOTON_DRIVEN:
        raise ValueError("simulate_photon_driven needs a photon-driven config")
    r = effective_waveform(cfg, flux)
    k = photon_driven_detections(r, cfg.total_bins, cfg.dead_bins, derive_rng(seed))
    n = k.size
    return TimestampStream(
        cycle=np.arange(1, n + 1, dtype=np.int64),
        bin_abs=k,
        bin_mod=k % cfg.num_bins + 1,
        num_cycles=n,
        empty_cycles=0,
        num_bins=cfg.num_bins,
    )


def photon_driven_shifts(stream: TimestampStream, dead_bins):
    """0-based shift of each SPAD cycle of a photon-driven stream.

    The first cycle opens at bin 0; cycle ``l + 1`` opens ``dead_bins + 1``
    bins after the detection closing cycle ``l``.
    """
    starts = np.concatenate(([0], stream.bin_abs[:-1] + dead_bins + 1)) if stream.num_detections else np.zeros(0, dtype=np.int64)
    return starts % stream.num_bins


def simulate(cfg: AcquisitionConfig, flux, seed=0, schedule=None) -> TimestampStream:
    if cfg.mode is Mode.PHOTON_DRIVEN:
        return simulate_photon_driven(cfg, flux, seed)
    if schedule is None:
        from .schedule import schedule_for

        schedule = schedule_for(cfg)
    return simulate_gated(cfg, flux, schedule, seed)


@dataclass(frozen=True, eq=False)
class HistogramData:
    """Counts ``N_1..N_{B+1}`` (last entry: cycles without detection) and denominators."""

    counts: np.ndarray
    denominators: np.ndarray | None
    num_cycles: int

    @property
    def num_bins(self):
        return self.counts.size - 1


def build_histogram(stream: TimestampStream) -> HistogramData:
    counts = np.bincount(stream.bin_mod - 1, minlength=stream.num_bins).astype(np.int64)
    counts = np.append(counts, stream.empty_cycles)
    return HistogramData(counts=counts, denominators=None, num_cycles=stream.num_cycles)


def exact_histogram_distribution(cfg: AcquisitionConfig, flux, sch: ShiftSchedule):
    """Exact distribution of ``(N_1, ..., N_{B+1})`` by enumerating all cycle outcomes.

    Returns a dict mapping count tuples to probabilities.
    """
    B, L = cfg.num_bins, sch.num_cycles
    if (B + 1) ** L > MAX_ENUMERATION:
        raise InstanceTooLarge(f"(B+1)^L = {(B + 1) ** L} exceeds {MAX_ENUMERATION}")
    q = incidence_probs(effective_waveform(cfg, flux))
    per_cycle = [detection_probs(q, int(s), sch.active_bins) for s in sch.shifts]
    dist = {}
    for outcome in itertools.product(range(B + 1), repeat=L):
        prob = 1.0
        for l, o in enumerate(outcome):
            prob *= per_cycle[l][o]
        counts = [0] * (B + 1)
        for o in outcome:
            counts[o] += 1
        key = tuple(counts)
        dist[key] = dist.get(key, 0.0) + prob
    return dist


def simulate_photon_driven_reference(r, total_bins, dead_bins, rng):
    """Bin-by-bin Bernoulli reference sampler (slow; for cross-checks)."""
    q = incidence_probs(r)
    num_bins = q.size
    u = rng.random(total_bins)
    out = []
    k = 0
    while k < total_bins:
        if u[k] < q[k % num_bins]:
            out.append(k)
            k += dead_bins + 1
        else:
            k += 1
    return np.array(out, dtype=np.int64)


def active_bin_counts(detections, total_bins, dead_bins, num_bins):
    """Per-bin count of active instants of a free-running SPAD, by walking the timeline.

    Brute force over every absolute bin; used as ground truth for the
    closed-form photon-driven denominator.
    """
    active = np.ones(total_bins, dtype=bool)
    for k in np.asarray(detections, dtype=np.int64):
        active[k + 1:k + 1 + dead_bins] = False
    idx = np.flatnonzero(active) % num_bins
    return np.bincount(idx, minlength=num_bins).astype(np.int64)
