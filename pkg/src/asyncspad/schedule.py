"""Shift schedules for gated acquisition.

A schedule lists, per SPAD cycle, the 0-based shift of its first active bin
relative to the most recent laser pulse and the extra inactive padding
inserted after the cycle's dead time.  All quantities are integer bins.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError
from .model import AcquisitionConfig, Mode


@dataclass(frozen=True, eq=False)
class ShiftSchedule:
    shifts: np.ndarray
    active_bins: int
    pad_bins: np.ndarray

    def __post_init__(self):
        shifts = np.asarray(self.shifts, dtype=np.int64)
        pads = np.asarray(self.pad_bins, dtype=np.int64)
        if shifts.shape != pads.shape or shifts.ndim != 1:
            raise ValueError("shifts and pad_bins must be 1-D and of equal length")
        if np.any(pads < 0):
            raise ValueError("pad_bins must be non-negative")
        if self.active_bins < 1:
            raise ValueError("active_bins must be positive")
        object.__setattr__(self, "shifts", shifts)
        object.__setattr__(self, "pad_bins", pads)

    @property
    def num_cycles(self):
        return int(self.shifts.size)

    def cycle_starts(self, dead_bins):
        """Absolute bin index at which each cycle's window opens.

        The first window opens at its own shift, so a schedule whose first
        shift is not 0 begins with that many idle bins.
        """
        if self.num_cycles == 0:
            return np.zeros(0, dtype=np.int64)
        lengths = self.active_bins + dead_bins + self.pad_bins
        return (self.shifts[0] + np.concatenate(([0], np.cumsum(lengths)[:-1]))).astype(np.int64)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["cycle", "shift", "pad_bins"])
        for l, (s, e) in enumerate(zip(self.shifts, self.pad_bins), start=1):
            writer.writerow([l, int(s), int(e)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, active_bins):
        rows = list(csv.DictReader(io.StringIO(text)))
        shifts = [int(row["shift"]) for row in rows]
        pads = [int(row["pad_bins"]) for row in rows]
        return cls(np.array(shifts, dtype=np.int64), active_bins, np.array(pads, dtype=np.int64))


def schedule_cost(sch: ShiftSchedule, dead_bins: int) -> int:
    """Total acquisition time used by the schedule, in bins (including any initial idle bins)."""
    if sch.num_cycles == 0:
        return 0
    return int(sch.shifts[0] + sch.num_cycles * (sch.active_bins + dead_bins) + sch.pad_bins.sum())


def synchronous_schedule(cfg: AcquisitionConfig) -> ShiftSchedule:
    B, n_d = cfg.num_bins, cfg.dead_bins
    if cfg.total_bins < B + n_d:
        raise BudgetError(f"{cfg.total_bins} bins cannot hold one {B + n_d}-bin cycle")
    L = cfg.total_bins // (B + n_d)
    zeros = np.zeros(L, dtype=np.int64)
    return ShiftSchedule(zeros, B, zeros.copy())


def _realizing_pads(shifts, active_bins, dead_bins, num_bins):
    # padding after cycle l so that cycle l+1 opens at its prescribed shift
    pads = np.zeros_like(shifts)
    if shifts.size > 1:
        pads[:-1] = (shifts[1:] - shifts[:-1] - active_bins - dead_bins) % num_bins
    return pads


def uniform_shift_schedule(num_bins, num_cycles, active_bins, dead_bins=0,
                           shuffle_seed=None) -> ShiftSchedule:
    """Shifts ``floor(k B / L)`` for ``k = 0..L-1``.

    The order is ascending unless ``shuffle_seed`` is given, in which case a
    seeded permutation (rotated to start at shift 0) is used.  Padding
    realizes the listed order exactly and is not optimized; see
    :func:`coprime_mismatch_schedule` for a cheap one.
    """
    if num_cycles < 1:
        raise ValueError("num_cycles must be at least 1")
    k = np.arange(num_cycles, dtype=np.int64)
    shifts = (k * num_bins) // num_cycles
    if shuffle_seed is not None:
        shifts = np.random.default_rng(shuffle_seed).permutation(shifts)
        shifts = np.roll(shifts, -int(np.argmin(shifts)))  # start on shift 0, no idle lead-in
    pads = _realizing_pads(shifts, active_bins, dead_bins, num_bins)
    return ShiftSchedule(shifts, active_bins, pads)


def _mismatch_order(num_cycles, step):
    """Interval index visited by each cycle when stepping ``step`` intervals at a time.

    When ``step`` and ``num_cycles`` share a factor ``g`` the walk closes after
    ``num_cycles / g`` cycles; each such group is offset by its group number.
    """
    L = num_cycles
    step %= L
    g = math.gcd(step, L)
    group_len = L // g
    t = np.arange(L, dtype=np.int64)
    return ((t % group_len) * step + t // group_len) % L


def coprime_mismatch_schedule(num_bins, active_bins, dead_bins, total_bins) -> ShiftSchedule:
    """Uniform shifts realized by lengthening each cycle slightly past ``m + n_d``.

    The nominal cycle ``m + n_d`` is rounded up to a whole number of
    ``B / L`` intervals; the resulting walk over the ``L`` interval starts is
    made a permutation by offsetting groups when the step is not coprime with
    ``L``.  ``L`` starts at ``floor(N / (m + n_d))`` and is reduced until the
    padded schedule fits in ``total_bins``.
    """
    B, m, n_d = num_bins, active_bins, dead_bins
    base = m + n_d
    if total_bins < base:
        raise BudgetError(f"{total_bins} bins cannot hold one {base}-bin cycle")
    L = total_bins // base
    while L >= 1:
        step = -(-base * L // B)  # ceil((m + n_d) L / B)
        k = _mismatch_order(L, step)
        shifts = (k * B) // L
        sch = ShiftSchedule(shifts, m, _realizing_pads(shifts, m, n_d, B))
        if schedule_cost(sch, n_d) <= total_bins:
            return sch
        L -= 1
    raise BudgetError("no schedule fits the budget")  # pragma: no cover


def schedule_for(cfg: AcquisitionConfig) -> ShiftSchedule:
    """Default schedule for a gated config."""
    if cfg.mode is Mode.SYNCHRONOUS:
        return synchronous_schedule(cfg)
    if cfg.mode is Mode.UNIFORM_SHIFT:
        return coprime_mismatch_schedule(cfg.num_bins, cfg.active_bins, cfg.dead_bins, cfg.total_bins)
    raise ValueError("photon-driven acquisition has no predefined schedule")
