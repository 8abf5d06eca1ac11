"""Image-formation model for a SPAD time-of-flight pixel.

Bins are 1-based at the public surface (``1..B``), matching the usual
histogram indexing.  Modulo arithmetic on bins maps back into ``[1, B]``;
shifts are 0-based offsets in ``[0, B-1]`` so that the first active bin of a
cycle with shift ``s`` is bin ``s + 1``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError

SPEED_OF_LIGHT = 299_792_458.0  # m/s
PROB_SUM_ATOL = 1e-12


class Mode(str, enum.Enum):
    SYNCHRONOUS = "synchronous"
    UNIFORM_SHIFT = "uniform_shift"
    PHOTON_DRIVEN = "photon_driven"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {
            "sync": cls.SYNCHRONOUS,
            "synchronous": cls.SYNCHRONOUS,
            "uniform": cls.UNIFORM_SHIFT,
            "uniform_shift": cls.UNIFORM_SHIFT,
            "photon": cls.PHOTON_DRIVEN,
            "photon_driven": cls.PHOTON_DRIVEN,
            "free_running": cls.PHOTON_DRIVEN,
        }
        try:
            return aliases[str(value).strip().lower()]
        except KeyError:
            raise ValueError(f"unknown acquisition mode {value!r}") from None

    @property
    def gated(self):
        return self is not Mode.PHOTON_DRIVEN


def _to_bins(duration, bin_width):
    # 10 ns / 100 ps must give 100, not 99
    return int(math.floor(duration / bin_width + 1e-9))


@dataclass(frozen=True)
class AcquisitionConfig:
    """System parameters for one pixel acquisition.

    Times are in seconds; ``dead_bins`` and ``total_bins`` are the same
    quantities expressed in histogram bins.
    """

    num_bins: int
    bin_width: float
    dead_time: float
    active_bins: int
    total_time: float
    mode: Mode = Mode.SYNCHRONOUS
    attenuation: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if int(self.num_bins) != self.num_bins or self.num_bins < 2:
            raise ValueError(f"num_bins must be an integer >= 2, got {self.num_bins}")
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        if self.dead_time < 0:
            raise ValueError("dead_time must be non-negative")
        if int(self.active_bins) != self.active_bins or self.active_bins < 1:
            raise ValueError(f"active_bins must be a positive integer, got {self.active_bins}")
        if not 0 < self.attenuation <= 1:
            raise ValueError(f"attenuation must lie in (0, 1], got {self.attenuation}")
        if self.total_time <= 0:
            raise ValueError("total_time must be positive")
        if self.mode.gated and self.total_bins < self.window_bins + self.dead_bins:
            raise BudgetError(
                f"total time of {self.total_bins} bins cannot hold one cycle of "
                f"{self.window_bins} active + {self.dead_bins} dead bins"
            )

    @classmethod
    def in_bins(cls, num_bins, dead_bins, total_bins, active_bins=None,
                mode=Mode.SYNCHRONOUS, attenuation=1.0, bin_width=100e-12):
        """Build a config from bin counts rather than durations."""
        return cls(
            num_bins=num_bins,
            bin_width=bin_width,
            dead_time=dead_bins * bin_width,
            active_bins=num_bins if active_bins is None else active_bins,
            total_time=total_bins * bin_width,
            mode=mode,
            attenuation=attenuation,
        )

    @property
    def dead_bins(self):
        return _to_bins(self.dead_time, self.bin_width)

    @property
    def total_bins(self):
        return _to_bins(self.total_time, self.bin_width)

    @property
    def window_bins(self):
        """Active bins per gated cycle (synchronous always uses the full period)."""
        return self.num_bins if self.mode is Mode.SYNCHRONOUS else self.active_bins

    @property
    def max_range(self):
        return SPEED_OF_LIGHT * self.num_bins * self.bin_width / 2


@dataclass(frozen=True)
class PixelFlux:
    """Per-bin mean photon counts of the laser return and the ambient level."""

    signal: float
    background: float
    true_bin: int

    def __post_init__(self):
        if self.signal < 0 or self.background < 0:
            raise ValueError("flux levels must be non-negative")
        if not (math.isfinite(self.signal) and math.isfinite(self.background)):
            raise ValueError("flux levels must be finite")

    def signal_to_background(self, num_bins):
        if self.background == 0:
            return math.inf
        return self.signal / (num_bins * self.background)


def make_impulse_waveform(flux: PixelFlux, num_bins: int) -> np.ndarray:
    """Impulse-plus-constant waveform ``r_i = sig * [i == tau] + bkg``."""
    if not 1 <= flux.true_bin <= num_bins:
        raise ValueError(f"true_bin {flux.true_bin} outside [1, {num_bins}]")
    r = np.full(num_bins, float(flux.background))
    r[flux.true_bin - 1] += flux.signal
    return r


def validate_waveform(r, num_bins=None) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.ndim != 1:
        raise ValueError("waveform must be one-dimensional")
    if num_bins is not None and r.size != num_bins:
        raise ValueError(f"waveform has {r.size} bins, expected {num_bins}")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise ValueError("waveform entries must be finite and non-negative")
    return r


def depth_bin_from_range(z, bin_width, num_bins) -> int:
    """1-based histogram bin holding the round trip to distance ``z`` (meters)."""
    z_max = SPEED_OF_LIGHT * num_bins * bin_width / 2
    if not 0 <= z < z_max:
        raise ValueError(f"depth {z} m outside unambiguous range [0, {z_max:.6g})")
    tau = int(math.floor(2 * z / (SPEED_OF_LIGHT * bin_width))) + 1
    return min(tau, num_bins)


def bin_to_depth(tau, bin_width):
    """Distance (meters) at the center of 1-based bin ``tau``."""
    return (np.asarray(tau, dtype=float) - 0.5) * SPEED_OF_LIGHT * bin_width / 2


def incidence_probs(r) -> np.ndarray:
    """Probability of at least one incident photon per bin, ``1 - exp(-r)``."""
    return -np.expm1(-validate_waveform(r))


def preceding_index_set(shift, i, num_bins):
    """Bins visited before bin ``i`` in a cycle whose first active bin is ``shift + 1``.

    >>> preceding_index_set(3, 7, 8)
    [4, 5, 6]
    >>> preceding_index_set(3, 2, 8)
    [4, 5, 6, 7, 8, 1]
    """
    if not 0 <= shift < num_bins:
        raise ValueError(f"shift {shift} outside [0, {num_bins - 1}]")
    if not 1 <= i <= num_bins:
        raise ValueError(f"bin {i} outside [1, {num_bins}]")
    count = (i - shift - 1) % num_bins
    return [(shift + k) % num_bins + 1 for k in range(count)]


def detection_probs(q, shift, active_bins) -> np.ndarray:
    """First-detection probabilities for one gated cycle.

    Returns a vector of length ``B + 1``: entry ``i - 1`` is the chance the
    first detection lands in bin ``i``; the last entry is the chance of no
    detection during the ``active_bins`` window starting at bin ``shift + 1``.
    """
    q = np.asarray(q, dtype=float)
    num_bins = q.size
    if not 1 <= active_bins <= num_bins:
        raise ValueError(f"active_bins must lie in [1, {num_bins}] for the closed form")
    if not 0 <= shift < num_bins:
        raise ValueError(f"shift {shift} outside [0, {num_bins - 1}]")
    order = (shift + np.arange(active_bins)) % num_bins
    q_win = q[order]
    survive = np.concatenate(([1.0], np.cumprod(1.0 - q_win)[:-1]))
    p = np.zeros(num_bins + 1)
    p[order] = q_win * survive
    # summing the pieces keeps the total at 1 to rounding
    p[num_bins] = max(0.0, 1.0 - p[:num_bins].sum())
    return p
