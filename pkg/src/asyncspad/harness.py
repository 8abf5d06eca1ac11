"""Batch experiments: parameter sweeps, synthetic scenes and stream analysis.

Configuration files are flat ``key = value`` text with ``#`` comments.
List-valued keys (comma separated) become sweep axes.
"""
from __future__ import annotations

import configparser
import csv
import io
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .acquisition import (TimestampStream, derive_rng, exact_histogram_distribution,
                          read_stream_rows)
from .design import optimal_active_time
from .errors import EstimationError
from .estimator import RmseReport, coates_estimate, histogram_from_stream, modulo_rmse
from .model import AcquisitionConfig, Mode, PixelFlux, depth_bin_from_range
from .pipeline import estimate_once, run_trials
from .schedule import ShiftSchedule, schedule_for, uniform_shift_schedule

DEFAULT_BIN_WIDTH = 100e-12

# sweep axes in nesting order (outermost first)
SWEEP_AXES = ("mode", "total_bins", "active_bins", "attenuation", "phi_bkg", "phi_sig")

SWEEP_COLUMNS = ("point", "mode", "phi_sig", "phi_bkg", "attenuation", "active_bins",
                 "dead_bins", "total_bins", "num_bins", "trials",
                 "rmse_bins", "rmse_relative", "rmse_meters")

_ALIASES = {
    "b": "num_bins",
    "bins": "num_bins",
    "t_d_bins": "dead_bins",
    "td_bins": "dead_bins",
    "m": "active_bins",
    "upsilon": "attenuation",
    "phi_s": "phi_sig",
    "phi_b": "phi_bkg",
    "m_trials": "trials",
    "tau": "true_bin",
}


class ConfigError(ValueError):
    """A configuration file or flag value is missing or malformed."""


def parse_config_text(text) -> dict:
    """Flat ``key = value`` text into a dict of raw string values (keys lower-cased)."""
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                       delimiters=("=",), interpolation=None)
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    out = {}
    for key, value in parser["config"].items():
        key = _ALIASES.get(key.strip().lower(), key.strip().lower())
        out[key] = value.strip()
    return out


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _split(value):
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _as_float(key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def _as_int(key, value):
    try:
        f = float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if f != int(f):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    return int(f)


def _scalar(params, key, kind, default=None):
    if key not in params:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    values = _split(params[key])
    if len(values) != 1:
        raise ConfigError(f"{key}: expected a single value, got {params[key]!r}")
    return kind(key, values[0])


def _bins(params, bins_key, time_key, bin_width, default=None):
    if bins_key in params:
        return params[bins_key]
    if time_key in params:
        vals = [_as_float(time_key, v) for v in _split(params[time_key])]
        return ",".join(str(int(np.floor(v / bin_width + 1e-9))) for v in vals)
    if default is None:
        raise ConfigError(f"missing {bins_key!r} (or {time_key!r})")
    return str(default)


def _normalize(params) -> dict:
    """Resolve time-valued keys into bins so every axis is in one unit."""
    p = dict(params)
    bin_width = _scalar(p, "bin_width", _as_float, DEFAULT_BIN_WIDTH)
    if bin_width <= 0:
        raise ConfigError("bin_width must be positive")
    p["bin_width"] = str(bin_width)
    p["dead_bins"] = _bins(p, "dead_bins", "dead_time", bin_width, default=0)
    p["total_bins"] = _bins(p, "total_bins", "total_time", bin_width)
    return p


def build_config(params, **overrides) -> AcquisitionConfig:
    """AcquisitionConfig from scalar config values (``overrides`` win)."""
    p = _normalize({**params, **{k: str(v) for k, v in overrides.items()}})
    num_bins = _scalar(p, "num_bins", _as_int)
    mode = p.get("mode", "synchronous")
    try:
        mode = Mode.parse(mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    dead_bins = _scalar(p, "dead_bins", _as_int)
    attenuation = _scalar(p, "attenuation", _as_float, 1.0)
    active = p.get("active_bins", str(num_bins)).strip().lower()
    if active in ("opt", "auto"):
        phi_bkg = _scalar(p, "phi_bkg", _as_float) * attenuation
        m = optimal_active_time(phi_bkg, dead_bins, m_max=num_bins) if phi_bkg > 0 else num_bins
    else:
        m = _as_int("active_bins", active)
    try:
        return AcquisitionConfig.in_bins(
            num_bins, dead_bins, _scalar(p, "total_bins", _as_int), active_bins=m, mode=mode,
            attenuation=attenuation, bin_width=float(p["bin_width"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class SweepSpec:
    """Grid of operating points and how many Monte Carlo trials to run at each."""

    base: dict
    axes: dict = field(default_factory=dict)
    trials: int = 100
    seed: int = 0
    fixed_tau: int | None = None
    timing: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        for name, values in self.axes.items():
            if not values:
                raise ConfigError(f"sweep axis {name!r} is empty")

    @classmethod
    def from_params(cls, params, trials=None, seed=None, mode=None, timing=False):
        p = _normalize(params)
        if mode is not None:
            p["mode"] = mode
        axes = {name: _split(p.pop(name)) for name in SWEEP_AXES if name in p}
        for name in ("phi_sig", "phi_bkg"):
            if name not in axes:
                raise ConfigError(f"missing required key {name!r}")
        fixed = p.pop("true_bin", None)
        spec_trials = trials if trials is not None else _scalar(p, "trials", _as_int, 100)
        spec_seed = seed if seed is not None else _scalar(p, "seed", _as_int, 0)
        p.pop("trials", None)
        p.pop("seed", None)
        return cls(base=p, axes=axes, trials=spec_trials, seed=spec_seed,
                   fixed_tau=None if fixed is None else _as_int("true_bin", fixed), timing=timing)

    def points(self):
        names = [n for n in SWEEP_AXES if n in self.axes]
        for combo in itertools.product(*(self.axes[n] for n in names)):
            yield dict(zip(names, combo))


def run_sweep(spec: SweepSpec) -> list[dict]:
    """Modulo RMSE at every grid point; rows follow the axis nesting order."""
    rows = []
    for index, point in enumerate(spec.points()):
        signal = _as_float("phi_sig", point["phi_sig"])
        background = _as_float("phi_bkg", point["phi_bkg"])
        overrides = {k: v for k, v in point.items() if k not in ("phi_sig",)}
        cfg = build_config(spec.base, **overrides)
        res = run_trials(cfg, signal, background, spec.trials, seed=spec.seed,
                         point_index=index, fixed_tau=spec.fixed_tau)
        row = {
            "point": index,
            "mode": cfg.mode.value,
            "phi_sig": signal,
            "phi_bkg": background,
            "attenuation": cfg.attenuation,
            "active_bins": cfg.window_bins,
            "dead_bins": cfg.dead_bins,
            "total_bins": cfg.total_bins,
            "num_bins": cfg.num_bins,
            "trials": spec.trials,
            "rmse_bins": res.report.rmse_bins,
            "rmse_relative": res.report.rmse_relative,
            "rmse_meters": res.report.rmse_meters,
        }
        if spec.timing:
            row["runtime_s"] = res.runtime_s
        rows.append(row)
    return rows


def _fmt(value):
    if isinstance(value, float):
        return repr(float(value))
    return value


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def sweep_to_csv(rows, timing=False) -> str:
    columns = SWEEP_COLUMNS + (("runtime_s",) if timing else ())
    return rows_to_csv(rows, columns)


def read_grid_csv(text) -> np.ndarray:
    """Numeric 2-D grid from headerless CSV text."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(f.strip() for f in r)]
    if not rows:
        raise ConfigError("grid file is empty")
    if len({len(r) for r in rows}) != 1:
        raise ConfigError("grid rows have different lengths")
    try:
        return np.array([[float(f) for f in r] for r in rows])
    except ValueError:
        raise ConfigError("grid file holds a non-numeric entry") from None


def grid_to_csv(grid) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in np.asarray(grid):
        writer.writerow([f"{v:.6g}" for v in row])
    return buf.getvalue()


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """Per-pixel depths (m) and reflectivities sharing one acquisition setup.

    ``phi_sig`` is the signal flux of a pixel of reflectivity 1.
    """

    depth_map: np.ndarray
    reflectivity_map: np.ndarray
    phi_sig: float
    phi_bkg: float
    config: AcquisitionConfig
    seed: int = 0

    def __post_init__(self):
        depth = np.atleast_2d(np.asarray(self.depth_map, dtype=float))
        refl = np.atleast_2d(np.asarray(self.reflectivity_map, dtype=float))
        if depth.shape != refl.shape:
            raise ConfigError(f"depth map {depth.shape} and reflectivity map {refl.shape} differ in shape")
        if np.any(refl <= 0) or np.any(refl > 1):
            raise ConfigError("reflectivities must lie in (0, 1]")
        object.__setattr__(self, "depth_map", depth)
        object.__setattr__(self, "reflectivity_map", refl)


@dataclass(frozen=True, eq=False)
class SceneResult:
    depth_estimate: np.ndarray
    true_bins: np.ndarray
    estimated_bins: np.ndarray
    failed: np.ndarray
    report: RmseReport

    def report_dict(self):
        num_bins_err = np.abs(self.estimated_bins - self.true_bins)
        pixels = []
        rows, cols = self.true_bins.shape
        for i in range(rows):
            for j in range(cols):
                pixels.append({
                    "row": i,
                    "col": j,
                    "tau_true": int(self.true_bins[i, j]),
                    "tau_hat": int(self.estimated_bins[i, j]),
                    "depth_m": float(self.depth_estimate[i, j]),
                    "abs_bin_error": int(num_bins_err[i, j]),
                    "estimated": not bool(self.failed[i, j]),
                })
        return {
            "rows": rows,
            "cols": cols,
            "rmse_bins": self.report.rmse_bins,
            "rmse_relative": self.report.rmse_relative,
            "rmse_meters": self.report.rmse_meters,
            "failed_pixels": int(self.failed.sum()),
            "pixels": pixels,
        }

    def report_json(self):
        return json.dumps(self.report_dict(), indent=2) + "\n"


def run_scene(spec: SceneSpec) -> SceneResult:
    """Reconstruct a depth map pixel by pixel in raster order.

    Pixel ``k`` (raster index) uses random substream ``(seed, k)``.  A pixel
    with nothing to estimate from is reported at bin 1 and flagged.
    """
    cfg = spec.config
    shape = spec.depth_map.shape
    schedule = None if cfg.mode is Mode.PHOTON_DRIVEN else schedule_for(cfg)
    tau = np.empty(shape, dtype=np.int64)
    tau_hat = np.empty(shape, dtype=np.int64)
    depth_hat = np.empty(shape)
    failed = np.zeros(shape, dtype=bool)
    for k, (i, j) in enumerate(np.ndindex(*shape)):
        try:
            tau[i, j] = depth_bin_from_range(spec.depth_map[i, j], cfg.bin_width, cfg.num_bins)
        except ValueError as exc:
            raise ConfigError(f"pixel ({i}, {j}): {exc}") from None
        flux = PixelFlux(spec.phi_sig * spec.reflectivity_map[i, j], spec.phi_bkg, int(tau[i, j]))
        est, _ = estimate_once(cfg, flux, derive_rng(spec.seed, k), schedule)
        if est is None:
            failed[i, j] = True
            tau_hat[i, j] = 1
            depth_hat[i, j] = np.nan
        else:
            tau_hat[i, j] = est.tau_hat
            depth_hat[i, j] = est.depth_m
    report = modulo_rmse(tau_hat.ravel(), tau.ravel(), cfg.num_bins, cfg.bin_width)
    return SceneResult(depth_hat, tau, tau_hat, failed, report)


def stream_from_csv(text, cfg: AcquisitionConfig, schedule: ShiftSchedule | None = None) -> TimestampStream:
    """Rebuild a :class:`TimestampStream` from CSV text for the given acquisition.

    Gated streams are checked against the schedule: at most one detection per
    cycle, no cycle past the last scheduled one, and every detection inside
    its cycle's active window at the matching laser phase.
    """
    cycle, bin_abs, bin_mod = read_stream_rows(text, cfg.num_bins,
                                               check_phase=cfg.mode is not Mode.SYNCHRONOUS)
    n = int(bin_mod.size)
    if cfg.mode is Mode.PHOTON_DRIVEN:
        if n and np.any(np.diff(bin_abs) <= cfg.dead_bins):
            raise ValueError("detections closer than the dead time in a photon-driven stream")
        if n and bin_abs[-1] >= cfg.total_bins:
            raise ValueError("detection beyond the acquisition time")
        return TimestampStream(np.arange(1, n + 1, dtype=np.int64), bin_abs, bin_mod, n, 0, cfg.num_bins)
    if schedule is None:
        schedule = schedule_for(cfg)
    if n and (cycle[-1] > schedule.num_cycles or np.any(np.diff(cycle) == 0)):
        raise ValueError("stream does not match the schedule's cycles")
    if n:
        offset = bin_abs - schedule.cycle_starts(cfg.dead_bins)[cycle - 1]
        phase = (schedule.shifts[cycle - 1] + offset) % cfg.num_bins + 1
        if np.any(offset < 0) or np.any(offset >= schedule.active_bins) or np.any(phase != bin_mod):
            raise ValueError("detection outside its cycle's active window")
    return TimestampStream(cycle, bin_abs, bin_mod, schedule.num_cycles,
                           schedule.num_cycles - n, cfg.num_bins)


def analyze_stream(path, cfg: AcquisitionConfig, schedule: ShiftSchedule | None = None):
    """Depth estimate from a recorded timestamp CSV file."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stream = stream_from_csv(text, cfg, schedule)
    if stream.num_detections == 0:
        raise EstimationError("stream holds no detections")
    if schedule is None and cfg.mode.gated:
        schedule = schedule_for(cfg)
    return coates_estimate(histogram_from_stream(stream, cfg, schedule), cfg.bin_width)


def oracle_schedule(cfg: AcquisitionConfig, num_cycles) -> ShiftSchedule:
    if num_cycles < 1:
        raise ConfigError("need at least one cycle")
    if cfg.mode is Mode.SYNCHRONOUS:
        zeros = np.zeros(num_cycles, dtype=np.int64)
        return ShiftSchedule(zeros, cfg.num_bins, zeros.copy())
    if cfg.mode is Mode.UNIFORM_SHIFT:
        return uniform_shift_schedule(cfg.num_bins, num_cycles, cfg.active_bins, cfg.dead_bins)
    raise ConfigError("the exact distribution is defined for gated modes only")


def oracle_table(cfg: AcquisitionConfig, flux: PixelFlux, num_cycles) -> str:
    """Exact histogram distribution as CSV, one row per count vector in sorted order."""
    sch = oracle_schedule(cfg, num_cycles)
    dist = exact_histogram_distribution(cfg, flux, sch)
    columns = [f"n{i}" for i in range(1, cfg.num_bins + 2)] + ["probability"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for key in sorted(dist, reverse=True):
        writer.writerow(list(key) + [repr(float(dist[key]))])
    return buf.getvalue()
