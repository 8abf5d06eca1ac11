"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration, 3 I/O error (including
malformed input files), 4 nothing to estimate from.
"""
from __future__ import annotations

import argparse
import sys

from .acquisition import derive_rng, simulate
from .design import design_point
from .errors import EstimationError, StreamFormatError
from .harness import (ConfigError, SceneSpec, SweepSpec, _as_float, _as_int, _scalar, _split,
                      analyze_stream, build_config, grid_to_csv, load_config, oracle_table,
                      read_grid_csv, rows_to_csv, run_scene, run_sweep, sweep_to_csv)
from .model import PixelFlux
from .schedule import ShiftSchedule

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ESTIMATION = 4

OPTIMIZE_COLUMNS = ("phi_bkg", "t_d_bins", "m_opt", "xi", "upsilon_opt")


def _emit(text, path):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _float_list(text):
    try:
        return [float(v) for v in _split(text)]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def cmd_sweep(args):
    params = load_config(args.config)
    spec = SweepSpec.from_params(params, trials=args.trials, seed=args.seed, mode=args.mode,
                                 timing=args.timing)
    _emit(sweep_to_csv(run_sweep(spec), timing=args.timing), args.out)


def cmd_scene(args):
    params = load_config(args.config)
    cfg = build_config(params)
    seed = args.seed if args.seed is not None else _scalar(params, "seed", _as_int, 0)
    spec = SceneSpec(
        depth_map=read_grid_csv(_read(args.depth)),
        reflectivity_map=read_grid_csv(_read(args.reflectivity)),
        phi_sig=_scalar(params, "phi_sig", _as_float),
        phi_bkg=_scalar(params, "phi_bkg", _as_float),
        config=cfg,
        seed=seed,
    )
    result = run_scene(spec)
    _emit(grid_to_csv(result.depth_estimate), args.out)
    if args.report:
        _emit(result.report_json(), args.report)


def cmd_optimize(args):
    bkg = _float_list(args.phi_bkg)
    dead = [_as_int("td-bins", v) for v in _split(args.td_bins)]
    sig = _float_list(args.phi_sig) if args.phi_sig else [None]
    if any(b < 0 for b in bkg) or any(d < 0 for d in dead):
        raise ConfigError("flux and dead time must be non-negative")
    columns = OPTIMIZE_COLUMNS + (("phi_sig",) if args.phi_sig else ())
    rows = []
    for s in sig:
        for b in bkg:
            for d in dead:
                dp = design_point(1.0 if s is None else s, b, d, args.bins, args.total_bins)
                row = {"phi_bkg": b, "t_d_bins": d, "m_opt": dp.m_opt, "xi": dp.xi,
                       "upsilon_opt": dp.upsilon_opt}
                if s is not None:
                    row["phi_sig"] = s
                rows.append(row)
    _emit(rows_to_csv(rows, columns), args.out)


def _flux_from(params, cfg, rng=None):
    signal = _scalar(params, "phi_sig", _as_float)
    background = _scalar(params, "phi_bkg", _as_float)
    if "true_bin" in params:
        tau = _scalar(params, "true_bin", _as_int)
    elif rng is not None:
        tau = int(rng.integers(1, cfg.num_bins + 1))
    else:
        raise ConfigError("missing required key 'true_bin'")
    return PixelFlux(signal, background, tau)


def cmd_oracle(args):
    params = load_config(args.config)
    params["num_bins"] = str(args.B)
    params.setdefault("total_bins", str(args.L * (args.B + int(float(params.get("dead_bins", 0))))))
    cfg = build_config(params)
    _emit(oracle_table(cfg, _flux_from(params, cfg), args.L), args.out)


def cmd_simulate(args):
    params = load_config(args.config)
    cfg = build_config(params)
    seed = args.seed if args.seed is not None else _scalar(params, "seed", _as_int, 0)
    rng = derive_rng(seed, 0, 0)
    flux = _flux_from(params, cfg, rng)
    _emit(simulate(cfg, flux, rng).to_csv(), args.out)


def cmd_analyze(args):
    params = load_config(args.config)
    cfg = build_config(params)
    schedule = None
    if args.schedule:
        schedule = ShiftSchedule.from_csv(_read(args.schedule), cfg.active_bins)
    est = analyze_stream(args.stream, cfg, schedule)
    _emit(est.to_json(), args.out)


def build_parser():
    parser = argparse.ArgumentParser(prog="asyncspad",
                                     description="SPAD time-of-flight acquisition simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="Monte Carlo RMSE over a parameter grid")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=["sync", "uniform", "photon"])
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--timing", action="store_true", help="add a per-trial runtime column")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("scene", help="reconstruct a synthetic depth map")
    p.add_argument("--depth", required=True)
    p.add_argument("--reflectivity", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_scene)

    p = sub.add_parser("optimize", help="optimal active time and attenuation")
    p.add_argument("--phi-bkg", required=True)
    p.add_argument("--td-bins", required=True)
    p.add_argument("--phi-sig")
    p.add_argument("--bins", type=int, default=1000)
    p.add_argument("--total-bins", type=int, default=25_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("oracle", help="exact histogram distribution of a small instance")
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("simulate", help="write one simulated timestamp stream")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="depth estimate from a timestamp CSV")
    p.add_argument("--stream", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--schedule", help="shift schedule CSV (default: the config's schedule)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (OSError, StreamFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
