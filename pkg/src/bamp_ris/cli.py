"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
invocation.  Progress goes to stderr so that ``sweep`` output on stdout stays
plain CSV.
"""
from __future__ import annotations

import argparse
from dataclasses import fields, replace
import os
import sys

from . import storage
from .baseline import run_baseline
from .errors import ConfigError, FormatError
from .harness import (ALGORITHMS, SCALES, WORKERS_ENV, ExperimentSpec, ResultTable, align_estimates,
                      iter_presets, preset, run_experiment)
from .inference import BampConfig, nmse_db, run_bamp
from .scene import make_scene

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _log(args, msg: str):
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr, flush=True)


def _check_out(args):
    if args.out and os.path.exists(args.out) and not args.force:
        raise _Fail(EXIT_CONFIG, f"{args.out} exists; pass --force to overwrite")


def _bamp_config(path) -> BampConfig:
    if path is None:
        return BampConfig()
    d = storage.read_yaml(path)
    missing = sorted({f.name for f in fields(BampConfig)} - set(d))
    if missing:
        raise ConfigError(f"{path}: missing field(s): {', '.join(missing)}")
    try:
        return BampConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def cmd_gen_scene(args) -> int:
    if args.config is None:
        raise _Fail(EXIT_CONFIG, "gen-scene needs --config")
    if args.out is None:
        raise _Fail(EXIT_CONFIG, "gen-scene needs --out")
    try:
        cfg = storage.scene_config(storage.read_yaml(args.config))
    except ConfigError as exc:
        raise ConfigError(f"{args.config}: {exc}") from exc
    _check_out(args)
    seed = cfg["seed"] if args.seed is None else args.seed
    scene = make_scene(cfg["dims"], cfg["priors"], cfg["ris_bits"], cfg["snr_db"], seed)
    storage.save_scene(scene, args.out, force=args.force)
    _log(args, f"wrote scene {args.out} (seed {seed})")
    return EXIT_OK


def cmd_run(args) -> int:
    if args.algorithm not in ALGORITHMS:
        raise _Fail(EXIT_CONFIG, f"unknown algorithm {args.algorithm!r}; valid: {', '.join(ALGORITHMS)}")
    config = _bamp_config(args.config)
    _check_out(args)
    scene = storage.load_scene(args.scene)
    call = run_bamp if args.algorithm == "bamp" else run_baseline
    report = call(scene.y, scene.ris, scene.pilots, scene.anchors, scene.priors, config, scene.noise_var)
    al = align_estimates(report.h_b_hat, report.h_r_hat, scene.anchors, report.x_hat, scene.pilots)
    nmse = {"x": nmse_db(al.x, scene.x), "h_b": nmse_db(al.h_b, scene.h_b), "h_r": nmse_db(al.h_r, scene.h_r)}
    if args.out:
        storage.atomic_write(args.out, storage.report_to_json(args.algorithm, report, nmse,
                                                              {"config": config.to_dict(), "scene_seed": scene.seed}),
                             force=args.force)
    print(f"algo={args.algorithm} nmse_x={nmse['x']:.2f} nmse_hb={nmse['h_b']:.2f} "
          f"nmse_hr={nmse['h_r']:.2f} iters={report.iterations}")
    return EXIT_OK


def _sweep_spec(args) -> ExperimentSpec:
    if (args.preset is None) == (args.config is None):
        raise _Fail(EXIT_CONFIG, "sweep needs exactly one of a preset name or --config")
    if args.preset is not None:
        spec = preset(args.preset, args.scale)
    else:
        try:
            spec = ExperimentSpec.from_dict(storage.read_yaml(args.config))
        except ConfigError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
    if args.trials is not None:
        spec = replace(spec, trials=args.trials)
    if args.seed is not None:
        spec = replace(spec, base_seed=args.seed)
    return spec


def cmd_sweep(args) -> int:
    spec = _sweep_spec(args)
    _check_out(args)
    table = ResultTable(averaging=spec.averaging)
    _log(args, f"sweep {spec.name}: {spec.trials} trials x {len(spec.snr_grid)} SNR points")

    def progress(done, total):
        if done == total or done % max(1, total // 20) == 0:
            _log(args, f"  {done}/{total} tasks")

    def emit(text: str):
        if args.out:
            storage.atomic_write(args.out, text, force=True)
        else:
            sys.stdout.write(text)
            sys.stdout.flush()

    try:
        run_experiment(spec, workers=args.workers, progress=progress, into=table)
    except KeyboardInterrupt:
        emit(table.to_csv() + "# incomplete\n")
        _log(args, "interrupted; partial results written")
        return EXIT_RUNTIME
    emit(table.to_csv())
    return EXIT_OK


def cmd_presets(args) -> int:
    for spec in iter_presets():
        d = spec.dims
        sweep = f" {spec.sweep_param}={list(spec.sweep_values)}" if spec.sweep_param else ""
        print(f"{spec.name}: M={d.m} K={d.k} N={d.n} T={d.t} T_p={d.t_pilot} K_p={d.k_anchor} "
              f"trials={spec.trials}{sweep}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bamp-ris", description="RIS cascaded-channel and signal estimation")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--force", action="store_true", help="overwrite an existing output file")
        sp.add_argument("--quiet", action="store_true", help="suppress progress on stderr")

    g = sub.add_parser("gen-scene", help="draw one scene and store it")
    common(g, "scene file to write")
    g.add_argument("--seed", type=int, help="override the config seed")
    g.set_defaults(func=cmd_gen_scene)

    r = sub.add_parser("run", help="run one estimator on a stored scene")
    r.add_argument("scene", help="scene file")
    r.add_argument("--algorithm", default="bamp", help=f"one of {', '.join(ALGORITHMS)}")
    common(r, "JSON report to write")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="Monte Carlo NMSE sweep (preset or config)")
    s.add_argument("preset", nargs="?", help="preset name, e.g. fig3")
    s.add_argument("--scale", choices=SCALES, default="desk")
    s.add_argument("--trials", type=int, help="override the number of trials")
    s.add_argument("--seed", type=int, help="override base_seed")
    s.add_argument("--workers", type=int, help=f"worker processes (default: ${WORKERS_ENV} or 1)")
    common(s, "CSV file to write (default: stdout)")
    s.set_defaults(func=cmd_sweep)

    ps = sub.add_parser("presets", help="list preset sweeps")
    ps.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError, ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
