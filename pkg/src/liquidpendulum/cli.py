"""Command-line interface.

Exit codes: 0 ok, 2 configuration error, 3 solver failure, 4 negative
verdict (for CI use).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import artifacts, experiment
from .config import ConfigError, ExperimentConfig, resolve, scenario_names, schema_text
from .dynamics import SolverError
from .spectral import SpectralError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERDICT = 0, 2, 3, 4

log = logging.getLogger("liquidpendulum")


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = resolve(args.config)
    if args.seed is not None:
        cfg = cfg.with_value("initial.seed", args.seed)
    return cfg


def _out(args, cfg: ExperimentConfig | None) -> Path:
    if args.out:
        return Path(args.out)
    base = Path(cfg["output"]["directory"]) if cfg else Path("runs")
    return base / (cfg["scenario"]["name"] if cfg else "run")


def _print(payload: dict):
    print(json.dumps(artifacts._jsonable(payload), indent=2))


def cmd_simulate(args) -> int:
    cfg = _load(args)
    res = experiment.run_simulate(cfg, _out(args, cfg))
    _print({"status": res.status, "out": str(res.out), "files": sorted(p.name for p in res.files.values())})
    return EXIT_OK


def cmd_spectrum(args) -> int:
    cfg = _load(args)
    res = experiment.run_spectrum(cfg, _out(args, cfg))
    r = res.spectrum
    _print(
        {
            "kernel_dim": r.kernel_dim,
            "h2_angle": r.h2_angle,
            "imag_axis_gap": r.imag_axis_gap,
            "gamma_gap": r.gamma_gap,
            "unstable_count": r.unstable_count,
            "method": r.method,
            "out": str(res.out),
        }
    )
    return EXIT_OK


def _run_dir(args) -> Path:
    if args.run:
        return Path(args.run)
    if args.config:
        cfg = _load(args)
        return experiment.run_simulate(cfg, _out(args, cfg)).out
    raise ConfigError("give --run DIR or --config PATH")


def cmd_fit(args) -> int:
    report = experiment.run_fit(_run_dir(args))
    _print(report)
    return EXIT_OK if report["passed"] else EXIT_VERDICT


def cmd_audit(args) -> int:
    report = experiment.run_audit(_run_dir(args))
    _print(report)
    return EXIT_OK if report["passed"] else EXIT_VERDICT


def cmd_toy(args) -> int:
    cfg = _load(args)
    report = experiment.run_toy(cfg, _out(args, cfg))
    summary = {"preset": report["preset"], "passed": report["passed"]}
    if "refused" in report:
        summary["refused"] = report["refused"]
    _print(summary)
    return EXIT_OK if report["passed"] else EXIT_VERDICT


def cmd_compare(args) -> int:
    cols = args.columns.split(",") if args.columns else None
    report = experiment.compare(args.run_a, args.run_b, cols, args.tol)
    _print(report)
    return EXIT_OK if report["passed"] else EXIT_VERDICT


def cmd_sweep(args) -> int:
    cfg = _load(args)
    rows = experiment.sweep(cfg, _out(args, cfg), threads=args.threads)
    _print({"rows": rows})
    return EXIT_OK


def cmd_scenarios(args) -> int:
    print("\n".join(scenario_names()))
    return EXIT_OK


def cmd_schema(args) -> int:
    sys.stdout.write(schema_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file or shipped scenario name")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override [initial] seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweep")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="liquidpendulum", description="Liquid-filled pendulum laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run a scenario and write all artifacts").set_defaults(func=cmd_simulate)
    sub.add_parser("spectrum", parents=[common], help="spectrum of the linearisation").set_defaults(func=cmd_spectrum)
    for name, func, help_ in (("fit", cmd_fit, "decay fits of a run"), ("audit", cmd_audit, "energy audit of a run")):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("--run", help="existing run directory")
        sp.set_defaults(func=func)
    sub.add_parser("toy", parents=[common], help="finite-dimensional preset verdict").set_defaults(func=cmd_toy)
    sp = sub.add_parser("compare", parents=[common], help="column-wise comparison of two runs")
    sp.add_argument("run_a")
    sp.add_argument("run_b")
    sp.add_argument("--columns", help="comma-separated column names")
    sp.add_argument("--tol", type=float, default=0.0)
    sp.set_defaults(func=cmd_compare)
    sub.add_parser("sweep", parents=[common], help="parameter sweep").set_defaults(func=cmd_sweep)
    sub.add_parser("scenarios", help="list shipped scenarios").set_defaults(func=cmd_scenarios)
    sub.add_parser("schema", help="print the config schema").set_defaults(func=cmd_schema)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, artifacts.SchemaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SpectralError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
