"""
Command line entry point.

    python -m nikodym.cli run --preset theorem1-scaling --d 2 --deltas 2^-3..2^-7
    python -m nikodym.cli run --config sweep.toml --workers 8
    python -m nikodym.cli presets [filter]
    python -m nikodym.cli serve --port 8000
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .config import settings
from .errors import ConfigurationError, NikodymError
from .logging_setup import configure_logging
from .services.presets import list_presets
from .services.runner import EXIT_CONFIG, EXIT_FAILED, build_config, parse_scales, read_config_file, run

logger = logging.getLogger(__name__)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nikodym", description="Nikodym maximal function experiments")
    parser.add_argument("--log-level", default=None, help="overrides LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a preset or a TOML config")
    p_run.add_argument("--preset", help="experiment name (see `presets`)")
    p_run.add_argument("--config", help="TOML file with [run], [grid] and [options] sections")
    p_run.add_argument("--curve", help="curve registry key, e.g. circle2d, moment, helix")
    p_run.add_argument("--d", type=int, help="ambient dimension")
    p_run.add_argument("--delta", help="single delta, e.g. 2^-7 or 0.0078125")
    p_run.add_argument("--deltas", help="delta grid: 2^-3..2^-7 or a comma list")
    p_run.add_argument("--lambda", dest="lam", help="lambda value(s): 256, 2^4..2^12 or a comma list")
    p_run.add_argument("--N", type=int, help="decomposition depth")
    p_run.add_argument("--p", type=float)
    p_run.add_argument("--q", type=float)
    p_run.add_argument("--seed", type=int, help="single seed (default 0)")
    p_run.add_argument("--out", help=f"results directory (default {settings.RESULTS_DIR})")
    p_run.add_argument("--workers", type=int, help="worker threads; 0 = number of cores")
    p_run.add_argument("--slack", type=float, help="slack on fitted exponents")

    p_list = sub.add_parser("presets", help="list experiments")
    p_list.add_argument("filter", nargs="?", default=None)

    p_serve = sub.add_parser("serve", help="start the read-only results browser")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    deltas = None
    if args.deltas:
        deltas = parse_scales(args.deltas)
    elif args.delta:
        deltas = parse_scales(args.delta)
    return {
        "experiment": args.preset,
        "curve": args.curve,
        "d": args.d,
        "delta_grid": deltas,
        "lambda_grid": parse_scales(args.lam) if args.lam else None,
        "N": args.N,
        "p": args.p,
        "q": args.q,
        "seeds": [args.seed] if args.seed is not None else None,
        "output_dir": args.out,
        "workers": args.workers,
        "slack": args.slack,
    }


def cmd_run(args: argparse.Namespace) -> int:
    try:
        file_data, text = read_config_file(args.config) if args.config else ({}, None)
        overrides = _overrides(args)
        if args.out is None and "output_dir" not in file_data:
            overrides["output_dir"] = settings.RESULTS_DIR
        cfg = build_config(file_data, overrides, text)
    except ConfigurationError as exc:
        where = f"{args.config}:{exc.line}: " if args.config and exc.line else ""
        print(f"configuration error: {where}{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        result = run(cfg)
    except NikodymError as exc:
        logger.error("%s aborted: %s", cfg.experiment, exc)
        return EXIT_FAILED
    verdict = "passed" if result.report.passed else "FAILED"
    if result.report.failed_stage:
        verdict += f" at stage '{result.report.failed_stage}'"
    print(f"{cfg.experiment}: {verdict} -> {result.path}")
    return result.status


def cmd_presets(args: argparse.Namespace) -> int:
    items = list_presets(args.filter)
    width = max((len(p.name) for p in items), default=4)
    for p in items:
        print(f"{p.name:<{width}}  {p.runtime_class:<8}  {p.description}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("nikodym.main:app", host=args.host, port=args.port)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    configure_logging(args.log_level)
    handler = {"run": cmd_run, "presets": cmd_presets, "serve": cmd_serve}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
