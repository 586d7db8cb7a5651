"""Command line entry point: single runs and parameter sweeps."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .experiment import SWEEP_DIMENSIONS, ConfigError, ExperimentConfig, run, summary_csv, sweep
from .topology import TopologyError

log = logging.getLogger("flowbalance")

_INT_DIMENSIONS = {"table_capacity", "obs_count"}


def _base_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {
        "assignment": args.assignment,
        "table_capacity": args.table_size,
        "cycle_s": args.cycle,
        "seed": args.seed,
        "export": args.export,
        "topology": args.topology,
        "duration_s": args.duration,
    }
    if args.obs_count is not None:
        overrides.update(obs_count=args.obs_count, obs=None)
    cfg = cfg.replace(**{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()


def _write(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")
        log.info("wrote %s", out)


def _parse_values(dimension: str, raw: str) -> list:
    conv = int if dimension in _INT_DIMENSIONS else float
    try:
        return [conv(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values for {dimension} must be comma-separated numbers") from None


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    result = run(cfg)
    _write(result.metrics_csv(), args.out)
    s = result.summary()
    print(" ".join(f"{k}={v}" for k, v in s.items()), file=sys.stderr)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    values = _parse_values(args.dimension, args.values)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    results = sweep(cfg, args.dimension, values, strategies)
    _write(summary_csv(results, args.dimension), args.out)
    return 0


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file with ExperimentConfig keys")
    p.add_argument("--topology", help="bundled name (tree11, tree37, as1755, as4755), tree(d,f) or a file")
    p.add_argument("--assignment", choices=["balanced", "baseline"])
    p.add_argument("--table-size", type=int, help="flow-table capacity per switch")
    p.add_argument("--cycle", type=float, help="ping cycle length in seconds")
    p.add_argument("--obs-count", type=int, help="number of randomly chosen observed switches")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="simulated seconds")
    p.add_argument("--export", help="udp:host[:port], file:path or none")
    p.add_argument("--out", help="output CSV path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowbalance", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one configuration and write the metrics CSV")
    _common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="vary one parameter for both strategies")
    _common(p_sweep)
    p_sweep.add_argument("--dimension", required=True, choices=sorted(SWEEP_DIMENSIONS))
    p_sweep.add_argument("--values", required=True, help="comma-separated values, e.g. 300,600,900")
    p_sweep.add_argument("--strategies", default="balanced,baseline")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TopologyError, ValueError, OSError) as exc:
        print(f"flowbalance: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
