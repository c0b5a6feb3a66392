"""Command-line entry point.

Exit status is 0 on success, 2 for configuration problems (including
violated theorem preconditions) and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import (
    ConfigError,
    DegenerateNormalizerError,
    DivergenceError,
    InvalidArgument,
    NumericOverflowError,
    PreconditionError,
    ReduceStepError,
    StepTooLargeError,
)
from ..report import rows_to_csv
from .config import AnalyticConfig, ExperimentConfig, load_file, load_preset, preset_names
from .runner import compare_methods, run_analytic, write_report

log = logging.getLogger("brwp")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (
    NumericOverflowError,
    DegenerateNormalizerError,
    StepTooLargeError,
    ReduceStepError,
    DivergenceError,
    FloatingPointError,
)


def _apply_overrides(configs, args):
    out = []
    for cfg in configs:
        if isinstance(cfg, ExperimentConfig):
            changes = {}
            if args.seed is not None:
                changes["seed"] = args.seed
            if args.snapshot_stride is not None:
                changes["snapshot_stride"] = args.snapshot_stride
            cfg = replace(cfg, **changes) if changes else cfg
        out.append(cfg)
    return out


def _describe(report):
    s = report.summary
    parts = [f"run {report.run_id}"]
    for key in ("iterations_completed", "diverged", "final_eps1", "final_eps2", "final_oracle_tv", "t_mix", "c"):
        if key in s:
            parts.append(f"{key}={s[key]}")
    parts.append(f"{report.wall_clock:.2f}s")
    return " ".join(parts)


def execute(configs, out_dir, threads):
    """Run analytic configs one by one and particle configs as one paired comparison per name."""
    out_dir = Path(out_dir)
    particle = [c for c in configs if isinstance(c, ExperimentConfig)]
    for cfg in configs:
        if isinstance(cfg, AnalyticConfig):
            report = run_analytic(cfg)
            write_report(report, cfg, out_dir / cfg.name)
            print(f"{cfg.name}: {_describe(report)}")
    groups = {}
    for cfg in particle:
        groups.setdefault(cfg.name, []).append(cfg)
    for name, group in groups.items():
        merged, reports = compare_methods(group, threads)
        for cfg, report in zip(group, reports):
            write_report(report, cfg, out_dir / name / cfg.label)
            print(f"{name}/{cfg.label}: {_describe(report)}")
        if len(group) > 1:
            (out_dir / name).mkdir(parents=True, exist_ok=True)
            (out_dir / name / "compare.csv").write_text(rows_to_csv(merged))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the seed of particle runs")
    common.add_argument("--out-dir", default="brwp-out", help="output directory (default: %(default)s)")
    common.add_argument("--snapshot-stride", type=int, default=None, help="iterations between recorded snapshots")
    common.add_argument("--threads", type=int, default=1, help="worker threads for kernel sums; results do not change")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="brwp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="run a config file (single run or base + variants)")
    p.add_argument("config")
    p = sub.add_parser("preset", parents=[common], help="run a bundled preset; without a name, list them")
    p.add_argument("name", nargs="?")
    p = sub.add_parser("compare", parents=[common], help="run several configs with paired seeds")
    p.add_argument("configs", nargs="+")
    p = sub.add_parser("analytic", parents=[common], help="run an analytic config")
    p.add_argument("config")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        if args.snapshot_stride is not None and args.snapshot_stride < 1:
            raise ConfigError("--snapshot-stride", "must be at least 1")
        if args.command == "preset":
            if args.name is None:
                print("\n".join(preset_names()))
                return EXIT_OK
            configs = load_preset(args.name)
        elif args.command == "compare":
            configs = [c for path in args.configs for c in load_file(path)]
            if any(not isinstance(c, ExperimentConfig) for c in configs):
                raise ConfigError("", "compare accepts particle configs only")
            names = {c.name for c in configs}
            if len(names) > 1:
                configs = [replace(c, name=configs[0].name) for c in configs]
        else:
            configs = load_file(args.config)
            if args.command == "analytic" and any(not isinstance(c, AnalyticConfig) for c in configs):
                raise ConfigError("kind", "the analytic command needs kind: analytic")
        execute(_apply_overrides(configs, args), args.out_dir, args.threads)
    except (ConfigError, PreconditionError, InvalidArgument) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
