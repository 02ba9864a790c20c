"""Command line entry point.

    renormlab <kind> CONFIG [--out DIR] [--workers N] [--budget X] [--dry-run]
    renormlab run CONFIG_OR_MANIFEST ...
    renormlab report MANIFEST... [--out DIR]

Exit codes: 0 ok, 1 an in-run assertion failed, 2 usage, config or budget error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .. import __version__
from ..kernels import BudgetError
from .config import KINDS, ConfigError, ExperimentConfig, load_config
from .experiments import RUNNERS, estimate_cost
from .manifest import MANIFEST_NAME, IntegrityError, Manifest, write_tables
from .report import plain_table, write_report

EXIT_OK, EXIT_ASSERT, EXIT_USAGE = 0, 1, 2

SEED_PARTITION = {
    "environment": "(seed, stream, index) with stream 1 paths-env, 20 pi, 41 controls, 42 compare, 50 sweep, 70 time-average",
    "noise": "(seed, stream, index) with stream 2 alpha paths, 10/11/12 path statistics, 40 fields, 51 bootstrap, 60 time-average paths",
}


def run_experiment(
    cfg: ExperimentConfig, out_dir: Path, workers: int = 1, budget: float | None = None, dry_run: bool = False
) -> tuple[Manifest | None, dict]:
    """Validate, check the budget, run and write CSVs plus the manifest."""
    ceiling = cfg.budget if budget is None else float(budget)
    cost = estimate_cost(cfg)
    total = sum(cost.values())
    if total > ceiling:
        raise BudgetError(f"estimated work {total:.3g} exceeds the ceiling {ceiling:.3g} ({cost})")
    if dry_run:
        return None, cost
    t0 = time.perf_counter()
    outcome = RUNNERS[cfg.kind](cfg, workers)
    wall = time.perf_counter() - t0
    digest = cfg.hash()
    tables = {name: [r | {"config_hash": digest} for r in rows] for name, rows in outcome.tables.items()}
    files = write_tables(out_dir, tables)
    man = Manifest(
        config=cfg.data,
        config_hash=digest,
        artifact_version=__version__,
        kind=cfg.kind,
        seed=cfg.seed,
        wall_clock_seconds=wall,
        step_counts=outcome.steps or cost,
        assertions={k: bool(v) for k, v in outcome.assertions.items()},
        files=files,
        seed_partition=SEED_PARTITION,
    )
    (out_dir / MANIFEST_NAME).write_text(man.to_json(), encoding="utf-8")
    return man, cost


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="TOML or JSON config, or a manifest to rerun")
    p.add_argument("--out", help="output directory (default: experiment.output)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--budget", type=float, help="work ceiling; overrides experiment.budget")
    p.add_argument("--dry-run", action="store_true", help="validate and estimate cost only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="renormlab", description=__doc__.splitlines()[0] if __doc__ else None)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("run", help="run the experiment named in the config"))
    for kind in KINDS:
        _add_run_flags(sub.add_parser(kind, help=f"run a {kind} config"))
    rep = sub.add_parser("report", help="merge manifests into a summary")
    rep.add_argument("manifests", nargs="+")
    rep.add_argument("--out", help="directory for summary.csv and summary.txt")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if args.command == "report":
        try:
            if args.out:
                rows = write_report(args.manifests, args.out)
            else:
                from .report import summarize

                rows = summarize(args.manifests)
        except IntegrityError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_ASSERT
        sys.stdout.write(plain_table(rows))
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.command != "run" and args.command != cfg.kind:
            raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
        out = args.out or cfg.output
        if out is None and not args.dry_run:
            raise ConfigError("missing required field 'experiment.output' (or pass --out)")
        man, cost = run_experiment(cfg, Path(out) if out else Path("."), args.workers, args.budget, args.dry_run)
    except (ConfigError, BudgetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if man is None:
        print("dry run: " + ", ".join(f"{k}={v:.3g}" for k, v in cost.items()))
        return EXIT_OK
    failed = [k for k, v in man.assertions.items() if not v]
    for f in man.files:
        print(f"{f.name}: {f.rows} rows")
    if failed:
        print("assertion failures: " + ", ".join(failed), file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
