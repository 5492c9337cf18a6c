"""
Pipeline command: the full run, or a re-run from a previous run record.
"""

import argparse
import logging

from dgqa.commands.common import load_config, open_run
from dgqa.config import config_from_dict
from dgqa.services.audit_service import load_run_record
from dgqa.services.experiment_service import run_pipeline

logger = logging.getLogger(__name__)


def cmd_pipeline(args: argparse.Namespace) -> None:
    if args.from_run is not None:
        raw = dict(load_run_record(args.from_run)["config"])
        if args.out is not None:
            raw["output_dir"] = str(args.out)
        if args.seed is not None:
            raw["seed"] = args.seed
        config = config_from_dict(raw, source=str(args.from_run))
        logger.info(f"Re-running from {args.from_run}")
    else:
        config = load_config(args)

    with open_run(config, "pipeline") as audit:
        summary = run_pipeline(config, audit, max_workers=args.workers)

    print(f"✅ Pipeline finished in {audit.layout.root}")
    for name, info in sorted(summary["targets"].items()):
        results = info.get("results")
        if not results:
            print(f"   {name}: N.o.S. = {len(info['selected'])} (not evaluated: no labels)")
            continue
        cells = []
        for setting, res in results.items():
            median = res.get("median")
            cells.append(f"{setting} SRCC={median['srcc']:.4f}" if median else f"{setting} SRCC=n/a")
        print(f"   {name}: N.o.S. = {info['n_selected']}, " + ", ".join(cells))


def register(subparsers, parent: argparse.ArgumentParser) -> None:
    pipeline = subparsers.add_parser("pipeline", parents=[parent], help="Run the full DGQA pipeline")
    pipeline.add_argument("--from-run", type=str, default=None,
                          help="run.json (or its directory) whose stored config is re-executed")
    pipeline.add_argument("--workers", type=int, default=1, help="Threads for synthesis and distance probes")
    pipeline.set_defaults(handler=cmd_pipeline)
