"""
Report command: markdown/JSON report of a finished run.
"""

import argparse
import logging
from pathlib import Path

from dgqa.commands.common import load_config
from dgqa.services.report_service import write_report
from dgqa.storage import RunLayout

logger = logging.getLogger(__name__)


def cmd_report(args: argparse.Namespace) -> None:
    if args.out is not None:
        root = Path(args.out)
    else:
        root = Path(load_config(args).output_dir)
    written = write_report(RunLayout(root), chart=args.chart)
    for path in written:
        print(f"📄 {path}")


def register(subparsers, parent: argparse.ArgumentParser) -> None:
    report = subparsers.add_parser("report", parents=[parent], help="Render the report of a run directory")
    report.add_argument("--chart", action="store_true", help="Also write a plotly similarity chart")
    report.set_defaults(handler=cmd_report)
