"""
DGQA command-line entry point.

Subcommands: refs, synth, train-domain, select, train-iqa, pipeline, gds, report.
Exit code 0 on success, 2 for dgqa errors, 1 for anything unexpected; errors
are printed to stderr tagged with the failing stage.
"""

import argparse
import logging
import sys
from typing import Optional, Sequence

from dgqa import __version__
from dgqa.commands import COMMAND_MODULES
from dgqa.commands.common import common_parent
from dgqa.config import configure_logging
from dgqa.errors import DGQAError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgqa", description="Distortion-guided domain selection for BIQA")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    parent = common_parent()
    for module in COMMAND_MODULES:
        module.register(subparsers, parent)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        args.handler(args)
        return 0
    except DGQAError as e:
        logger.debug("dgqa error", exc_info=True)
        print(f"[{e.stage or args.command}] {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.error(f"Unexpected failure in {args.command}: {e}", exc_info=True)
        print(f"[{args.command}] unexpected error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
