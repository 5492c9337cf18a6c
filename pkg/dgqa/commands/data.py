"""
Data commands: reference corpus synthesis and source/target dataset synthesis.
"""

import argparse
import logging
from pathlib import Path
from typing import List

from dgqa import storage
from dgqa.commands.common import load_config, open_run
from dgqa.constants import SEVERITY_LEVELS
from dgqa.errors import InputValidationError
from dgqa.services.distortion_service import generate_domain
from dgqa.services.experiment_service import run_synth
from dgqa.services.reference_service import synthesize_references

logger = logging.getLogger(__name__)


def parse_levels(text: str) -> List[int]:
    """'1..5', '1,3,5' or '4' -> sorted severity levels"""
    try:
        if ".." in text:
            low, high = (int(part) for part in text.split("..", 1))
            levels = list(range(low, high + 1))
        else:
            levels = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise InputValidationError(f"Cannot parse severity levels {text!r}") from None
    bad = [lv for lv in levels if lv not in SEVERITY_LEVELS]
    if not levels or bad:
        raise InputValidationError(f"Severity levels must lie in 1..5, got {text!r}")
    return sorted(set(levels))


def cmd_refs(args: argparse.Namespace) -> None:
    """Write procedural pristine references as PNG files"""
    out = args.out or Path("references")
    images = synthesize_references(args.n, size=args.size, seed=args.seed or 0)
    paths = storage.save_references(images, out)
    print(f"🖼️  Wrote {len(paths)} references ({args.size}x{args.size}) to {out}")


def _synth_families(args: argparse.Namespace) -> None:
    if args.refs is None or args.out is None:
        raise InputValidationError("'synth --family' needs --refs and --out")
    reference_ids, references = storage.load_references(args.refs)
    levels = parse_levels(args.levels)
    for family in args.family:
        dataset = generate_domain(references, family, levels, seed=args.seed or 0,
                                  reference_ids=reference_ids, max_workers=args.workers)
        manifest = storage.save_domain(dataset, args.out)
        print(f"✅ Domain #{family} ({dataset.name}): {len(dataset)} samples -> {manifest}")


def cmd_synth(args: argparse.Namespace) -> None:
    """Generate single families from --refs, or every source domain and target of a config"""
    if args.family:
        _synth_families(args)
        return
    config = load_config(args)
    with open_run(config, "synth") as audit:
        with audit.stage("synth", workers=args.workers) as info:
            summary = run_synth(config, audit.layout, max_workers=args.workers)
            info.update(summary)
    print(f"✅ Synthesized {len(summary['domains'])} domains and {len(summary['targets'])} targets "
          f"in {audit.layout.root}")


def register(subparsers, parent: argparse.ArgumentParser) -> None:
    refs = subparsers.add_parser("refs", parents=[parent], help="Synthesize a pristine reference corpus")
    refs.add_argument("--n", type=int, default=20, help="Number of references")
    refs.add_argument("--size", type=int, default=128, help="Side length in pixels")
    refs.set_defaults(handler=cmd_refs)

    synth = subparsers.add_parser("synth", parents=[parent], help="Synthesize source domains and targets")
    synth.add_argument("--refs", type=Path, help="Reference directory (with --family)")
    synth.add_argument("--family", type=int, action="append", help="Family id to generate; repeatable")
    synth.add_argument("--levels", default="1..5", help="Severity levels, e.g. 1..5 or 1,3,5")
    synth.add_argument("--workers", type=int, default=1, help="Threads for per-sample generation")
    synth.set_defaults(handler=cmd_synth)
