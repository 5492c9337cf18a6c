"""Helpers shared by the CLI subcommands."""

import argparse
import logging
from pathlib import Path
from typing import Optional

from dgqa.config import load_experiment_config
from dgqa.errors import InputValidationError
from dgqa.schemas import ExperimentConfig
from dgqa.services.audit_service import RunAudit

logger = logging.getLogger(__name__)


def common_parent() -> argparse.ArgumentParser:
    """Flags accepted by every subcommand"""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, help="Experiment config (JSON)")
    parent.add_argument("--seed", type=int, help="Base seed override")
    parent.add_argument("--out", type=Path, help="Output/run directory override")
    return parent


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is None:
        raise InputValidationError(f"'{args.command}' needs --config")
    return load_experiment_config(args.config, seed=args.seed,
                                  output_dir=str(args.out) if args.out is not None else None)


def open_run(config: ExperimentConfig, command: str, root: Optional[Path] = None) -> RunAudit:
    """Audit trail for a command; use as a context manager to hold the run lock"""
    return RunAudit(config, command, root)
