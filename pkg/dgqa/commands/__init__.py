"""CLI subcommands. Each module registers its parsers on the shared subparser set."""

from dgqa.commands import data, pipeline, report, selection, training

COMMAND_MODULES = (data, training, selection, pipeline, report)
