"""
Selection commands: distortion-guided selection per target and the greedy
selection comparison.
"""

import argparse
import logging

from dgqa.commands.common import load_config, open_run
from dgqa.services.experiment_service import (
    FeatureStore, load_classifier, load_corpus, load_selection, run_gds, run_select, run_train_domain,
    target_names,
)

logger = logging.getLogger(__name__)


def cmd_select(args: argparse.Namespace) -> None:
    """Write selection/<target>.json for every target; labels are not read"""
    config = load_config(args)
    with open_run(config, "select") as audit:
        features = FeatureStore(config.patch, audit.layout)
        try:
            with audit.stage("select") as info:
                classifier = load_classifier(audit.layout)
                results = run_select(config, audit.layout, classifier, features)
                info["selected"] = {name: list(r.selected) for name, r in results.items()}
        finally:
            features.save()
    for name, result in results.items():
        print(f"🎯 {name}: N.o.S. = {result.n_selected} -> {list(result.selected)}")


def cmd_gds(args: argparse.Namespace) -> None:
    """Greedy selection on labeled targets, compared with the distortion-guided subsets"""
    config = load_config(args)
    with open_run(config, "gds") as audit:
        layout = audit.layout
        features = FeatureStore(config.patch, layout)
        try:
            domains = load_corpus(config, layout)
            names = target_names(config)
            if not all(layout.selection_file(n).exists() for n in names):
                with audit.stage("select") as info:
                    classifier = (load_classifier(layout) if layout.classifier.exists()
                                  else run_train_domain(config, layout, domains, features))
                    selected = {n: list(r.selected) for n, r in run_select(config, layout, classifier, features).items()}
                    info["selected"] = selected
            else:
                selected = {n: load_selection(layout, n).selected_ids for n in names}
            with audit.stage("gds") as info:
                report = run_gds(config, layout, domains, selected, features)
                info["median_jaccard"] = {n: r["median_jaccard"] for n, r in report.items()}
        finally:
            features.save()
    for name, info in report.items():
        print(f"🔎 {name}: median Jaccard(GDS, DGDS) = {info['median_jaccard']:.3f}")


def register(subparsers, parent: argparse.ArgumentParser) -> None:
    select = subparsers.add_parser("select", parents=[parent], help="Select similar source domains per target")
    select.set_defaults(handler=cmd_select)

    gds = subparsers.add_parser("gds", parents=[parent], help="Greedy domain selection on labeled targets")
    gds.set_defaults(handler=cmd_gds)
