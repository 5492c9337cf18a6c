"""
Training commands: the domain classifier and the quality regressor.
"""

import argparse
import logging

from dgqa.commands.common import load_config, open_run
from dgqa.services.experiment_service import FeatureStore, load_corpus, run_train_domain, run_train_iqa

logger = logging.getLogger(__name__)


def cmd_train_domain(args: argparse.Namespace) -> None:
    config = load_config(args)
    with open_run(config, "train-domain") as audit:
        features = FeatureStore(config.patch, audit.layout)
        try:
            with audit.stage("train-domain") as info:
                domains = load_corpus(config, audit.layout)
                classifier = run_train_domain(config, audit.layout, domains, features)
                info.update({"k": classifier.k, "samples": sum(len(d) for d in domains)})
        finally:
            features.save()
    print(f"✅ Domain classifier over {classifier.k} domains saved to {audit.layout.classifier}")


def cmd_train_iqa(args: argparse.Namespace) -> None:
    config = load_config(args)
    with open_run(config, "train-iqa") as audit:
        features = FeatureStore(config.patch, audit.layout)
        try:
            with audit.stage("train-iqa", all_domains=args.all) as info:
                domains = load_corpus(config, audit.layout)
                written = run_train_iqa(config, audit.layout, domains, features, use_all=args.all)
                info["models"] = [p.name for p in written]
        finally:
            features.save()
    for path in written:
        print(f"✅ Regressor saved to {path}")


def register(subparsers, parent: argparse.ArgumentParser) -> None:
    train_domain = subparsers.add_parser("train-domain", parents=[parent],
                                         help="Train the multi-source domain classifier")
    train_domain.set_defaults(handler=cmd_train_domain)

    train_iqa = subparsers.add_parser("train-iqa", parents=[parent], help="Train the quality regressor")
    train_iqa.add_argument("--all", action="store_true", help="Train on all domains instead of the selection")
    train_iqa.set_defaults(handler=cmd_train_iqa)
