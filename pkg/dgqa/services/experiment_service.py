"""
Experiment Service
Orchestrates desk-scale runs: corpus synthesis, domain-classifier training,
per-target selection, paired DGQA/baseline regressor evaluation, the greedy
selection comparison and distance diagnostics. All artifacts go through storage.
"""

import logging
import shutil
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from dgqa import storage
from dgqa.constants import DEFAULT_HIDDEN
from dgqa.errors import ArtifactError, InputValidationError, UndefinedMetricError
from dgqa.models import DomainDataset, TargetSet
from dgqa.schemas import ExperimentConfig, PatchMode, PatchPolicy, SelectionReportFile, TrainConfig
from dgqa.seeding import derive_seed
from dgqa.services.distortion_service import DEFAULT_REGISTRY, FamilyDescriptor, generate_domain
from dgqa.services.evaluation_service import (
    MetricPair, evaluate, jaccard, repeated_experiment, split_by_reference, split_target, subgroup_metrics,
)
from dgqa.services.feature_service import PatchFeatureExtractor
from dgqa.services.model_service import (
    Regressor, SoftmaxClassifier, head_from_dict, predict_quality, train_classifier, train_regressor,
)
from dgqa.services.selection_service import (
    SelectionResult, domain_distance_table, greedy_domain_selection, select_for_target, selection_report,
    similarity_distance_correlation,
)
from dgqa.services.target_service import build_target, component_counts, provenance_group
from dgqa.storage import RunLayout

logger = logging.getLogger(__name__)

SETTINGS = ("dgqa", "baseline")
HEADS = ("mlp", "linear")
GDS_SETTINGS = ("gds", "dgqa", "baseline")
LABEL_CEILING = 100.0
PARTITION_NAME = "partition.json"


class FeatureStore:
    """
    Train- and test-mode feature extractors with CSV caches in the run
    directory. Cache files are named after the patch policy so a changed
    policy never reads stale rows.
    """

    def __init__(self, policy: PatchPolicy, layout: Optional[RunLayout] = None):
        self.policy = policy
        self.layout = layout
        self.train = PatchFeatureExtractor(policy, PatchMode.TRAIN)
        self.test = PatchFeatureExtractor(policy, PatchMode.TEST)
        if layout is not None:
            self.train.preload(storage.load_feature_cache(self._path(PatchMode.TRAIN)))
            self.test.preload(storage.load_feature_cache(self._path(PatchMode.TEST)))

    def _path(self, mode: PatchMode) -> Path:
        p = self.policy
        count = p.train_patches_per_image if mode is PatchMode.TRAIN else p.test_patches_per_image
        return self.layout.features / f"{mode.value}_p{p.patch_size}_n{count}_s{p.seed}.csv"

    def save(self) -> None:
        if self.layout is None:
            return
        for mode, extractor in ((PatchMode.TRAIN, self.train), (PatchMode.TEST, self.test)):
            if len(extractor):
                storage.save_feature_cache(extractor.cached_rows(), self._path(mode))


def registry_for(config: ExperimentConfig,
                 registry: Optional[Mapping[int, FamilyDescriptor]] = None) -> Dict[int, FamilyDescriptor]:
    registry = dict(DEFAULT_REGISTRY if registry is None else registry)
    if config.domain_ids is None:
        return dict(sorted(registry.items()))
    missing = [d for d in config.domain_ids if d not in registry]
    if missing:
        raise InputValidationError(f"Config names unregistered domains {missing}")
    return {d: registry[d] for d in sorted(set(config.domain_ids))}


def partition_references(reference_ids: Sequence[str], fraction: float, seed: int) -> Tuple[List[str], List[str]]:
    """Split reference ids into (source references, held-out target references)"""
    plan = split_by_reference(list(reference_ids), ratio=1.0 - fraction, seed=derive_seed(seed, "target-references"))
    return list(plan.train_reference_ids), list(plan.val_reference_ids)


# ---------- synth ---------------------------------------------------------------

def run_synth(config: ExperimentConfig, layout: RunLayout,
              registry: Optional[Mapping[int, FamilyDescriptor]] = None, max_workers: int = 1) -> Dict[str, Any]:
    """
    Generate every source domain on the source references and every target on
    the held-out references, then write them under the run directory.

    Domains listed in inverted_domains store 100 - pseudo-MOS as their labels.

    Returns:
        Summary with per-domain and per-target sample counts
    """
    families = registry_for(config, registry)
    ids, references = storage.load_references(config.references_dir)
    by_id = dict(zip(ids, references))
    source_ids, target_ids = partition_references(ids, config.target_reference_fraction, config.seed)
    storage.write_json(layout.root / PARTITION_NAME, {"source": source_ids, "target": target_ids})
    if layout.features.exists():
        shutil.rmtree(layout.features)

    summary: Dict[str, Any] = {"domains": {}, "targets": {}}
    source_refs = [by_id[r] for r in source_ids]
    for domain_id in families:
        dataset = generate_domain(source_refs, domain_id, config.levels, seed=derive_seed(config.seed, "domain", domain_id),
                                  reference_ids=source_ids, registry=families, max_workers=max_workers)
        if domain_id in config.inverted_domains:
            dataset = dataset.map_quality(lambda q: LABEL_CEILING - q)
        storage.save_domain(dataset, layout.domains)
        summary["domains"][str(domain_id)] = len(dataset)
        logger.info(f"Domain #{domain_id} ({dataset.name}): {len(dataset)} samples"
                    f"{' (labels inverted)' if domain_id in config.inverted_domains else ''}")

    target_refs = [by_id[r] for r in target_ids]
    for spec in config.targets:
        if spec.recipe is not None:
            target = build_target(target_refs, target_ids, spec, config.seed, families)
        else:
            target = storage.load_image_directory(spec.name, spec.image_dir)
            if spec.labels_path is not None:
                target = TargetSet(name=target.name, image_ids=target.image_ids, images=target.images,
                                   reference_ids=target.reference_ids,
                                   labels=storage.load_labels_file(spec.labels_path, target))
        storage.save_target(target, layout.targets)
        summary["targets"][spec.name] = {"images": len(target), "labeled": target.is_labeled,
                                         "components": component_counts(target) if target.provenance else {}}
    return summary


def corpus_exists(layout: RunLayout) -> bool:
    return any(layout.domains.glob(f"*/{storage.MANIFEST_NAME}")) if layout.domains.exists() else False


# ---------- domain classifier and selection -----------------------------------------

def load_corpus(config: ExperimentConfig, layout: RunLayout) -> List[DomainDataset]:
    return storage.load_domains(layout.domains, config.domain_ids)


def run_train_domain(config: ExperimentConfig, layout: RunLayout, domains: Sequence[DomainDataset],
                     features: FeatureStore) -> SoftmaxClassifier:
    classifier, log = train_classifier(domains, features.train, config.train)
    storage.save_checkpoint({**classifier.to_dict(), "training": log.to_dict()}, layout.classifier)
    return classifier


def load_classifier(layout: RunLayout) -> SoftmaxClassifier:
    model = head_from_dict(storage.load_checkpoint(layout.classifier))
    if not isinstance(model, SoftmaxClassifier):
        raise ArtifactError("Checkpoint is not a domain classifier", layout.classifier)
    return model


def target_names(config: ExperimentConfig) -> List[str]:
    return [t.name for t in config.targets]


def run_select(config: ExperimentConfig, layout: RunLayout, classifier: SoftmaxClassifier,
               features: FeatureStore) -> Dict[str, SelectionResult]:
    """
    Threshold selection for every target. Loads target images only; the label
    file is never opened on this path.
    """
    results: Dict[str, SelectionResult] = {}
    for name in target_names(config):
        target = storage.load_target(layout.target_dir(name))
        result = select_for_target(classifier, target, config.patch, config.tau, features.test)
        storage.write_json(layout.selection_file(name),
                           selection_report(result, name).model_dump(mode="json"))
        results[name] = result
        logger.info(f"Target '{name}': N.o.S. = {result.n_selected}")
    return results


def load_selection(layout: RunLayout, name: str) -> SelectionReportFile:
    return SelectionReportFile.model_validate(storage.read_json(layout.selection_file(name)))


# ---------- regressors --------------------------------------------------------------

class RegressorCache:
    """Regressors keyed by (domain subset, seed, head) so identical trainings run once"""

    def __init__(self, domains: Sequence[DomainDataset], features: FeatureStore, train: TrainConfig):
        self.domains = list(domains)
        self.features = features
        self.train = train
        self._models: Dict[Tuple[FrozenSet[int], int, str], Regressor] = {}

    def subset(self, domain_ids: Sequence[int]) -> List[DomainDataset]:
        chosen = set(domain_ids)
        return [d for d in self.domains if d.domain in chosen]

    def n_samples(self, domain_ids: Sequence[int]) -> int:
        return sum(len(d) for d in self.subset(domain_ids))

    def head_config(self, seed: int, head: str = "mlp") -> TrainConfig:
        """Training settings of one head; "mlp" keeps train.hidden or falls back to the default width"""
        if head not in HEADS:
            raise InputValidationError(f"Unknown regressor head '{head}'; expected one of {HEADS}")
        hidden = None if head == "linear" else (self.train.hidden or DEFAULT_HIDDEN)
        return self.train.model_copy(update={"seed": seed, "hidden": hidden})

    def get(self, domain_ids: Sequence[int], seed: int, head: str = "mlp") -> Regressor:
        key = (frozenset(domain_ids), seed, head)
        if key not in self._models:
            model, _ = train_regressor(self.subset(domain_ids), self.features.train, self.head_config(seed, head))
            self._models[key] = model
        return self._models[key]


def predict_target(model: Regressor, target: TargetSet, features: FeatureStore, policy: PatchPolicy) -> np.ndarray:
    return np.array([predict_quality(model, image, policy, key, features.test)
                     for key, image in zip(target.image_ids, target.images)])


def _safe_evaluate(pred: np.ndarray, labels: np.ndarray, plcc_mode: str) -> Optional[MetricPair]:
    try:
        return evaluate(pred, labels, plcc_mode)
    except UndefinedMetricError as e:
        logger.warning(f"Metric undefined: {e}")
        return None


def _median_subtypes(per_run: List[Dict[str, Optional[MetricPair]]]) -> Dict[str, Any]:
    groups = sorted({g for run in per_run for g in run})
    out: Dict[str, Any] = {}
    for g in groups:
        ok = [run[g] for run in per_run if run.get(g) is not None]
        out[g] = None if not ok else {
            "srcc": float(np.median([p.srcc for p in ok])),
            "plcc": float(np.median([p.plcc for p in ok])),
            "n": ok[0].n,
            "runs": len(ok),
        }
    return out


def head_settings(head: str) -> Tuple[str, str]:
    """DGQA and baseline setting names for one regressor head"""
    return SETTINGS if head == "mlp" else (f"dgqa_{head}", f"baseline_{head}")


def _gains(dgqa_m: Optional[MetricPair], base_m: Optional[MetricPair]) -> Optional[Dict[str, float]]:
    if dgqa_m is None or base_m is None:
        return None
    return {"srcc": dgqa_m.srcc - base_m.srcc, "plcc": dgqa_m.plcc - base_m.plcc}


def evaluate_target(config: ExperimentConfig, layout: RunLayout, name: str, selected: Sequence[int],
                    cache: RegressorCache, features: FeatureStore) -> Optional[Dict[str, Any]]:
    """
    Paired comparison on one labeled target: a regressor on the selected
    domains against one on all domains, same seeds, n_repeats runs. Every head
    in config.regressor_heads gets its own pair; the first head supplies the
    top-level gains.

    Returns:
        Target summary, or None when the target has no labels
    """
    target = storage.load_target(layout.target_dir(name))
    labels = storage.load_target_labels(layout.target_dir(name), target)
    if labels is None:
        logger.warning(f"Target '{name}' has no labels; evaluation skipped")
        return None
    all_ids = [d.domain for d in cache.domains]
    groups = [provenance_group(target.provenance[i]) for i in target.image_ids] if target.provenance else None
    plan = [(head, setting, ids)
            for head in config.regressor_heads
            for setting, ids in zip(head_settings(head), (selected, all_ids))]
    settings = [setting for _, setting, _ in plan]
    subtypes: Dict[str, List[Dict[str, Optional[MetricPair]]]] = {s: [] for s in settings}

    def experiment(seed: int) -> Dict[str, Optional[MetricPair]]:
        outcome: Dict[str, Optional[MetricPair]] = {}
        for head, setting, ids in plan:
            pred = predict_target(cache.get(ids, seed, head), target, features, config.patch)
            outcome[setting] = _safe_evaluate(pred, labels, config.plcc_mode)
            if groups is not None:
                subtypes[setting].append(subgroup_metrics(pred, labels, groups, config.plcc_mode))
        return outcome

    result = repeated_experiment(experiment, config.n_repeats, config.seed, settings=settings)
    storage.write_csv(result.to_frame(), layout.results / f"{name}_metrics.csv")
    for head, setting, ids in plan:
        model = cache.get(ids, config.seed, head)
        storage.save_checkpoint({**model.to_dict(), "domains": list(ids), "head": head},
                                layout.regressor(name, setting))

    n_dgqa, n_all = cache.n_samples(selected), cache.n_samples(all_ids)
    heads: Dict[str, Any] = {}
    for head in config.regressor_heads:
        dgqa_name, base_name = head_settings(head)
        heads[head] = {"dgqa": dgqa_name, "baseline": base_name,
                       "gains": _gains(result.medians.get(dgqa_name), result.medians.get(base_name))}
    summary: Dict[str, Any] = {
        "selected": list(selected),
        "n_selected": len(selected),
        "k": len(all_ids),
        "n_target": len(target),
        "train_samples": {setting: n for head in config.regressor_heads
                          for setting, n in zip(head_settings(head), (n_dgqa, n_all))},
        "train_fraction": n_dgqa / n_all if n_all else None,
        "results": result.summary(),
        "heads": heads,
        "gains": heads[config.regressor_heads[0]]["gains"],
    }
    if groups is not None:
        summary["subtypes"] = {s: _median_subtypes(runs) for s, runs in subtypes.items()}
    medians = {s: result.medians.get(s) for s in settings}
    logger.info(f"Target '{name}': {medians} train fraction={summary['train_fraction']:.3f}")
    return summary


def run_train_iqa(config: ExperimentConfig, layout: RunLayout, domains: Sequence[DomainDataset],
                  features: FeatureStore, use_all: bool = False) -> List[Path]:
    """Train and save regressors: one per target on its selected domains, or one on all domains"""
    written = []
    if use_all:
        model, log = train_regressor(domains, features.train, config.train)
        written.append(storage.save_checkpoint(
            {**model.to_dict(), "domains": [d.domain for d in domains], "training": log.to_dict()},
            layout.regressor("all", "baseline")))
        return written
    for name in target_names(config):
        storage.require([layout.selection_file(name)])
        selected = load_selection(layout, name).selected_ids
        chosen = [d for d in domains if d.domain in set(selected)]
        model, log = train_regressor(chosen, features.train, config.train)
        written.append(storage.save_checkpoint(
            {**model.to_dict(), "domains": selected, "training": log.to_dict()}, layout.regressor(name, "dgqa")))
    return written


def run_evaluation(config: ExperimentConfig, layout: RunLayout, domains: Sequence[DomainDataset],
                   selections: Mapping[str, Sequence[int]], features: FeatureStore) -> Dict[str, Any]:
    cache = RegressorCache(domains, features, config.train)
    targets: Dict[str, Any] = {}
    for name, selected in selections.items():
        summary = evaluate_target(config, layout, name, selected, cache, features)
        targets[name] = summary if summary is not None else {"selected": list(selected), "evaluated": False}
    payload = {"plcc_mode": config.plcc_mode, "n_repeats": config.n_repeats, "targets": targets}
    storage.write_json(layout.results / "summary.json", payload)
    return payload


# ---------- distances ---------------------------------------------------------------

def run_distances(config: ExperimentConfig, layout: RunLayout, domains: Sequence[DomainDataset],
                  selections: Mapping[str, SelectionResult], features: FeatureStore,
                  max_workers: int = 1) -> Dict[str, Any]:
    payload: Dict[str, Any] = {}
    for name, result in selections.items():
        target = storage.load_target(layout.target_dir(name))
        distances = domain_distance_table(domains, target, features.train, config.train, max_workers)
        payload[name] = {
            "distances": {str(d): v for d, v in distances.items()},
            "sim": {str(d): s for d, s in result.report.as_dict().items()},
            "spearman": similarity_distance_correlation(result.report, distances),
        }
    storage.write_json(layout.results / "distances.json", payload)
    return payload


# ---------- greedy selection --------------------------------------------------------

def run_gds(config: ExperimentConfig, layout: RunLayout, domains: Sequence[DomainDataset],
            dgds: Mapping[str, Sequence[int]], features: FeatureStore) -> Dict[str, Any]:
    """
    Greedy selection on a labeled validation half of every target, compared on
    the other half against the distortion-guided subset and all domains.

    Raises:
        InputValidationError: If a target has no labels
    """
    cache = RegressorCache(domains, features, config.train)
    all_ids = [d.domain for d in domains]
    report: Dict[str, Any] = {}
    for name in target_names(config):
        target = storage.load_target(layout.target_dir(name))
        labels = storage.load_target_labels(layout.target_dir(name), target)
        if labels is None:
            raise InputValidationError(f"Target '{name}' has no labels; greedy selection needs them")
        labeled = TargetSet(name=target.name, image_ids=target.image_ids, images=target.images,
                            reference_ids=target.reference_ids, labels=labels, provenance=target.provenance)
        dgds_ids = list(dgds[name])
        runs: List[Dict[str, Any]] = []

        def experiment(seed: int) -> Dict[str, Optional[MetricPair]]:
            val, test = split_target(labeled, split_by_reference(labeled, ratio=0.5, seed=seed))

            def train_fn(subset: Sequence[DomainDataset]):
                model = cache.get([d.domain for d in subset], seed)
                return lambda t: predict_target(model, t, features, config.patch)

            gds = greedy_domain_selection(domains, val, train_fn, max_rounds=config.gds_max_rounds)
            runs.append({
                "seed": seed,
                "selected": list(gds.selected),
                "rounds": [{"round": r.round, "added": r.added, "srcc": r.score} for r in gds.rounds],
                "jaccard": jaccard(gds.selected, dgds_ids),
                "n_val": len(val),
                "n_test": len(test),
            })
            outcome = {}
            for setting, ids in (("gds", gds.selected), ("dgqa", dgds_ids), ("baseline", all_ids)):
                pred = predict_target(cache.get(ids, seed), test, features, config.patch)
                outcome[setting] = _safe_evaluate(pred, test.labels, config.plcc_mode)
            return outcome

        result = repeated_experiment(experiment, config.n_repeats, config.seed, settings=GDS_SETTINGS)
        storage.write_csv(result.to_frame(), layout.results / f"gds_{name}_metrics.csv")
        inverted = set(config.inverted_domains)
        report[name] = {
            "dgds_selected": dgds_ids,
            "runs": runs,
            "median_jaccard": float(np.median([r["jaccard"] for r in runs])) if runs else None,
            "excludes_inverted": all(not (set(r["selected"]) & inverted) for r in runs),
            "results": result.summary(),
        }
        logger.info(f"GDS '{name}': median Jaccard vs DGDS = {report[name]['median_jaccard']}")
    storage.write_json(layout.results / "gds.json", report)
    return report


# ---------- full pipeline -------------------------------------------------------------

def run_pipeline(config: ExperimentConfig, audit, registry: Optional[Mapping[int, FamilyDescriptor]] = None,
                 max_workers: int = 1) -> Dict[str, Any]:
    """
    train-domain -> select -> paired regressor evaluation (-> distances).

    The corpus is synthesized first when the run directory does not hold one,
    so a run record alone is enough to reproduce a run.

    Args:
        config: Experiment configuration
        audit: RunAudit of the run directory (already locked)
        registry: Family registry override
        max_workers: Threads for synthesis and distance probes
    """
    layout = audit.layout
    if corpus_exists(layout):
        audit.skip("synth", "corpus already present")
    else:
        with audit.stage("synth") as info:
            info.update(run_synth(config, layout, registry, max_workers))

    features = FeatureStore(config.patch, layout)
    try:
        with audit.stage("train-domain") as info:
            domains = load_corpus(config, layout)
            classifier = run_train_domain(config, layout, domains, features)
            info.update({"k": classifier.k, "samples": sum(len(d) for d in domains)})

        with audit.stage("select") as info:
            selections = run_select(config, layout, classifier, features)
            info["selected"] = {name: list(r.selected) for name, r in selections.items()}

        with audit.stage("evaluate") as info:
            summary = run_evaluation(config, layout, domains,
                                     {name: list(r.selected) for name, r in selections.items()}, features)
            info["targets"] = sorted(summary["targets"])

        if config.compute_distances:
            with audit.stage("distances"):
                run_distances(config, layout, domains, selections, features, max_workers)
    finally:
        features.save()
    return summary
