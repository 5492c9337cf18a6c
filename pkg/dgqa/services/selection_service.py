"""
Selection Service
Distortion-guided domain selection: per-image domain probabilities from the
domain classifier, relative similarity of every source domain to a target,
threshold selection, the supervised greedy variant, and a classifier-accuracy
proxy for the distance between a source domain and a target.

Features:
- Patch-averaged probabilities (same patch stream as test-time quality scoring)
- Strict threshold selection with a deterministic fallback for uniform similarity
- Greedy forward selection scored on a labeled target holdout
- Source-vs-target probe distance, optionally computed for every domain in parallel
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from dgqa import constants as C
from dgqa.errors import InputValidationError, UndefinedMetricError
from dgqa.models import DomainDataset, RasterImage, TargetSet
from dgqa.schemas import PatchMode, PatchPolicy, SelectionEntry, SelectionReportFile, TrainConfig
from dgqa.services.distortion_service import family_name
from dgqa.services.evaluation_service import srcc
from dgqa.services.feature_service import FeatureFn, PatchFeatureExtractor
from dgqa.services.model_service import SoftmaxClassifier, fit_classifier

logger = logging.getLogger(__name__)

TargetImages = Union[TargetSet, Sequence[RasterImage]]


def _target_items(target: TargetImages) -> List[Tuple[str, RasterImage]]:
    if isinstance(target, TargetSet):
        return list(zip(target.image_ids, target.images))
    return [(f"target_{j:05d}", image) for j, image in enumerate(target)]


@dataclass(frozen=True)
class SimilarityReport:
    domain_ids: Tuple[int, ...]
    sim: np.ndarray
    n_target: int
    tau: float

    def __post_init__(self):
        sim = np.asarray(self.sim, dtype=np.float64)
        object.__setattr__(self, "domain_ids", tuple(int(d) for d in self.domain_ids))
        object.__setattr__(self, "sim", sim)
        if sim.shape != (len(self.domain_ids),):
            raise InputValidationError(f"{sim.size} similarities for {len(self.domain_ids)} domains")
        if self.n_target < 1:
            raise InputValidationError("A similarity report needs at least one target image")
        if np.any(sim < -C.SOFTMAX_SUM_TOL) or np.any(sim > 1 + C.SOFTMAX_SUM_TOL):
            raise InputValidationError("Similarities must lie in [0, 1]")

    @property
    def k(self) -> int:
        return len(self.domain_ids)

    def as_dict(self) -> Dict[int, float]:
        return {d: float(s) for d, s in zip(self.domain_ids, self.sim)}

    def ranked(self) -> List[Tuple[int, float]]:
        """(domain id, sim) by decreasing similarity; ties keep domain order"""
        order = sorted(range(self.k), key=lambda i: (-self.sim[i], i))
        return [(self.domain_ids[i], float(self.sim[i])) for i in order]


@dataclass(frozen=True)
class GreedyRound:
    round: int
    added: int
    score: float
    candidates: Dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class SelectionResult:
    selected: Tuple[int, ...]
    report: Optional[SimilarityReport]
    method: str = "dgds"
    tau: Optional[float] = None
    rounds: Tuple[GreedyRound, ...] = ()

    @property
    def n_selected(self) -> int:
        return len(self.selected)

    @property
    def score(self) -> Optional[float]:
        return self.rounds[-1].score if self.rounds else None


# ---------- distortion-guided selection -------------------------------------------

def domain_probabilities(classifier: SoftmaxClassifier, target_images: TargetImages, policy: PatchPolicy,
                         feature_fn: Optional[FeatureFn] = None) -> np.ndarray:
    """
    Probability of every target image belonging to every source domain.

    Args:
        classifier: Trained domain classifier
        target_images: Target set or plain list of rasters
        policy: Patch policy; test patches are averaged per image
        feature_fn: Test-mode feature function (built from policy when omitted)

    Returns:
        N x k matrix; row j is the mean of the patch-level probability vectors
        of image j

    Raises:
        InputValidationError: If the target set is empty
    """
    items = _target_items(target_images)
    if not items:
        raise InputValidationError("Target set is empty")
    feature_fn = feature_fn or PatchFeatureExtractor(policy, PatchMode.TEST)
    rows = [classifier.predict_proba(np.atleast_2d(feature_fn(image, key))).mean(axis=0) for key, image in items]
    return np.vstack(rows)


def relative_similarity(probs: np.ndarray, domain_ids: Optional[Sequence[int]] = None,
                        tau: Optional[float] = None) -> SimilarityReport:
    """
    Column means of a probability matrix: the average probability that the
    target images belong to each source domain.

    Raises:
        InputValidationError: Empty matrix, negative entries, a row sum
            further than 1e-6 from 1, or tau outside (0, 1)
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0 or probs.shape[1] == 0:
        raise InputValidationError(f"Expected a non-empty N x k probability matrix, got shape {probs.shape}")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise InputValidationError("Probabilities must be finite and non-negative")
    sums = probs.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > C.ROW_SUM_TOL)
    if bad.size:
        raise InputValidationError(f"Row {int(bad[0])} sums to {sums[bad[0]]:.8f}, not 1")
    k = probs.shape[1]
    if domain_ids is None:
        domain_ids = list(range(1, k + 1))
    if len(domain_ids) != k:
        raise InputValidationError(f"{len(domain_ids)} domain ids for {k} probability columns")
    if tau is not None and not 0 < tau < 1:
        raise InputValidationError(f"tau must lie in (0, 1), got {tau}")
    sim = (probs / sums[:, None]).mean(axis=0)
    return SimilarityReport(tuple(domain_ids), sim, probs.shape[0], 1.0 / k if tau is None else float(tau))


def select_similar_domains(report: SimilarityReport, tau: Optional[float] = None) -> SelectionResult:
    """
    Keep the domains whose similarity exceeds tau (default: the report's tau,
    which is 1/k unless the report was built with another threshold).

    When nothing passes the strict threshold (exactly uniform similarity) the
    most similar domain with the smallest index is selected.

    Raises:
        InputValidationError: If tau is outside (0, 1)
    """
    if tau is None:
        tau = report.tau
    elif not 0 < tau < 1:
        raise InputValidationError(f"tau must lie in (0, 1), got {tau}")
    selected = [d for d, s in zip(report.domain_ids, report.sim) if s > tau]
    if not selected:
        selected = [report.domain_ids[int(np.argmax(report.sim))]]
        logger.warning(f"No domain above tau={tau:.4f}; falling back to domain #{selected[0]}")
    return SelectionResult(selected=tuple(selected), report=report, method="dgds", tau=float(tau))


def select_for_target(classifier: SoftmaxClassifier, target: TargetImages, policy: PatchPolicy,
                      tau: Optional[float] = None, feature_fn: Optional[FeatureFn] = None) -> SelectionResult:
    """Run probabilities, similarity and threshold selection for one target; never touches labels"""
    probs = domain_probabilities(classifier, target, policy, feature_fn)
    report = relative_similarity(probs, classifier.domain_ids, tau)
    result = select_similar_domains(report)
    logger.info(f"Selected {result.n_selected}/{report.k} domains at tau={result.tau:.4f}: {list(result.selected)}")
    return result


def selection_report(result: SelectionResult, target_name: str,
                     registry: Optional[Mapping[int, Any]] = None) -> SelectionReportFile:
    """Machine-readable selection table, sorted by similarity descending"""
    if result.report is None:
        raise InputValidationError("Selection result carries no similarity report")
    chosen = set(result.selected)
    entries = [
        SelectionEntry(domain_id=d, family_name=family_name(d, registry), sim=s, selected=d in chosen)
        for d, s in result.report.ranked()
    ]
    return SelectionReportFile(target=target_name, tau=result.tau, n_target=result.report.n_target,
                               method=result.method, entries=entries)


# ---------- greedy selection (supervised diagnostic) --------------------------------

Predictor = Callable[[TargetSet], np.ndarray]
TrainFn = Callable[[Sequence[DomainDataset]], Predictor]
MetricFn = Callable[[np.ndarray, np.ndarray], float]


def greedy_domain_selection(domains: Sequence[DomainDataset], target_val: TargetSet, train_fn: TrainFn,
                            metric_fn: MetricFn = srcc, max_rounds: int = 15,
                            min_improvement: float = C.GDS_MIN_IMPROVEMENT) -> SelectionResult:
    """
    Forward selection of source domains by target-holdout correlation.

    Starts from the best single domain and adds, each round, the domain whose
    inclusion scores best; stops when the best addition improves the score by
    no more than min_improvement or after max_rounds rounds. An undefined
    metric scores -1.

    Args:
        domains: Candidate source domains
        target_val: Labeled target holdout
        train_fn: Trains on a list of domains and returns a predictor for target images
        metric_fn: Score of (predictions, labels); SRCC by default
        max_rounds: Upper bound on the number of rounds (round 1 picks the start)
        min_improvement: Required gain for a domain to be added

    Raises:
        InputValidationError: No domains, or target_val is unlabeled
    """
    if not domains:
        raise InputValidationError("Greedy selection needs at least one domain")
    if not target_val.is_labeled:
        raise InputValidationError(f"Target '{target_val.name}' has no labels; greedy selection needs them")
    by_id = {d.domain: d for d in domains}
    order = [d.domain for d in domains]
    scores: Dict[FrozenSet[int], float] = {}

    def _score(subset: FrozenSet[int]) -> float:
        if subset not in scores:
            predictor = train_fn([by_id[d] for d in order if d in subset])
            try:
                scores[subset] = float(metric_fn(np.asarray(predictor(target_val)), target_val.labels))
            except UndefinedMetricError as e:
                logger.warning(f"Metric undefined for domains {sorted(subset)} ({e}); scoring -1")
                scores[subset] = -1.0
        return scores[subset]

    singles = {d: _score(frozenset([d])) for d in order}
    start = max(order, key=lambda d: (singles[d], -order.index(d)))
    current = {start}
    current_score = singles[start]
    rounds = [GreedyRound(1, start, current_score, singles)]
    logger.info(f"GDS round 1: start with #{start} (score {current_score:.4f})")

    while len(rounds) < max_rounds and len(current) < len(order):
        candidates = {d: _score(frozenset(current | {d})) for d in order if d not in current}
        best = max(candidates, key=lambda d: (candidates[d], -order.index(d)))
        if candidates[best] <= current_score + min_improvement:
            logger.info(f"GDS stops after round {len(rounds)}: best addition #{best} scores {candidates[best]:.4f}")
            break
        current.add(best)
        current_score = candidates[best]
        rounds.append(GreedyRound(len(rounds) + 1, best, current_score, candidates))
        logger.info(f"GDS round {len(rounds)}: add #{best} (score {current_score:.4f})")

    return SelectionResult(selected=tuple(d for d in order if d in current), report=None, method="gds",
                           rounds=tuple(rounds))


# ---------- proxy distance -----------------------------------------------------------

def _probe_config(config: TrainConfig) -> TrainConfig:
    return config.model_copy(update={"epochs": C.PROXY_DISTANCE_EPOCHS, "balance_domains": False})


def _halves(n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    return order[: n // 2], order[n // 2:]


def proxy_distance_from_groups(source_groups: Sequence[np.ndarray], target_groups: Sequence[np.ndarray],
                               config: TrainConfig) -> float:
    """
    Probe distance between two sets of feature groups (one group per image).

    Each side is halved at group level; a binary head is trained on the first
    halves and its balanced accuracy acc on the second halves gives
    2 * (2 * acc - 1), clamped to [0, 2].
    """
    if len(source_groups) < C.PROXY_DISTANCE_MIN_SAMPLES or len(target_groups) < C.PROXY_DISTANCE_MIN_SAMPLES:
        raise InputValidationError(
            f"Proxy distance needs at least {C.PROXY_DISTANCE_MIN_SAMPLES} samples per side, "
            f"got {len(source_groups)} and {len(target_groups)}"
        )
    rng = np.random.default_rng(config.seed)
    s_fit, s_eval = _halves(len(source_groups), rng)
    t_fit, t_eval = _halves(len(target_groups), rng)

    def _stack(groups, idx):
        return np.vstack([np.atleast_2d(groups[i]) for i in idx])

    Xs, Xt = _stack(source_groups, s_fit), _stack(target_groups, t_fit)
    X = np.vstack([Xs, Xt])
    y = np.concatenate([np.zeros(len(Xs), dtype=int), np.ones(len(Xt), dtype=int)])
    probe, _ = fit_classifier(X, y, 2, _probe_config(config))

    source_acc = np.mean(np.argmax(probe.predict_proba(_stack(source_groups, s_eval)), axis=1) == 0)
    target_acc = np.mean(np.argmax(probe.predict_proba(_stack(target_groups, t_eval)), axis=1) == 1)
    acc = 0.5 * (source_acc + target_acc)
    return float(np.clip(2.0 * (2.0 * acc - 1.0), 0.0, 2.0))


def proxy_distance_from_features(source_features: np.ndarray, target_features: np.ndarray,
                                 config: TrainConfig) -> float:
    """Probe distance between two feature matrices, one row per sample"""
    return proxy_distance_from_groups(list(np.atleast_2d(source_features)),
                                      list(np.atleast_2d(target_features)), config)


def proxy_domain_distance(source: DomainDataset, target_images: TargetImages, feature_fn: FeatureFn,
                          config: TrainConfig) -> float:
    """
    Classifier-accuracy proxy for the distance between a source domain and a
    target, in [0, 2]: 0 for indistinguishable, 2 for perfectly separable.

    Raises:
        InputValidationError: Fewer than 20 samples on either side
    """
    source_groups = [feature_fn(s.image, s.sample_id) for s in source.samples]
    target_groups = [feature_fn(image, key) for key, image in _target_items(target_images)]
    distance = proxy_distance_from_groups(source_groups, target_groups, config)
    logger.debug(f"Proxy distance domain #{source.domain}: {distance:.4f}")
    return distance


def domain_distance_table(domains: Sequence[DomainDataset], target_images: TargetImages, feature_fn: FeatureFn,
                          config: TrainConfig, max_workers: int = 1) -> Dict[int, float]:
    """Proxy distance for every source domain; probes are independent and may run in parallel"""
    def _one(domain: DomainDataset) -> float:
        return proxy_domain_distance(domain, target_images, feature_fn, config)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            distances = list(pool.map(_one, domains))
    else:
        distances = [_one(d) for d in domains]
    return {d.domain: dist for d, dist in zip(domains, distances)}


def similarity_distance_correlation(report: SimilarityReport, distances: Mapping[int, float]) -> Optional[float]:
    """Rank correlation between similarity and proxy distance over shared domains; None when undefined"""
    shared = [d for d in report.domain_ids if d in distances]
    sims = report.as_dict()
    try:
        return srcc([sims[d] for d in shared], [distances[d] for d in shared])
    except (InputValidationError, UndefinedMetricError) as e:
        logger.warning(f"Similarity/distance correlation undefined: {e}")
        return None
