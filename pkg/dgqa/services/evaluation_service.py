"""
Evaluation Service
Correlation metrics (SRCC, PLCC with a fitted logistic mapping), reference-
disjoint train/validation splits and repeated-run medians.
"""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.special import expit
from scipy.stats import rankdata

from dgqa import constants as C
from dgqa.errors import InputValidationError, UndefinedMetricError
from dgqa.models import DomainDataset, TargetSet

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["run", "seed", "setting", "n", "srcc", "plcc", "plcc_mode"]
PLCC_MODES = ("logistic", "raw")


@dataclass(frozen=True)
class MetricPair:
    srcc: float
    plcc: float
    n: int
    plcc_mode: str = "logistic"

    def to_dict(self) -> Dict[str, Any]:
        return {"srcc": self.srcc, "plcc": self.plcc, "n": self.n, "plcc_mode": self.plcc_mode}


@dataclass(frozen=True)
class PlccResult:
    """PLCC value plus the mode that actually produced it"""
    value: float
    mode: str
    fallback: bool = False


def _paired(pred: Sequence[float], label: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(label, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise InputValidationError(f"Predictions ({x.size}) and labels ({y.size}) differ in length")
    if x.size < 3:
        raise InputValidationError(f"Correlation needs at least 3 pairs, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InputValidationError("Predictions and labels must be finite")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedMetricError("Correlation is undefined for constant input")
    return x, y


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    if denom == 0:
        raise UndefinedMetricError("Correlation is undefined for constant input")
    return float(np.clip(np.dot(xc, yc) / denom, -1.0, 1.0))


def srcc(pred: Sequence[float], label: Sequence[float]) -> float:
    """
    Spearman rank-order correlation with average ranks for ties.

    Raises:
        InputValidationError: Length mismatch or fewer than 3 pairs
        UndefinedMetricError: Either side is constant
    """
    x, y = _paired(pred, label)
    return pearson(rankdata(x, method="average"), rankdata(y, method="average"))


def logistic4(x: np.ndarray, b1: float, b2: float, b3: float, b4: float) -> np.ndarray:
    return b2 + (b1 - b2) * expit((x - b3) / b4)


def logistic4_jacobian(x: np.ndarray, b1: float, b2: float, b3: float, b4: float) -> np.ndarray:
    s = expit((x - b3) / b4)
    slope = (b1 - b2) * s * (1.0 - s)
    return np.column_stack([s, 1.0 - s, -slope / b4, -slope * (x - b3) / (b4 * b4)])


def _initial_logistic(x: np.ndarray, y: np.ndarray) -> List[float]:
    # start in the near-linear regime of the curve, matched to a least-squares line
    slope, intercept = np.polyfit(x, y, 1)
    b3 = float(x.mean())
    b4 = float(10.0 * np.ptp(x))
    amplitude = 4.0 * slope * b4
    b2 = slope * b3 + intercept - amplitude / 2.0
    return [b2 + amplitude, b2, b3, b4]


def fit_plcc(pred: Sequence[float], label: Sequence[float], mode: str = "logistic") -> PlccResult:
    """
    Pearson correlation after an optional 4-parameter logistic mapping.

    The fit uses the analytic Jacobian, so the budget of
    PLCC_LOGISTIC_MAX_ITER function evaluations is also its iteration budget.
    A fit that does not converge within it (or yields a constant mapping)
    falls back to raw Pearson and sets fallback=True.
    """
    if mode not in PLCC_MODES:
        raise InputValidationError(f"plcc mode must be one of {PLCC_MODES}, got {mode!r}")
    x, y = _paired(pred, label)
    if mode == "raw":
        return PlccResult(pearson(x, y), "raw")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            warnings.simplefilter("ignore", RuntimeWarning)
            beta, _ = curve_fit(logistic4, x, y, p0=_initial_logistic(x, y), jac=logistic4_jacobian,
                                maxfev=C.PLCC_LOGISTIC_MAX_ITER)
        mapped = logistic4(x, *beta)
        if not np.all(np.isfinite(mapped)) or np.ptp(mapped) == 0:
            raise RuntimeError("degenerate logistic mapping")
        return PlccResult(pearson(mapped, y), "logistic")
    except (RuntimeError, ValueError) as e:
        logger.warning(f"Logistic PLCC fit failed ({e}); falling back to raw Pearson")
        return PlccResult(pearson(x, y), "raw", fallback=True)


def plcc(pred: Sequence[float], label: Sequence[float], mode: str = "logistic") -> float:
    """Pearson linear correlation, after logistic mapping unless mode='raw'"""
    return fit_plcc(pred, label, mode).value


def evaluate(pred: Sequence[float], label: Sequence[float], plcc_mode: str = "logistic") -> MetricPair:
    result = fit_plcc(pred, label, plcc_mode)
    mode = "raw_fallback" if result.fallback else result.mode
    return MetricPair(srcc=srcc(pred, label), plcc=result.value, n=len(pred), plcc_mode=mode)


def subgroup_metrics(pred: Sequence[float], label: Sequence[float], groups: Sequence[Hashable],
                     plcc_mode: str = "logistic") -> Dict[Hashable, Optional[MetricPair]]:
    """
    Metrics per group (e.g. target component); None where a group is too small
    or constant for the correlation to be defined.
    """
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    out: Dict[Hashable, Optional[MetricPair]] = {}
    for g in sorted(set(groups), key=str):
        idx = [i for i, gg in enumerate(groups) if gg == g]
        try:
            out[g] = evaluate(pred[idx], label[idx], plcc_mode)
        except (InputValidationError, UndefinedMetricError):
            out[g] = None
    return out


def jaccard(a: Iterable[Hashable], b: Iterable[Hashable]) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


# ---------- split by reference ----------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    train_reference_ids: Tuple[str, ...]
    val_reference_ids: Tuple[str, ...]
    ratio: float = C.DEFAULT_SPLIT_RATIO
    seed: int = 0

    def is_train(self, reference_id: str) -> bool:
        return reference_id in set(self.train_reference_ids)

    def to_dict(self) -> Dict[str, Any]:
        return {"train_reference_ids": list(self.train_reference_ids),
                "val_reference_ids": list(self.val_reference_ids),
                "ratio": self.ratio, "seed": self.seed}


SplitSource = Union[DomainDataset, TargetSet, Sequence[DomainDataset], Sequence[str]]


def _collect_reference_ids(source: SplitSource) -> List[str]:
    if isinstance(source, (DomainDataset, TargetSet)):
        source = [source]
    ids: List[str] = []
    for item in source:
        if isinstance(item, DomainDataset):
            ids.extend(item.reference_ids)
        elif isinstance(item, TargetSet):
            if len(item) and len(item.reference_ids) != len(item):
                raise InputValidationError(f"Target '{item.name}' has images without reference_id")
            ids.extend(item.reference_ids)
        else:
            ids.append(item)
    if any(not rid for rid in ids):
        raise InputValidationError("Every sample needs a reference_id to be split by reference")
    return sorted(set(ids))


def split_by_reference(source: SplitSource, ratio: float = C.DEFAULT_SPLIT_RATIO, seed: int = 0) -> SplitPlan:
    """
    Partition reference ids so that no content lands on both sides.

    Args:
        source: Dataset(s), target set, or plain reference ids
        ratio: Fraction of references assigned to the training side
        seed: Shuffle seed

    Returns:
        SplitPlan whose training side holds round(ratio * total) ids, kept
        between 1 and total - 1 when there are at least two references
    """
    if not 0 < ratio < 1:
        raise InputValidationError(f"Split ratio must lie in (0, 1), got {ratio}")
    ids = _collect_reference_ids(source)
    if not ids:
        raise InputValidationError("Nothing to split: no reference ids")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train = int(round(ratio * len(ids)))
    if len(ids) >= 2:
        n_train = min(max(n_train, 1), len(ids) - 1)
    else:
        n_train = 1
    return SplitPlan(tuple(sorted(shuffled[:n_train])), tuple(sorted(shuffled[n_train:])), ratio, seed)


def split_dataset(dataset: DomainDataset, plan: SplitPlan) -> Tuple[DomainDataset, DomainDataset]:
    return (dataset.filter_references(plan.train_reference_ids),
            dataset.filter_references(plan.val_reference_ids))


def split_target(target: TargetSet, plan: SplitPlan) -> Tuple[TargetSet, TargetSet]:
    train = set(plan.train_reference_ids)
    first = [i for i, rid in enumerate(target.reference_ids) if rid in train]
    second = [i for i, rid in enumerate(target.reference_ids) if rid not in train]
    return target.subset(first), target.subset(second)


# ---------- repeated runs ---------------------------------------------------------

@dataclass
class RunRecord:
    run: int
    seed: int
    setting: str
    n: int
    srcc: float
    plcc: float
    plcc_mode: str

    @property
    def failed(self) -> bool:
        return self.plcc_mode == "failed"


@dataclass
class RepeatedResult:
    """Per-run table plus per-setting medians over the successful runs"""
    records: List[RunRecord] = field(default_factory=list)
    medians: Dict[str, Optional[MetricPair]] = field(default_factory=dict)
    failures: Dict[str, int] = field(default_factory=dict)

    @property
    def median(self) -> Optional[MetricPair]:
        """Median of the only (or first) setting"""
        return next(iter(self.medians.values()), None)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(r) for r in self.records], columns=RESULT_COLUMNS)

    def summary(self) -> Dict[str, Any]:
        return {
            setting: {
                "median": pair.to_dict() if pair is not None else None,
                "failures": self.failures.get(setting, 0),
                "runs": sum(1 for r in self.records if r.setting == setting),
            }
            for setting, pair in self.medians.items()
        }


ExperimentOutcome = Union[MetricPair, Mapping[str, Optional[MetricPair]]]


def _failed(run: int, seed: int, setting: str) -> RunRecord:
    return RunRecord(run, seed, setting, 0, float("nan"), float("nan"), "failed")


def repeated_experiment(experiment_fn: Callable[[int], ExperimentOutcome], n_repeats: int = C.DEFAULT_REPEATS,
                        base_seed: int = 0, max_workers: int = 1,
                        settings: Sequence[str] = ("default",)) -> RepeatedResult:
    """
    Run experiment_fn(seed) for seeds base_seed .. base_seed + n_repeats - 1.

    experiment_fn returns a MetricPair or a mapping from setting name to a
    MetricPair (None marks an undefined metric). A run raising
    UndefinedMetricError is recorded as failed for every setting; medians are
    taken per metric over the successful runs.

    Args:
        experiment_fn: One experiment for a given seed
        n_repeats: Number of runs
        base_seed: First seed
        max_workers: Runs executed concurrently; results are merged in seed order
        settings: Setting names to record when a whole run fails
    """
    if n_repeats < 1:
        raise InputValidationError(f"n_repeats must be >= 1, got {n_repeats}")
    seeds = [base_seed + i for i in range(n_repeats)]

    def _one(seed: int):
        try:
            return experiment_fn(seed)
        except UndefinedMetricError as e:
            logger.warning(f"Run with seed {seed} failed: {e}")
            return None

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(_one, seeds))
    else:
        outcomes = [_one(s) for s in seeds]

    result = RepeatedResult()
    order: List[str] = []
    for run, (seed, outcome) in enumerate(zip(seeds, outcomes)):
        if outcome is None:
            per_setting: Mapping[str, Optional[MetricPair]] = {s: None for s in (order or settings)}
        elif isinstance(outcome, MetricPair):
            per_setting = {settings[0]: outcome}
        else:
            per_setting = outcome
        for setting, pair in per_setting.items():
            if setting not in order:
                order.append(setting)
            if pair is None:
                result.records.append(_failed(run, seed, setting))
            else:
                result.records.append(RunRecord(run, seed, setting, pair.n, pair.srcc, pair.plcc, pair.plcc_mode))

    for setting in order:
        ok = [r for r in result.records if r.setting == setting and not r.failed]
        result.failures[setting] = sum(1 for r in result.records if r.setting == setting and r.failed)
        if ok:
            modes = sorted({r.plcc_mode for r in ok})
            result.medians[setting] = MetricPair(
                srcc=float(np.median([r.srcc for r in ok])),
                plcc=float(np.median([r.plcc for r in ok])),
                n=int(np.median([r.n for r in ok])),
                plcc_mode=modes[0] if len(modes) == 1 else "mixed",
            )
        else:
            result.medians[setting] = None
        logger.info(f"Setting '{setting}': {len(ok)}/{len(ok) + result.failures[setting]} runs succeeded, "
                    f"median={result.medians[setting]}")
    return result
