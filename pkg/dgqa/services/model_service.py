"""
Model Service
Trainable heads over NSS features: the multi-source domain classifier
(categorical cross-entropy) and the quality regressor (L1), a functional Adam
with decoupled weight decay, and finite-difference gradient verification.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.preprocessing import StandardScaler

from dgqa import constants as C
from dgqa.errors import InputValidationError
from dgqa.models import DomainDataset, RasterImage
from dgqa.schemas import PatchMode, PatchPolicy, TrainConfig
from dgqa.services.feature_service import FeatureFn, PatchFeatureExtractor

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]


@dataclass
class NormStats:
    """Per-dimension standardization frozen from the training pool"""
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "NormStats":
        scaler = StandardScaler().fit(X)
        return cls(mean=scaler.mean_.astype(np.float64), scale=scaler.scale_.astype(np.float64))

    @classmethod
    def identity(cls, dim: int) -> "NormStats":
        return cls(mean=np.zeros(dim), scale=np.ones(dim))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale

    def to_dict(self) -> Dict[str, List[float]]:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, List[float]]) -> "NormStats":
        return cls(mean=np.asarray(data["mean"], dtype=np.float64),
                   scale=np.asarray(data["scale"], dtype=np.float64))


@dataclass
class Batch:
    """Stacked mini-batch: X of shape (n, D) and targets (one-hot (n, k) or (n,))"""
    X: np.ndarray
    Y: np.ndarray

    def __len__(self) -> int:
        return int(self.X.shape[0])


BatchLike = Union[Batch, Sequence[Tuple[Any, Any]]]


def as_batch(batch: BatchLike) -> Batch:
    if isinstance(batch, Batch):
        out = batch
    else:
        pairs = list(batch)
        if not pairs:
            raise InputValidationError("Batch is empty")
        out = Batch(X=np.stack([np.asarray(x, dtype=np.float64) for x, _ in pairs]),
                    Y=np.asarray([y for _, y in pairs], dtype=np.float64))
    if len(out) == 0:
        raise InputValidationError("Batch is empty")
    return out


class MLPHead:
    """
    One-hidden-layer tanh network (or a linear map when hidden is None).

    Inputs are standardized with norm_stats before the first layer. The output
    layer starts at zero so an untrained head is neutral.
    """

    kind = "head"

    def __init__(self, input_dim: int, output_dim: int, hidden: Optional[int], params: Params,
                 norm_stats: Optional[NormStats] = None):
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.hidden = hidden
        self.params = params
        self.norm_stats = norm_stats or NormStats.identity(self.input_dim)
        self.meta: Dict[str, Any] = {}

    @staticmethod
    def init_params(input_dim: int, output_dim: int, hidden: Optional[int],
                    rng: Optional[np.random.Generator]) -> Params:
        if hidden is None:
            return {"W": np.zeros((input_dim, output_dim)), "b": np.zeros(output_dim)}
        if rng is None:
            w1 = np.zeros((input_dim, hidden))
        else:
            limit = np.sqrt(6.0 / (input_dim + hidden))
            w1 = rng.uniform(-limit, limit, size=(input_dim, hidden))
        return {"W1": w1, "b1": np.zeros(hidden),
                "W2": np.zeros((hidden, output_dim)), "b2": np.zeros(output_dim)}

    def check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise InputValidationError(f"Expected inputs of dimension {self.input_dim}, got shape {X.shape}")
        return X

    def forward(self, Z: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        """Forward pass on standardized inputs; returns raw outputs and a backprop cache"""
        if self.hidden is None:
            return Z @ self.params["W"] + self.params["b"], {"Z": Z}
        H = np.tanh(Z @ self.params["W1"] + self.params["b1"])
        return H @ self.params["W2"] + self.params["b2"], {"Z": Z, "H": H}

    def backward(self, cache: Dict[str, np.ndarray], d_out: np.ndarray) -> Params:
        Z = cache["Z"]
        if self.hidden is None:
            return {"W": Z.T @ d_out, "b": d_out.sum(axis=0)}
        H = cache["H"]
        d_pre = (d_out @ self.params["W2"].T) * (1.0 - H * H)
        return {
            "W1": Z.T @ d_pre,
            "b1": d_pre.sum(axis=0),
            "W2": H.T @ d_out,
            "b2": d_out.sum(axis=0),
        }

    def outputs(self, X: np.ndarray) -> np.ndarray:
        out, _ = self.forward(self.norm_stats.apply(self.check_input(X)))
        return out

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": C.CHECKPOINT_VERSION,
            "kind": self.kind,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden": self.hidden,
            "params": {name: {"shape": list(p.shape), "values": p.ravel().tolist()}
                       for name, p in sorted(self.params.items())},
            "norm_stats": self.norm_stats.to_dict(),
            "meta": self.meta,
        }

    @staticmethod
    def params_from_dict(data: Dict[str, Any]) -> Params:
        return {name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
                for name, entry in data["params"].items()}


class SoftmaxClassifier(MLPHead):
    """Multi-source domain classifier over k source domains"""

    kind = "softmax_classifier"

    def __init__(self, input_dim: int, k: int, hidden: Optional[int], params: Params,
                 norm_stats: Optional[NormStats] = None, domain_ids: Optional[Sequence[int]] = None):
        super().__init__(input_dim, k, hidden, params, norm_stats)
        self.domain_ids = list(domain_ids) if domain_ids is not None else list(range(1, k + 1))
        if len(self.domain_ids) != k:
            raise InputValidationError(f"{len(self.domain_ids)} domain ids for k={k} outputs")

    @property
    def k(self) -> int:
        return self.output_dim

    @classmethod
    def initialize(cls, input_dim: int, k: int, hidden: Optional[int] = 32, seed: Optional[int] = 0,
                   norm_stats: Optional[NormStats] = None,
                   domain_ids: Optional[Sequence[int]] = None) -> "SoftmaxClassifier":
        rng = None if seed is None else np.random.default_rng(seed)
        return cls(input_dim, k, hidden, cls.init_params(input_dim, k, hidden, rng), norm_stats, domain_ids)

    @classmethod
    def zeros(cls, input_dim: int, k: int, hidden: Optional[int] = None) -> "SoftmaxClassifier":
        return cls.initialize(input_dim, k, hidden, seed=None)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.outputs(X))

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data["domain_ids"] = list(self.domain_ids)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SoftmaxClassifier":
        model = cls(data["input_dim"], data["output_dim"], data["hidden"], cls.params_from_dict(data),
                   NormStats.from_dict(data["norm_stats"]), data.get("domain_ids"))
        model.meta = dict(data.get("meta", {}))
        return model


class Regressor(MLPHead):
    """Scalar quality regressor; outputs are de-standardized to label units"""

    kind = "regressor"

    def __init__(self, input_dim: int, hidden: Optional[int], params: Params,
                 norm_stats: Optional[NormStats] = None, label_mean: float = 0.0, label_scale: float = 1.0):
        super().__init__(input_dim, 1, hidden, params, norm_stats)
        self.label_mean = float(label_mean)
        self.label_scale = float(label_scale)

    @classmethod
    def initialize(cls, input_dim: int, hidden: Optional[int] = 32, seed: Optional[int] = 0,
                   norm_stats: Optional[NormStats] = None, label_mean: float = 0.0,
                   label_scale: float = 1.0) -> "Regressor":
        rng = None if seed is None else np.random.default_rng(seed)
        return cls(input_dim, hidden, cls.init_params(input_dim, 1, hidden, rng), norm_stats,
                   label_mean, label_scale)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.label_mean + self.label_scale * self.outputs(X)[:, 0]

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data["label_stats"] = {"mean": self.label_mean, "scale": self.label_scale}
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Regressor":
        stats = data.get("label_stats", {"mean": 0.0, "scale": 1.0})
        model = cls(data["input_dim"], data["hidden"], cls.params_from_dict(data),
                   NormStats.from_dict(data["norm_stats"]), stats["mean"], stats["scale"])
        model.meta = dict(data.get("meta", {}))
        return model


def head_from_dict(data: Dict[str, Any]) -> MLPHead:
    if data.get("version") != C.CHECKPOINT_VERSION:
        raise InputValidationError(f"Unsupported checkpoint version {data.get('version')}")
    if data.get("kind") == SoftmaxClassifier.kind:
        return SoftmaxClassifier.from_dict(data)
    if data.get("kind") == Regressor.kind:
        return Regressor.from_dict(data)
    raise InputValidationError(f"Unknown checkpoint kind {data.get('kind')!r}")


# ---------- forward helpers and losses ----------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def classify(model: SoftmaxClassifier, x: np.ndarray) -> np.ndarray:
    """
    Domain probabilities for one feature vector.

    Raises:
        InputValidationError: If x does not have the model's input dimension
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise InputValidationError(f"Expected a feature vector of length {model.input_dim}, got {x.shape}")
    return model.predict_proba(x[None, :])[0]


def _check_one_hot(Y: np.ndarray, k: int) -> None:
    if Y.ndim != 2 or Y.shape[1] != k:
        raise InputValidationError(f"Labels must be one-hot rows of length {k}, got shape {Y.shape}")
    if not (np.all((Y == 0) | (Y == 1)) and np.all(Y.sum(axis=1) == 1)):
        raise InputValidationError("Labels must be valid one-hot vectors")


def cross_entropy_loss_and_grad(model: SoftmaxClassifier, batch: BatchLike,
                                need_grad: bool = True) -> Tuple[float, Optional[Params]]:
    b = as_batch(batch)
    _check_one_hot(b.Y, model.k)
    logits, cache = model.forward(model.norm_stats.apply(model.check_input(b.X)))
    probs = softmax(logits)
    clamped = np.clip(probs, C.PROB_CLAMP, 1.0 - C.PROB_CLAMP)
    loss = float(np.mean(-np.sum(b.Y * np.log(clamped), axis=1)))
    if not need_grad:
        return loss, None
    return loss, model.backward(cache, (probs - b.Y) / len(b))


def cross_entropy_loss(model: SoftmaxClassifier, batch: BatchLike) -> float:
    """Mean categorical cross-entropy with probabilities clamped to [1e-12, 1 - 1e-12]"""
    return cross_entropy_loss_and_grad(model, batch, need_grad=False)[0]


def l1_loss_and_grad(model: Regressor, batch: BatchLike,
                     need_grad: bool = True) -> Tuple[float, Optional[Params]]:
    b = as_batch(batch)
    y = np.asarray(b.Y, dtype=np.float64).reshape(-1)
    if y.shape[0] != len(b):
        raise InputValidationError("L1 batch needs one scalar label per sample")
    out, cache = model.forward(model.norm_stats.apply(model.check_input(b.X)))
    residual = model.label_mean + model.label_scale * out[:, 0] - y
    loss = float(np.mean(np.abs(residual)))
    if not need_grad:
        return loss, None
    d_out = (model.label_scale * np.sign(residual) / len(b))[:, None]
    return loss, model.backward(cache, d_out)


def l1_loss(model: Regressor, batch: BatchLike) -> float:
    """Mean absolute error in label units"""
    return l1_loss_and_grad(model, batch, need_grad=False)[0]


def l1_residuals(model: Regressor, batch: Batch) -> np.ndarray:
    """Signed prediction errors in label units; the L1 loss has a kink wherever one is zero"""
    return model.predict(batch.X) - np.asarray(batch.Y, dtype=np.float64).reshape(-1)


@dataclass(frozen=True)
class Objective:
    """A loss with its analytic gradient, and the per-sample kink distances when it is not smooth"""
    name: str
    value: Any
    value_and_grad: Any
    residuals: Optional[Any] = None


CROSS_ENTROPY = Objective("cross_entropy", cross_entropy_loss, cross_entropy_loss_and_grad)
L1 = Objective("l1", l1_loss, l1_loss_and_grad, l1_residuals)


# ---------- optimizer -----------------------------------------------------------

@dataclass
class AdamState:
    step: int
    m: Params
    v: Params

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamState":
        return cls(step=0, m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: Params, grads: Params, state: AdamState,
              config: TrainConfig) -> Tuple[Params, AdamState]:
    """
    One Adam update with bias correction and decoupled weight decay.

    params <- params * (1 - lr * wd), then params <- params - lr * m_hat / (sqrt(v_hat) + eps).

    Returns:
        New parameter dict and new optimizer state (inputs are not modified)
    """
    if set(params) != set(grads) or set(params) != set(state.m) or set(params) != set(state.v):
        raise InputValidationError("params, grads and optimizer state have different keys")
    for name, p in params.items():
        if grads[name].shape != p.shape or state.m[name].shape != p.shape or state.v[name].shape != p.shape:
            raise InputValidationError(f"Shape mismatch for parameter {name}")

    t = state.step + 1
    lr = config.learning_rate
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    new_params: Params = {}
    new_m: Params = {}
    new_v: Params = {}
    for name, p in params.items():
        g = grads[name]
        m = config.beta1 * state.m[name] + (1.0 - config.beta1) * g
        v = config.beta2 * state.v[name] + (1.0 - config.beta2) * (g * g)
        decayed = p * (1.0 - lr * config.weight_decay)
        new_params[name] = decayed - lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step=t, m=new_m, v=new_v)


# ---------- training ------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float] = None
    val_metric: Optional[float] = None


@dataclass
class TrainingLog:
    """Per-epoch losses; val_metric is accuracy for the classifier and MAE for the regressor"""
    objective: str
    n_train: int
    n_val: int
    epochs: List[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].train_loss

    def to_dict(self) -> Dict[str, Any]:
        return {
            "objective": self.objective,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "epochs": [vars(e) for e in self.epochs],
        }


def balanced_indices(groups: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Oversample every group to the size of the largest one"""
    uniq, counts = np.unique(groups, return_counts=True)
    target = counts.max()
    picked = []
    for g in uniq:
        idx = np.flatnonzero(groups == g)
        extra = rng.choice(idx, size=target - idx.size, replace=True) if target > idx.size else []
        picked.append(np.concatenate([idx, np.asarray(extra, dtype=int)]))
    return np.sort(np.concatenate(picked))


def _run_epochs(model: MLPHead, X: np.ndarray, Y: np.ndarray, objective: Objective, config: TrainConfig,
                rng: np.random.Generator, log: TrainingLog, validate) -> None:
    state = AdamState.zeros_like(model.params)
    n = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = objective.value_and_grad(model, Batch(X[idx], Y[idx]))
            model.params, state = adam_step(model.params, grads, state, config)
            total += loss * idx.size
        record = EpochRecord(epoch=epoch, train_loss=total / n)
        if validate is not None:
            record.val_loss, record.val_metric = validate(model)
        log.epochs.append(record)
        logger.debug(f"{objective.name} epoch {epoch}: train={record.train_loss:.5f} val={record.val_loss}")
    for name, p in model.params.items():
        if not np.all(np.isfinite(p)):
            raise InputValidationError(f"Parameter {name} became non-finite during training")


def fit_classifier(X: np.ndarray, labels: np.ndarray, k: int, config: TrainConfig,
                   domain_ids: Optional[Sequence[int]] = None, X_val: Optional[np.ndarray] = None,
                   labels_val: Optional[np.ndarray] = None,
                   groups: Optional[np.ndarray] = None) -> Tuple[SoftmaxClassifier, TrainingLog]:
    """
    Train a softmax head on feature rows with shuffled mini-batch Adam.

    Args:
        X: Feature rows (n, D)
        labels: Integer class index per row in [0, k)
        k: Number of classes
        config: Optimizer settings and seed
        domain_ids: Domain id for each class index
        X_val, labels_val: Optional validation rows (logged, never used for selection)
        groups: Optional group id per row for balance_domains oversampling
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[0] != labels.shape[0]:
        raise InputValidationError(f"Training rows {X.shape} do not match {labels.shape[0]} labels")
    if k < 2:
        raise InputValidationError(f"A classifier needs at least 2 classes, got {k}")
    rng = np.random.default_rng(config.seed)
    if config.balance_domains:
        keep = balanced_indices(labels if groups is None else np.asarray(groups), rng)
        X, labels = X[keep], labels[keep]
    model = SoftmaxClassifier.initialize(X.shape[1], k, config.hidden, config.seed,
                                         NormStats.fit(X), domain_ids)
    Y = np.eye(k)[labels]

    validate = None
    n_val = 0
    if X_val is not None and len(X_val) > 0:
        X_val = np.asarray(X_val, dtype=np.float64)
        labels_val = np.asarray(labels_val, dtype=int)
        val_batch = Batch(X_val, np.eye(k)[labels_val])
        n_val = X_val.shape[0]

        def validate(m):
            loss, _ = cross_entropy_loss_and_grad(m, val_batch, need_grad=False)
            acc = float(np.mean(np.argmax(m.predict_proba(X_val), axis=1) == labels_val))
            return loss, acc

    log = TrainingLog(objective=CROSS_ENTROPY.name, n_train=X.shape[0], n_val=n_val)
    _run_epochs(model, X, Y, CROSS_ENTROPY, config, rng, log, validate)
    model.meta = {"train_config": config.model_dump(mode="json"), "seed": config.seed}
    return model, log


def fit_regressor(X: np.ndarray, y: np.ndarray, config: TrainConfig, X_val: Optional[np.ndarray] = None,
                  y_val: Optional[np.ndarray] = None,
                  groups: Optional[np.ndarray] = None) -> Tuple[Regressor, TrainingLog]:
    """Train a quality regressor on feature rows with L1 loss; labels are standardized internally"""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputValidationError("Regressor training data is empty")
    if X.shape[0] != y.shape[0]:
        raise InputValidationError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    rng = np.random.default_rng(config.seed)
    if config.balance_domains and groups is not None:
        keep = balanced_indices(np.asarray(groups), rng)
        X, y = X[keep], y[keep]
    label_std = float(np.std(y))
    model = Regressor.initialize(X.shape[1], config.hidden, config.seed, NormStats.fit(X),
                                 label_mean=float(np.mean(y)), label_scale=label_std if label_std > 0 else 1.0)

    validate = None
    n_val = 0
    if X_val is not None and len(X_val) > 0:
        val_batch = Batch(np.asarray(X_val, dtype=np.float64), np.asarray(y_val, dtype=np.float64))
        n_val = len(val_batch)

        def validate(m):
            loss = l1_loss(m, val_batch)
            return loss, loss

    log = TrainingLog(objective=L1.name, n_train=X.shape[0], n_val=n_val)
    _run_epochs(model, X, y, L1, config, rng, log, validate)
    model.meta = {"train_config": config.model_dump(mode="json"), "seed": config.seed}
    return model, log


def dataset_rows(domains: Sequence[DomainDataset], feature_fn: FeatureFn,
                 reference_ids: Optional[set] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Feature rows for every sample of the given domains.

    Returns:
        (X, quality per row, domain position per row); a sample contributes one
        row per patch returned by feature_fn
    """
    rows, qualities, positions = [], [], []
    for pos, dataset in enumerate(domains):
        for sample in dataset.samples:
            if reference_ids is not None and sample.reference_id not in reference_ids:
                continue
            feats = np.atleast_2d(feature_fn(sample.image, sample.sample_id))
            rows.append(feats)
            qualities.extend([sample.quality] * feats.shape[0])
            positions.extend([pos] * feats.shape[0])
    if not rows:
        return np.empty((0, C.FEATURE_DIM)), np.empty(0), np.empty(0, dtype=int)
    return np.vstack(rows), np.asarray(qualities), np.asarray(positions, dtype=int)


def _reference_split(domains: Sequence[DomainDataset], config: TrainConfig):
    # imported here: the evaluation service depends on nothing in this module
    from dgqa.services.evaluation_service import split_by_reference

    if config.val_ratio <= 0:
        return None
    all_refs = {rid for d in domains for rid in d.reference_ids}
    if len(all_refs) < 2:
        return None
    return split_by_reference(domains, ratio=1.0 - config.val_ratio, seed=config.seed)


def train_classifier(domains: Sequence[DomainDataset], feature_fn: FeatureFn,
                     config: TrainConfig) -> Tuple[SoftmaxClassifier, TrainingLog]:
    """
    Train the multi-source domain classifier F_D.

    Validation rows come from a reference-disjoint split and are only logged.

    Raises:
        InputValidationError: Fewer than 2 domains or an empty domain
    """
    if len(domains) < 2:
        raise InputValidationError(f"Domain classification needs at least 2 domains, got {len(domains)}")
    for d in domains:
        if len(d) == 0:
            raise InputValidationError(f"Domain #{d.domain} is empty")
    plan = _reference_split(domains, config)
    train_refs = set(plan.train_reference_ids) if plan else None
    X, _, labels = dataset_rows(domains, feature_fn, train_refs)
    X_val = labels_val = None
    if plan is not None:
        X_val, _, labels_val = dataset_rows(domains, feature_fn, set(plan.val_reference_ids))
    model, log = fit_classifier(X, labels, len(domains), config, [d.domain for d in domains], X_val, labels_val)
    last = log.epochs[-1]
    logger.info(
        f"Domain classifier: k={len(domains)}, rows={log.n_train}, final loss={last.train_loss:.4f}, "
        f"val acc={last.val_metric if last.val_metric is not None else 'n/a'}"
    )
    return model, log


def train_regressor(data: Sequence[DomainDataset], feature_fn: FeatureFn,
                    config: TrainConfig) -> Tuple[Regressor, TrainingLog]:
    """
    Train the quality regressor F_R on the union of the given domains.

    Raises:
        InputValidationError: If there are no training samples
    """
    data = list(data)
    if sum(len(d) for d in data) == 0:
        raise InputValidationError("Regressor training data is empty")
    plan = _reference_split(data, config)
    train_refs = set(plan.train_reference_ids) if plan else None
    X, y, groups = dataset_rows(data, feature_fn, train_refs)
    X_val = y_val = None
    if plan is not None:
        X_val, y_val, _ = dataset_rows(data, feature_fn, set(plan.val_reference_ids))
    model, log = fit_regressor(X, y, config, X_val, y_val, groups)
    logger.info(f"Quality regressor: domains={[d.domain for d in data]}, rows={log.n_train}, "
                f"final L1={log.final_loss:.4f}")
    return model, log


def predict_quality(model: Regressor, image: RasterImage, policy: PatchPolicy, key: str = "",
                    feature_fn: Optional[FeatureFn] = None) -> float:
    """
    Mean regressor output over the policy's test patches.

    Args:
        model: Trained regressor
        image: Image to score
        policy: Patch policy (test_patches_per_image crops)
        key: Identifier that selects the image's patch stream
        feature_fn: Test-mode feature function (built from policy when omitted)
    """
    feature_fn = feature_fn or PatchFeatureExtractor(policy, PatchMode.TEST)
    return float(np.mean(model.predict(np.atleast_2d(feature_fn(image, key)))))


# ---------- gradient verification -----------------------------------------------

@dataclass
class GradientCheckReport:
    """
    per_parameter holds ||g_a - g_n|| / max(||g_a||, ||g_n||, 1e-12) per tensor.
    max_coordinate_error is the largest |g_a - g_n| / max(|g_a|, |g_n|, floor)
    over single coordinates, so one wrong entry is not diluted by its tensor.
    """
    objective: str
    per_parameter: Dict[str, float]
    max_coordinate_error: float
    worst_coordinate: Optional[Tuple[str, Tuple[int, ...]]]
    n_checked: int
    tolerance: float
    n_excluded: int = 0

    @property
    def max_tensor_error(self) -> float:
        return max(self.per_parameter.values()) if self.per_parameter else 0.0

    @property
    def max_relative_error(self) -> float:
        return max(self.max_tensor_error, self.max_coordinate_error)

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def _away_from_kinks(model: MLPHead, objective: Objective, batch: Batch, margin: float) -> Tuple[Batch, int]:
    if objective.residuals is None:
        return batch, 0
    keep = np.abs(objective.residuals(model, batch)) >= margin
    dropped = int(np.sum(~keep))
    if not keep.any():
        raise InputValidationError(f"Every residual lies within {margin} of the {objective.name} kink")
    if dropped:
        logger.warning(f"Gradient check {objective.name}: {dropped} sample(s) within {margin} of a kink excluded")
    return Batch(batch.X[keep], batch.Y[keep]), dropped


def gradient_check(model: MLPHead, objective: Objective, batch: BatchLike, tolerance: float = 1e-4,
                   max_params: Optional[int] = None, step: float = C.GRADCHECK_STEP,
                   seed: int = 0, kink_margin: float = C.L1_KINK_MARGIN,
                   scale_floor: float = C.GRADCHECK_SCALE_FLOOR) -> GradientCheckReport:
    """
    Compare analytic gradients with central finite differences.

    Every coordinate is checked unless max_params is given and smaller than
    the parameter count, in which case a seeded random subsample is used. For
    objectives with kinks, samples whose residual lies within kink_margin of
    zero are excluded first and counted in n_excluded.

    Raises:
        InputValidationError: If the batch is empty or every sample sits on a kink
    """
    batch, excluded = _away_from_kinks(model, objective, as_batch(batch), kink_margin)
    _, analytic = objective.value_and_grad(model, batch)
    coords = [(name, idx) for name in sorted(model.params) for idx in np.ndindex(model.params[name].shape)]
    if max_params is not None and len(coords) > max_params:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=max_params, replace=False)
        coords = [coords[i] for i in sorted(picked)]

    by_name: Dict[str, Tuple[List[float], List[float]]] = {}
    worst, worst_coord = 0.0, None
    for name, idx in coords:
        param = model.params[name]
        original = param[idx]
        param[idx] = original + step
        plus = objective.value(model, batch)
        param[idx] = original - step
        minus = objective.value(model, batch)
        param[idx] = original
        g_a = float(analytic[name][idx])
        g_n = (plus - minus) / (2.0 * step)
        err = abs(g_a - g_n) / max(abs(g_a), abs(g_n), scale_floor)
        if err > worst:
            worst, worst_coord = err, (name, tuple(int(i) for i in idx))
        a_list, n_list = by_name.setdefault(name, ([], []))
        a_list.append(g_a)
        n_list.append(g_n)

    report = GradientCheckReport(
        objective=objective.name,
        per_parameter={name: _relative_error(np.array(a), np.array(n)) for name, (a, n) in by_name.items()},
        max_coordinate_error=worst,
        worst_coordinate=worst_coord,
        n_checked=len(coords),
        tolerance=tolerance,
        n_excluded=excluded,
    )
    logger.debug(f"Gradient check {objective.name}: tensor {report.max_tensor_error:.2e}, "
                 f"coordinate {report.max_coordinate_error:.2e} at {worst_coord}")
    return report
