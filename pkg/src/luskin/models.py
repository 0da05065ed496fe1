"""Trainable risk-assignment models and threshold-classification metrics.

All three model families train by deterministic full-batch momentum gradient
descent, so a fixed seed and config reproduce parameters bit-for-bit and the
gradients are cheap to verify against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import SchemaError, TrainingError

_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    iterations: int = 2000
    hidden_sizes: tuple[int, ...] = (32,)
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise TrainingError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise TrainingError("learning rate must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise TrainingError("momentum must lie in [0, 1)")
        if self.l2 < 0:
            raise TrainingError("l2 weight must be non-negative")


@dataclass
class MetricReport:
    auc: float
    accuracy: float
    tpr: float
    fpr: float
    tp: int
    fp: int
    tn: int
    fn: int


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class RiskScorer:
    """Base class: maps feature rows to real-valued risk scores."""

    variant: str
    default_threshold: float
    dimension: int

    def score_all(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_dim(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dimension:
            raise SchemaError(
                f"feature dimension {X.shape[-1] if X.ndim else 0} does not match model ({self.dimension})"
            )
        return X

    def to_dict(self) -> dict:
        raise NotImplementedError


class LogisticModel(RiskScorer):
    variant = "logistic"
    default_threshold = 0.5

    def __init__(self, weights: np.ndarray, bias: float, train_config: TrainConfig | None = None):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)
        self.dimension = len(self.weights)
        self.train_config = train_config

    def score_all(self, X: np.ndarray) -> np.ndarray:
        X = self._check_dim(X)
        return sigmoid(X @ self.weights + self.bias)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "dimension": self.dimension,
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "default_threshold": self.default_threshold,
            "train_config": asdict(self.train_config) if self.train_config else None,
        }


class MlpModel(RiskScorer):
    """Feed-forward net: tanh hidden layers, sigmoid output."""

    variant = "mlp"
    default_threshold = 0.5

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray],
                 train_config: TrainConfig | None = None):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.dimension = self.weights[0].shape[0]
        self.train_config = train_config

    def forward(self, X: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Hidden activations per layer and the output probabilities."""
        a = X
        activations = [a]
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ W + b)
            activations.append(a)
        p = sigmoid((a @ self.weights[-1] + self.biases[-1]).ravel())
        return activations, p

    def score_all(self, X: np.ndarray) -> np.ndarray:
        X = self._check_dim(X)
        return self.forward(X)[1]

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "dimension": self.dimension,
            "layer_sizes": [w.shape[1] for w in self.weights],
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "default_threshold": self.default_threshold,
            "train_config": asdict(self.train_config) if self.train_config else None,
        }


class LinearSvmModel(RiskScorer):
    """Linear model under hinge loss; scores are raw signed margins."""

    variant = "linear_svm"
    default_threshold = 0.0

    def __init__(self, weights: np.ndarray, bias: float, train_config: TrainConfig | None = None):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)
        self.dimension = len(self.weights)
        self.train_config = train_config

    def score_all(self, X: np.ndarray) -> np.ndarray:
        X = self._check_dim(X)
        return X @ self.weights + self.bias

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "dimension": self.dimension,
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "default_threshold": self.default_threshold,
            "train_config": asdict(self.train_config) if self.train_config else None,
        }


def _check_training_inputs(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise TrainingError("X must be 2-D with one label per row")
    if len(y) < 2:
        raise TrainingError("need at least 2 training rows")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise TrainingError("training labels are single-class")
    return X, y


def logistic_nll(weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray,
                 l2: float = 0.0) -> float:
    """Mean negative log-likelihood plus 0.5*l2*||w||^2 (bias unregularized)."""
    p = np.clip(sigmoid(X @ weights + bias), _EPS, 1.0 - _EPS)
    nll = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(nll + 0.5 * l2 * np.dot(weights, weights))


def logistic_gradients(weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray,
                       l2: float = 0.0) -> tuple[np.ndarray, float]:
    p = sigmoid(X @ weights + bias)
    resid = (p - y) / len(y)
    return X.T @ resid + l2 * weights, float(np.sum(resid))


def train_logistic(X: np.ndarray, y: np.ndarray, cfg: TrainConfig = TrainConfig()) -> LogisticModel:
    X, y = _check_training_inputs(X, y)
    w = np.zeros(X.shape[1])
    b = 0.0
    vw = np.zeros_like(w)
    vb = 0.0
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is caught below
        for it in range(cfg.iterations):
            gw, gb = logistic_gradients(w, b, X, y, cfg.l2)
            vw = cfg.momentum * vw - cfg.learning_rate * gw
            vb = cfg.momentum * vb - cfg.learning_rate * gb
            w = w + vw
            b = b + vb
            if not (np.all(np.isfinite(w)) and np.isfinite(b)):
                raise TrainingError("non-finite parameters (learning rate too large?)", iteration=it)
    return LogisticModel(w, b, cfg)


def _init_mlp(dim: int, hidden: tuple[int, ...], seed: int) -> tuple[list, list]:
    rng = np.random.default_rng(seed)
    sizes = [dim, *hidden, 1]
    weights = [
        rng.normal(0.0, 1.0 / np.sqrt(sizes[i]), size=(sizes[i], sizes[i + 1]))
        for i in range(len(sizes) - 1)
    ]
    biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
    return weights, biases


def mlp_loss(model: MlpModel, X: np.ndarray, y: np.ndarray, l2: float = 0.0) -> float:
    p = np.clip(model.forward(X)[1], _EPS, 1.0 - _EPS)
    nll = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(nll + 0.5 * l2 * sum(np.sum(w * w) for w in model.weights))


def mlp_gradients(model: MlpModel, X: np.ndarray, y: np.ndarray,
                  l2: float = 0.0) -> tuple[list[np.ndarray], list[np.ndarray]]:
    activations, p = model.forward(X)
    n = len(y)
    delta = ((p - y) / n).reshape(n, 1)
    grads_w: list[np.ndarray] = [None] * len(model.weights)
    grads_b: list[np.ndarray] = [None] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        grads_w[layer] = activations[layer].T @ delta + l2 * model.weights[layer]
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer].T) * (1.0 - activations[layer] ** 2)
    return grads_w, grads_b


def train_mlp(X: np.ndarray, y: np.ndarray, cfg: TrainConfig = TrainConfig()) -> MlpModel:
    X, y = _check_training_inputs(X, y)
    if not cfg.hidden_sizes:
        raise TrainingError("mlp requires at least one hidden layer")
    weights, biases = _init_mlp(X.shape[1], cfg.hidden_sizes, cfg.seed)
    model = MlpModel(weights, biases, cfg)
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(cfg.iterations):
            gw, gb = mlp_gradients(model, X, y, cfg.l2)
            for layer in range(len(model.weights)):
                vel_w[layer] = cfg.momentum * vel_w[layer] - cfg.learning_rate * gw[layer]
                vel_b[layer] = cfg.momentum * vel_b[layer] - cfg.learning_rate * gb[layer]
                model.weights[layer] = model.weights[layer] + vel_w[layer]
                model.biases[layer] = model.biases[layer] + vel_b[layer]
            if not all(np.all(np.isfinite(w)) for w in model.weights):
                raise TrainingError("non-finite parameters (learning rate too large?)", iteration=it)
    return model


def train_linear_svm(X: np.ndarray, y: np.ndarray, cfg: TrainConfig = TrainConfig()) -> LinearSvmModel:
    """Hinge loss + L2 by full-batch subgradient descent; labels map to ±1."""
    X, y = _check_training_inputs(X, y)
    t = 2.0 * y - 1.0
    w = np.zeros(X.shape[1])
    b = 0.0
    vw = np.zeros_like(w)
    vb = 0.0
    n = len(y)
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(cfg.iterations):
            margins = t * (X @ w + b)
            active = margins < 1.0
            gw = -(X[active].T @ t[active]) / n + cfg.l2 * w
            gb = -np.sum(t[active]) / n
            vw = cfg.momentum * vw - cfg.learning_rate * gw
            vb = cfg.momentum * vb - cfg.learning_rate * gb
            w = w + vw
            b = b + vb
            if not (np.all(np.isfinite(w)) and np.isfinite(b)):
                raise TrainingError("non-finite parameters (learning rate too large?)", iteration=it)
    return LinearSvmModel(w, b, cfg)


def score(model: RiskScorer, row: np.ndarray) -> float:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise SchemaError("score expects a single feature row")
    return float(model.score_all(row.reshape(1, -1))[0])


def score_all(model: RiskScorer, X: np.ndarray) -> np.ndarray:
    return model.score_all(np.asarray(X, dtype=np.float64))


def classify(model: RiskScorer, row: np.ndarray, threshold: float | None = None) -> int:
    """1 iff the row's score is >= threshold (ties classify positive)."""
    if threshold is None:
        threshold = model.default_threshold
    return int(score(model, row) >= threshold)


def classify_all(model: RiskScorer, X: np.ndarray, threshold: float | None = None) -> np.ndarray:
    if threshold is None:
        threshold = model.default_threshold
    return (score_all(model, X) >= threshold).astype(np.int64)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    run_start = np.r_[True, sorted_vals[1:] != sorted_vals[:-1]]
    run_id = np.cumsum(run_start) - 1
    counts = np.bincount(run_id)
    first_rank = np.r_[0, np.cumsum(counts)[:-1]] + 1.0
    avg_rank = first_rank + (counts - 1) / 2.0
    ranks = np.empty(len(values))
    ranks[order] = avg_rank[run_id]
    return ranks


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney statistic: P(score_pos > score_neg), ties counted 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(np.sum(pos))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("auc is undefined for single-class labels")
    ranks = _average_ranks(scores)
    return float((np.sum(ranks[pos]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def tpr_fpr(scores: np.ndarray, labels: np.ndarray, threshold: float) -> MetricReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    pred = scores >= threshold
    actual = labels == 1
    if not (np.any(actual) and np.any(~actual)):
        raise TrainingError("rates are undefined for single-class labels")
    tp = int(np.sum(pred & actual))
    fp = int(np.sum(pred & ~actual))
    fn = int(np.sum(~pred & actual))
    tn = int(np.sum(~pred & ~actual))
    return MetricReport(
        auc=auc(scores, labels),
        accuracy=(tp + tn) / len(labels),
        tpr=tp / (tp + fn),
        fpr=fp / (fp + tn),
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def save_model(model: RiskScorer, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_from_dict(d: dict | None) -> TrainConfig | None:
    if d is None:
        return None
    d = dict(d)
    d["hidden_sizes"] = tuple(d.get("hidden_sizes", ()))
    return TrainConfig(**d)


def load_model(path) -> RiskScorer:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    cfg = _config_from_dict(d.get("train_config"))
    variant = d["variant"]
    if variant == "logistic":
        return LogisticModel(np.array(d["weights"]), d["bias"], cfg)
    if variant == "linear_svm":
        return LinearSvmModel(np.array(d["weights"]), d["bias"], cfg)
    if variant == "mlp":
        return MlpModel([np.array(w) for w in d["weights"]],
                        [np.array(b) for b in d["biases"]], cfg)
    raise SchemaError(f"unknown model variant {variant!r}")
