"""Accuracy-prioritized fairness: per-group thresholds and distribution equalization.

Two routes to classification parity:

* with group membership known at decision time, tune one decision threshold
  per group so TPR/FPR line up across groups (a non-differentiable objective,
  searched by particle swarm);
* without it, retrain the logistic scorer with a penalty that pulls the
  per-group score distributions together, so parity holds at every threshold.
  The score distributions are compared through Gaussian-smoothed histograms,
  which makes the penalty differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGroupError, SchemaError, TrainingError
from .models import LogisticModel, MetricReport, sigmoid, tpr_fpr, _EPS
from .tabular import Table


@dataclass(frozen=True)
class GroupPartition:
    """Mutually exclusive, exhaustive group index per row."""

    group_ids: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        ids = np.asarray(self.group_ids)
        if len(ids) and (ids.min() < 0 or ids.max() >= len(self.names)):
            raise SchemaError("group ids out of range")

    @property
    def k(self) -> int:
        return len(self.names)

    @classmethod
    def from_values(cls, values) -> "GroupPartition":
        values = np.asarray(values)
        names = tuple(sorted({str(v) for v in values}))
        index = {n: i for i, n in enumerate(names)}
        ids = np.array([index[str(v)] for v in values], dtype=np.int64)
        return cls(ids, names)

    @classmethod
    def from_table(cls, table: Table, column: str) -> "GroupPartition":
        return cls.from_values(table.column(column))


@dataclass
class ThresholdSet:
    thresholds: tuple[float, ...]
    objective: float
    lam: float


@dataclass(frozen=True)
class PsoConfig:
    """Swarm settings; the default coefficients are standard constriction values.

    The threshold objective is piecewise constant, which starves a plain swarm
    of signal once it contracts, so two standard countermeasures are built in:
    a scout fraction of particles re-samples the box uniformly each iteration,
    and the final answer is polished by exact coordinate-wise search over the
    per-group candidate thresholds (midpoints between adjacent scores).
    """

    particles: int = 40
    iterations: int = 200
    inertia: float = 0.729
    cognitive: float = 1.494
    social: float = 1.494
    scout_fraction: float = 0.2
    polish: bool = True
    bounds: tuple[tuple[float, float], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.particles < 2:
            raise SchemaError("need at least 2 particles")
        if not (0.0 <= self.scout_fraction < 1.0):
            raise SchemaError("scout fraction must lie in [0, 1)")
        if self.bounds is not None:
            for lo, hi in self.bounds:
                if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                    raise SchemaError("bounds must be finite with lo < hi")


def _check_groups(group_scores, group_labels) -> tuple[list[np.ndarray], list[np.ndarray]]:
    if len(group_scores) != len(group_labels) or len(group_scores) < 2:
        raise SchemaError("need scores and labels for at least 2 groups")
    scores = [np.asarray(s, dtype=np.float64) for s in group_scores]
    labels = [np.asarray(l).astype(np.int64) for l in group_labels]
    for i, (s, l) in enumerate(zip(scores, labels)):
        if len(s) != len(l):
            raise SchemaError(f"group {i}: scores and labels differ in length")
        if not (np.any(l == 1) and np.any(l == 0)):
            raise TrainingError(f"group {i} is single-class")
    return scores, labels


def _objective_on_validated(scores, labels, thresholds, lam: float) -> float:
    correct = 0
    total = 0
    tprs, fprs = [], []
    for s, l, t in zip(scores, labels, thresholds):
        pred = s >= t
        actual = l == 1
        correct += int(np.sum(pred == actual))
        total += len(l)
        tp = np.sum(pred & actual)
        fp = np.sum(pred & ~actual)
        tprs.append(tp / np.sum(actual))
        fprs.append(fp / np.sum(~actual))
    e_a = correct / total
    e_f = sum(abs(tprs[0] - tprs[k]) + abs(fprs[0] - fprs[k]) for k in range(1, len(tprs)))
    return float(e_a - lam * e_f)


def equalized_odds_objective(group_scores, group_labels, thresholds, lam: float) -> float:
    """Pooled accuracy minus lam times the TPR/FPR discrepancies to group 0.

    Accuracy counts a prediction correct under the >= threshold rule; the
    discrepancy term sums |TPR_0 - TPR_k| + |FPR_0 - FPR_k| over k >= 1.
    """
    scores, labels = _check_groups(group_scores, group_labels)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if len(thresholds) != len(scores):
        raise SchemaError("one threshold per group required")
    return _objective_on_validated(scores, labels, thresholds, lam)


def _default_bounds(scores: list[np.ndarray]) -> list[tuple[float, float]]:
    """Stretch past each group's score range so the all-positive and
    all-negative regimes are comfortably inside the search box."""
    bounds = []
    for s in scores:
        lo, hi = float(np.min(s)), float(np.max(s))
        margin = 1e-6 + 0.05 * (hi - lo)
        bounds.append((lo - margin, hi + margin))
    return bounds


def tune_thresholds_pso(group_scores, group_labels, lam: float,
                        cfg: PsoConfig = PsoConfig()) -> ThresholdSet:
    """Maximize the equalized-odds objective over one threshold per group.

    The swarm's global best never regresses, and a fixed seed reproduces the
    search exactly.  Default bounds stretch slightly past each group's score
    range so all-positive and all-negative decisions stay reachable.
    """
    scores, labels = _check_groups(group_scores, group_labels)
    k = len(scores)
    bounds = list(cfg.bounds) if cfg.bounds is not None else _default_bounds(scores)
    if len(bounds) != k:
        raise SchemaError("one bound pair per group required")
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    rng = np.random.default_rng(cfg.seed)
    pos = rng.uniform(lo, hi, size=(cfg.particles, k))
    span = hi - lo
    # Nonzero initial velocities keep the swarm exploring the plateaus of this
    # piecewise-constant objective instead of collapsing onto the first best.
    vel = rng.uniform(-span, span, size=(cfg.particles, k))

    def evaluate(x: np.ndarray) -> float:
        return _objective_on_validated(scores, labels, x, lam)

    pbest = pos.copy()
    pbest_val = np.array([evaluate(x) for x in pos])
    g = int(np.argmax(pbest_val))
    gbest = pbest[g].copy()
    gbest_val = float(pbest_val[g])
    n_scouts = int(cfg.scout_fraction * cfg.particles)
    for _ in range(cfg.iterations):
        r_cog = rng.uniform(size=(cfg.particles, k))
        r_soc = rng.uniform(size=(cfg.particles, k))
        vel = (cfg.inertia * vel
               + cfg.cognitive * r_cog * (pbest - pos)
               + cfg.social * r_soc * (gbest - pos))
        vel = np.clip(vel, -span, span)
        pos = np.clip(pos + vel, lo, hi)
        if n_scouts:
            pos[-n_scouts:] = rng.uniform(lo, hi, size=(n_scouts, k))
        for i in range(cfg.particles):
            value = evaluate(pos[i])
            if value > pbest_val[i]:
                pbest_val[i] = value
                pbest[i] = pos[i]
                if value > gbest_val:
                    gbest_val = value
                    gbest = pos[i].copy()
    if cfg.polish:
        gbest, gbest_val = _coordinate_polish(gbest, gbest_val, scores, labels,
                                              lam, lo, hi, evaluate)
    return ThresholdSet(tuple(float(t) for t in gbest), gbest_val, lam)


def _candidate_thresholds(s: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """One threshold per decision regime: below, between, and above the scores."""
    uniq = np.unique(s)
    cuts = [max(lo, uniq[0] - 1.0)]
    cuts.extend((uniq[:-1] + uniq[1:]) / 2.0)
    cuts.extend(uniq)  # ties classify positive, so the scores themselves matter
    cuts.append(min(hi, uniq[-1] + 1.0))
    return np.unique(np.clip(np.array(cuts), lo, hi))


def _candidate_stats(s: np.ndarray, l: np.ndarray, cand: np.ndarray):
    pred = s[None, :] >= cand[:, None]
    actual = (l == 1)[None, :]
    correct = np.sum(pred == actual, axis=1)
    tpr = np.sum(pred & actual, axis=1) / np.sum(l == 1)
    fpr = np.sum(pred & ~actual, axis=1) / np.sum(l == 0)
    return correct, tpr, fpr

# Candidate-pair enumeration is skipped beyond this many cells.
_EXACT_PAIR_LIMIT = 4_000_000


def _coordinate_polish(best, best_val, scores, labels, lam, lo, hi, evaluate,
                       max_passes: int = 8):
    """Refine the swarm's answer over the finite candidate-threshold grid.

    With two groups the candidate pairs are enumerated outright (the
    objective is piecewise constant, so this is exact); with more groups, or
    at scales where the pair product is too large, per-dimension sweeps run
    until a fixpoint.
    """
    best = np.asarray(best, dtype=np.float64).copy()
    candidates = [_candidate_thresholds(s, lo[j], hi[j]) for j, s in enumerate(scores)]
    if len(scores) == 2 and len(candidates[0]) * len(candidates[1]) <= _EXACT_PAIR_LIMIT:
        (c0, t0, f0) = _candidate_stats(scores[0], labels[0], candidates[0])
        (c1, t1, f1) = _candidate_stats(scores[1], labels[1], candidates[1])
        n_total = len(labels[0]) + len(labels[1])
        objective = ((c0[:, None] + c1[None, :]) / n_total
                     - lam * (np.abs(t0[:, None] - t1[None, :])
                              + np.abs(f0[:, None] - f1[None, :])))
        i, j = np.unravel_index(int(np.argmax(objective)), objective.shape)
        if objective[i, j] > best_val:
            return np.array([candidates[0][i], candidates[1][j]]), float(objective[i, j])
        return best, best_val
    for _ in range(max_passes):
        improved = False
        for j in range(len(scores)):
            trial = best.copy()
            for t in candidates[j]:
                trial[j] = t
                value = evaluate(trial)
                if value > best_val + 1e-15:
                    best_val = value
                    best = trial.copy()
                    improved = True
        if not improved:
            break
    return best, best_val


def group_metrics(group_scores, group_labels, thresholds) -> list[MetricReport]:
    """Per-group TPR/FPR/accuracy at the given thresholds (reporting helper)."""
    scores, labels = _check_groups(group_scores, group_labels)
    return [tpr_fpr(s, l, t) for s, l, t in zip(scores, labels, thresholds)]


def pooled_accuracy(group_scores, group_labels, thresholds) -> float:
    scores, labels = _check_groups(group_scores, group_labels)
    correct = sum(int(np.sum((s >= t) == (l == 1)))
                  for s, l, t in zip(scores, labels, thresholds))
    return correct / sum(len(l) for l in labels)


def _default_centers() -> tuple[float, ...]:
    return tuple(0.01 + 0.02 * i for i in range(50))


@dataclass(frozen=True)
class HistogramConfig:
    """Soft histogram layout: bin centers, bin bandwidth, kernel width."""

    bin_width: float = 0.02
    centers: tuple[float, ...] = field(default_factory=_default_centers)
    sigma: float = 0.01

    def __post_init__(self):
        if self.sigma <= 0:
            raise SchemaError("sigma must be positive")
        centers = np.asarray(self.centers)
        if len(centers) == 0 or np.any(np.diff(centers) <= 0):
            raise SchemaError("bin centers must be strictly increasing")

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=np.float64)


@dataclass
class ScoreHistogram:
    counts: np.ndarray
    normalized: bool
    group: str | None = None
    label_class: str | None = None


def _kernel_matrix(scores: np.ndarray, cfg: HistogramConfig) -> np.ndarray:
    diff = scores[:, None] - cfg.center_array[None, :]
    return np.exp(-(diff ** 2) / (2.0 * cfg.sigma ** 2))


def soft_histogram(scores, cfg: HistogramConfig = HistogramConfig(), normalize: bool = False,
                   group: str | None = None, label_class: str | None = None) -> ScoreHistogram:
    """Gaussian-kernel bin counts: each score contributes exp(-(s-c)^2 / 2sigma^2).

    Normalization divides by the score count, giving the smoothed per-bin
    fraction of the group.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if normalize and len(scores) == 0:
        raise EmptyGroupError("cannot normalize a histogram of no scores")
    counts = _kernel_matrix(scores, cfg).sum(axis=0)
    if normalize:
        counts = counts / len(scores)
    return ScoreHistogram(counts, normalize, group, label_class)


def _class_indices(partition: GroupPartition, labels: np.ndarray) -> list[dict[str, np.ndarray]]:
    labels = np.asarray(labels).astype(np.int64)
    ids = np.asarray(partition.group_ids)
    out = []
    for k in range(partition.k):
        pos = np.flatnonzero((ids == k) & (labels == 1))
        neg = np.flatnonzero((ids == k) & (labels == 0))
        if len(pos) == 0 or len(neg) == 0:
            raise EmptyGroupError(f"group {partition.names[k]!r} lacks a label class")
        out.append({"pos": pos, "neg": neg})
    return out


def distribution_distance(scores, partition: GroupPartition, labels,
                          cfg: HistogramConfig = HistogramConfig()) -> float:
    """Sum of squared L2 gaps between group 0's normalized score histograms
    and every other group's, separately for positive and negative rows."""
    scores = np.asarray(scores, dtype=np.float64)
    indices = _class_indices(partition, labels)
    hists = [
        {cls: soft_histogram(scores[idx[cls]], cfg, normalize=True).counts
         for cls in ("pos", "neg")}
        for idx in indices
    ]
    total = 0.0
    for k in range(1, partition.k):
        for cls in ("pos", "neg"):
            diff = hists[0][cls] - hists[k][cls]
            total += float(np.dot(diff, diff))
    return total


@dataclass(frozen=True)
class FairTrainConfig:
    """Trade-off weight alpha plus histogram and optimizer settings."""

    alpha: float = 0.15
    hist: HistogramConfig = HistogramConfig()
    learning_rate: float = 1.0
    momentum: float = 0.9
    iterations: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise SchemaError("alpha must lie in [0, 1]")
        if self.learning_rate <= 0 or self.iterations < 1:
            raise SchemaError("invalid optimizer settings")


def fair_loss(weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray,
              partition: GroupPartition, cfg: FairTrainConfig) -> float:
    """alpha * mean-NLL + (1 - alpha) * distribution distance of the scores."""
    scores = sigmoid(X @ weights + bias)
    p = np.clip(scores, _EPS, 1.0 - _EPS)
    e_a = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    if cfg.alpha == 1.0:
        return cfg.alpha * e_a
    e_f = distribution_distance(scores, partition, y, cfg.hist)
    return cfg.alpha * e_a + (1.0 - cfg.alpha) * e_f


def _fair_score_grad(scores: np.ndarray, indices, cfg: HistogramConfig) -> np.ndarray:
    """d(distribution distance)/d(score_i), via the Gaussian kernel derivative."""
    centers = cfg.center_array
    diff = scores[:, None] - centers[None, :]
    kernel = np.exp(-(diff ** 2) / (2.0 * cfg.sigma ** 2))
    dkernel = kernel * (-diff / cfg.sigma ** 2)
    k_groups = len(indices)
    hists = [
        {cls: kernel[idx[cls]].sum(axis=0) / len(idx[cls]) for cls in ("pos", "neg")}
        for idx in indices
    ]
    grad = np.zeros_like(scores)
    for cls in ("pos", "neg"):
        ref_minus_rest = np.zeros(len(centers))
        for k in range(1, k_groups):
            gap = hists[0][cls] - hists[k][cls]
            ref_minus_rest += gap
            idx = indices[k][cls]
            grad[idx] += (dkernel[idx] @ (-2.0 * gap)) / len(idx)
        idx0 = indices[0][cls]
        grad[idx0] += (dkernel[idx0] @ (2.0 * ref_minus_rest)) / len(idx0)
    return grad


def fair_gradients(weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray,
                   partition: GroupPartition, cfg: FairTrainConfig) -> tuple[np.ndarray, float]:
    z = X @ weights + bias
    scores = sigmoid(z)
    dl_dz = cfg.alpha * (scores - y) / len(y)
    if cfg.alpha != 1.0:
        indices = _class_indices(partition, y)
        ds = _fair_score_grad(scores, indices, cfg.hist)
        dl_dz = dl_dz + (1.0 - cfg.alpha) * ds * scores * (1.0 - scores)
    return X.T @ dl_dz, float(np.sum(dl_dz))


def train_equalized_distribution(X: np.ndarray, y: np.ndarray, partition: GroupPartition,
                                 cfg: FairTrainConfig = FairTrainConfig()) -> LogisticModel:
    """Logistic scorer trained under the accuracy/parity trade-off loss.

    At alpha = 1 this reduces exactly to plain unregularized logistic
    training with the same optimizer.  Group membership is consumed here
    only; the returned model never sees it.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) != len(y) or len(y) != len(partition.group_ids):
        raise TrainingError("X, y, and group ids must align")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise TrainingError("training labels are single-class")
    _class_indices(partition, y)  # fail fast on degenerate groups
    w = np.zeros(X.shape[1])
    b = 0.0
    vw = np.zeros_like(w)
    vb = 0.0
    for it in range(cfg.iterations):
        gw, gb = fair_gradients(w, b, X, y, partition, cfg)
        vw = cfg.momentum * vw - cfg.learning_rate * gw
        vb = cfg.momentum * vb - cfg.learning_rate * gb
        w = w + vw
        b = b + vb
        if not (np.all(np.isfinite(w)) and np.isfinite(b)):
            raise TrainingError("non-finite parameters during fair training", iteration=it)
    return LogisticModel(w, b)
