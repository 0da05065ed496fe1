"""Controlled-fairness auditing and the two synthetic-relabeling repairs.

A classifier is controlled-fair on a dataset when, after filtering rows on
unprotected-feature conditions, the positive-label ratios of the protected
group and its complement agree within a tolerance.  When they do not, the two
repair strategies build a synthetic copy of the data whose advantaged-group
labels are lowered to match the other group's rate:

* risk adjustment: shift the advantaged group's decision threshold by the
  offset that leaves the parity-matching number of rows positive;
* risk flipping: keep the original labels and flip only the lowest-scored
  positive rows, exactly enough of them to restore parity.

Retraining a second model on the synthetic data transfers the parity to
unseen data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGroupError, SchemaError
from .models import (
    RiskScorer,
    TrainConfig,
    auc,
    score_all,
    train_logistic,
    train_mlp,
)
from .tabular import (
    ColumnSchema,
    FilterCondition,
    Preprocessor,
    SplitSpec,
    Table,
    concatenate,
    condition_mask,
    filter_rows,
    preprocess_fit,
    split,
)

SCORE_COLUMN = "risk_score"

_TRAINERS = {"logistic": train_logistic, "mlp": train_mlp}


@dataclass(frozen=True)
class FairnessSpec:
    """Protected condition, unprotected filters, and the parity tolerance."""

    protected: FilterCondition
    filters: FilterCondition = FilterCondition()
    epsilon: float = 0.05

    def __post_init__(self):
        if len(self.protected.clauses) != 1:
            raise SchemaError("protected condition must be a single clause")
        if self.epsilon < 0:
            raise SchemaError("epsilon must be non-negative")

    def validate_roles(self, table: Table) -> None:
        pcol = self.protected.clauses[0].column
        if table.column_schema(pcol).role != "protected":
            raise SchemaError(f"column {pcol!r} is not role=protected")
        for clause in self.filters.clauses:
            if table.column_schema(clause.column).role != "unprotected":
                raise SchemaError(f"filter column {clause.column!r} is not role=unprotected")


@dataclass
class RatioReport:
    ratio_p: float
    ratio_not_p: float
    count_p: int
    count_not_p: int
    positives_p: int
    positives_not_p: int
    epsilon: float
    fair: bool

    @property
    def gap(self) -> float:
        return abs(self.ratio_p - self.ratio_not_p)


def ratio(labeled: Table) -> float:
    """Fraction of rows carrying label 1."""
    if len(labeled) == 0:
        raise EmptyGroupError("ratio of an empty table is undefined")
    return float(np.mean(labeled.labels()))


def _split_groups(table: Table, spec: FairnessSpec) -> tuple[Table, Table]:
    filtered = filter_rows(table, spec.filters)
    group_p = filter_rows(filtered, spec.protected)
    group_not_p = filter_rows(filtered, spec.protected.negate())
    if len(group_p) == 0:
        raise EmptyGroupError("protected-true group is empty after filtering")
    if len(group_not_p) == 0:
        raise EmptyGroupError("protected-false group is empty after filtering")
    return group_p, group_not_p


def check_fair(labeled: Table, spec: FairnessSpec) -> RatioReport:
    """Ratio test over the filtered protected group and its complement."""
    spec.validate_roles(labeled)
    group_p, group_not_p = _split_groups(labeled, spec)
    r_p, r_not_p = ratio(group_p), ratio(group_not_p)
    return RatioReport(
        ratio_p=r_p,
        ratio_not_p=r_not_p,
        count_p=len(group_p),
        count_not_p=len(group_not_p),
        positives_p=int(np.sum(group_p.labels())),
        positives_not_p=int(np.sum(group_not_p.labels())),
        epsilon=spec.epsilon,
        fair=abs(r_p - r_not_p) <= spec.epsilon,
    )


def attach_scores(table: Table, model: RiskScorer, prep: Preprocessor) -> Table:
    """Append the model's score column; labels are untouched."""
    X, _ = prep.apply(table)
    scores = score_all(model, X)
    if any(c.name == SCORE_COLUMN for c in table.schema):
        return table.with_values(SCORE_COLUMN, scores)
    return table.with_column(ColumnSchema(SCORE_COLUMN, "numeric", "ignore"), scores)


def label_with_model(table: Table, model: RiskScorer, threshold: float,
                     prep: Preprocessor) -> Table:
    """Relabel every row with the model's thresholded score (>= rule)."""
    scored = attach_scores(table, model, prep)
    labels = (scored.column(SCORE_COLUMN) >= threshold).astype(np.int64)
    return scored.with_values(scored.label_column, labels)


def compute_alpha(group_adv: Table, group_dis: Table) -> float:
    """Positive-count target for the advantaged group.

    alpha = |advantaged| * (positive count in disadvantaged) / |disadvantaged|,
    i.e. the count the advantaged group would have at the other group's rate.
    """
    if len(group_dis) == 0:
        raise EmptyGroupError("disadvantaged group is empty")
    positives = int(np.sum(group_dis.labels()))
    return len(group_adv) * positives / len(group_dis)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def compute_delta(scores: np.ndarray, alpha: float, threshold: float) -> float:
    """Score offset whose subtraction leaves round(alpha) rows at/above threshold.

    Sorts descending and reads the score at rank round(alpha); the offset is
    that order statistic minus the threshold.  With alpha rounding to zero the
    offset is nudged past the maximum score so that no row stays positive.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) == 0:
        raise EmptyGroupError("cannot compute an offset from no scores")
    if not (0.0 <= alpha <= len(scores)):
        raise SchemaError(f"alpha {alpha} outside [0, {len(scores)}]")
    rank = _round_half_up(alpha)
    if rank == 0:
        return float(np.max(scores)) - threshold + 1e-12
    ordered = np.sort(scores)[::-1]
    return float(ordered[rank - 1]) - threshold


@dataclass
class SyntheticResult:
    """Relabeled copy of the input plus the bookkeeping of how it was made."""

    table: Table
    fair_before: RatioReport
    delta: float | None = None
    beta: int | None = None
    advantaged_is_protected: bool | None = None
    changed: bool = False


def _partition_for_synthesis(table: Table, spec: FairnessSpec):
    """Advantaged/disadvantaged filtered groups plus the out-of-filter rest."""
    report = check_fair(table, spec)
    in_filter = condition_mask(table, spec.filters)
    rest = table.take(np.flatnonzero(~in_filter))
    filtered = table.take(np.flatnonzero(in_filter))
    p_mask = condition_mask(filtered, spec.protected)
    group_p = filtered.take(np.flatnonzero(p_mask))
    group_not_p = filtered.take(np.flatnonzero(~p_mask))
    if report.ratio_p >= report.ratio_not_p:
        return report, group_p, group_not_p, rest, True
    return report, group_not_p, group_p, rest, False


def _ensure_scores(table: Table, model: RiskScorer | None, prep: Preprocessor | None) -> Table:
    if any(c.name == SCORE_COLUMN for c in table.schema):
        return table
    if model is None or prep is None:
        raise SchemaError("table carries no score column; pass model and preprocessor")
    return attach_scores(table, model, prep)


def synth_risk_adjust(d2_labeled: Table, model: RiskScorer | None, spec: FairnessSpec,
                      threshold: float, prep: Preprocessor | None = None) -> SyntheticResult:
    """Repair via a score offset on the advantaged group (already-fair input
    passes through unchanged).

    ``d2_labeled`` should carry model-assigned labels (see
    :func:`label_with_model`).  The advantaged group's rows are relabeled by
    the rule ``score - delta >= threshold``; everything else is copied as-is.
    """
    d2_labeled = _ensure_scores(d2_labeled, model, prep)
    report, adv, dis, rest, adv_is_p = _partition_for_synthesis(d2_labeled, spec)
    if report.fair:
        return SyntheticResult(d2_labeled, report, delta=0.0,
                               advantaged_is_protected=None, changed=False)
    alpha = compute_alpha(adv, dis)
    delta = compute_delta(adv.column(SCORE_COLUMN), alpha, threshold)
    new_labels = (adv.column(SCORE_COLUMN) - delta >= threshold).astype(np.int64)
    adv_relabeled = adv.with_values(adv.label_column, new_labels)
    table = concatenate([adv_relabeled, dis, rest])
    return SyntheticResult(table, report, delta=delta,
                           advantaged_is_protected=adv_is_p, changed=True)


def synth_risk_flip(d2_true_labeled: Table, model: RiskScorer | None, spec: FairnessSpec,
                    prep: Preprocessor | None = None) -> SyntheticResult:
    """Repair by flipping the advantaged group's lowest-scored positives to 0.

    ``d2_true_labeled`` keeps its original labels; the model only supplies the
    scores deciding which positives flip.  Exactly
    ``beta = (# label-1 rows) - round(alpha)`` labels change, all 1 -> 0.
    """
    d2_true_labeled = _ensure_scores(d2_true_labeled, model, prep)
    report, adv, dis, rest, adv_is_p = _partition_for_synthesis(d2_true_labeled, spec)
    if report.fair:
        return SyntheticResult(d2_true_labeled, report, beta=0,
                               advantaged_is_protected=None, changed=False)
    alpha = compute_alpha(adv, dis)
    labels = adv.labels()
    positives = np.flatnonzero(labels == 1)
    beta = len(positives) - _round_half_up(alpha)
    if beta < 0:
        beta = 0
    # Stable sort keeps ties deterministic: lowest score first, then row order.
    order = positives[np.argsort(adv.column(SCORE_COLUMN)[positives], kind="mergesort")]
    new_labels = labels.copy()
    new_labels[order[:beta]] = 0
    adv_flipped = adv.with_values(adv.label_column, new_labels)
    table = concatenate([adv_flipped, dis, rest])
    return SyntheticResult(table, report, beta=beta,
                           advantaged_is_protected=adv_is_p, changed=True)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a two-stage retraining run depends on."""

    spec: FairnessSpec
    split: SplitSpec
    first_model: str = "logistic"
    second_model: str = "mlp"
    algorithm: str = "risk_flip"
    threshold: float = 0.5
    first_train: TrainConfig = TrainConfig()
    second_train: TrainConfig = TrainConfig()
    drops: tuple[str, ...] = ()

    def __post_init__(self):
        if self.first_model not in _TRAINERS or self.second_model not in _TRAINERS:
            raise SchemaError("model types must be 'logistic' or 'mlp'")
        if self.algorithm not in ("risk_adjust", "risk_flip"):
            raise SchemaError("algorithm must be 'risk_adjust' or 'risk_flip'")
        if len(self.split.fractions) != 3:
            raise SchemaError("pipeline split needs exactly 3 fractions")


@dataclass
class PipelineReport:
    """Held-out AUC per stage plus the 2x2x3 ratio table and verdicts."""

    auc_first: float
    auc_second: float
    # ratios[source][filter][group]; source in (original, first_model,
    # second_model), filter in (filtered, unfiltered), group in (P, notP).
    ratios: dict
    fairness: dict  # source -> RatioReport on the filtered groups
    synthetic: SyntheticResult
    first_model: RiskScorer = field(repr=False, default=None)
    second_model: RiskScorer = field(repr=False, default=None)
    test_table: Table = field(repr=False, default=None)


def _ratio_cells(test: Table, labels: np.ndarray, spec: FairnessSpec) -> dict:
    in_filter = condition_mask(test, spec.filters)
    p_mask = condition_mask(test, spec.protected)
    cells = {}
    for filter_name, fmask in (("filtered", in_filter), ("unfiltered", ~in_filter)):
        cells[filter_name] = {}
        for group_name, gmask in (("P", p_mask), ("notP", ~p_mask)):
            idx = np.flatnonzero(fmask & gmask)
            cells[filter_name][group_name] = (
                float(np.mean(labels[idx])) if len(idx) else float("nan")
            )
    return cells


def run_pipeline(data: Table, cfg: PipelineConfig) -> PipelineReport:
    """Train, repair, retrain, and report parity on held-out data.

    Stage one trains on the first split and labels/relabels the second per
    the configured algorithm; stage two trains on the synthetic result.  All
    reported numbers come from the final split, which neither model saw.
    """
    cfg.spec.validate_roles(data)
    d1, d2, d4 = split(data, cfg.split)
    prep = preprocess_fit(d1, cfg.drops)
    x1, y1 = prep.apply(d1)
    first = _TRAINERS[cfg.first_model](x1, y1, cfg.first_train)

    if cfg.algorithm == "risk_adjust":
        d2_model_labeled = label_with_model(d2, first, cfg.threshold, prep)
        synthetic = synth_risk_adjust(d2_model_labeled, first, cfg.spec, cfg.threshold)
    else:
        d2_scored = attach_scores(d2, first, prep)
        synthetic = synth_risk_flip(d2_scored, first, cfg.spec)

    x3, y3 = prep.apply(synthetic.table)
    second = _TRAINERS[cfg.second_model](x3, y3, cfg.second_train)

    x4, y4 = prep.apply(d4)
    scores_first = score_all(first, x4)
    scores_second = score_all(second, x4)
    labels_first = (scores_first >= cfg.threshold).astype(np.int64)
    labels_second = (scores_second >= second.default_threshold).astype(np.int64)

    sources = {
        "original": y4,
        "first_model": labels_first,
        "second_model": labels_second,
    }
    ratios = {name: _ratio_cells(d4, labels, cfg.spec) for name, labels in sources.items()}
    fairness = {
        name: check_fair(d4.with_values(d4.label_column, labels), cfg.spec)
        for name, labels in sources.items()
    }
    return PipelineReport(
        auc_first=auc(scores_first, y4),
        auc_second=auc(scores_second, y4),
        ratios=ratios,
        fairness=fairness,
        synthetic=synthetic,
        first_model=first,
        second_model=second,
        test_table=d4,
    )
