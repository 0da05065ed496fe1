"""Deterministic synthetic-bias fixtures so every command runs offline.

The generator draws two demographic groups whose features overlap but whose
positive-label odds differ by a direct group bonus, so the original labels
are unfair under the context filter and a model trained on the features
inherits the gap through the group-shifted feature.
"""

from __future__ import annotations

import numpy as np

from .controlled_fairness import FairnessSpec
from .tabular import Clause, ColumnSchema, FilterCondition, Table

DEMO_SCHEMA = (
    ColumnSchema("group", "categorical", "protected"),
    ColumnSchema("ctx", "binary", "unprotected"),
    ColumnSchema("x1", "numeric", "unprotected"),
    ColumnSchema("x2", "numeric", "unprotected"),
    ColumnSchema("outcome", "binary", "label"),
)


def make_demo_table(n: int = 2000, seed: int = 0, group_bonus: float = 0.5,
                    feature_shift: float = 2.5) -> Table:
    """Biased two-group dataset; set both knobs to 0 for an unbiased control.

    The label is driven by the context flag (the legitimate factor the audit
    filters on) and by x2; group A additionally enjoys a direct log-odds
    bonus.  x1 is a nearly label-irrelevant group marker: its shift lets a
    model tell the groups apart without seeing the group column, which is
    what allows a retrained model to express or repair the bias.
    """
    rng = np.random.default_rng(seed)
    in_a = rng.random(n) < 0.5
    group = np.where(in_a, "A", "B").astype(object)
    ctx = (rng.random(n) < 0.5).astype(np.int64)
    x1 = rng.normal(0.0, 1.0, n) + feature_shift * in_a
    x2 = rng.normal(0.0, 1.0, n)
    logit = 1.2 * ctx + 0.15 * x1 + 0.8 * x2 - 1.0 + group_bonus * in_a
    prob = 1.0 / (1.0 + np.exp(-logit))
    outcome = (rng.random(n) < prob).astype(np.int64)
    return Table(DEMO_SCHEMA, {
        "group": group, "ctx": ctx, "x1": x1, "x2": x2, "outcome": outcome,
    })


def demo_fairness_spec(epsilon: float = 0.05) -> FairnessSpec:
    """Audit the ctx=1 slice for parity between groups A and B."""
    return FairnessSpec(
        protected=FilterCondition((Clause("group", "==", "A"),)),
        filters=FilterCondition((Clause("ctx", "==", 1),)),
        epsilon=epsilon,
    )
