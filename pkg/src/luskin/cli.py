"""Command-line surface: audit, retrain, tune-thresholds, train-fair.

Every run is fully determined by its flags plus the input files; reports are
emitted as report.json and per-table CSVs under --out.  Exit codes: 0 for
success (and a fair audit verdict), 2 for a successful audit that found the
data unfair, 1 for any error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .classification_parity import (
    FairTrainConfig,
    GroupPartition,
    HistogramConfig,
    PsoConfig,
    distribution_distance,
    group_metrics,
    pooled_accuracy,
    soft_histogram,
    train_equalized_distribution,
    tune_thresholds_pso,
)
from .controlled_fairness import (
    FairnessSpec,
    PipelineConfig,
    check_fair,
    run_pipeline,
)
from .demo import demo_fairness_spec, make_demo_table
from .errors import LuskinError, SchemaError
from .models import (
    TrainConfig,
    save_model,
    score_all,
    tpr_fpr,
    train_linear_svm,
    train_logistic,
)
from .report import ReportDocument, emit_report
from .tabular import (
    Clause,
    FilterCondition,
    SplitSpec,
    condition_mask,
    load_csv,
    load_schema,
    preprocess_fit,
    split,
    write_csv,
)

_FILTER_OPS = {"=": "==", "==": "==", "!=": "!=", "<": "<", "<=": "<=",
               ">": ">", ">=": ">=", "in": "in"}

_MODEL_NAMES = {"lr": "logistic", "mlp": "mlp", "svm": "linear_svm"}


def _env_seed() -> int:
    return int(os.environ.get("LUSKIN_SEED", "0"))


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="input CSV path")
    p.add_argument("--schema", help="schema JSON path")
    p.add_argument("--demo", action="store_true",
                   help="run on the bundled synthetic-bias fixture instead of --data")
    p.add_argument("--seed", type=int, default=None,
                   help="RNG seed (falls back to LUSKIN_SEED, then 0)")
    p.add_argument("--out", default="luskin_out", help="output directory")


def _add_spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--protected", metavar="COL=VAL",
                   help="protected condition, e.g. race=White")
    p.add_argument("--filter", nargs=3, action="append", metavar=("COL", "OP", "VAL"),
                   default=None, help="unprotected filter clause (repeatable)")
    p.add_argument("--epsilon", type=float, default=0.05, help="parity tolerance")


def _load_table(args):
    if args.demo:
        return make_demo_table(seed=args.seed)
    if not args.data or not args.schema:
        raise SchemaError("--data and --schema are required without --demo")
    return load_csv(args.data, load_schema(args.schema))


def _build_spec(args, table) -> FairnessSpec:
    if args.protected is None:
        if args.demo:
            return demo_fairness_spec(args.epsilon)
        raise SchemaError("--protected COL=VAL is required")
    if "=" not in args.protected:
        raise SchemaError("--protected must look like COL=VAL")
    col, val = args.protected.split("=", 1)
    clauses = []
    for col_f, op, val_f in args.filter or []:
        if op not in _FILTER_OPS:
            raise SchemaError(f"unknown filter comparator {op!r}")
        value = [v for v in val_f.split(",")] if op == "in" else val_f
        clauses.append(Clause(col_f, _FILTER_OPS[op], value))
    return FairnessSpec(
        protected=FilterCondition((Clause(col, "==", val),)),
        filters=FilterCondition(tuple(clauses)),
        epsilon=args.epsilon,
    )


def _parse_split(text: str, expected: int) -> tuple[float, ...]:
    fractions = tuple(float(f) for f in text.split(","))
    if len(fractions) != expected:
        raise SchemaError(f"--split needs exactly {expected} comma-separated fractions")
    return fractions


def _protected_column(table) -> str:
    cols = [c.name for c in table.schema if c.role == "protected"]
    if len(cols) != 1:
        raise SchemaError("expected exactly one role=protected column")
    return cols[0]


def _ratio_table_rows(ratios: dict) -> list[dict]:
    rows = []
    for source in ("original", "first_model", "second_model"):
        for filt in ("filtered", "unfiltered"):
            for group in ("P", "notP"):
                rows.append({
                    "source": source,
                    "filter": filt,
                    "group": group,
                    "ratio": ratios[source][filt][group],
                })
    return rows


def cmd_audit(args) -> int:
    table = _load_table(args)
    spec = _build_spec(args, table)
    report = check_fair(table, spec)
    labels = table.labels()
    in_filter = condition_mask(table, spec.filters)
    p_mask = condition_mask(table, spec.protected)
    cells = []
    for filt_name, fmask in (("filtered", in_filter), ("unfiltered", ~in_filter)):
        for group_name, gmask in (("P", p_mask), ("notP", ~p_mask)):
            idx = np.flatnonzero(fmask & gmask)
            cells.append({
                "filter": filt_name,
                "group": group_name,
                "rows": int(len(idx)),
                "ratio": float(np.mean(labels[idx])) if len(idx) else float("nan"),
            })
    doc = ReportDocument(
        command="audit",
        config=_config_echo(args),
        metrics={
            "ratio_p": report.ratio_p,
            "ratio_not_p": report.ratio_not_p,
            "gap": report.gap,
            "epsilon": report.epsilon,
            "fair": report.fair,
            "count_p": report.count_p,
            "count_not_p": report.count_not_p,
        },
        tables={"ratio_cells": cells},
    )
    emit_report(doc, args.out)
    verdict = "fair" if report.fair else "unfair"
    print(f"audit: ratio(P)={report.ratio_p:.4f} ratio(notP)={report.ratio_not_p:.4f} "
          f"gap={report.gap:.4f} epsilon={report.epsilon} -> {verdict}")
    return 0 if report.fair else 2


def cmd_retrain(args) -> int:
    table = _load_table(args)
    spec = _build_spec(args, table)
    fractions = _parse_split(args.split, 3)
    algorithm = "risk_adjust" if args.algo == 1 else "risk_flip"
    cfg = PipelineConfig(
        spec=spec,
        split=SplitSpec(fractions, args.seed),
        first_model=_MODEL_NAMES[args.first_model],
        second_model=_MODEL_NAMES[args.second_model],
        algorithm=algorithm,
        threshold=args.threshold,
        first_train=TrainConfig(seed=args.seed),
        second_train=TrainConfig(seed=args.seed),
    )
    result = run_pipeline(table, cfg)
    synth = result.synthetic
    doc = ReportDocument(
        command="retrain",
        config=_config_echo(args),
        metrics={
            "auc": {"first_model": result.auc_first, "second_model": result.auc_second},
            "algorithm": algorithm,
            "delta": synth.delta,
            "beta": synth.beta,
            "synthetic_changed": synth.changed,
            "advantaged_is_protected": synth.advantaged_is_protected,
            "fairness": {
                source: {"gap": rep.gap, "fair": rep.fair}
                for source, rep in result.fairness.items()
            },
        },
        tables={"ratios": _ratio_table_rows(result.ratios)},
    )
    emit_report(doc, args.out)
    save_model(result.first_model, os.path.join(args.out, "first_model.json"))
    save_model(result.second_model, os.path.join(args.out, "second_model.json"))
    write_csv(synth.table, os.path.join(args.out, "synthetic.csv"))
    gap = result.fairness["second_model"].gap
    print(f"retrain[{algorithm}]: second-model AUC={result.auc_second:.4f} "
          f"filtered gap={gap:.4f} ({'fair' if result.fairness['second_model'].fair else 'unfair'})")
    return 0


def _train_parity_model(kind: str, X, y, seed: int):
    cfg = TrainConfig(seed=seed)
    if kind == "logistic":
        return train_logistic(X, y, cfg)
    return train_linear_svm(X, y, cfg)


def cmd_tune_thresholds(args) -> int:
    table = _load_table(args)
    fractions = _parse_split(args.split, 3)
    train_t, val_t, test_t = split(table, SplitSpec(fractions, args.seed))
    prep = preprocess_fit(train_t)
    x_train, y_train = prep.apply(train_t)
    model = _train_parity_model(_MODEL_NAMES[args.model], x_train, y_train, args.seed)

    group_col = _protected_column(table)
    names = GroupPartition.from_table(table, group_col).names

    def per_group(t):
        part = GroupPartition.from_values(t.column(group_col))
        # Align group order with the full-table vocabulary.
        if part.names != names:
            part = GroupPartition(
                np.array([names.index(str(v)) for v in t.column(group_col)]), names)
        X, y = prep.apply(t)
        s = score_all(model, X)
        return ([s[part.group_ids == k] for k in range(len(names))],
                [y[part.group_ids == k] for k in range(len(names))])

    val_scores, val_labels = per_group(val_t)
    test_scores, test_labels = per_group(test_t)

    tuned = tune_thresholds_pso(val_scores, val_labels, args.lam, PsoConfig(seed=args.seed))
    before = tuple(model.default_threshold for _ in names)
    rows = []
    summary = {}
    for phase, thresholds in (("before", before), ("after", tuned.thresholds)):
        reports = group_metrics(test_scores, test_labels, thresholds)
        acc = pooled_accuracy(test_scores, test_labels, thresholds)
        summary[phase] = {
            "accuracy": acc,
            "thresholds": list(thresholds),
            "tpr_gap": abs(reports[0].tpr - reports[1].tpr) if len(reports) == 2 else None,
            "fpr_gap": abs(reports[0].fpr - reports[1].fpr) if len(reports) == 2 else None,
        }
        for name, t, rep in zip(names, thresholds, reports):
            rows.append({
                "phase": phase, "group": name, "threshold": t,
                "accuracy": acc, "tpr": rep.tpr, "fpr": rep.fpr,
            })
    doc = ReportDocument(
        command="tune-thresholds",
        config=_config_echo(args),
        metrics={
            "lambda": args.lam,
            "objective": tuned.objective,
            "groups": list(names),
            "before": summary["before"],
            "after": summary["after"],
        },
        tables={"thresholds": rows},
    )
    emit_report(doc, args.out)
    save_model(model, os.path.join(args.out, "model.json"))
    print(f"tune-thresholds[{args.model}]: accuracy {summary['before']['accuracy']:.4f} -> "
          f"{summary['after']['accuracy']:.4f}, TPR gap {summary['before']['tpr_gap']:.4f} -> "
          f"{summary['after']['tpr_gap']:.4f}")
    return 0


def cmd_train_fair(args) -> int:
    table = _load_table(args)
    fractions = _parse_split(args.split, 3)
    train_t, _unused_val, test_t = split(table, SplitSpec(fractions, args.seed))
    prep = preprocess_fit(train_t)
    x_train, y_train = prep.apply(train_t)
    x_test, y_test = prep.apply(test_t)

    group_col = _protected_column(table)
    names = GroupPartition.from_table(table, group_col).names

    def partition_of(t):
        ids = np.array([names.index(str(v)) for v in t.column(group_col)])
        return GroupPartition(ids, names)

    part_train = partition_of(train_t)
    part_test = partition_of(test_t)

    bin_width = 1.0 / args.bins
    hist_cfg = HistogramConfig(
        bin_width=bin_width,
        centers=tuple(bin_width / 2 + i * bin_width for i in range(args.bins)),
        sigma=args.sigma if args.sigma is not None else bin_width / 2,
    )
    alphas = args.alpha if args.alpha else [0.01, 0.1, 0.2, 1.0]

    results = {}
    hist_rows = []
    for alpha in alphas:
        cfg = FairTrainConfig(alpha=alpha, hist=hist_cfg, seed=args.seed)
        model = train_equalized_distribution(x_train, y_train, part_train, cfg)
        s_test = score_all(model, x_test)
        pred = (s_test >= 0.5).astype(int)
        acc = float(np.mean(pred == y_test))
        group_stats = {}
        for k, name in enumerate(names):
            mask = part_test.group_ids == k
            rep = tpr_fpr(s_test[mask], y_test[mask], 0.5)
            group_stats[name] = {"tpr": rep.tpr, "fpr": rep.fpr}
        e_f = distribution_distance(s_test, part_test, y_test, hist_cfg)
        results[str(alpha)] = {
            "accuracy": acc,
            "distribution_distance": e_f,
            "tpr_gap": abs(group_stats[names[0]]["tpr"] - group_stats[names[1]]["tpr"])
            if len(names) == 2 else None,
            "fpr_gap": abs(group_stats[names[0]]["fpr"] - group_stats[names[1]]["fpr"])
            if len(names) == 2 else None,
            "groups": group_stats,
        }
        for k, name in enumerate(names):
            mask = part_test.group_ids == k
            for cls, cls_mask in (("pos", y_test == 1), ("neg", y_test == 0)):
                hist = soft_histogram(s_test[mask & cls_mask], hist_cfg, normalize=True)
                for center, count in zip(hist_cfg.centers, hist.counts):
                    hist_rows.append({
                        "alpha": alpha, "bin_center": center, "group": name,
                        "class": cls, "normalized_count": float(count),
                    })
    doc = ReportDocument(
        command="train-fair",
        config=_config_echo(args),
        metrics={
            "alphas": list(alphas),
            "results": results,
            "recommended_alpha_range": [0.1, 0.2],
            "note": "alpha in [0.1, 0.2] balances accuracy against distribution parity",
        },
        tables={"histograms": hist_rows},
    )
    emit_report(doc, args.out)
    line = ", ".join(f"alpha={a}: acc={results[str(a)]['accuracy']:.4f}" for a in alphas)
    print(f"train-fair: {line}")
    return 0


def _config_echo(args) -> dict:
    # The output directory is where results land, not part of what they are.
    echo = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
    echo["version"] = __version__
    return echo


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="luskin",
        description="Fairness auditing, synthetic-relabeling repair, and parity tuning.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit", help="ratio test on the original labels")
    _add_data_args(p)
    _add_spec_args(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("retrain", help="two-stage synthetic-relabeling pipeline")
    _add_data_args(p)
    _add_spec_args(p)
    p.add_argument("--algo", type=int, choices=(1, 2), default=2,
                   help="1 = risk adjustment, 2 = risk flipping")
    p.add_argument("--first-model", choices=("lr", "mlp"), default="lr")
    p.add_argument("--second-model", choices=("lr", "mlp"), default="mlp")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--split", default="0.4,0.4,0.2")
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("tune-thresholds", help="per-group threshold search (PSO)")
    _add_data_args(p)
    p.add_argument("--model", choices=("lr", "svm"), default="lr")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--split", default="0.6,0.2,0.2")
    p.set_defaults(func=cmd_tune_thresholds)

    p = sub.add_parser("train-fair", help="equalized-distribution training")
    _add_data_args(p)
    p.add_argument("--alpha", type=float, action="append",
                   help="accuracy weight in [0,1]; repeat for a sweep")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--sigma", type=float, default=None,
                   help="Gaussian kernel width (default: half the bin width)")
    p.add_argument("--split", default="0.6,0.2,0.2")
    p.set_defaults(func=cmd_train_fair)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is None:
        args.seed = _env_seed()
    try:
        return args.func(args)
    except LuskinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
