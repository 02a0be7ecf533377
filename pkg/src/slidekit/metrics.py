"""Slide-level evaluation metrics and their bootstrap/seed aggregation.

Conventions, stated once and embedded in every emitted report:

* balanced accuracy = unweighted mean of per-class recalls; classes absent
  from the ground-truth labels are excluded from the mean and flagged;
* multiclass ROC AUC = macro average of one-vs-rest binary AUCs, each
  computed from the Mann-Whitney rank statistic with ties counted 0.5;
* weighted F1 = support-weighted mean of per-class F1, with 0/0 := 0;
* confidence intervals = percentile bootstrap over slides (resampling test
  slides with replacement), 2.5/97.5 percentiles, 1000 resamples by default;
* cross-seed spread = population standard deviation over the fixed seed set.

Worked example, labels [0, 0, 1, 1] vs predictions [0, 1, 1, 1]: per-class
recalls are 1/2 and 1, so balanced accuracy is 3/4; per-class F1 scores are
2/3 (class 0: one true positive, one miss) and 4/5 (class 1: two true
positives, one false positive), so the support-weighted F1 is
(2*(2/3) + 2*(4/5)) / 4 = 11/15.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import (
    ConfigError,
    DegenerateDataError,
    ShapeError,
    UndefinedMetricError,
)
from .rngs import make_rng

BOOTSTRAP_RESAMPLES = 1000
BOOTSTRAP_PERCENTILES = (2.5, 97.5)
_REDRAW_FACTOR = 10

def ci_method_label(resamples: int | None) -> str:
    if resamples is None:
        return "none (point estimates only)"
    return (
        f"percentile bootstrap over slides, {resamples} resamples, "
        f"{BOOTSTRAP_PERCENTILES[0]}/{BOOTSTRAP_PERCENTILES[1]} percentiles"
    )


CI_METHOD = ci_method_label(BOOTSTRAP_RESAMPLES)
AUC_METHOD = "macro one-vs-rest, rank-based with ties at 0.5"


def _check_pair(labels, predictions, num_classes: int):
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions)
    if labels.ndim != 1 or labels.shape[0] < 1:
        raise ShapeError(f"labels must be a non-empty vector, got shape {labels.shape}")
    if predictions.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"{labels.shape[0]} labels vs {predictions.shape[0]} predictions"
        )
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ShapeError(
            f"labels outside [0, {num_classes}): "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels, predictions


def confusion_matrix(labels, predictions, num_classes: int) -> np.ndarray:
    """counts[i, j] = slides with true class i predicted as class j."""
    labels, predictions = _check_pair(labels, predictions, num_classes)
    predictions = predictions.astype(np.int64)
    if predictions.min() < 0 or predictions.max() >= num_classes:
        raise ShapeError(
            f"predictions outside [0, {num_classes}): "
            f"[{predictions.min()}, {predictions.max()}]"
        )
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return counts


def accuracy(labels, predictions, num_classes: int) -> float:
    labels, predictions = _check_pair(labels, predictions, num_classes)
    return float(np.mean(labels == predictions.astype(np.int64)))


def balanced_accuracy_detail(
    labels, predictions, num_classes: int
) -> tuple[float, np.ndarray, list[int]]:
    """(balanced accuracy, per-class recall vector, absent class list).

    Recall of an absent class is reported as NaN in the vector and excluded
    from the mean.
    """
    counts = confusion_matrix(labels, predictions, num_classes)
    support = counts.sum(axis=1)
    recalls = np.full(num_classes, np.nan)
    present = support > 0
    recalls[present] = counts.diagonal()[present] / support[present]
    absent = [int(c) for c in np.flatnonzero(~present)]
    return float(np.mean(recalls[present])), recalls, absent


def balanced_accuracy(labels, predictions, num_classes: int | None = None) -> float:
    if num_classes is None:
        num_classes = int(max(np.max(labels), np.max(predictions))) + 1
    value, _, _ = balanced_accuracy_detail(labels, predictions, num_classes)
    return value


def _binary_auc(positive_mask: np.ndarray, scores: np.ndarray) -> float:
    # Mann-Whitney U via midranks; ties contribute 0.5 per tied pair
    n_pos = int(positive_mask.sum())
    n_neg = positive_mask.size - n_pos
    ranks = rankdata(scores)
    u = ranks[positive_mask].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc_detail(
    labels, scores, num_classes: int
) -> tuple[float, np.ndarray, list[int]]:
    """(macro AUC, per-class AUC vector, absent class list)."""
    labels, scores = _check_pair(labels, scores, num_classes)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != num_classes:
        raise ShapeError(
            f"scores must be (n, {num_classes}), got {scores.shape}"
        )
    present = np.flatnonzero(np.bincount(labels, minlength=num_classes))
    if present.size < 2:
        raise UndefinedMetricError(
            f"ROC AUC undefined: labels contain only class(es) {present.tolist()}"
        )
    aucs = np.full(num_classes, np.nan)
    for c in present:
        aucs[c] = _binary_auc(labels == c, scores[:, c])
    absent = [int(c) for c in range(num_classes) if c not in set(present.tolist())]
    return float(np.nanmean(aucs)), aucs, absent


def roc_auc(labels, scores, num_classes: int) -> float:
    value, _, _ = roc_auc_detail(labels, scores, num_classes)
    return value


def weighted_f1(labels, predictions, num_classes: int) -> float:
    counts = confusion_matrix(labels, predictions, num_classes)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    tp = counts.diagonal()
    f1 = np.zeros(num_classes)
    denom = support + predicted  # 2*tp + fp + fn
    nonzero = denom > 0
    f1[nonzero] = 2.0 * tp[nonzero] / denom[nonzero]
    total = support.sum()
    return float((support * f1).sum() / total)


def bootstrap_ci(
    labels,
    outputs,
    metric,
    *,
    resamples: int = BOOTSTRAP_RESAMPLES,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap CI of metric(labels, outputs) over slides.

    ``metric`` takes (labels, outputs) row-resampled together. Resamples on
    which the metric is undefined (single-class draws) are redrawn from the
    same stream; a resample slot that stays undefined after 10 attempts
    aborts with a degenerate-data error.
    """
    if resamples < 100:
        raise ConfigError(f"resamples must be >= 100, got {resamples}")
    labels = np.asarray(labels)
    outputs = np.asarray(outputs)
    n = labels.shape[0]
    values = np.empty(resamples)
    for r in range(resamples):
        rng = make_rng(seed, "bootstrap", r)
        value = None
        for _ in range(_REDRAW_FACTOR):
            idx = rng.integers(0, n, size=n)
            try:
                value = metric(labels[idx], outputs[idx])
            except UndefinedMetricError:
                continue
            break
        if value is None:
            raise DegenerateDataError(
                f"bootstrap resample {r} stayed undefined after "
                f"{_REDRAW_FACTOR} redraws"
            )
        values[r] = value
    lower, upper = np.percentile(values, BOOTSTRAP_PERCENTILES)
    return float(lower), float(upper)


# -- reports ------------------------------------------------------------------

@dataclass
class MetricResult:
    name: str
    value: float
    ci_lower: float | None = None
    ci_upper: float | None = None


@dataclass
class EvalReport:
    task_name: str
    method: str
    seed: int
    n_test: int
    metrics: dict[str, MetricResult]
    per_class_recall: list[float]
    absent_classes: list[int]
    confusion: np.ndarray
    ci_method: str = CI_METHOD
    auc_method: str = AUC_METHOD
    notes: list[str] = field(default_factory=list)

    def metric_value(self, name: str) -> float:
        return self.metrics[name].value

    def to_text(self) -> str:
        lines = [
            f"task: {self.task_name}",
            f"method: {self.method}",
            f"seed: {self.seed}",
            f"n_test: {self.n_test}",
            f"ci_method: {self.ci_method}",
            f"auc_method: {self.auc_method}",
        ]
        for result in self.metrics.values():
            if result.ci_lower is None:
                lines.append(f"{result.name}: {result.value:.4f}")
            else:
                lines.append(
                    f"{result.name}: {result.value:.4f} "
                    f"(95% CI {result.ci_lower:.4f}-{result.ci_upper:.4f})"
                )
        recalls = ", ".join(
            "absent" if np.isnan(r) else f"{r:.4f}" for r in self.per_class_recall
        )
        lines.append(f"per_class_recall: [{recalls}]")
        if self.absent_classes:
            lines.append(
                "absent_classes: "
                + ", ".join(str(c) for c in self.absent_classes)
                + " (excluded from class-averaged metrics)"
            )
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"

    def to_csv_row(self) -> dict[str, object]:
        row: dict[str, object] = {
            "task": self.task_name,
            "method": self.method,
            "seed": self.seed,
            "n_test": self.n_test,
            "ci_method": self.ci_method,
            "auc_method": self.auc_method,
        }
        for result in self.metrics.values():
            row[result.name] = f"{result.value:.6f}"
            if result.ci_lower is not None:
                row[f"{result.name}_ci_lower"] = f"{result.ci_lower:.6f}"
                row[f"{result.name}_ci_upper"] = f"{result.ci_upper:.6f}"
        return row


def write_report_csv(reports: list[EvalReport], path: str | Path) -> None:
    rows = [report.to_csv_row() for report in reports]
    fieldnames: dict[str, None] = {}
    for row in rows:
        for key in row:
            fieldnames.setdefault(key, None)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
        writer.writeheader()
        writer.writerows(rows)


def evaluate_predictions(
    labels,
    predictions,
    probabilities,
    *,
    num_classes: int,
    task_name: str = "",
    method: str = "",
    seed: int = 0,
    bootstrap_resamples: int | None = BOOTSTRAP_RESAMPLES,
    bootstrap_seed: int = 0,
) -> EvalReport:
    """Full evaluation of one model's test outputs.

    Pass ``bootstrap_resamples=None`` to skip CI computation (used inside
    resample loops and quick summaries).
    """
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    bal, recalls, absent = balanced_accuracy_detail(labels, predictions, num_classes)
    counts = confusion_matrix(labels, predictions, num_classes)
    metrics = {
        "balanced_accuracy": MetricResult("balanced_accuracy", bal),
        "weighted_f1": MetricResult(
            "weighted_f1", weighted_f1(labels, predictions, num_classes)
        ),
        "accuracy": MetricResult("accuracy", accuracy(labels, predictions, num_classes)),
    }
    notes = []
    try:
        auc_value, _, _ = roc_auc_detail(labels, probabilities, num_classes)
        metrics["roc_auc"] = MetricResult("roc_auc", auc_value)
    except UndefinedMetricError as exc:
        notes.append(f"roc_auc undefined: {exc}")
    if bootstrap_resamples is not None:
        pred_metrics = {
            "balanced_accuracy": lambda y, p: balanced_accuracy(y, p, num_classes),
            "weighted_f1": lambda y, p: weighted_f1(y, p, num_classes),
            "accuracy": lambda y, p: accuracy(y, p, num_classes),
        }
        for name, fn in pred_metrics.items():
            lo, hi = bootstrap_ci(
                labels,
                predictions,
                fn,
                resamples=bootstrap_resamples,
                seed=bootstrap_seed,
            )
            metrics[name].ci_lower, metrics[name].ci_upper = lo, hi
        if "roc_auc" in metrics:
            lo, hi = bootstrap_ci(
                labels,
                probabilities,
                lambda y, s: roc_auc(y, s, num_classes),
                resamples=bootstrap_resamples,
                seed=bootstrap_seed,
            )
            metrics["roc_auc"].ci_lower, metrics["roc_auc"].ci_upper = lo, hi
    return EvalReport(
        task_name=task_name,
        method=method,
        seed=seed,
        n_test=int(labels.shape[0]),
        metrics=metrics,
        per_class_recall=[float(r) for r in recalls],
        absent_classes=absent,
        confusion=counts,
        ci_method=ci_method_label(bootstrap_resamples),
        notes=notes,
    )


# -- cross-seed aggregation ----------------------------------------------------

@dataclass
class SeedSummary:
    metric: str
    task_name: str
    method: str
    seeds: list[int]
    values: list[float]
    mean: float
    std: float

    @property
    def seed_count(self) -> int:
        return len(self.seeds)


def aggregate_seeds(reports: list[EvalReport], metric: str) -> SeedSummary:
    """Mean and population std of one metric across seed repetitions."""
    if len(reports) < 2:
        raise ConfigError(
            f"need >= 2 seed reports to aggregate, got {len(reports)}"
        )
    tasks = {(r.task_name, r.method) for r in reports}
    if len(tasks) != 1:
        raise ConfigError(f"cannot aggregate mixed (task, method) pairs: {tasks}")
    values = [r.metric_value(metric) for r in reports]
    arr = np.asarray(values)
    return SeedSummary(
        metric=metric,
        task_name=reports[0].task_name,
        method=reports[0].method,
        seeds=[r.seed for r in reports],
        values=values,
        mean=float(arr.mean()),
        std=float(arr.std()),  # population std over the fixed seed set
    )
