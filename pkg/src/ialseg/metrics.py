"""Confusion-matrix evaluation: per-class and per-group precision, recall,
and IoU, with optional deltas against a baseline report.

Cell (g, p) counts pixels with ground truth g predicted p.  Metrics with a
zero denominator (class absent from both ground truth and prediction) are
NaN and excluded from every mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .hierarchy import ImportanceHierarchy

__all__ = [
    "ConfusionMatrix",
    "ClassMetrics",
    "GroupReport",
    "predictions_from_prob",
    "class_metrics",
    "group_report",
    "report_to_csv",
    "report_to_json",
    "report_from_json",
]


class ConfusionMatrix:
    """CxC pixel counts, ground truth along rows."""

    def __init__(self, num_classes: int, ignore_id: int | None = None):
        if num_classes < 1:
            raise ValueError("need at least one class")
        self.num_classes = num_classes
        self.ignore_id = ignore_id
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, labels: np.ndarray, predictions: np.ndarray) -> "ConfusionMatrix":
        labels = np.asarray(labels).ravel()
        predictions = np.asarray(predictions).ravel()
        if labels.shape != predictions.shape:
            raise ValueError("labels and predictions differ in size")
        if self.ignore_id is not None:
            keep = labels != self.ignore_id
            labels, predictions = labels[keep], predictions[keep]
        C = self.num_classes
        if labels.size:
            if labels.min() < 0 or labels.max() >= C:
                raise ValueError("label id outside the class table")
            if predictions.min() < 0 or predictions.max() >= C:
                raise ValueError("prediction id outside the class table")
            flat = labels.astype(np.int64) * C + predictions
            self.counts += np.bincount(flat, minlength=C * C).reshape(C, C)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("class counts differ")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def predictions_from_prob(prob: np.ndarray) -> np.ndarray:
    """Argmax over the trailing channel axis; ties go to the lowest id."""
    return np.argmax(prob, axis=-1)


@dataclass(frozen=True)
class ClassMetrics:
    precision: np.ndarray
    recall: np.ndarray
    iou: np.ndarray


def class_metrics(cm: ConfusionMatrix) -> ClassMetrics:
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    gt = counts.sum(axis=1)
    pred = counts.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred > 0, tp / pred, np.nan)
        recall = np.where(gt > 0, tp / gt, np.nan)
        union = gt + pred - tp
        iou = np.where(union > 0, tp / union, np.nan)
    return ClassMetrics(precision=precision, recall=recall, iou=iou)


def _nanmean(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    if np.all(np.isnan(values)):
        return math.nan
    return float(np.nanmean(values))


@dataclass(frozen=True)
class GroupReport:
    """Per-class metrics plus per-group and overall means.

    ``deltas`` holds (this - baseline) per group and metric when a
    baseline report was supplied, else None.
    """

    class_ids: tuple[int, ...]
    class_names: tuple[str, ...]
    class_groups: tuple[int, ...]          # 1-based group rank per class
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    iou: tuple[float, ...]
    group_means: dict                      # rank -> {metric: mean}
    overall: dict                          # metric -> mean over defined classes
    deltas: dict | None = None

    def group_mean(self, rank: int, metric: str) -> float:
        return self.group_means[rank][metric]


def group_report(
    cm: ConfusionMatrix,
    hierarchy: ImportanceHierarchy,
    baseline: "GroupReport | None" = None,
) -> GroupReport:
    if cm.num_classes != hierarchy.num_classes:
        raise ValueError("confusion matrix and hierarchy disagree on class count")
    m = class_metrics(cm)
    ranks = tuple(int(hierarchy.rank_of(c.id)) for c in hierarchy.classes)
    per_metric = {"precision": m.precision, "recall": m.recall, "iou": m.iou}
    group_means: dict[int, dict[str, float]] = {}
    for rank in range(1, hierarchy.num_groups + 1):
        members = [i for i, r in enumerate(ranks) if r == rank]
        group_means[rank] = {
            name: _nanmean(vals[members]) for name, vals in per_metric.items()
        }
    overall = {name: _nanmean(vals) for name, vals in per_metric.items()}
    deltas = None
    if baseline is not None:
        if baseline.class_ids != tuple(c.id for c in hierarchy.classes):
            raise ValueError("baseline report covers different classes")
        deltas = {
            rank: {
                name: group_means[rank][name] - baseline.group_means[rank][name]
                for name in per_metric
            }
            for rank in group_means
        }
    return GroupReport(
        class_ids=tuple(c.id for c in hierarchy.classes),
        class_names=tuple(c.name for c in hierarchy.classes),
        class_groups=ranks,
        precision=tuple(float(v) for v in m.precision),
        recall=tuple(float(v) for v in m.recall),
        iou=tuple(float(v) for v in m.iou),
        group_means=group_means,
        overall=overall,
        deltas=deltas,
    )


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else f"{v:.6f}"


def report_to_csv(report: GroupReport) -> str:
    """One row per class; undefined metrics are left empty."""
    lines = ["class_id,name,group,precision,recall,iou"]
    for i in range(len(report.class_ids)):
        lines.append(
            ",".join([
                str(report.class_ids[i]),
                report.class_names[i],
                f"G{report.class_groups[i]}",
                _fmt(report.precision[i]),
                _fmt(report.recall[i]),
                _fmt(report.iou[i]),
            ])
        )
    return "\n".join(lines) + "\n"


def _none_for_nan(v: float):
    return None if math.isnan(v) else v


def report_to_json(report: GroupReport) -> dict:
    doc = {
        "classes": [
            {
                "id": report.class_ids[i],
                "name": report.class_names[i],
                "group": report.class_groups[i],
                "precision": _none_for_nan(report.precision[i]),
                "recall": _none_for_nan(report.recall[i]),
                "iou": _none_for_nan(report.iou[i]),
            }
            for i in range(len(report.class_ids))
        ],
        "groups": {
            f"G{rank}": {k: _none_for_nan(v) for k, v in means.items()}
            for rank, means in report.group_means.items()
        },
        "overall": {k: _none_for_nan(v) for k, v in report.overall.items()},
    }
    if report.deltas is not None:
        doc["deltas"] = {
            f"G{rank}": {k: _none_for_nan(v) for k, v in d.items()}
            for rank, d in report.deltas.items()
        }
    return doc


def report_from_json(doc: dict) -> GroupReport:
    classes = doc["classes"]

    def val(c, key):
        v = c[key]
        return math.nan if v is None else float(v)

    group_means = {
        int(g[1:]): {k: (math.nan if v is None else float(v)) for k, v in means.items()}
        for g, means in doc["groups"].items()
    }
    deltas = None
    if "deltas" in doc:
        deltas = {
            int(g[1:]): {k: (math.nan if v is None else float(v)) for k, v in d.items()}
            for g, d in doc["deltas"].items()
        }
    return GroupReport(
        class_ids=tuple(c["id"] for c in classes),
        class_names=tuple(c["name"] for c in classes),
        class_groups=tuple(c["group"] for c in classes),
        precision=tuple(val(c, "precision") for c in classes),
        recall=tuple(val(c, "recall") for c in classes),
        iou=tuple(val(c, "iou") for c in classes),
        group_means=group_means,
        overall={
            k: (math.nan if v is None else float(v)) for k, v in doc["overall"].items()
        },
        deltas=deltas,
    )
