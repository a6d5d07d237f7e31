"""Classification metrics over per-image predictions.

Each evaluated image yields exactly one outcome: a true positive for the
truth class, a false positive for the predicted class plus a false negative
for the truth class, or (on abstention) a false negative only. Macro scores
average over every class in the label space, including zero-support ones.
"""

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyDataset, UnknownImageId
from .labels import LabelSpace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    labels: LabelSpace
    tp: tuple
    fp: tuple
    fn: tuple
    n_evaluated: int
    abstentions: int


@dataclass(frozen=True)
class ClassMetrics:
    name: str
    support: int
    precision: float
    recall: float
    f1: float
    zero_support: bool


@dataclass(frozen=True)
class MetricsReport:
    setting: str
    n_evaluated: int
    abstentions: int
    acc_standard: float
    acc_jaccard: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: tuple


def confusion_counts(predictions, truths, labels: LabelSpace) -> ConfusionCounts:
    """Tally one-vs-rest counts. truths maps image_id to truth label index.

    Every prediction must refer to a known image, and no image may be
    predicted twice.
    """
    k = len(labels)
    tp = [0] * k
    fp = [0] * k
    fn = [0] * k
    abstentions = 0
    seen = set()
    for pred in predictions:
        if pred.image_id not in truths:
            raise UnknownImageId(f"prediction for unknown image {pred.image_id!r}")
        if pred.image_id in seen:
            raise ValueError(f"duplicate prediction for image {pred.image_id!r}")
        seen.add(pred.image_id)
        truth = truths[pred.image_id]
        if pred.label_index is None:
            abstentions += 1
            fn[truth] += 1
        elif pred.label_index == truth:
            tp[truth] += 1
        else:
            fp[pred.label_index] += 1
            fn[truth] += 1
    return ConfusionCounts(
        labels=labels,
        tp=tuple(tp),
        fp=tuple(fp),
        fn=tuple(fn),
        n_evaluated=len(seen),
        abstentions=abstentions,
    )


def macro_metrics(counts: ConfusionCounts, setting: str = "") -> MetricsReport:
    """Aggregate counts into accuracies, macro scores, and per-class rows."""
    if counts.n_evaluated == 0:
        raise EmptyDataset("no images were evaluated")
    per_class = []
    for i, name in enumerate(counts.labels.classes):
        tp, fp, fn = counts.tp[i], counts.fp[i], counts.fn[i]
        support = tp + fn
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
        per_class.append(
            ClassMetrics(
                name=name,
                support=support,
                precision=precision,
                recall=recall,
                f1=f1,
                zero_support=support == 0,
            )
        )
    zero_support = [c.name for c in per_class if c.zero_support]
    if zero_support:
        log.warning(
            "classes with no truth instances scored as 0: %s", ", ".join(zero_support)
        )
    k = len(per_class)
    total_tp = sum(counts.tp)
    jaccard_denom = total_tp + sum(counts.fp) + sum(counts.fn)
    return MetricsReport(
        setting=setting,
        n_evaluated=counts.n_evaluated,
        abstentions=counts.abstentions,
        acc_standard=total_tp / counts.n_evaluated,
        acc_jaccard=total_tp / jaccard_denom if jaccard_denom else 0.0,
        macro_precision=sum(c.precision for c in per_class) / k,
        macro_recall=sum(c.recall for c in per_class) / k,
        macro_f1=sum(c.f1 for c in per_class) / k,
        per_class=tuple(per_class),
    )


def emit_reports(report: MetricsReport, out_dir) -> dict:
    """Write per_class.csv, pr_scatter.csv, and summary.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    per_class_path = out / "per_class.csv"
    with open(per_class_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class", "support", "precision", "recall", "f1", "zero_support"])
        for c in report.per_class:
            writer.writerow(
                [
                    c.name,
                    c.support,
                    f"{c.precision:.6f}",
                    f"{c.recall:.6f}",
                    f"{c.f1:.6f}",
                    "true" if c.zero_support else "false",
                ]
            )

    scatter_path = out / "pr_scatter.csv"
    with open(scatter_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class", "precision", "recall", "support", "f1"])
        for c in report.per_class:
            writer.writerow(
                [
                    c.name,
                    f"{c.precision:.6f}",
                    f"{c.recall:.6f}",
                    c.support,
                    f"{c.f1:.6f}",
                ]
            )

    summary_path = out / "summary.json"
    summary = {
        "setting": report.setting,
        "n_evaluated": report.n_evaluated,
        "abstentions": report.abstentions,
        "acc_standard": report.acc_standard,
        "acc_jaccard": report.acc_jaccard,
        "macro_precision": report.macro_precision,
        "macro_recall": report.macro_recall,
        "macro_f1": report.macro_f1,
        "zero_support_classes": [c.name for c in report.per_class if c.zero_support],
    }
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")

    return {
        "per_class": per_class_path,
        "pr_scatter": scatter_path,
        "summary": summary_path,
    }
