"""Binary classification metrics with bots as the positive class."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

METRICS = ("accuracy", "f1", "precision", "recall", "specificity", "mcc")
METRIC_TITLES = {
    "accuracy": "Accuracy",
    "f1": "F1-score",
    "precision": "Precision",
    "recall": "Recall",
    "specificity": "Specificity",
    "mcc": "MCC",
}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    accuracy: float
    f1: float
    precision: float
    recall: float
    specificity: float
    mcc: float
    seed: int | None = None
    degenerate: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def predictions(logits: np.ndarray) -> np.ndarray:
    """Argmax over two logits; ties go to class 0 (human)."""
    logits = np.asarray(logits)
    return (logits[:, 1] > logits[:, 0]).astype(np.int64)


def confusion_matrix(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> ConfusionMatrix:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("confusion_matrix: empty mask")
    pred = predictions(logits)[idx]
    true = np.asarray(labels)[idx]
    if not np.isin(true, (0, 1)).all():
        raise ValueError("confusion_matrix: masked nodes must be labeled 0 or 1")
    return ConfusionMatrix(
        tp=int(np.sum((pred == 1) & (true == 1))),
        fp=int(np.sum((pred == 1) & (true == 0))),
        tn=int(np.sum((pred == 0) & (true == 0))),
        fn=int(np.sum((pred == 0) & (true == 1))),
    )


def compute_metrics(cm: ConfusionMatrix, seed: int | None = None) -> MetricsReport:
    """Standard definitions; a zero denominator yields 0 and is flagged."""
    if cm.total <= 0:
        raise ValueError("compute_metrics: empty confusion matrix")
    flags = []

    def ratio(name, num, den):
        if den == 0:
            flags.append(name)
            return 0.0
        return num / den

    tp, fp, tn, fn = cm.tp, cm.fp, cm.tn, cm.fn
    precision = ratio("precision", tp, tp + fp)
    recall = ratio("recall", tp, tp + fn)
    specificity = ratio("specificity", tn, tn + fp)
    f1 = ratio("f1", 2 * precision * recall, precision + recall)
    mcc = ratio("mcc", tp * tn - fp * fn, math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)))
    return MetricsReport(
        accuracy=(tp + tn) / cm.total,
        f1=f1,
        precision=precision,
        recall=recall,
        specificity=specificity,
        mcc=mcc,
        seed=seed,
        degenerate=tuple(flags),
    )


@dataclass
class Summary:
    """Mean and population std of each metric over independent runs."""

    mean: dict[str, float]
    std: dict[str, float]
    runs: list[MetricsReport] = field(default_factory=list)
    failed: int = 0

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "runs": [{**r.as_dict(), "seed": r.seed, "degenerate": list(r.degenerate)} for r in self.runs],
            "failed_runs": self.failed,
        }


def aggregate(reports: list[MetricsReport], failed: int = 0) -> Summary:
    if not reports:
        nan = {m: float("nan") for m in METRICS}
        return Summary(nan, dict(nan), [], failed)
    table = np.array([[getattr(r, m) for m in METRICS] for r in reports], dtype=np.float64)
    mean = {m: float(v) for m, v in zip(METRICS, table.mean(axis=0))}
    std = {m: float(v) for m, v in zip(METRICS, table.std(axis=0))}
    return Summary(mean, std, list(reports), failed)


def format_table(rows: list[tuple[str, Summary]], title: str = "") -> str:
    """Aligned text table, one row per variant, cells as ``mean ± std``."""
    header = ["Model"] + [METRIC_TITLES[m] for m in METRICS]
    body = []
    for name, summary in rows:
        cells = [f"{summary.mean[m]:.3f} ± {summary.std[m]:.3f}" for m in METRICS]
        if summary.failed:
            name = f"{name} ({summary.failed} failed)"
        body.append([name] + cells)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]

    def line(cells):
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    out = []
    if title:
        out.append(title)
    out.append(line(header))
    out.append("-+-".join("-" * w for w in widths))
    out.extend(line(r) for r in body)
    return "\n".join(out) + "\n"
