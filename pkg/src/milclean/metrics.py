"""Confusion counts and annotation-quality metrics over tissue cells."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

METRIC_NAMES = ("ppv", "tpr", "tnr", "npv", "f1", "iou")


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    ppv: float
    tpr: float
    tnr: float
    npv: float
    f1: float
    iou: float
    degenerate: tuple = field(default_factory=tuple)  # metrics whose ratio was 0/0

    def values(self):
        return {name: getattr(self, name) for name in METRIC_NAMES}


def confusion(pred, gt, tissue):
    """(tp, fp, tn, fn) counted over tissue cells only."""
    tissue = np.asarray(tissue, dtype=bool)
    if pred.cells.shape != gt.cells.shape or pred.cells.shape != tissue.shape:
        raise ValidationError("prediction, ground truth and tissue shapes differ")
    p = pred.cells[tissue]
    g = gt.cells[tissue]
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    tn = int(np.sum(~p & ~g))
    fn = int(np.sum(~p & g))
    return tp, fp, tn, fn


def _ratio(num, den, name, degenerate):
    # 0/0 means the metric's population is empty; report perfect agreement
    if den == 0:
        degenerate.append(name)
        return 1.0
    return num / den


def report(pred, gt, tissue):
    tp, fp, tn, fn = confusion(pred, gt, tissue)
    degenerate = []
    return MetricsReport(
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        ppv=_ratio(tp, tp + fp, "ppv", degenerate),
        tpr=_ratio(tp, tp + fn, "tpr", degenerate),
        tnr=_ratio(tn, tn + fp, "tnr", degenerate),
        npv=_ratio(tn, tn + fn, "npv", degenerate),
        f1=_ratio(2 * tp, 2 * tp + fp + fn, "f1", degenerate),
        iou=_ratio(tp, tp + fp + fn, "iou", degenerate),
        degenerate=tuple(degenerate),
    )


def aggregate(reports):
    """Per-metric mean and sample standard deviation across slides.

    A single report aggregates to (value, 0.0).
    """
    if not reports:
        raise ValidationError("need at least one report to aggregate")
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        std = 0.0 if len(vals) == 1 else float(np.std(vals, ddof=1))
        out[name] = (float(vals.mean()), std)
    return out
