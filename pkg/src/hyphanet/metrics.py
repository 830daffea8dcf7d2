from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

__all__ = ["MetricsReport", "metrics_from_counts", "voxel_metrics", "mean_metrics"]


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_from_counts(tp: int, fp: int, fn: int, tn: int = 0) -> MetricsReport:
    """Precision/recall/F1 with fixed conventions for empty sets.

    Nothing predicted and nothing true scores a perfect 1 across the board;
    if only one side is empty the undefined ratio is 0 and so is F1.
    """
    tp, fp, fn, tn = int(tp), int(fp), int(fn), int(tn)
    pred, true = tp + fp, tp + fn
    if pred == 0 and true == 0:
        return MetricsReport(tp, fp, fn, tn, 1.0, 1.0, 1.0)
    precision = tp / pred if pred else 0.0
    recall = tp / true if true else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricsReport(tp, fp, fn, tn, precision, recall, f1)


def voxel_metrics(pred: np.ndarray, gt: np.ndarray) -> MetricsReport:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction dims {pred.shape} differ from ground truth dims {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p)) - tp
    fn = int(np.count_nonzero(g)) - tp
    tn = p.size - tp - fp - fn
    return metrics_from_counts(tp, fp, fn, tn)


def mean_metrics(reports) -> tuple[float, float, float]:
    """Mean (precision, recall, f1) in input order."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")
    arr = np.array([[r.precision, r.recall, r.f1] for r in reports], dtype=np.float64)
    return tuple(float(v) for v in arr.mean(axis=0))
