"""Point-level binary evaluation with Gas as the positive class.

A ratio whose denominator is zero is reported as 1.0, so a scene without gas
and without false alarms scores perfectly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scan_model import SemanticLabel


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, gt, ignore_road: bool = True) -> ConfusionCounts:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction has {pred.size} labels, ground truth {gt.size}")
    if ignore_road:
        keep = gt != SemanticLabel.ROAD
        pred, gt = pred[keep], gt[keep]
    p = pred == SemanticLabel.GAS
    g = gt == SemanticLabel.GAS
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, int(p.size) - tp - fp - fn)


def _ratio(num, den):
    return 1.0 if den == 0 else num / den


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def iou_gas(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp + c.fn)


def iou_other(c: ConfusionCounts) -> float:
    return _ratio(c.tn, c.tn + c.fn + c.fp)


def miou(c: ConfusionCounts) -> float:
    return (iou_gas(c) + iou_other(c)) / 2


def summary(c: ConfusionCounts) -> dict:
    return {"precision": precision(c), "recall": recall(c), "iou_other": iou_other(c),
            "iou_gas": iou_gas(c), "miou": miou(c)}


COLUMNS = (("Precision", "precision"), ("Recall", "recall"), ("IoU_Other", "iou_other"),
           ("IoU_Gas", "iou_gas"), ("mIoU", "miou"))


def format_table(rows) -> str:
    """Fixed-width table of percentages; ``rows`` is ``[(name, ConfusionCounts)]``."""
    name_w = max([8] + [len(n) for n, _ in rows])
    head = f"{'Sequence':<{name_w}}" + "".join(f"{h:>11}" for h, _ in COLUMNS)
    lines = [head, "-" * len(head)]
    for name, counts in rows:
        m = summary(counts)
        lines.append(f"{name:<{name_w}}" + "".join(f"{100 * m[k]:>11.2f}" for _, k in COLUMNS))
    return "\n".join(lines)
