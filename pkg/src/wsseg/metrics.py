"""Mean intersection-over-union over a set of label masks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .pseudo_label import IGNORE

log = logging.getLogger(__name__)


@dataclass
class MIoUReport:
    intersection: np.ndarray
    union: np.ndarray
    pred_pixels: np.ndarray
    gt_pixels: np.ndarray
    skipped: int = 0
    class_names: list = field(default_factory=list)

    @property
    def num_classes(self):
        return len(self.intersection)

    @property
    def iou(self):
        """Per-class IoU; NaN where the class never appears in pred or gt."""
        out = np.full(self.num_classes, np.nan)
        ok = self.union > 0
        out[ok] = self.intersection[ok] / self.union[ok]
        return out

    @property
    def miou(self):
        iou = self.iou
        valid = ~np.isnan(iou)
        return float(iou[valid].mean()) if valid.any() else float("nan")

    def table(self):
        names = self.class_names or [str(i) for i in range(self.num_classes)]
        rows = ["class,intersection,union,iou"]
        for name, i, u, v in zip(names, self.intersection, self.union, self.iou):
            rows.append(f"{name},{int(i)},{int(u)},{'' if np.isnan(v) else f'{v:.6f}'}")
        rows.append(f"mean,,,{self.miou:.6f}")
        return "\n".join(rows) + "\n"


def confusion(pred, gt, num_classes):
    """``[gt, pred]`` pixel counts, skipping ignore-labelled ground truth."""
    pred = np.asarray(pred).ravel().astype(np.int64)
    gt = np.asarray(gt).ravel().astype(np.int64)
    keep = (gt != IGNORE) & (gt < num_classes)
    pred_k = np.where(pred[keep] < num_classes, pred[keep], num_classes)
    counts = np.bincount(gt[keep] * (num_classes + 1) + pred_k,
                         minlength=num_classes * (num_classes + 1))
    return counts.reshape(num_classes, num_classes + 1)[:, :num_classes]


def evaluate(pred_masks, gt_masks, num_classes, class_names=None):
    """Accumulate counts over all mask pairs, then compute per-class IoU.

    Pairs with mismatched shapes are skipped with a warning and counted.
    """
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    skipped = 0
    for k, (pred, gt) in enumerate(zip(pred_masks, gt_masks)):
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            log.warning("mask pair %d: shape %s vs %s, skipped", k, pred.shape, gt.shape)
            skipped += 1
            continue
        cm += confusion(pred, gt, num_classes)
    inter = np.diag(cm).astype(np.int64)
    gt_px = cm.sum(axis=1)
    pred_px = cm.sum(axis=0)
    return MIoUReport(inter, gt_px + pred_px - inter, pred_px, gt_px, skipped,
                      list(class_names) if class_names else [])
