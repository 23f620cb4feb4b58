"""Segmentation scoring: pixel confusion counts, foreground IoU, and F1.

"MIoU" here is the mean over images of the foreground-class IoU. A
class-mean variant (averaging foreground and background IoU per image) is
available behind a flag; every report records which one was used.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageio import MaskBuffer

VARIANT_FOREGROUND = "foreground"
VARIANT_CLASS_MEAN = "class_mean"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: MaskBuffer, truth: MaskBuffer) -> ConfusionCounts:
    if (pred.width, pred.height) != (truth.width, truth.height):
        raise ValueError(
            f"mask dims differ: {pred.width}x{pred.height} vs {truth.width}x{truth.height}"
        )
    p = pred.labels.astype(bool)
    t = truth.labels.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
    )


def iou_foreground(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else c.tp / denom


def iou_background(c: ConfusionCounts) -> float:
    denom = c.tn + c.fp + c.fn
    return 1.0 if denom == 0 else c.tn / denom


def f1(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


@dataclass
class ScoreReport:
    per_image: dict[str, float]
    miou: float
    f1: float
    variant: str

    def rows(self) -> list[tuple[str, float]]:
        return sorted(self.per_image.items())


def score_dataset(preds: dict[str, MaskBuffer], truths: dict[str, MaskBuffer],
                  variant: str = VARIANT_FOREGROUND) -> ScoreReport:
    """Per-image IoU plus a pooled-pixel F1 over the whole set."""
    if set(preds) != set(truths):
        missing = set(preds) ^ set(truths)
        raise ValueError(f"pred/truth id sets differ, e.g. {sorted(missing)[:3]}")
    if not preds:
        raise ValueError("empty dataset")
    if variant not in (VARIANT_FOREGROUND, VARIANT_CLASS_MEAN):
        raise ValueError(f"unknown scoring variant {variant!r}")
    per_image: dict[str, float] = {}
    pooled = np.zeros(4, dtype=np.int64)
    for name in sorted(preds):
        c = confusion(preds[name], truths[name])
        if variant == VARIANT_FOREGROUND:
            per_image[name] = iou_foreground(c)
        else:
            per_image[name] = (iou_foreground(c) + iou_background(c)) / 2.0
        pooled += (c.tp, c.fp, c.fn, c.tn)
    pooled_counts = ConfusionCounts(*(int(v) for v in pooled))
    return ScoreReport(
        per_image=per_image,
        miou=float(np.mean(list(per_image.values()))),
        f1=f1(pooled_counts),
        variant=variant,
    )


def write_report_csv(report: ScoreReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("image,iou\n")
        for name, iou in report.rows():
            f.write(f"{name},{iou:.6f}\n")
        f.write(f"SUMMARY,miou={report.miou:.6f},f1={report.f1:.6f},variant={report.variant}\n")
