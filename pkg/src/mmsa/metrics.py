"""Evaluation metrics: binned accuracies, weighted F1, MAE, Pearson r.

Binning rules for the k-level accuracies (both predictions and labels go
through the same rule):

* k=7: clamp to [-3, 3], then round half away from zero (7 bins).
* k=5: same with clamp to [-2, 2].
* k=3: (-inf, -0.1] negative, (-0.1, 0.1) neutral, [0.1, inf) positive.
* k=2: sign comparison; samples whose label is exactly zero are excluded
  from the denominator.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError


def _as_pair(preds, labels):
    p = np.asarray(preds, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"need two equal-length vectors, got {p.shape} and {y.shape}")
    if p.size < 1:
        raise ValueError("need at least one sample")
    return p, y


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _bin3(x):
    return np.where(x <= -0.1, -1.0, np.where(x < 0.1, 0.0, 1.0))


def acc_k(preds, labels, k: int) -> float:
    """Fraction of samples whose prediction and label fall in the same bin."""
    p, y = _as_pair(preds, labels)
    if k == 2:
        keep = y != 0.0
        if not keep.any():
            raise DataError("two-level accuracy undefined: all labels are zero")
        return float(np.mean(np.sign(p[keep]) == np.sign(y[keep])))
    if k == 3:
        return float(np.mean(_bin3(p) == _bin3(y)))
    if k in (5, 7):
        lim = 2.0 if k == 5 else 3.0
        pb = _round_half_away(np.clip(p, -lim, lim))
        yb = _round_half_away(np.clip(y, -lim, lim))
        return float(np.mean(pb == yb))
    raise ValueError(f"k must be one of 2, 3, 5, 7, got {k}")


def f1_weighted(pred_classes, label_classes, n_classes: int, average: str = "weighted") -> float:
    """Per-class F1 (0/0 treated as 0) averaged by label support, or macro."""
    p = np.asarray(pred_classes, dtype=int)
    y = np.asarray(label_classes, dtype=int)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"need two equal-length vectors, got {p.shape} and {y.shape}")
    if average not in ("weighted", "macro"):
        raise ValueError(f"unknown averaging scheme {average!r}")
    f1s = np.zeros(n_classes)
    support = np.zeros(n_classes)
    for c in range(n_classes):
        tp = int(np.sum((p == c) & (y == c)))
        fp = int(np.sum((p == c) & (y != c)))
        fn = int(np.sum((p != c) & (y == c)))
        support[c] = tp + fn
        denom = 2 * tp + fp + fn
        f1s[c] = 2.0 * tp / denom if denom > 0 else 0.0
    if average == "macro":
        return float(f1s.mean())
    total = support.sum()
    if total == 0:
        return 0.0
    return float((f1s * support).sum() / total)


def mae(preds, labels) -> float:
    """Mean absolute error."""
    p, y = _as_pair(preds, labels)
    return float(np.mean(np.abs(p - y)))


def pearson_corr(preds, labels) -> float:
    """Sample Pearson correlation; rejects constant inputs."""
    p, y = _as_pair(preds, labels)
    if p.size < 2:
        raise ValueError("correlation needs at least two samples")
    pc = p - p.mean()
    yc = y - y.mean()
    sp = float((pc * pc).sum())
    sy = float((yc * yc).sum())
    if sp == 0.0 or sy == 0.0:
        side = "predictions" if sp == 0.0 else "labels"
        raise DataError(f"correlation undefined: {side} are constant")
    return float((pc * yc).sum() / np.sqrt(sp * sy))


@dataclass
class MetricReport:
    """One evaluation run; fields are None when the head mode does not produce them."""

    acc2: float | None = None
    acc3: float | None = None
    acc5: float | None = None
    acc7: float | None = None
    f1: float | None = None
    mae: float | None = None
    corr: float | None = None

    FIELDS = ("acc2", "acc3", "acc5", "acc7", "f1", "mae", "corr")

    def as_text(self) -> str:
        """key: value block; the x100 column matches common reporting practice."""
        lines = []
        for name in self.FIELDS:
            value = getattr(self, name)
            if value is not None:
                lines.append(f"{name}: {value:.6f}  (x100: {100.0 * value:.2f})")
        return "\n".join(lines)

    @staticmethod
    def csv_header() -> str:
        return ",".join(MetricReport.FIELDS)

    def as_csv_row(self) -> str:
        cells = []
        for name in self.FIELDS:
            value = getattr(self, name)
            cells.append("" if value is None else f"{value:.6f}")
        return ",".join(cells)
