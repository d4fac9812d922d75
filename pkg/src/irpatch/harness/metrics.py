"""Attack success rate, box overlap and average precision."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def asr(attacked: Sequence[bool]) -> float:
    """Fraction of records marked attacked; 0 for an empty list."""
    attacked = list(attacked)
    return sum(bool(a) for a in attacked) / len(attacked) if attacked else 0.0


def iou(a, b) -> float:
    """Intersection over union of two ``(row, col, height, width)`` boxes."""
    ar, ac, ah, aw = a
    br, bc, bh, bw = b
    dh = min(ar + ah, br + bh) - max(ar, br)
    dw = min(ac + aw, bc + bw) - max(ac, bc)
    inter = max(dh, 0) * max(dw, 0)
    union = ah * aw + bh * bw - inter
    return inter / union if union > 0 else 0.0


def compute_ap(scores, labels, n_positives: int | None = None) -> float | None:
    """Area under the precision-recall curve, all-point interpolated.

    ``labels[i]`` says whether detection ``i`` is a true positive.
    ``n_positives`` is the number of ground-truth objects and defaults to
    the number of true positives.  Detections with equal scores enter the
    curve together, as one threshold.  Returns ``None`` when there is
    nothing to recall.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum()) if n_positives is None else int(n_positives)
    if n_pos <= 0:
        return None
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # keep only the last index of every run of equal scores
    last = np.r_[s[1:] != s[:-1], True]
    tp, fp = tp[last], fp[last]
    recall = tp / n_pos
    precision = tp / (tp + fp)
    # precision envelope: best precision at any higher recall
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    recall = np.r_[0.0, recall]
    return float(np.sum((recall[1:] - recall[:-1]) * precision))
