"""Threshold-free OOD metrics and depth-quality metrics.

Scores follow one orientation everywhere: higher means more OOD.  Label 1 is
in-distribution, label 0 is OOD.  Ranking metrics treat tied scores as one
group, so they are invariant to the input order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InputError, UsageError


def _check(scores, labels, need_both=True):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape or s.size == 0:
        raise InputError("scores and labels must be non-empty and equally long")
    if not np.all(np.isfinite(s)):
        raise InputError("scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise InputError("labels must be 0 (OOD) or 1 (in-distribution)")
    y = y.astype(np.int64)
    if need_both and (y.all() or not y.any()):
        raise UsageError("both in-distribution and OOD samples are required")
    return s, y


def auroc(scores, labels) -> float:
    """P(ID score < OOD score) + 0.5 P(tie), via Mann-Whitney ranks."""
    s, y = _check(scores, labels)
    n_id = int(y.sum())
    n_ood = y.size - n_id
    # rank by descending score so that "lower score" counts as a win for ID
    ranks = rankdata(-s)
    u = ranks[y == 1].sum() - n_id * (n_id + 1) / 2
    return float(u / (n_id * n_ood))


def aupr(scores, labels, positive="ID") -> float:
    """Average precision with ID (ascending score) or OOD (descending) as positives."""
    if positive not in ("ID", "OOD"):
        raise UsageError(f"positive must be 'ID' or 'OOD', got {positive!r}")
    s, y = _check(scores, labels, need_both=False)
    if positive == "ID":
        pos = y == 1
        key = s
    else:
        pos = y == 0
        key = -s
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise UsageError("no positive samples")
    order = np.argsort(key, kind="stable")
    key, pos = key[order], pos[order]
    tp = np.cumsum(pos)
    # the last index of every tied group is where the threshold can sit
    last = np.r_[key[1:] != key[:-1], True]
    tp = tp[last]
    n_pred = np.flatnonzero(last) + 1
    precision = tp / n_pred
    recall = tp / n_pos
    d_recall = np.diff(np.r_[0.0, recall])
    return float(np.sum(d_recall * precision))


def fpr_at_tpr(scores, labels, target=0.95) -> float:
    """Fraction of OOD accepted at the tightest cutoff admitting ``target`` of ID.

    A sample is accepted as in-distribution iff its score is <= the cutoff.
    """
    if not 0 < target <= 1:
        raise InputError("target TPR must be in (0, 1]")
    s, y = _check(scores, labels)
    id_sorted = np.sort(s[y == 1])
    ood = s[y == 0]
    n_id = id_sorted.size
    # smallest k with k / n_id >= target; TPR at cutoff id_sorted[k-1] is >= k / n_id
    k = int(np.argmax(np.arange(1, n_id + 1) / n_id >= target)) + 1
    cutoff = id_sorted[k - 1]
    return float(np.mean(ood <= cutoff))


def ood_metrics(scores, labels) -> dict:
    return {
        "auroc": auroc(scores, labels),
        "auprs": aupr(scores, labels, "ID"),
        "aupre": aupr(scores, labels, "OOD"),
        "fpr95": fpr_at_tpr(scores, labels, 0.95),
    }


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    rmse: float
    delta1: float

    def as_dict(self) -> dict:
        return {"abs_rel": self.abs_rel, "rmse": self.rmse, "delta1": self.delta1}


def depth_metrics(pred, gt, mask=None) -> DepthMetrics:
    """AbsRel, RMSE and delta<1.25 accuracy over valid (gt > 0) pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    valid = gt > 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    if not valid.any():
        raise InputError("no valid depth pixels")
    p, g = pred[valid], gt[valid]
    if np.any(p <= 0):
        raise InputError("predicted depth must be positive on valid pixels")
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(p - g) / g)),
        rmse=float(np.sqrt(np.mean((p - g) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
    )


def mean_depth_metrics(preds, gts) -> DepthMetrics:
    """Per-image metrics averaged over a set of images."""
    per = [depth_metrics(p, g) for p, g in zip(preds, gts)]
    if not per:
        raise InputError("empty depth set")
    return DepthMetrics(
        abs_rel=float(np.mean([m.abs_rel for m in per])),
        rmse=float(np.mean([m.rmse for m in per])),
        delta1=float(np.mean([m.delta1 for m in per])),
    )
