"""ROC/AUC evaluation over scored pair sets.

AUC comes from the rank statistic (ties between a positive and a negative
count half), which equals the probability that a random positive outscores a
random negative. The curve holds one point per distinct threshold plus the
(0,0) anchor at threshold +inf.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .errors import DegenerateLabels, EmptyDataset

log = logging.getLogger(__name__)

RocPoint = tuple[float, float, float]  # (fpr, tpr, threshold)


def roc_auc(scored: list[tuple[float, int]]) -> tuple[float, list[RocPoint]]:
    """Return (AUC, ROC curve) for a list of (score, label) items."""
    if not scored:
        raise EmptyDataset("no scored items")
    scores = np.asarray([s for s, _ in scored], dtype=float)
    labels = np.asarray([y for _, y in scored], dtype=int)
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        raise DegenerateLabels(f"need both labels, got {pos} positive / {neg} negative")

    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores), dtype=float)
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0  # 1-based average rank
        i = j + 1
    auc = (ranks[labels == 1].sum() - pos * (pos + 1) / 2.0) / (pos * neg)

    curve: list[RocPoint] = [(0.0, 0.0, float("inf"))]
    tp = fp = 0
    desc = np.argsort(-scores, kind="mergesort")
    k = 0
    while k < len(desc):
        thr = scores[desc[k]]
        while k < len(desc) and scores[desc[k]] == thr:
            if labels[desc[k]] == 1:
                tp += 1
            else:
                fp += 1
            k += 1
        curve.append((fp / neg, tp / pos, float(thr)))
    return float(auc), curve


def size_partition_eval(
    scored: list[tuple[float, int, int, int]],
    small_max: int = 5,
    large_min: int = 20,
) -> dict[str, tuple[float, list[RocPoint]]]:
    """AUC per block-size bucket.

    Items are (score, label, size_a, size_b); a pair belongs to a bucket only
    when both block sizes fall in the bucket's range. Degenerate buckets are
    skipped with a warning.
    """
    if not scored:
        raise EmptyDataset("no scored items")
    buckets: dict[str, list[tuple[float, int]]] = {"small": [], "middle": [], "large": []}
    for score, label, sa, sb in scored:
        if sa < small_max and sb < small_max:
            buckets["small"].append((score, label))
        elif sa > large_min and sb > large_min:
            buckets["large"].append((score, label))
        elif small_max <= sa <= large_min and small_max <= sb <= large_min:
            buckets["middle"].append((score, label))
    out = {}
    for name, items in buckets.items():
        try:
            out[name] = roc_auc(items)
        except (EmptyDataset, DegenerateLabels) as exc:
            log.warning("skipping %s bucket: %s", name, exc)
    return out


def write_roc_csv(path: str | Path, curve: list[RocPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for fpr, tpr, thr in curve:
            writer.writerow([repr(float(fpr)), repr(float(tpr)), repr(float(thr))])
