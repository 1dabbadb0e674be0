"""Detection and classification evaluation.

Detection follows the PASCAL-style convention: greedy confidence-descending
matching against single-claim ground truths, 11-point interpolated average
precision at a fixed IOU threshold. Classification reports macro F1 and
confusion matrices with optional class merging.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import BBox, GenusCatalog

RECALL_LEVELS = tuple(i / 10.0 for i in range(11))


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.5
    confidence_threshold: float = 0.25

    def __post_init__(self):
        if not (0.0 <= self.iou_threshold <= 1.0):
            raise ValueError("iou_threshold outside [0, 1]")
        if not (0.0 <= self.confidence_threshold <= 1.0):
            raise ValueError("confidence_threshold outside [0, 1]")


@dataclass
class MatchResult:
    """TP/FP assignment of predictions to ground truths at one threshold pair.

    tp holds (prediction_index, gt_index) pairs, fp holds prediction indices
    that claimed nothing, fn holds ground-truth indices nobody claimed.
    Indices refer to the *filtered* prediction list (confidence >= threshold)
    and the input gt list.
    """

    tp: List[Tuple[int, int]]
    fp: List[int]
    fn: List[int]
    n_gt: int
    n_pred: int

    @property
    def precision(self) -> float:
        return len(self.tp) / self.n_pred if self.n_pred else 0.0

    @property
    def recall(self) -> float:
        return len(self.tp) / self.n_gt if self.n_gt else 0.0


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def match(
    preds: Sequence[Tuple[BBox, float]],
    gts: Sequence[BBox],
    cfg: MatchConfig = MatchConfig(),
) -> MatchResult:
    """Greedy matching: predictions sorted by descending confidence (ties keep
    input order) each claim the unmatched gt with highest IOU, TP iff that
    IOU is strictly greater than the threshold. Each gt is claimed at most once.
    """
    kept = [(i, box, conf) for i, (box, conf) in enumerate(preds) if conf >= cfg.confidence_threshold]
    order = sorted(range(len(kept)), key=lambda k: -kept[k][2])

    claimed = [False] * len(gts)
    tp: List[Tuple[int, int]] = []
    fp: List[int] = []
    for k in order:
        box = kept[k][1]
        best_iou, best_gt = 0.0, -1
        for g, gt in enumerate(gts):
            if claimed[g]:
                continue
            ov = iou(box, gt)
            if ov > best_iou:
                best_iou, best_gt = ov, g
        if best_gt >= 0 and best_iou > cfg.iou_threshold:
            claimed[best_gt] = True
            tp.append((k, best_gt))
        else:
            fp.append(k)
    fn = [g for g, c in enumerate(claimed) if not c]
    return MatchResult(tp=tp, fp=fp, fn=fn, n_gt=len(gts), n_pred=len(kept))


def average_precision_11pt(
    preds: Sequence[Tuple[BBox, float]],
    gts: Sequence[BBox],
    iou_threshold: float = 0.5,
) -> float:
    """11-point interpolated AP: sweep confidence high to low, accumulate the
    PR curve, interpolate p(r) = max precision at recall >= r, average over
    the eleven equally spaced recall levels.
    """
    if not gts:
        return 0.0
    order = sorted(range(len(preds)), key=lambda i: -preds[i][1])
    claimed = [False] * len(gts)
    precisions: List[float] = []
    recalls: List[float] = []
    n_tp = 0
    for rank, i in enumerate(order, start=1):
        box = preds[i][0]
        best_iou, best_gt = 0.0, -1
        for g, gt in enumerate(gts):
            if claimed[g]:
                continue
            ov = iou(box, gt)
            if ov > best_iou:
                best_iou, best_gt = ov, g
        if best_gt >= 0 and best_iou > iou_threshold:
            claimed[best_gt] = True
            n_tp += 1
        # predictions sharing a confidence enter the curve together: emit a
        # PR point only once the whole tied group has been consumed
        last_of_group = rank == len(order) or preds[order[rank]][1] != preds[i][1]
        if last_of_group:
            precisions.append(n_tp / rank)
            recalls.append(n_tp / len(gts))

    total = 0.0
    for r in RECALL_LEVELS:
        p_interp = max((p for p, rc in zip(precisions, recalls) if rc >= r), default=0.0)
        total += p_interp
    return total / len(RECALL_LEVELS)


def mean_average_precision(per_class_aps: Sequence[float]) -> float:
    """Arithmetic mean over per-class APs."""
    if not per_class_aps:
        raise ValueError("mAP requires at least one class AP")
    return float(sum(per_class_aps)) / len(per_class_aps)


def f_beta(precision: float, recall: float, beta: float) -> float:
    """F-beta score; beta > 1 weights recall over precision. 0 when both are 0."""
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise ValueError("precision and recall must be in [0, 1]")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if precision == 0.0 and recall == 0.0:
        return 0.0
    b2 = beta * beta
    return (1.0 + b2) * precision * recall / (b2 * precision + recall)


@dataclass
class ConfusionMatrix:
    """n x n counts, rows = true genus, columns = predicted genus."""

    labels: Tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if self.counts.shape != (n, n):
            raise ValueError(f"counts shape {self.counts.shape} != ({n}, {n})")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @classmethod
    def empty(cls, labels: Sequence[str]) -> "ConfusionMatrix":
        n = len(labels)
        return cls(tuple(labels), np.zeros((n, n), dtype=np.int64))

    @classmethod
    def from_pairs(cls, labels: Sequence[str], pairs: Sequence[Tuple[str, str]]) -> "ConfusionMatrix":
        cm = cls.empty(labels)
        idx = {name: i for i, name in enumerate(cm.labels)}
        for true, pred in pairs:
            cm.counts[idx[true], idx[pred]] += 1
        return cm

    def add(self, true: str, pred: str) -> None:
        i, j = self.labels.index(true), self.labels.index(pred)
        self.counts[i, j] += 1

    def accuracy(self) -> float:
        total = int(self.counts.sum())
        return float(np.trace(self.counts)) / total if total else 0.0

    def to_text(self) -> str:
        width = max(max(len(l) for l in self.labels), len(str(int(self.counts.max(initial=0)))))
        header = " " * (width + 1) + " ".join(l.rjust(width) for l in self.labels)
        rows = [header]
        for i, l in enumerate(self.labels):
            rows.append(l.rjust(width) + " " + " ".join(str(int(c)).rjust(width) for c in self.counts[i]))
        return "\n".join(rows)

    def save(self, path) -> None:
        """Row-major counts with genus header, whitespace separated."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# genera=" + ",".join(self.labels) + "\n")
            for row in self.counts:
                fh.write(" ".join(str(int(c)) for c in row) + "\n")

    @classmethod
    def load(cls, path) -> "ConfusionMatrix":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("# genera="):
                raise ValueError(f"{path}: missing genus header")
            labels = tuple(header[len("# genera="):].split(","))
            counts = [[int(v) for v in line.split()] for line in fh if line.strip()]
        return cls(labels, np.asarray(counts, dtype=np.int64))


def per_class_precision_recall(cm: ConfusionMatrix) -> List[Tuple[float, float]]:
    """(precision, recall) per class; a zero column or row sum contributes 0."""
    out = []
    col_sums = cm.counts.sum(axis=0)
    row_sums = cm.counts.sum(axis=1)
    for i in range(len(cm.labels)):
        d = int(cm.counts[i, i])
        p = d / int(col_sums[i]) if col_sums[i] else 0.0
        r = d / int(row_sums[i]) if row_sums[i] else 0.0
        out.append((p, r))
    return out


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class F1; a class with p = r = 0 contributes 0."""
    f1s = []
    for p, r in per_class_precision_recall(cm):
        f1s.append(0.0 if (p == 0.0 and r == 0.0) else 2.0 * p * r / (p + r))
    return sum(f1s) / len(f1s)


def merge_classes(cm: ConfusionMatrix, mapping: Dict[str, str]) -> ConfusionMatrix:
    """Sum rows/columns into merged classes; order = first occurrence."""
    missing = [l for l in cm.labels if l not in mapping]
    if missing:
        raise ValueError(f"mapping must cover every class, missing {missing}")
    merged_order: List[str] = []
    for l in cm.labels:
        m = mapping[l]
        if m not in merged_order:
            merged_order.append(m)
    idx = {m: i for i, m in enumerate(merged_order)}
    n = len(merged_order)
    counts = np.zeros((n, n), dtype=np.int64)
    for i, li in enumerate(cm.labels):
        for j, lj in enumerate(cm.labels):
            counts[idx[mapping[li]], idx[mapping[lj]]] += cm.counts[i, j]
    return ConfusionMatrix(tuple(merged_order), counts)


@dataclass(frozen=True)
class GenusDetectionRow:
    genus: str
    precision: float
    recall: float
    f2: float
    tp: int
    fp: int
    fn: int


def per_genus_detection_report(
    results_by_genus: Dict[str, Sequence[MatchResult]],
) -> List[GenusDetectionRow]:
    """Micro-aggregate tp/fp/fn over each genus's slides, sorted ascending by F2.

    Only meaningful for mono-fraction slides, where the slide genus labels
    every ground truth on it.
    """
    rows = []
    for genus, results in results_by_genus.items():
        tp = sum(len(r.tp) for r in results)
        fp = sum(len(r.fp) for r in results)
        fn = sum(len(r.fn) for r in results)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        rows.append(GenusDetectionRow(genus, p, r, f_beta(p, r, 2.0), tp, fp, fn))
    rows.sort(key=lambda row: (row.f2, row.genus))
    return rows


def detection_report_text(rows: Sequence[GenusDetectionRow]) -> str:
    header = f"{'Genus':<14}{'Precision':>10}{'Recall':>10}{'F2':>10}"
    lines = [header]
    for r in rows:
        lines.append(f"{r.genus:<14}{r.precision:>10.4f}{r.recall:>10.4f}{r.f2:>10.4f}")
    return "\n".join(lines)


def save_detection_report(rows: Sequence[GenusDetectionRow], path) -> None:
    payload = [
        {
            "genus": r.genus,
            "precision": r.precision,
            "recall": r.recall,
            "f2": r.f2,
            "tp": r.tp,
            "fp": r.fp,
            "fn": r.fn,
        }
        for r in rows
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
