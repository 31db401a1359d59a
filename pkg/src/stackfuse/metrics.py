"""Task scorers: slot-fill P/R/F1, mention-aligned cluster F1, and
per-class detection average precision.

These re-implement the metric definitions directly rather than wrapping
the official shared-task tools, and are pinned by brute-force oracles in
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import TaskMismatch
from .gold import DetectionGold, GoldStandard, LinkGold, SlotGold
from .grouping import iou
from .records import TaskKind, normalize_fill

__all__ = [
    "PRFReport",
    "DetectionReport",
    "ScoreReport",
    "f1_score",
    "score_slotfill",
    "score_ceafm",
    "score_detection_ap",
    "clusters_from_records",
    "score_records",
]


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class PRFReport:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, correct: float, n_predicted: float,
                    n_gold: float) -> "PRFReport":
        precision = correct / n_predicted if n_predicted else 0.0
        recall = correct / n_gold if n_gold else 0.0
        return cls(precision=precision, recall=recall,
                   f1=f1_score(precision, recall))

    @property
    def headline(self) -> float:
        return self.f1


@dataclass(frozen=True)
class DetectionReport:
    per_class_ap: Mapping[int, float]
    median_ap: float
    mean_ap: float

    @property
    def headline(self) -> float:
        return self.mean_ap


ScoreReport = PRFReport | DetectionReport


def score_slotfill(records, gold: SlotGold) -> PRFReport:
    """Micro-averaged P/R/F1 over distinct (query, slot, normalized
    fill) triples."""
    predicted = {(r.key.query, r.key.slot, normalize_fill(r.value.text))
                 for r in records}
    correct = len(predicted & gold.triples())
    return PRFReport.from_counts(correct, len(predicted), gold.triple_count)


def score_ceafm(predicted_clusters, gold_clusters) -> PRFReport:
    """Mention-level cluster score: clusters are optimally aligned
    one-to-one to maximize shared-mention counts, then precision and
    recall are micro-averaged over mentions."""
    predicted = [frozenset(c) for c in predicted_clusters]
    gold = [frozenset(c) for c in gold_clusters]
    total = 0.0
    if predicted and gold:
        phi = np.zeros((len(predicted), len(gold)))
        for i, cp in enumerate(predicted):
            for j, cg in enumerate(gold):
                phi[i, j] = len(cp & cg)
        rows, cols = linear_sum_assignment(phi, maximize=True)
        total = float(phi[rows, cols].sum())
    n_predicted = sum(len(c) for c in predicted)
    n_gold = sum(len(c) for c in gold)
    return PRFReport.from_counts(total, n_predicted, n_gold)


def clusters_from_records(records) -> dict[str, frozenset]:
    """Entity-linking records grouped into clusters by key id, with
    mentions identified by exact (docid, start, end)."""
    acc: dict[str, set] = {}
    for record in records:
        span = record.value.span
        acc.setdefault(record.key.cluster_id, set()).add(
            (span.docid, span.start, span.end))
    return {cid: frozenset(m) for cid, m in acc.items()}


def _average_precision(flags, n_gold: int) -> float:
    """Area under the monotone-max precision envelope, evaluated at
    every recall step.  ``flags`` mark true positives in ranked order."""
    if n_gold == 0:
        return 0.0
    if not flags:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=float))
    ranks = np.arange(1, len(flags) + 1, dtype=float)
    precision = tp / ranks
    recall = tp / n_gold
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_recall = 0.0
    for p, r in zip(envelope, recall):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return float(ap)


def score_detection_ap(records, gold: DetectionGold, n_categories: int,
                       iou_threshold: float = 0.5) -> DetectionReport:
    """Per-class AP with greedy IOU matching.

    Within a class, predictions are ranked by confidence (ties keep
    input order); each claims the unmatched gold box of maximal IOU when
    that IOU strictly exceeds the threshold, else counts as a false
    positive.  The report always covers the configured class count.
    """
    by_class: dict[int, list] = {c: [] for c in range(1, n_categories + 1)}
    for record in records:
        detection = record.value
        if detection.category not in by_class:
            raise TaskMismatch(
                f"record category {detection.category} exceeds the "
                f"configured count {n_categories}")
        by_class[detection.category].append(record)

    per_class: dict[int, float] = {}
    for category in range(1, n_categories + 1):
        ranked = sorted(by_class[category],
                        key=lambda r: -r.confidence)  # stable: input order
        gold_boxes: dict[str, list] = {}
        n_gold = 0
        for image_id, items in gold.boxes.items():
            boxes = [box for cat, box in items if cat == category]
            if boxes:
                gold_boxes[image_id] = [[box, False] for box in boxes]
                n_gold += len(boxes)
        flags = []
        for record in ranked:
            candidates = gold_boxes.get(record.key.image_id, [])
            best, best_iou = None, iou_threshold
            for entry in candidates:
                if entry[1]:
                    continue
                overlap = iou(entry[0], record.value.box)
                if overlap > best_iou:
                    best, best_iou = entry, overlap
            if best is not None:
                best[1] = True
                flags.append(1)
            else:
                flags.append(0)
        per_class[category] = _average_precision(flags, n_gold)

    values = [per_class[c] for c in range(1, n_categories + 1)]
    return DetectionReport(per_class_ap=per_class,
                           median_ap=float(np.median(values)),
                           mean_ap=float(np.mean(values)))


def score_records(records, gold: GoldStandard, task: TaskKind,
                  n_categories: int | None = None) -> ScoreReport:
    """Dispatch to the task's scorer."""
    if task is TaskKind.SLOT_FILLING:
        if not isinstance(gold, SlotGold):
            raise TaskMismatch("slot filling needs a SlotGold standard")
        return score_slotfill(records, gold)
    if task is TaskKind.ENTITY_LINKING:
        if not isinstance(gold, LinkGold):
            raise TaskMismatch("entity linking needs a LinkGold standard")
        predicted = clusters_from_records(records)
        return score_ceafm(predicted.values(), gold.clusters().values())
    if not isinstance(gold, DetectionGold):
        raise TaskMismatch("detection needs a DetectionGold standard")
    if n_categories is None:
        raise ValueError("detection scoring requires the category count")
    return score_detection_ap(records, gold, n_categories)
