"""Post-process accepted instances into a single system-like output,
plus the count-threshold voting baseline.

Slot filling keeps one fill per single-valued slot (highest
meta-confidence).  Entity linking emits KB links directly and merges
per-system NIL clusters that share a mention.  Detection keeps, per
group, the contributor's box with the largest summed overlap against
the other contributors (the higher-confidence box when only two
systems agree).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import TaskMismatch, UnknownSlot
from .gold import GoldStandard
from .grouping import intersection_area, spans_overlap
from .metrics import ScoreReport, score_records
from .records import (
    BBox,
    Detection,
    LinkKey,
    Mention,
    OutputRecord,
    Roster,
    SlotInventory,
    TaskKind,
    TextSpan,
    ValueGroup,
)

__all__ = [
    "ENSEMBLE_SYSTEM",
    "FusedCluster",
    "VoteSweep",
    "postprocess_slotfill",
    "merge_nil_clusters",
    "cluster_records",
    "select_bounding_box",
    "postprocess_detection",
    "postprocess",
    "oracle_vote",
]

ENSEMBLE_SYSTEM = "ensemble"


def _check_accepted(instances, task: TaskKind):
    instances = list(instances)
    for inst in instances:
        if inst.key.task is not task:
            raise TaskMismatch(f"instance task {inst.key.task}, expected "
                               f"{task}")
        if not inst.accepted or inst.meta_confidence is None:
            raise ValueError("post-processing expects accepted, "
                             "meta-scored instances")
    return instances


def postprocess_slotfill(accepted, inventory: SlotInventory,
                         roster: Roster) -> list[OutputRecord]:
    """List-valued slots keep every accepted fill; single-valued slots
    keep only the fill with the highest meta-classifier confidence."""
    accepted = _check_accepted(accepted, TaskKind.SLOT_FILLING)
    for inst in accepted:
        if inst.key.slot not in inventory:
            raise UnknownSlot(f"slot {inst.key.slot!r} not in inventory")

    def rank(inst):
        return (-inst.meta_confidence,
                roster.index(inst.group.canonical.system),
                inst.group.canonical.value.text)

    kept = []
    singles: dict = {}
    for inst in sorted(accepted, key=rank):
        if inventory.is_list_valued(inst.key.slot):
            kept.append(inst)
        elif inst.key not in singles:
            singles[inst.key] = inst
    kept.extend(singles.values())
    kept.sort(key=lambda inst: (inst.key.query, inst.key.slot, rank(inst)))
    return [
        OutputRecord(system=ENSEMBLE_SYSTEM, key=inst.key, value=inst.value,
                     confidence=inst.meta_confidence,
                     provenance=inst.group.canonical.provenance)
        for inst in kept
    ]


@dataclass(frozen=True)
class FusedCluster:
    """Final entity cluster: id plus (mention, meta-confidence) members."""

    cluster_id: str
    members: tuple[tuple[TextSpan, float], ...]


class _ClusterUnionFind:
    def __init__(self, items):
        self.parent = {item: item for item in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _span_key(span: TextSpan):
    return (span.docid, span.start, span.end)


def merge_nil_clusters(accepted) -> list[FusedCluster]:
    """KB-linked instances pass through under their KB id.  Per-system
    NIL clusters are united whenever they share a mention (overlap to
    any extent) and merged clusters get fresh sequential NIL ids."""
    accepted = _check_accepted(accepted, TaskKind.ENTITY_LINKING)
    kb_members: dict[str, dict] = {}
    nil_members: dict[str, dict] = {}
    for inst in accepted:
        span = inst.value.span
        bucket = nil_members if inst.key.is_nil else kb_members
        members = bucket.setdefault(inst.key.cluster_id, {})
        key = _span_key(span)
        if key not in members or inst.meta_confidence > members[key][1]:
            members[key] = (span, inst.meta_confidence)

    nil_ids = sorted(nil_members)
    uf = _ClusterUnionFind(nil_ids)
    for i, a in enumerate(nil_ids):
        spans_a = [span for span, _ in nil_members[a].values()]
        for b in nil_ids[i + 1:]:
            if any(spans_overlap(sa, sb)
                   for sa in spans_a
                   for sb, _ in nil_members[b].values()):
                uf.union(a, b)

    merged: dict[str, dict] = {}
    for nil_id in nil_ids:
        root = uf.find(nil_id)
        target = merged.setdefault(root, {})
        for key, (span, conf) in nil_members[nil_id].items():
            if key not in target or conf > target[key][1]:
                target[key] = (span, conf)

    clusters = [
        FusedCluster(cluster_id=cid,
                     members=tuple(sorted(members.values(),
                                          key=lambda m: _span_key(m[0]))))
        for cid, members in sorted(kb_members.items())
    ]
    # fresh ids in deterministic order: by each cluster's smallest mention
    fresh = sorted(merged.values(),
                   key=lambda members: min(map(_span_key, members)))
    for i, members in enumerate(fresh, start=1):
        clusters.append(FusedCluster(
            cluster_id=f"NILE{i:04d}",
            members=tuple(sorted(members.values(),
                                 key=lambda m: _span_key(m[0])))))
    return clusters


def cluster_records(clusters) -> list[OutputRecord]:
    """Flatten fused clusters to one record per mention."""
    return [
        OutputRecord(system=ENSEMBLE_SYSTEM, key=LinkKey(cluster.cluster_id),
                     value=Mention(span), confidence=confidence,
                     provenance=span)
        for cluster in clusters
        for span, confidence in cluster.members
    ]


def select_bounding_box(group: ValueGroup) -> BBox:
    """The final box for an accepted detection group.

    One contributor: its box.  Two: the higher-confidence system's box.
    Three or more: the box maximizing the summed intersection area with
    every other contributor's box (ties resolve in roster order, which
    is how ``group.records`` is stored).
    """
    if group.key.task is not TaskKind.OBJECT_DETECTION:
        raise TaskMismatch("box selection applies to detection groups")
    boxes = [record.provenance for record in group.records]
    if len(boxes) == 1:
        return boxes[0]
    if len(boxes) == 2:
        best = max(group.records, key=lambda r: r.confidence)
        return best.provenance
    best_box, best_total = None, -1.0
    for i, box in enumerate(boxes):
        total = sum(intersection_area(box, other)
                    for j, other in enumerate(boxes) if j != i)
        if total > best_total:
            best_box, best_total = box, total
    return best_box


def postprocess_detection(accepted) -> list[OutputRecord]:
    accepted = _check_accepted(accepted, TaskKind.OBJECT_DETECTION)
    records = []
    for inst in sorted(accepted,
                       key=lambda i: (i.key.image_id,
                                      i.group.canonical.value.category,
                                      -i.meta_confidence)):
        box = select_bounding_box(inst.group)
        records.append(OutputRecord(
            system=ENSEMBLE_SYSTEM, key=inst.key,
            value=Detection(inst.group.canonical.value.category, box),
            confidence=inst.meta_confidence, provenance=box))
    return records


def postprocess(accepted, task: TaskKind,
                inventory: SlotInventory | None = None,
                roster: Roster | None = None) -> list[OutputRecord]:
    """Task-appropriate final output from accepted instances."""
    if task is TaskKind.SLOT_FILLING:
        if inventory is None or roster is None:
            raise UnknownSlot("slot post-processing needs the inventory "
                              "and roster")
        return postprocess_slotfill(accepted, inventory, roster)
    if task is TaskKind.ENTITY_LINKING:
        return cluster_records(merge_nil_clusters(accepted))
    return postprocess_detection(accepted)


@dataclass(frozen=True)
class VoteSweep:
    """Result of tuning the agreement threshold against gold."""

    best_threshold: int
    best_report: ScoreReport
    best_records: tuple[OutputRecord, ...]
    curve: tuple[tuple[int, ScoreReport], ...]


def oracle_vote(groups, gold: GoldStandard, task: TaskKind, roster: Roster,
                n_categories: int | None = None) -> VoteSweep:
    """Sweep the must-agree count t from 1 to S, score each cut against
    gold, and return the best ("oracle") threshold.

    The kept output at threshold t is every group with at least t
    contributing systems, represented by its canonical record; outputs
    therefore nest as t grows.  Ties in the headline metric resolve to
    the smallest t.
    """
    groups = list(groups)
    best = None
    curve = []
    for t in range(1, len(roster) + 1):
        records = tuple(g.canonical for g in groups if g.size >= t)
        report = score_records(records, gold, task, n_categories)
        curve.append((t, report))
        if best is None or report.headline > best[1].headline:
            best = (t, report, records)
    return VoteSweep(best_threshold=best[0], best_report=best[1],
                     best_records=best[2], curve=tuple(curve))
