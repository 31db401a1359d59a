"""Group records from all systems into value groups.

Two records assert the same value when:
  * slot filling  - the fills are equal after normalization,
  * entity linking - the mention spans share a docid and overlap to any
    extent (a single shared offset counts),
  * detection     - same category and box IOU strictly greater than 0.5.

Overlap relations are not transitive, so groups are the connected
components of the pairwise relation; within a component each system
keeps only its highest-confidence record and the remainder is
re-clustered.
"""

from __future__ import annotations

from .errors import MixedKeys, TaskMismatch
from .records import (
    BBox,
    Detection,
    Mention,
    OutputRecord,
    Roster,
    SlotFill,
    TaskKind,
    TextSpan,
    Value,
    ValueGroup,
    normalize_fill,
    record_sort_key,
)

__all__ = [
    "iou",
    "intersection_area",
    "spans_overlap",
    "span_intersection_length",
    "span_union_length",
    "same_value",
    "group_values",
]


def intersection_area(a: BBox, b: BBox) -> float:
    w = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    h = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint, 1 when equal."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def span_intersection_length(a: TextSpan, b: TextSpan) -> int:
    """Shared offset count of two closed intervals; 0 across documents."""
    if a.docid != b.docid:
        return 0
    return max(0, min(a.end, b.end) - max(a.start, b.start) + 1)


def span_union_length(a: TextSpan, b: TextSpan) -> int:
    return a.length + b.length - span_intersection_length(a, b)


def spans_overlap(a: TextSpan, b: TextSpan) -> bool:
    return span_intersection_length(a, b) > 0


def same_value(a: Value, b: Value, task: TaskKind) -> bool:
    """True when two values count as the same answer for their key."""
    if a.task is not task or b.task is not task:
        raise TaskMismatch(
            f"values of task {a.task}/{b.task} checked under {task}")
    if isinstance(a, SlotFill):
        return normalize_fill(a.text) == normalize_fill(b.text)
    if isinstance(a, Mention):
        return spans_overlap(a.span, b.span)
    assert isinstance(a, Detection) and isinstance(b, Detection)
    return a.category == b.category and iou(a.box, b.box) > 0.5


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # attach the larger index under the smaller: keeps component
            # representatives stable under the pre-sorted record order
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


def _components(records: list[OutputRecord], task: TaskKind):
    uf = _UnionFind(len(records))
    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            if same_value(records[i].value, records[j].value, task):
                uf.union(i, j)
    by_root: dict[int, list[OutputRecord]] = {}
    for i, record in enumerate(records):
        by_root.setdefault(uf.find(i), []).append(record)
    # records are pre-sorted, so iterating roots in index order is
    # deterministic and confidence-descending within each component
    return [by_root[root] for root in sorted(by_root)]


def group_values(records, task: TaskKind, roster: Roster) -> list[ValueGroup]:
    """Partition one key's records into value groups.

    Every record lands in exactly one group.  If a system contributes
    several records to one connected component, its highest-confidence
    record stays and the rest are re-clustered among themselves, since
    the per-system features index systems, not records.
    """
    records = list(records)
    if not records:
        return []
    keys = {record.key for record in records}
    if len(keys) != 1:
        raise MixedKeys(f"group_values saw {len(keys)} distinct keys")

    pending = sorted(records, key=lambda r: record_sort_key(r, roster))
    groups: list[ValueGroup] = []
    while pending:
        leftovers: list[OutputRecord] = []
        for component in _components(pending, task):
            chosen: dict[str, OutputRecord] = {}
            for record in component:
                if record.system in chosen:
                    leftovers.append(record)
                else:
                    chosen[record.system] = record
            members = sorted(chosen.values(),
                             key=lambda r: roster.index(r.system))
            canonical = min(chosen.values(),
                            key=lambda r: record_sort_key(r, roster))
            groups.append(ValueGroup(key=canonical.key, canonical=canonical,
                                     records=tuple(members)))
        pending = sorted(leftovers, key=lambda r: record_sort_key(r, roster))
    return groups
