"""Gold-standard containers used for training labels and scoring."""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

from .records import BBox, SlotKey, TextSpan, normalize_fill

__all__ = ["SlotGold", "LinkGold", "DetectionGold", "GoldStandard"]

MentionId = tuple[str, int, int]


def mention_id(span: TextSpan) -> MentionId:
    return (span.docid, span.start, span.end)


@dataclass(frozen=True)
class SlotGold:
    """Correct fills per (query, slot), normalized for comparison."""

    fills: Mapping[tuple[str, str], frozenset[str]]

    @classmethod
    def from_pairs(cls, pairs) -> "SlotGold":
        """Build from (SlotKey, fill-text) pairs."""
        acc: dict[tuple[str, str], set[str]] = {}
        for key, fill in pairs:
            acc.setdefault((key.query, key.slot), set()).add(
                normalize_fill(fill))
        return cls(fills=MappingProxyType(
            {k: frozenset(v) for k, v in acc.items()}))

    def contains(self, key: SlotKey, fill_text: str) -> bool:
        return normalize_fill(fill_text) in self.fills.get(
            (key.query, key.slot), frozenset())

    @property
    def triple_count(self) -> int:
        return sum(len(v) for v in self.fills.values())

    def triples(self) -> frozenset[tuple[str, str, str]]:
        return frozenset((q, s, fill) for (q, s), fills in self.fills.items()
                         for fill in fills)


@dataclass(frozen=True)
class LinkGold:
    """Gold cluster id per mention; ``NIL``-prefixed ids are gold NIL
    clusters (no per-system namespacing on the gold side)."""

    links: Mapping[MentionId, str]

    @classmethod
    def from_pairs(cls, pairs) -> "LinkGold":
        """Build from (cluster-id, TextSpan) pairs."""
        return cls(links=MappingProxyType(
            {mention_id(span): cid for cid, span in pairs}))

    def cluster_of(self, span: TextSpan) -> str | None:
        return self.links.get(mention_id(span))

    def clusters(self) -> dict[str, frozenset[MentionId]]:
        acc: dict[str, set[MentionId]] = {}
        for mention, cid in self.links.items():
            acc.setdefault(cid, set()).add(mention)
        return {cid: frozenset(m) for cid, m in acc.items()}

    @property
    def mention_count(self) -> int:
        return len(self.links)


@dataclass(frozen=True)
class DetectionGold:
    """Ground-truth boxes per image."""

    boxes: Mapping[str, tuple[tuple[int, BBox], ...]]

    @classmethod
    def from_triples(cls, triples) -> "DetectionGold":
        """Build from (image-id, category, BBox) triples."""
        acc: dict[str, list[tuple[int, BBox]]] = {}
        for image_id, category, box in triples:
            acc.setdefault(image_id, []).append((category, box))
        return cls(boxes=MappingProxyType(
            {img: tuple(items) for img, items in acc.items()}))

    def for_image(self, image_id: str) -> tuple[tuple[int, BBox], ...]:
        return self.boxes.get(image_id, ())

    @property
    def box_count(self) -> int:
        return sum(len(v) for v in self.boxes.values())


GoldStandard = SlotGold | LinkGold | DetectionGold
