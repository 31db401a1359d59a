"""Auxiliary features and fixed-layout feature vectors.

A feature vector holds per-system blocks in roster order followed by a
one-hot type block:

    [ confidences | provenance overlap | doc agreement | key-doc
      similarity | type ]

The doc-agreement and key-doc-similarity blocks exist only for the two
text tasks.  A system that did not contribute to a group gets exact
zeros in every per-system block, which doubles as "this system scored
the output zero".
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np

from .errors import MissingDocument, SystemNotInGroup, TaskMismatch, UnknownCategory
from .records import (
    ImageKey,
    LinkKey,
    Roster,
    SlotInventory,
    SlotKey,
    TaskKind,
    ValueGroup,
)
from .grouping import iou, span_intersection_length, span_union_length

__all__ = [
    "DocumentStore",
    "FeatureLayout",
    "feature_layout",
    "provenance_offset_score",
    "bbox_overlap_score",
    "doc_provenance_scores",
    "tfidf_cosine",
    "build_feature_vector",
    "build_feature_matrix",
]

CONFIDENCE = "conf"
PROV_OVERLAP = "prov_overlap"
DOC_AGREE = "doc_agree"
KEY_DOC_SIM = "key_doc_sim"
TYPE_ONE_HOT = "type"

_TOKEN = re.compile(r"[^\W_]+")


def _tokenize(text: str) -> list[str]:
    """Lowercased maximal alphanumeric runs."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class DocumentStore:
    """Read-only corpus: provenance documents by docid, plus one "key
    document" per key (the query document or KB pseudo-document) used
    for the key/value similarity feature."""

    documents: Mapping[str, str]
    key_documents: Mapping[str, str]

    def document(self, docid: str) -> str:
        try:
            return self.documents[docid]
        except KeyError:
            raise MissingDocument(f"no document {docid!r} in store") from None

    def key_document(self, key_id: str) -> str:
        try:
            return self.key_documents[key_id]
        except KeyError:
            raise MissingDocument(
                f"no key document {key_id!r} in store") from None

    @property
    def size(self) -> int:
        return len(self.documents) + len(self.key_documents)

    @cached_property
    def _idf(self) -> dict[str, float]:
        df: Counter[str] = Counter()
        for text in list(self.documents.values()) + list(
                self.key_documents.values()):
            df.update(set(_tokenize(text)))
        total = self.size
        return {term: math.log(total / count) for term, count in df.items()}

    def tfidf_vector(self, text: str) -> dict[str, float]:
        """Raw term counts weighted by ln(D/df); store-unknown terms are
        dropped (df = 0)."""
        idf = self._idf
        counts = Counter(_tokenize(text))
        return {term: tf * idf[term] for term, tf in counts.items()
                if term in idf}


def tfidf_cosine(key_text: str, value_text: str,
                 store: DocumentStore) -> float:
    """Cosine similarity of TF-IDF vectors, with corpus statistics taken
    from the store; 0 when either vector is all-zero."""
    a = store.tfidf_vector(key_text)
    b = store.tfidf_vector(value_text)
    norm_a = math.sqrt(sum(w * w for w in a.values()))
    norm_b = math.sqrt(sum(w * w for w in b.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    dot = sum(w * b[t] for t, w in a.items() if t in b)
    return min(max(dot / (norm_a * norm_b), 0.0), 1.0)


def provenance_offset_score(group: ValueGroup, system: str) -> float:
    """Mean Jaccard overlap between one system's provenance span and
    every other contributor's, scaled by 1/N; cross-document pairs
    contribute zero."""
    if group.key.task is TaskKind.OBJECT_DETECTION:
        raise TaskMismatch("offset overlap is only defined for text tasks")
    own = group.record_for(system).provenance
    total = 0.0
    for record in group.records:
        if record.system == system:
            continue
        inter = span_intersection_length(record.provenance, own)
        if inter:
            total += inter / span_union_length(record.provenance, own)
    return total / group.size


def bbox_overlap_score(group: ValueGroup, system: str) -> float:
    """Mean box IOU between one system's detection and every other
    contributor's, scaled by 1/N."""
    if group.key.task is not TaskKind.OBJECT_DETECTION:
        raise TaskMismatch("box overlap is only defined for detection")
    own = group.record_for(system).provenance
    total = 0.0
    for record in group.records:
        if record.system != system:
            total += iou(record.provenance, own)
    return total / group.size


def doc_provenance_scores(group: ValueGroup) -> dict[str, float]:
    """n/N per contributing system, where n counts the contributors
    whose provenance shares that system's docid."""
    if group.key.task is TaskKind.OBJECT_DETECTION:
        raise TaskMismatch("document agreement is only defined for text tasks")
    docids = [record.provenance.docid for record in group.records]
    counts = Counter(docids)
    return {record.system: counts[record.provenance.docid] / group.size
            for record in group.records}


@dataclass(frozen=True)
class FeatureLayout:
    """Binding of vector indices to meanings for one task and roster.

    ``aux_enabled=False`` is the confidence-only ablation: every block
    except the confidences is assembled as zeros.
    """

    task: TaskKind
    roster: Roster
    categories: tuple[str, ...]
    cosine_enabled: bool = False
    aux_enabled: bool = True

    @property
    def block_names(self) -> tuple[str, ...]:
        if self.task is TaskKind.OBJECT_DETECTION:
            return (CONFIDENCE, PROV_OVERLAP, TYPE_ONE_HOT)
        return (CONFIDENCE, PROV_OVERLAP, DOC_AGREE, KEY_DOC_SIM,
                TYPE_ONE_HOT)

    def block_size(self, name: str) -> int:
        return len(self.categories) if name == TYPE_ONE_HOT else len(
            self.roster)

    def block_slice(self, name: str) -> slice:
        start = 0
        for block in self.block_names:
            size = self.block_size(block)
            if block == name:
                return slice(start, start + size)
            start += size
        raise KeyError(f"layout has no block {name!r}")

    @property
    def length(self) -> int:
        return sum(self.block_size(name) for name in self.block_names)

    def category_index(self, group: ValueGroup) -> int:
        key = group.key
        if isinstance(key, SlotKey):
            try:
                return self.categories.index(key.slot)
            except ValueError:
                raise UnknownCategory(
                    f"slot {key.slot!r} not in {self.categories}") from None
        if isinstance(key, LinkKey):
            return self.categories.index("nil" if key.is_nil else "kb")
        assert isinstance(key, ImageKey)
        category = group.canonical.value.category
        if category > len(self.categories):
            raise UnknownCategory(
                f"category {category} exceeds configured count "
                f"{len(self.categories)}")
        return category - 1


def feature_layout(task: TaskKind, roster: Roster,
                   slot_inventory: SlotInventory | None = None,
                   n_categories: int | None = None,
                   cosine_enabled: bool = False,
                   aux_enabled: bool = True) -> FeatureLayout:
    """Build the layout for a task.  Slot filling requires the slot
    inventory; detection the category count; entity linking one-hots
    linked-to-KB vs NIL."""
    if task is TaskKind.SLOT_FILLING:
        if slot_inventory is None:
            raise UnknownCategory("slot filling requires a slot inventory")
        categories = slot_inventory.names
    elif task is TaskKind.ENTITY_LINKING:
        categories = ("kb", "nil")
    else:
        if n_categories is None or n_categories < 1:
            raise UnknownCategory("detection requires a positive category "
                                  "count")
        categories = tuple(str(i) for i in range(1, n_categories + 1))
        cosine_enabled = False
    return FeatureLayout(task=task, roster=roster, categories=categories,
                         cosine_enabled=cosine_enabled,
                         aux_enabled=aux_enabled)


def _cosine_for(record, key, store: DocumentStore) -> float:
    if isinstance(key, SlotKey):
        key_id = key.query
    elif isinstance(key, LinkKey) and not key.is_nil:
        key_id = key.cluster_id
    else:
        return 0.0
    key_text = store.key_documents.get(key_id)
    value_text = store.documents.get(record.provenance.docid)
    if key_text is None or value_text is None:
        return 0.0
    return tfidf_cosine(key_text, value_text, store)


def build_feature_vector(group: ValueGroup, layout: FeatureLayout,
                         store: DocumentStore | None = None) -> np.ndarray:
    """Assemble one group's feature vector against the layout.  Systems
    absent from the group contribute exact zeros everywhere."""
    if group.key.task is not layout.task:
        raise TaskMismatch(
            f"group task {group.key.task} != layout task {layout.task}")
    vec = np.zeros(layout.length)
    conf = layout.block_slice(CONFIDENCE).start
    for record in group.records:
        vec[conf + layout.roster.index(record.system)] = record.confidence
    if not layout.aux_enabled:
        return vec

    prov = layout.block_slice(PROV_OVERLAP).start
    if layout.task is TaskKind.OBJECT_DETECTION:
        for record in group.records:
            vec[prov + layout.roster.index(record.system)] = (
                bbox_overlap_score(group, record.system))
    else:
        for record in group.records:
            vec[prov + layout.roster.index(record.system)] = (
                provenance_offset_score(group, record.system))
        agree = layout.block_slice(DOC_AGREE).start
        for system, score in doc_provenance_scores(group).items():
            vec[agree + layout.roster.index(system)] = score
        if layout.cosine_enabled and store is not None:
            sim = layout.block_slice(KEY_DOC_SIM).start
            for record in group.records:
                vec[sim + layout.roster.index(record.system)] = _cosine_for(
                    record, group.key, store)
    vec[layout.block_slice(TYPE_ONE_HOT).start
        + layout.category_index(group)] = 1.0
    return vec


def build_feature_matrix(groups, layout: FeatureLayout,
                         store: DocumentStore | None = None) -> np.ndarray:
    groups = list(groups)
    out = np.zeros((len(groups), layout.length))
    for i, group in enumerate(groups):
        out[i] = build_feature_vector(group, layout, store)
    return out
