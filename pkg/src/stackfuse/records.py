"""Domain types for the three fusion tasks and record validation.

Every record names a *key* (the question being answered: query+slot,
KB-or-NIL cluster id, or image id) and a *value* (one system's answer:
a slot fill, an entity mention, or a detected object).  All types are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import enum
import math
import unicodedata
from dataclasses import dataclass, replace

from .errors import (
    DegenerateBox,
    EmptyField,
    MixedKeys,
    NegativeOffset,
    SystemNotInGroup,
    TaskMismatch,
    UnknownSlot,
    UnknownSystem,
)

__all__ = [
    "TaskKind",
    "TextSpan",
    "BBox",
    "SlotKey",
    "LinkKey",
    "ImageKey",
    "SlotFill",
    "Mention",
    "Detection",
    "Key",
    "Value",
    "OutputRecord",
    "Roster",
    "ValueGroup",
    "SlotInventory",
    "normalize_fill",
    "validate_record",
    "dedup_records",
]


class TaskKind(enum.Enum):
    SLOT_FILLING = "slotfill"
    ENTITY_LINKING = "entitylink"
    OBJECT_DETECTION = "detection"

    @classmethod
    def parse(cls, name: str) -> "TaskKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ValueError(f"unknown task {name!r}; expected one of "
                         f"{[k.value for k in cls]}")


@dataclass(frozen=True, order=True)
class TextSpan:
    """Closed character-offset interval [start, end] within a document."""

    docid: str
    start: int
    end: int

    def __post_init__(self):
        if not self.docid:
            raise EmptyField("text span requires a non-empty docid")
        if self.start < 0:
            raise NegativeOffset(f"span start {self.start} is negative")
        if self.end < self.start:
            raise NegativeOffset(
                f"span end {self.end} precedes start {self.start}")

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True, order=True)
class BBox:
    """Axis-aligned box (xmin, ymin, xmax, ymax) with positive area."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise DegenerateBox(
                f"box ({self.xmin},{self.ymin},{self.xmax},{self.ymax}) "
                "has non-positive area")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)


@dataclass(frozen=True, order=True)
class SlotKey:
    query: str
    slot: str

    def __post_init__(self):
        if not self.query or not self.slot:
            raise EmptyField("slot key requires non-empty query and slot")

    @property
    def task(self) -> TaskKind:
        return TaskKind.SLOT_FILLING


NIL_PREFIX = "NIL"


@dataclass(frozen=True, order=True)
class LinkKey:
    """KB cluster id, or a NIL cluster id namespaced as ``system:NILxxx``.

    Per-system NIL ids are kept distinct until post-processing merges
    them, so a bare ``NIL...`` id must be namespaced at ingestion.
    """

    cluster_id: str

    def __post_init__(self):
        if not self.cluster_id:
            raise EmptyField("link key requires a non-empty cluster id")

    @property
    def task(self) -> TaskKind:
        return TaskKind.ENTITY_LINKING

    @property
    def is_nil(self) -> bool:
        return self.cluster_id.rsplit(":", 1)[-1].startswith(NIL_PREFIX)

    @staticmethod
    def namespaced(system: str, raw_id: str) -> "LinkKey":
        if raw_id.startswith(NIL_PREFIX):
            return LinkKey(f"{system}:{raw_id}")
        return LinkKey(raw_id)


@dataclass(frozen=True, order=True)
class ImageKey:
    image_id: str

    def __post_init__(self):
        if not self.image_id:
            raise EmptyField("image key requires a non-empty image id")

    @property
    def task(self) -> TaskKind:
        return TaskKind.OBJECT_DETECTION


@dataclass(frozen=True, order=True)
class SlotFill:
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyField("slot fill is empty after trimming")

    @property
    def task(self) -> TaskKind:
        return TaskKind.SLOT_FILLING


@dataclass(frozen=True, order=True)
class Mention:
    span: TextSpan

    @property
    def task(self) -> TaskKind:
        return TaskKind.ENTITY_LINKING


@dataclass(frozen=True, order=True)
class Detection:
    category: int
    box: BBox

    def __post_init__(self):
        if self.category < 1:
            raise EmptyField(f"category id {self.category} must be >= 1")

    @property
    def task(self) -> TaskKind:
        return TaskKind.OBJECT_DETECTION


Key = SlotKey | LinkKey | ImageKey
Value = SlotFill | Mention | Detection
Provenance = TextSpan | BBox


def normalize_fill(text: str) -> str:
    """Canonical form of a slot fill, used for equality only (NFC, trim,
    casefold); the raw string is retained for output."""
    return unicodedata.normalize("NFC", text).strip().casefold()


@dataclass(frozen=True)
class OutputRecord:
    """One system's claim: key, value, confidence, and the provenance
    that justifies it (a text span for the KBP tasks, the bounding box
    itself for detection)."""

    system: str
    key: Key
    value: Value
    confidence: float
    provenance: Provenance

    def __post_init__(self):
        if not self.system:
            raise EmptyField("record requires a non-empty system id")
        if self.key.task is not self.value.task:
            raise TaskMismatch(
                f"key task {self.key.task} != value task {self.value.task}")
        if self.key.task is TaskKind.OBJECT_DETECTION:
            if not isinstance(self.provenance, BBox):
                raise TaskMismatch("detection provenance must be a box")
            if self.provenance != self.value.box:
                raise TaskMismatch(
                    "detection provenance box must equal the value box")
        else:
            if not isinstance(self.provenance, TextSpan):
                raise TaskMismatch("KBP provenance must be a text span")

    @property
    def task(self) -> TaskKind:
        return self.key.task


@dataclass(frozen=True)
class Roster:
    """Ordered system ids; the order is fixed for the lifetime of a
    trained model because the feature layout depends on it."""

    systems: tuple[str, ...]

    def __post_init__(self):
        if not self.systems:
            raise EmptyField("roster must contain at least one system")
        if any(not s for s in self.systems):
            raise EmptyField("roster contains an empty system id")
        if len(set(self.systems)) != len(self.systems):
            raise UnknownSystem("roster contains duplicate system ids")

    def __len__(self) -> int:
        return len(self.systems)

    def __contains__(self, system: str) -> bool:
        return system in self.systems

    def __iter__(self):
        return iter(self.systems)

    def index(self, system: str) -> int:
        try:
            return self.systems.index(system)
        except ValueError:
            raise UnknownSystem(f"system {system!r} not in roster") from None


@dataclass(frozen=True)
class ValueGroup:
    """All records, across systems, judged to assert the same key-value.

    ``records`` holds at most one record per system, in roster order;
    ``canonical`` is the highest-confidence member and supplies the
    group's representative value.
    """

    key: Key
    canonical: OutputRecord
    records: tuple[OutputRecord, ...]

    def __post_init__(self):
        if not self.records:
            raise EmptyField("value group requires at least one record")
        systems = [r.system for r in self.records]
        if len(set(systems)) != len(systems):
            raise UnknownSystem("value group has two records from one system")
        if any(r.key != self.key for r in self.records):
            raise MixedKeys(f"value group mixes keys other than {self.key}")
        if self.canonical not in self.records:
            raise EmptyField("canonical record must be one of the members")

    @property
    def size(self) -> int:
        """N: count of contributing systems."""
        return len(self.records)

    @property
    def systems(self) -> tuple[str, ...]:
        return tuple(r.system for r in self.records)

    @property
    def value(self) -> Value:
        return self.canonical.value

    def record_for(self, system: str) -> OutputRecord:
        for record in self.records:
            if record.system == system:
                return record
        raise SystemNotInGroup(f"system {system!r} not in group")


@dataclass(frozen=True)
class SlotInventory:
    """Configured slot types with their single- vs list-valued flag."""

    slots: tuple[tuple[str, bool], ...]  # (name, list_valued)

    def __post_init__(self):
        names = [name for name, _ in self.slots]
        if len(set(names)) != len(names):
            raise UnknownSlot("slot inventory contains duplicate names")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.slots)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def is_list_valued(self, name: str) -> bool:
        for slot, list_valued in self.slots:
            if slot == name:
                return list_valued
        raise UnknownSlot(f"slot {name!r} not in inventory {self.names}")


def validate_record(record: OutputRecord, roster: Roster,
                    task: TaskKind) -> OutputRecord:
    """Check a record against the roster and task; return it with the
    confidence clamped into [0, 1] and fill text whitespace-trimmed.

    Idempotent: validating a validated record returns an equal record.
    """
    if record.system not in roster:
        raise UnknownSystem(f"system {record.system!r} not in roster")
    if record.task is not task:
        raise TaskMismatch(f"record task {record.task} != dataset task {task}")
    if not math.isfinite(record.confidence):
        raise ValueError(f"confidence {record.confidence!r} is not finite")
    fixed = record
    clamped = min(max(record.confidence, 0.0), 1.0)
    if clamped != record.confidence:
        fixed = replace(fixed, confidence=clamped)
    if isinstance(fixed.value, SlotFill):
        trimmed = fixed.value.text.strip()
        if trimmed != fixed.value.text:
            fixed = replace(fixed, value=SlotFill(trimmed))
    return fixed


def _value_sort_key(value: Value):
    if isinstance(value, SlotFill):
        return (value.text,)
    if isinstance(value, Mention):
        return (value.span.docid, value.span.start, value.span.end)
    return (value.category, value.box.xmin, value.box.ymin,
            value.box.xmax, value.box.ymax)


def _provenance_sort_key(prov: Provenance):
    if isinstance(prov, TextSpan):
        return (prov.docid, prov.start, prov.end)
    return (prov.xmin, prov.ymin, prov.xmax, prov.ymax)


def record_sort_key(record: OutputRecord, roster: Roster):
    """Deterministic ordering: confidence descending, then roster order,
    then value, then provenance."""
    return (-record.confidence, roster.index(record.system),
            _value_sort_key(record.value),
            _provenance_sort_key(record.provenance))


def dedup_records(records, roster: Roster):
    """Collapse duplicate (system, key, value) claims, keeping the
    highest-confidence one; order-independent given the roster."""
    best: dict = {}
    for record in records:
        ident = (record.system, record.key, record.value)
        kept = best.get(ident)
        if kept is None or record_sort_key(record, roster) < record_sort_key(
                kept, roster):
            best[ident] = record
    return sorted(best.values(), key=lambda r: record_sort_key(r, roster))
