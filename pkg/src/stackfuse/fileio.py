"""Line-record file formats and dataset ingestion.

All files are tab-separated UTF-8, one record per line:

    records   system <tab> key fields <tab> value fields <tab>
              confidence <tab> provenance fields
    gold      key fields <tab> value fields <tab> provenance fields
    documents kind(doc|keydoc) <tab> id <tab> escaped text

Field schemas per task:

    slotfill    key = query, slot        value = fill
                provenance = docid, start, end
    entitylink  key = cluster id         value = docid, start, end
                provenance = docid, start, end
    detection   key = image id           value = category, xmin, ymin,
                xmax, ymax (the box is its own provenance and is not
                repeated)

Free-text fields (fills, document text) escape backslash, tab, and
newline; ingestion is order-independent and collapses per-system
duplicate key-values keeping the highest confidence.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType

from .errors import FusionError, ParseError
from .features import DocumentStore
from .gold import DetectionGold, GoldStandard, LinkGold, SlotGold
from .records import (
    BBox,
    Detection,
    ImageKey,
    Key,
    LinkKey,
    Mention,
    OutputRecord,
    Roster,
    SlotFill,
    SlotKey,
    TaskKind,
    TextSpan,
    dedup_records,
    record_sort_key,
    validate_record,
)

__all__ = [
    "Dataset",
    "ingest",
    "read_records",
    "write_records",
    "read_gold",
    "write_gold",
    "gold_from_rows",
    "read_docs",
    "write_docs",
    "atomic_write",
]


def escape_text(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace(
        "\n", "\\n")


def unescape_text(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            if nxt == "t":
                out.append("\t")
            elif nxt == "n":
                out.append("\n")
            elif nxt == "\\":
                out.append("\\")
            else:
                out.append(nxt)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def atomic_write(path, text: str) -> Path:
    """Write via a temp file in the same directory plus rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _parse_int(token: str, what: str, path, line: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"bad {what} {token!r}", path, line) from None


def _parse_float(token: str, what: str, path, line: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"bad {what} {token!r}", path, line) from None
    if not math.isfinite(value):
        raise ParseError(f"{what} {token!r} is not finite", path, line)
    return value


def _expect_fields(fields, count: int, path, line: int):
    if len(fields) != count:
        raise ParseError(f"expected {count} fields, got {len(fields)}",
                         path, line)


def _parse_span(fields, offset, path, line) -> TextSpan:
    return TextSpan(
        docid=fields[offset],
        start=_parse_int(fields[offset + 1], "offset", path, line),
        end=_parse_int(fields[offset + 2], "offset", path, line))


def _parse_box(fields, offset, path, line) -> BBox:
    return BBox(*(_parse_float(fields[offset + i], "coordinate", path, line)
                  for i in range(4)))


def _parse_record(fields, task: TaskKind, path, line: int) -> OutputRecord:
    system = fields[0]
    if task is TaskKind.SLOT_FILLING:
        _expect_fields(fields, 8, path, line)
        key = SlotKey(query=fields[1], slot=fields[2])
        value = SlotFill(unescape_text(fields[3]))
        confidence = _parse_float(fields[4], "confidence", path, line)
        provenance = _parse_span(fields, 5, path, line)
    elif task is TaskKind.ENTITY_LINKING:
        _expect_fields(fields, 9, path, line)
        key = LinkKey.namespaced(system, fields[1])
        value = Mention(_parse_span(fields, 2, path, line))
        confidence = _parse_float(fields[5], "confidence", path, line)
        provenance = _parse_span(fields, 6, path, line)
    else:
        _expect_fields(fields, 8, path, line)
        key = ImageKey(fields[1])
        box = _parse_box(fields, 3, path, line)
        value = Detection(_parse_int(fields[2], "category", path, line), box)
        confidence = _parse_float(fields[7], "confidence", path, line)
        provenance = box
    return OutputRecord(system=system, key=key, value=value,
                        confidence=confidence, provenance=provenance)


def read_records(path, task: TaskKind) -> list[OutputRecord]:
    """Parse one records file; raises ParseError naming the bad line."""
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            raw = raw.rstrip("\n")
            if not raw or raw.startswith("#"):
                continue
            fields = raw.split("\t")
            try:
                records.append(_parse_record(fields, task, path, lineno))
            except ParseError:
                raise
            except (FusionError, ValueError) as exc:
                raise ParseError(str(exc), path, lineno) from exc
    return records


def _format_span(span: TextSpan) -> list[str]:
    return [span.docid, str(span.start), str(span.end)]


def _format_box(box: BBox) -> list[str]:
    return [repr(box.xmin), repr(box.ymin), repr(box.xmax), repr(box.ymax)]


def format_record(record: OutputRecord) -> str:
    key, value = record.key, record.value
    if isinstance(key, SlotKey):
        fields = [record.system, key.query, key.slot,
                  escape_text(value.text), repr(record.confidence),
                  *_format_span(record.provenance)]
    elif isinstance(key, LinkKey):
        fields = [record.system, key.cluster_id,
                  *_format_span(value.span), repr(record.confidence),
                  *_format_span(record.provenance)]
    else:
        fields = [record.system, key.image_id, str(value.category),
                  *_format_box(value.box), repr(record.confidence)]
    for field in fields:
        if "\t" in field or "\n" in field:
            raise ValueError(f"field {field!r} contains a separator")
    return "\t".join(fields)


def write_records(path, records, header: str | None = None) -> Path:
    lines = [] if header is None else [f"# {header}"]
    lines.extend(format_record(record) for record in records)
    return atomic_write(path, "".join(line + "\n" for line in lines))


# Gold rows mirror the record schema minus system id and confidence:
#   slotfill   (query, slot, fill, provenance span)
#   entitylink (cluster id, mention span, provenance span)
#   detection  (image id, category, box)


def gold_from_rows(rows, task: TaskKind) -> GoldStandard:
    if task is TaskKind.SLOT_FILLING:
        return SlotGold.from_pairs(
            (SlotKey(query, slot), fill) for query, slot, fill, _ in rows)
    if task is TaskKind.ENTITY_LINKING:
        return LinkGold.from_pairs(
            (cluster_id, span) for cluster_id, span, _ in rows)
    return DetectionGold.from_triples(rows)


def read_gold_rows(path, task: TaskKind) -> list[tuple]:
    path = Path(path)
    rows = []
    with path.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            raw = raw.rstrip("\n")
            if not raw or raw.startswith("#"):
                continue
            fields = raw.split("\t")
            try:
                if task is TaskKind.SLOT_FILLING:
                    _expect_fields(fields, 6, path, lineno)
                    rows.append((fields[0], fields[1],
                                 unescape_text(fields[2]),
                                 _parse_span(fields, 3, path, lineno)))
                elif task is TaskKind.ENTITY_LINKING:
                    _expect_fields(fields, 7, path, lineno)
                    rows.append((fields[0],
                                 _parse_span(fields, 1, path, lineno),
                                 _parse_span(fields, 4, path, lineno)))
                else:
                    _expect_fields(fields, 6, path, lineno)
                    rows.append((fields[0],
                                 _parse_int(fields[1], "category", path,
                                            lineno),
                                 _parse_box(fields, 2, path, lineno)))
            except ParseError:
                raise
            except (FusionError, ValueError) as exc:
                raise ParseError(str(exc), path, lineno) from exc
    return rows


def read_gold(path, task: TaskKind) -> GoldStandard:
    return gold_from_rows(read_gold_rows(path, task), task)


def write_gold(path, rows, task: TaskKind) -> Path:
    lines = []
    for row in rows:
        if task is TaskKind.SLOT_FILLING:
            query, slot, fill, span = row
            fields = [query, slot, escape_text(fill), *_format_span(span)]
        elif task is TaskKind.ENTITY_LINKING:
            cluster_id, mention, provenance = row
            fields = [cluster_id, *_format_span(mention),
                      *_format_span(provenance)]
        else:
            image_id, category, box = row
            fields = [image_id, str(category), *_format_box(box)]
        lines.append("\t".join(fields))
    return atomic_write(path, "".join(line + "\n" for line in lines))


def read_docs(path) -> DocumentStore:
    path = Path(path)
    documents: dict[str, str] = {}
    key_documents: dict[str, str] = {}
    with path.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            raw = raw.rstrip("\n")
            if not raw or raw.startswith("#"):
                continue
            fields = raw.split("\t")
            _expect_fields(fields, 3, path, lineno)
            kind, doc_id, text = fields
            if kind == "doc":
                documents[doc_id] = unescape_text(text)
            elif kind == "keydoc":
                key_documents[doc_id] = unescape_text(text)
            else:
                raise ParseError(f"unknown document kind {kind!r}", path,
                                 lineno)
    return DocumentStore(documents=MappingProxyType(documents),
                         key_documents=MappingProxyType(key_documents))


def write_docs(path, store: DocumentStore) -> Path:
    lines = [f"doc\t{doc_id}\t{escape_text(text)}"
             for doc_id, text in sorted(store.documents.items())]
    lines.extend(f"keydoc\t{doc_id}\t{escape_text(text)}"
                 for doc_id, text in sorted(store.key_documents.items()))
    return atomic_write(path, "".join(line + "\n" for line in lines))


def _key_sort_key(key: Key):
    if isinstance(key, SlotKey):
        return (key.query, key.slot)
    if isinstance(key, LinkKey):
        return (key.cluster_id,)
    return (key.image_id,)


@dataclass(frozen=True)
class Dataset:
    """Validated records for one task, with the roster they came from."""

    task: TaskKind
    roster: Roster
    records: tuple[OutputRecord, ...]
    gold: GoldStandard | None = None
    docs: DocumentStore | None = None

    def by_system(self) -> dict[str, list[OutputRecord]]:
        out: dict[str, list[OutputRecord]] = {s: [] for s in self.roster}
        for record in self.records:
            out[record.system].append(record)
        return out

    def by_key(self) -> dict[Key, list[OutputRecord]]:
        """Records per key, keys in deterministic sorted order."""
        acc: dict[Key, list[OutputRecord]] = {}
        for record in self.records:
            acc.setdefault(record.key, []).append(record)
        return {key: acc[key]
                for key in sorted(acc, key=_key_sort_key)}


def build_dataset(records, task: TaskKind, roster: Roster | None = None,
                  gold: GoldStandard | None = None,
                  docs: DocumentStore | None = None) -> Dataset:
    """Validate, dedup, and deterministically order records."""
    records = list(records)
    if roster is None:
        roster = Roster(tuple(sorted({r.system for r in records})))
    validated = [validate_record(r, roster, task) for r in records]
    deduped = dedup_records(validated, roster)
    ordered = sorted(deduped, key=lambda r: (_key_sort_key(r.key),
                                             record_sort_key(r, roster)))
    return Dataset(task=task, roster=roster, records=tuple(ordered),
                   gold=gold, docs=docs)


def ingest(paths, task: TaskKind, gold_path=None, docs_path=None) -> Dataset:
    """Read one or more record files into a validated dataset.

    The roster is the sorted set of system ids seen across all files,
    so ingestion order does not matter.
    """
    records = []
    for path in paths:
        records.extend(read_records(path, task))
    gold = read_gold(gold_path, task) if gold_path else None
    docs = read_docs(docs_path) if docs_path else None
    return build_dataset(records, task, gold=gold, docs=docs)
