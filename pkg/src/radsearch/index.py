"""Dynamic-schema document store with an inverted index and snapshots.

Writes go through a single `InvertedIndex` writer (upsert/delete + commit);
readers hold immutable `Snapshot` objects and never observe uncommitted
state. Storage is append-only in memory: each commit freezes the pending
documents into a new `Segment`, and a snapshot is a segment list plus a
doc-id -> segment locator that masks superseded versions.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field as dc_field
from datetime import datetime, timezone

from . import analysis
from .analysis import AnalyzerConfig, FieldAnalysis, SHINGLE_SEP, UnknownFieldError

FIELD_KINDS = ("analyzed_text", "exact_keyword", "datetime", "identifier")

DEFAULT_WILDCARD_CAP = 1024


class SchemaError(ValueError):
    pass


class DocumentError(ValueError):
    pass


class WildcardError(ValueError):
    pass


@dataclass(frozen=True)
class FieldDef:
    name: str
    kind: str
    shingled: bool = False
    stored: bool = True
    stemmed: bool = True  # name-like fields set False; titles keep stemming

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise SchemaError(f"unknown field kind: {self.kind}")
        if self.shingled and self.kind != "analyzed_text":
            raise SchemaError(f"field {self.name}: only analyzed_text fields may be shingled")


@dataclass
class ReportDocument:
    doc_id: str
    fields: dict
    ingest_time: datetime | None = None
    source_batch: str = ""

    def __post_init__(self):
        if not self.doc_id:
            raise DocumentError("doc_id must be non-empty")


@dataclass(frozen=True)
class Posting:
    doc_id: str
    term_frequency: int
    positions: tuple[int, ...]


def to_utc(value) -> datetime:
    """Parse/normalize a datetime value to an aware UTC datetime."""
    if isinstance(value, str):
        try:
            value = datetime.fromisoformat(value)
        except ValueError as exc:
            raise DocumentError(f"malformed datetime: {value!r}") from exc
    if not isinstance(value, datetime):
        raise DocumentError(f"expected datetime, got {type(value).__name__}")
    if value.tzinfo is None:
        return value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc)


class Segment:
    """One frozen commit's worth of documents and their postings."""

    def __init__(self):
        self.docs: dict[str, dict] = {}
        # field -> term -> {doc_id: (positions...)}
        self.postings: dict[str, dict[str, dict[str, tuple[int, ...]]]] = {}
        # field -> doc_id -> token count (shingles excluded)
        self.field_lengths: dict[str, dict[str, int]] = {}

    def add(self, doc_id: str, stored: dict, indexed: dict[str, list[tuple[str, int]]],
            lengths: dict[str, int]):
        self.docs[doc_id] = stored
        for fname, terms in indexed.items():
            by_term = self.postings.setdefault(fname, {})
            grouped: dict[str, list[int]] = {}
            for term, pos in terms:
                grouped.setdefault(term, []).append(pos)
            for term, positions in grouped.items():
                by_term.setdefault(term, {})[doc_id] = tuple(sorted(positions))
        for fname, n in lengths.items():
            self.field_lengths.setdefault(fname, {})[doc_id] = n


class Snapshot:
    """Immutable point-in-time view of the index."""

    def __init__(self, snapshot_id: int, segments: tuple[Segment, ...],
                 locator: dict[str, int], schema: dict[str, FieldDef],
                 analyzer: AnalyzerConfig, total_field_len: dict[str, int],
                 field_doc_count: dict[str, int]):
        self.snapshot_id = snapshot_id
        self._segments = segments
        self._locator = locator  # doc_id -> index into segments
        self.schema = schema  # lowercase name -> FieldDef
        self.analyzer = analyzer
        self._total_field_len = total_field_len
        self._field_doc_count = field_doc_count
        self.doc_count = len(locator)
        self._dictionaries: dict[str, list[str]] = {}
        self._postings_cache: dict[tuple[str, str], dict[str, tuple[int, ...]]] = {}
        self._length_maps: dict[str, dict[str, int]] = {}
        self._epoch_maps: dict[str, dict[str, float]] = {}
        self._lock = threading.Lock()

    # -- schema helpers -------------------------------------------------

    def resolve_field(self, name: str) -> FieldDef:
        try:
            return self.schema[name.casefold()]
        except KeyError:
            raise UnknownFieldError(name) from None

    def text_fields(self) -> list[str]:
        return [fd.name for fd in self.schema.values() if fd.kind == "analyzed_text"]

    def shingled_fields(self) -> list[str]:
        return [fd.name for fd in self.schema.values() if fd.shingled]

    # -- read operations ------------------------------------------------

    def doc_ids(self) -> set[str]:
        return set(self._locator)

    def postings_map(self, field_name: str, term: str) -> dict[str, tuple[int, ...]]:
        """Live doc_id -> positions for one term; cached per snapshot."""
        fd = self.resolve_field(field_name)
        key = (fd.name, term)
        with self._lock:
            cached = self._postings_cache.get(key)
        if cached is not None:
            return cached
        out: dict[str, tuple[int, ...]] = {}
        for seg_idx, seg in enumerate(self._segments):
            by_doc = seg.postings.get(fd.name, {}).get(term)
            if not by_doc:
                continue
            for doc_id, positions in by_doc.items():
                if self._locator.get(doc_id) == seg_idx:
                    out[doc_id] = positions
        with self._lock:
            self._postings_cache[key] = out
        return out

    def postings(self, field_name: str, term: str) -> list[Posting]:
        by_doc = self.postings_map(field_name, term)
        return [Posting(doc_id, len(by_doc[doc_id]), by_doc[doc_id])
                for doc_id in sorted(by_doc)]

    def document_frequency(self, field_name: str, term: str) -> int:
        return len(self.postings_map(field_name, term))

    def get_document(self, doc_id: str) -> ReportDocument | None:
        seg_idx = self._locator.get(doc_id)
        if seg_idx is None:
            return None
        stored = self._segments[seg_idx].docs[doc_id]
        return ReportDocument(doc_id, dict(stored))

    def field_value(self, doc_id: str, field_name: str):
        """One stored field value without copying the whole document."""
        seg_idx = self._locator.get(doc_id)
        if seg_idx is None:
            return None
        return self._segments[seg_idx].docs[doc_id].get(field_name)

    def field_length(self, field_name: str, doc_id: str) -> int:
        seg_idx = self._locator.get(doc_id)
        if seg_idx is None:
            return 0
        return self._segments[seg_idx].field_lengths.get(field_name, {}).get(doc_id, 0)

    def field_length_map(self, field_name: str) -> dict[str, int]:
        """Live doc_id -> token count for one field; cached per snapshot."""
        fd = self.resolve_field(field_name)
        with self._lock:
            cached = self._length_maps.get(fd.name)
        if cached is not None:
            return cached
        out: dict[str, int] = {}
        for seg_idx, seg in enumerate(self._segments):
            for doc_id, n in seg.field_lengths.get(fd.name, {}).items():
                if self._locator.get(doc_id) == seg_idx:
                    out[doc_id] = n
        with self._lock:
            self._length_maps[fd.name] = out
        return out

    def datetime_epoch_map(self, field_name: str) -> dict[str, float]:
        """Live doc_id -> POSIX timestamp for a datetime field; cached."""
        fd = self.resolve_field(field_name)
        with self._lock:
            cached = self._epoch_maps.get(fd.name)
        if cached is not None:
            return cached
        out: dict[str, float] = {}
        for seg_idx, seg in enumerate(self._segments):
            for doc_id, stored in seg.docs.items():
                if self._locator.get(doc_id) != seg_idx:
                    continue
                value = stored.get(fd.name)
                if isinstance(value, datetime):
                    out[doc_id] = value.timestamp()
        with self._lock:
            self._epoch_maps[fd.name] = out
        return out

    def avg_field_length(self, field_name: str) -> float:
        n = self._field_doc_count.get(field_name, 0)
        if not n:
            return 0.0
        return self._total_field_len.get(field_name, 0) / n

    def term_dictionary(self, field_name: str) -> list[str]:
        """Sorted live word terms of a field (shingles excluded)."""
        fd = self.resolve_field(field_name)
        with self._lock:
            cached = self._dictionaries.get(fd.name)
            if cached is not None:
                return cached
        terms = set()
        for seg_idx, seg in enumerate(self._segments):
            for term, by_doc in seg.postings.get(fd.name, {}).items():
                if SHINGLE_SEP in term:
                    continue
                if any(self._locator.get(d) == seg_idx for d in by_doc):
                    terms.add(term)
        result = sorted(terms)
        with self._lock:
            self._dictionaries[fd.name] = result
        return result

    def expand_wildcard(self, field_name: str, pattern: str,
                        limit: int = DEFAULT_WILDCARD_CAP,
                        allow_leading: bool = False) -> tuple[list[str], bool]:
        """All dictionary terms matching a glob ('?' one char, '*' any run).

        Returns (terms, truncated). Leading-wildcard patterns are rejected
        unless explicitly allowed; results are sorted and capped at `limit`.
        """
        if not analysis.is_wildcard(pattern):
            raise WildcardError("pattern contains no wildcard character")
        if not allow_leading and pattern[0] in analysis.WILDCARD_CHARS:
            raise WildcardError("leading-wildcard patterns are not allowed")
        matcher = _glob_matcher(pattern)
        dictionary = self.term_dictionary(field_name)

        prefix = _literal_prefix(pattern)
        if prefix:
            import bisect
            lo = bisect.bisect_left(dictionary, prefix)
            hi = bisect.bisect_left(dictionary, prefix + "￿")
            candidates = dictionary[lo:hi]
        else:
            candidates = dictionary

        matched = []
        truncated = False
        for term in candidates:
            if matcher(term):
                if len(matched) >= limit:
                    truncated = True
                    break
                matched.append(term)
        return matched, truncated


def _literal_prefix(pattern: str) -> str:
    for i, c in enumerate(pattern):
        if c in analysis.WILDCARD_CHARS:
            return pattern[:i]
    return pattern


def _glob_matcher(pattern: str):
    import re
    out = []
    for c in pattern:
        if c == "*":
            out.append(".*")
        elif c == "?":
            out.append(".")
        else:
            out.append(re.escape(c))
    rx = re.compile("^" + "".join(out) + "$")
    return lambda term: rx.match(term) is not None


class InvertedIndex:
    """Single-writer index; produces immutable snapshots on commit."""

    def __init__(self, stopwords: frozenset[str] | None = None):
        self._lock = threading.RLock()
        self._stopwords = stopwords if stopwords is not None else analysis.load_stopwords()
        self._schema: dict[str, FieldDef] = {}
        self._schema_version = 0
        self._segments: list[Segment] = []
        self._locator: dict[str, int] = {}
        self._total_field_len: dict[str, int] = {}
        self._field_doc_count: dict[str, int] = {}
        self._pending: dict[str, ReportDocument] = {}
        self._pending_deletes: set[str] = set()
        self._snapshot_id = 0
        self._current = self._make_snapshot()

    # -- schema ---------------------------------------------------------

    def register_field(self, fdef: FieldDef) -> int:
        with self._lock:
            key = fdef.name.casefold()
            existing = self._schema.get(key)
            if existing is not None:
                if existing == fdef:
                    return self._schema_version  # idempotent re-registration
                raise SchemaError(
                    f"field {fdef.name!r} already registered as kind {existing.kind!r}")
            self._schema = dict(self._schema)
            self._schema[key] = fdef
            self._schema_version += 1
            self._current = self._make_snapshot()
            return self._schema_version

    def _analyzer(self) -> AnalyzerConfig:
        fields = {}
        for fd in self._schema.values():
            sizes = (2, 3) if fd.shingled else ()
            fields[fd.name] = FieldAnalysis(stem=fd.stemmed, shingle_sizes=sizes)
        return AnalyzerConfig(stopwords=self._stopwords, fields=fields)

    def _resolve(self, name: str) -> FieldDef:
        fd = self._schema.get(name.casefold())
        if fd is None:
            raise UnknownFieldError(name)
        return fd

    # -- writes ---------------------------------------------------------

    def upsert_document(self, doc: ReportDocument) -> int:
        with self._lock:
            normalized = {}
            for name, value in doc.fields.items():
                fd = self._resolve(name)
                if fd.kind == "datetime":
                    value = to_utc(value)
                elif value is not None and not isinstance(value, str):
                    value = str(value)
                normalized[fd.name] = value
            canonical = ReportDocument(doc.doc_id, normalized, doc.ingest_time, doc.source_batch)
            self._pending.pop(doc.doc_id, None)
            self._pending_deletes.discard(doc.doc_id)
            self._pending[doc.doc_id] = canonical
            return len(self._pending)

    def delete_document(self, doc_id: str):
        with self._lock:
            self._pending.pop(doc_id, None)
            self._pending_deletes.add(doc_id)

    def commit(self) -> Snapshot:
        with self._lock:
            analyzer = self._analyzer()
            seg = Segment()
            for doc_id, doc in self._pending.items():
                indexed: dict[str, list[tuple[str, int]]] = {}
                lengths: dict[str, int] = {}
                stored: dict = {}
                for fname, value in doc.fields.items():
                    fd = self._schema[fname.casefold()]
                    stored[fd.name] = value
                    if value is None:
                        continue
                    if fd.kind == "analyzed_text":
                        terms = analysis.analyze(value, fd.name, analyzer)
                        indexed[fd.name] = terms
                        lengths[fd.name] = sum(1 for t, _ in terms if SHINGLE_SEP not in t)
                    elif fd.kind in ("exact_keyword", "identifier"):
                        indexed[fd.name] = [(analysis.fold(value), 0)]
                        lengths[fd.name] = 1
                seg.add(doc_id, stored, indexed, lengths)

            new_locator = dict(self._locator)
            new_totals = dict(self._total_field_len)
            new_counts = dict(self._field_doc_count)
            dead = set(self._pending_deletes) | set(seg.docs)
            for doc_id in dead:
                old_idx = new_locator.pop(doc_id, None)
                if old_idx is not None:
                    for fname, by_doc in self._segments[old_idx].field_lengths.items():
                        if doc_id in by_doc:
                            new_totals[fname] = new_totals.get(fname, 0) - by_doc[doc_id]
                            new_counts[fname] = new_counts.get(fname, 0) - 1
            if seg.docs:
                self._segments.append(seg)
                seg_idx = len(self._segments) - 1
                for doc_id in seg.docs:
                    new_locator[doc_id] = seg_idx
                for fname, by_doc in seg.field_lengths.items():
                    new_totals[fname] = new_totals.get(fname, 0) + sum(by_doc.values())
                    new_counts[fname] = new_counts.get(fname, 0) + len(by_doc)

            self._locator = new_locator
            self._total_field_len = new_totals
            self._field_doc_count = new_counts
            self._pending = {}
            self._pending_deletes = set()
            self._snapshot_id += 1
            self._current = self._make_snapshot()
            return self._current

    def _make_snapshot(self) -> Snapshot:
        return Snapshot(
            self._snapshot_id,
            tuple(self._segments),
            dict(self._locator),
            dict(self._schema),
            self._analyzer(),
            dict(self._total_field_len),
            dict(self._field_doc_count),
        )

    def current(self) -> Snapshot:
        with self._lock:
            return self._current

    @property
    def schema_version(self) -> int:
        return self._schema_version

    # -- persistence ----------------------------------------------------
    #
    # The interchange format is the ingestion module's JSONL document file;
    # this on-disk layout (schema.json + per-segment JSONL of stored docs)
    # is versioned-internal. Postings rebuild deterministically on load.

    def save(self, path: str):
        with self._lock:
            os.makedirs(path, exist_ok=True)
            schema = [
                {"name": fd.name, "kind": fd.kind, "shingled": fd.shingled,
                 "stored": fd.stored, "stemmed": fd.stemmed}
                for fd in self._schema.values()
            ]
            manifest = {"format": 1, "schema": schema, "segments": len(self._segments)}
            with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
                json.dump(manifest, fh, indent=2)
            for i, seg in enumerate(self._segments):
                with open(os.path.join(path, f"segment-{i:05d}.jsonl"), "w",
                          encoding="utf-8") as fh:
                    for doc_id, stored in seg.docs.items():
                        if self._locator.get(doc_id) != i:
                            continue  # superseded version, drop at save
                        row = {"doc_id": doc_id, "fields": _jsonable_fields(stored)}
                        fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str, stopwords: frozenset[str] | None = None) -> "InvertedIndex":
        with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        idx = cls(stopwords=stopwords)
        for f in manifest["schema"]:
            idx.register_field(FieldDef(**f))
        for i in range(manifest["segments"]):
            seg_path = os.path.join(path, f"segment-{i:05d}.jsonl")
            if not os.path.exists(seg_path):
                continue
            with open(seg_path, encoding="utf-8") as fh:
                any_doc = False
                for line in fh:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    idx.upsert_document(ReportDocument(row["doc_id"], row["fields"]))
                    any_doc = True
            if any_doc:
                idx.commit()
        idx.commit()
        return idx


def _jsonable_fields(stored: dict) -> dict:
    out = {}
    for k, v in stored.items():
        out[k] = v.isoformat() if isinstance(v, datetime) else v
    return out
