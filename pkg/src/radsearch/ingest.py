"""Batch ingestion and the three-tier refresh schedule.

Sources are directories (or single files) of UTF-8 JSON Lines, one record
object per line. Field names map through a configurable alias table;
records lacking an identifier are rejected, never dropped silently. Each
batch commits exactly once, so readers never see a partial batch.
"""

from __future__ import annotations

import json
import os
import threading
import time as _time
from dataclasses import dataclass, field as dc_field
from datetime import datetime, time, timedelta, timezone

from .engine import SearchEngine
from .index import DocumentError, ReportDocument, to_utc
from .analysis import UnknownFieldError

UPLOAD_TIME_FIELD = "ReportUploadDatetime"


@dataclass
class IngestBatch:
    batch_id: str
    records: list[dict]
    received_at: datetime | None = None
    source: str = ""


@dataclass
class IngestStats:
    read: int = 0
    upserted: int = 0
    rejected: int = 0
    reject_reasons: dict[str, int] = dc_field(default_factory=dict)
    elapsed: float = 0.0
    committed: bool = False

    def reject(self, reason: str):
        self.rejected += 1
        self.reject_reasons[reason] = self.reject_reasons.get(reason, 0) + 1


@dataclass
class CanonicalizeConfig:
    id_field: str = "doc_id"
    aliases: dict[str, str] = dc_field(default_factory=dict)
    datetime_formats: tuple[str, ...] = ()
    # "drop" | "error"; auto-registration is left to deployment tooling
    unknown_fields: str = "drop"


@dataclass
class RefreshSchedule:
    incremental_every: timedelta = timedelta(minutes=20)
    nightly_at: time = time(0, 0)
    full_reindex_every: timedelta = timedelta(days=180)

    def __post_init__(self):
        if self.incremental_every <= timedelta(0):
            raise ValueError("incremental_every must be positive")


class RejectedRecord(ValueError):
    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


def canonicalize(record: dict, config: CanonicalizeConfig,
                 schema: dict) -> ReportDocument:
    """Map one raw record to a canonical document against the schema."""
    mapped = {}
    doc_id = None
    for name, value in record.items():
        target = config.aliases.get(name, name)
        if target == config.id_field or target.casefold() == config.id_field.casefold():
            doc_id = str(value) if value is not None else None
            continue
        fdef = schema.get(target.casefold())
        if fdef is None:
            if config.unknown_fields == "error":
                raise RejectedRecord("unknown_field", f"unknown field {name!r}")
            continue
        if fdef.kind == "datetime" and value is not None:
            value = _parse_datetime(value, config)
        mapped[fdef.name] = value
    if not doc_id:
        raise RejectedRecord("missing_id", "record carries no identifier")
    return ReportDocument(doc_id, mapped)


def _parse_datetime(value, config: CanonicalizeConfig) -> datetime:
    if isinstance(value, datetime):
        return to_utc(value)
    for fmt in config.datetime_formats:
        try:
            return to_utc(datetime.strptime(str(value), fmt))
        except ValueError:
            continue
    try:
        return to_utc(str(value))
    except DocumentError as exc:
        raise RejectedRecord("bad_datetime", str(exc)) from exc


def ingest_batch(engine: SearchEngine, batch: IngestBatch,
                 config: CanonicalizeConfig | None = None) -> IngestStats:
    """Canonicalize, dedup (last record wins), upsert, commit once.

    Conservation: read == upserted + rejected (superseded duplicates count
    under reject_reasons["superseded"]).
    """
    config = config or CanonicalizeConfig()
    stats = IngestStats()
    started = _time.perf_counter()
    schema = engine.index.current().schema

    survivors: dict[str, ReportDocument] = {}
    order_rejects: list[str] = []
    for record in batch.records:
        stats.read += 1
        try:
            doc = canonicalize(record, config, schema)
        except RejectedRecord as exc:
            stats.reject(exc.reason)
            continue
        except (DocumentError, UnknownFieldError):
            stats.reject("invalid_record")
            continue
        if doc.doc_id in survivors:
            stats.reject("superseded")
        doc.source_batch = batch.batch_id
        doc.ingest_time = batch.received_at or datetime.now(timezone.utc)
        survivors[doc.doc_id] = doc

    if survivors:
        for doc in survivors.values():
            try:
                engine.index.upsert_document(doc)
                stats.upserted += 1
            except (DocumentError, UnknownFieldError):
                stats.reject("invalid_record")
        engine.commit()
        stats.committed = True
    stats.elapsed = _time.perf_counter() - started
    return stats


# -- file sources -----------------------------------------------------------


def read_jsonl(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


class DirectorySource:
    """Record files dropped into a directory, processed in name order."""

    def __init__(self, path: str):
        self.path = path

    def files(self) -> list[str]:
        if os.path.isfile(self.path):
            return [self.path]
        out = []
        for name in sorted(os.listdir(self.path)):
            if name.endswith(".jsonl"):
                out.append(os.path.join(self.path, name))
        return out

    def records(self) -> list[dict]:
        out = []
        for f in self.files():
            out.extend(read_jsonl(f))
        return out


# -- scheduler --------------------------------------------------------------


class Scheduler:
    """Serializes the incremental / nightly / full-rebuild ticks.

    The incremental tick ingests records uploaded after the watermark
    (max ReportUploadDatetime seen); the nightly tick re-pulls a 24 h
    window to repair gaps; the full tick rebuilds a fresh index generation
    and swaps it in atomically. A tick is skipped when the previous one is
    still running.
    """

    def __init__(self, engine: SearchEngine, source: DirectorySource,
                 schedule: RefreshSchedule | None = None,
                 config: CanonicalizeConfig | None = None):
        self.engine = engine
        self.source = source
        self.schedule = schedule or RefreshSchedule()
        self.config = config or CanonicalizeConfig()
        self.watermark: datetime | None = None
        self._tick_lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.failures = 0

    # Individual ticks are public so deployments (and tests) can drive them
    # without the background thread.

    def tick_incremental(self, now: datetime | None = None) -> IngestStats | None:
        return self._guarded(self._incremental, now)

    def tick_nightly(self, now: datetime | None = None) -> IngestStats | None:
        return self._guarded(self._nightly, now)

    def tick_full(self, now: datetime | None = None) -> IngestStats | None:
        return self._guarded(self._full, now)

    def _guarded(self, fn, now):
        if not self._tick_lock.acquire(blocking=False):
            return None  # previous tick still running; coalesce
        try:
            now = now or datetime.now(timezone.utc)
            try:
                return fn(now)
            except OSError:
                self.failures += 1  # watermark unchanged; next tick retries
                return None
        finally:
            self._tick_lock.release()

    def _select(self, since: datetime | None) -> list[dict]:
        records = self.source.records()
        if since is None:
            return records
        selected = []
        for rec in records:
            value = self._upload_time(rec)
            if value is None or value > since:
                selected.append(rec)
        return selected

    def _upload_time(self, rec: dict) -> datetime | None:
        for name, value in rec.items():
            target = self.config.aliases.get(name, name)
            if target.casefold() == UPLOAD_TIME_FIELD.casefold():
                try:
                    return _parse_datetime(value, self.config)
                except RejectedRecord:
                    return None
        return None

    def _advance_watermark(self, records: list[dict]):
        for rec in records:
            value = self._upload_time(rec)
            if value and (self.watermark is None or value > self.watermark):
                self.watermark = value

    def _incremental(self, now: datetime) -> IngestStats:
        records = self._select(self.watermark)
        batch = IngestBatch(f"incremental-{now.isoformat()}", records, received_at=now)
        stats = ingest_batch(self.engine, batch, self.config)
        self._advance_watermark(records)
        return stats

    def _nightly(self, now: datetime) -> IngestStats:
        records = self._select(now - timedelta(hours=24))
        batch = IngestBatch(f"nightly-{now.isoformat()}", records, received_at=now)
        stats = ingest_batch(self.engine, batch, self.config)
        self._advance_watermark(records)
        return stats

    def _full(self, now: datetime) -> IngestStats:
        from .index import InvertedIndex

        old_index = self.engine.index
        fresh = InvertedIndex(stopwords=old_index.current().analyzer.stopwords)
        for fdef in old_index.current().schema.values():
            fresh.register_field(fdef)
        rebuilt = SearchEngine(index=fresh, weights=self.engine.weights,
                               limits=self.engine.limits)
        records = self.source.records()
        batch = IngestBatch(f"full-{now.isoformat()}", records, received_at=now)
        stats = ingest_batch(rebuilt, batch, self.config)
        self.engine.index = fresh  # atomic generation swap
        self.watermark = None
        self._advance_watermark(records)
        return stats

    # -- background loop ----------------------------------------------------

    def start(self):
        if self._thread is not None:
            return
        self._stop.clear()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def _loop(self):
        last_incremental = datetime.now(timezone.utc)
        last_nightly_day = None
        last_full = datetime.now(timezone.utc)
        while not self._stop.wait(1.0):
            now = datetime.now(timezone.utc)
            if now - last_full >= self.schedule.full_reindex_every:
                self.tick_full(now)
                last_full = now
                continue
            local = now.astimezone()
            if (local.time() >= self.schedule.nightly_at
                    and last_nightly_day != local.date()):
                self.tick_nightly(now)
                last_nightly_day = local.date()
                continue
            if now - last_incremental >= self.schedule.incremental_every:
                self.tick_incremental(now)
                last_incremental = now
