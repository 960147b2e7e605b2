"""Ingestion tests: record conservation, dedup, idempotence, watermark
selection, nightly re-pull, and the atomic full-rebuild swap."""

import json
import threading
import time
from datetime import datetime, timedelta, timezone

import pytest

from radsearch.engine import SearchEngine
from radsearch.ingest import (CanonicalizeConfig, DirectorySource, IngestBatch,
                              RefreshSchedule, RejectedRecord, Scheduler,
                              canonicalize, ingest_batch, read_jsonl)

NOW = datetime(2025, 6, 1, 12, 0, tzinfo=timezone.utc)


def rec(doc_id, findings="normal study", upload=None, **extra):
    r = {"doc_id": doc_id, "Findings": findings}
    if upload is not None:
        r["ReportUploadDatetime"] = upload
    r.update(extra)
    return r


def fresh_engine():
    return SearchEngine.with_default_schema()


def run(engine, records, batch_id="b1", config=None):
    return ingest_batch(engine, IngestBatch(batch_id, records,
                                            received_at=NOW), config)


# -- canonicalize -----------------------------------------------------------


def test_canonicalize_applies_aliases():
    eng = fresh_engine()
    cfg = CanonicalizeConfig(aliases={"report_text": "Findings",
                                     "mrn": "doc_id"})
    doc = canonicalize({"mrn": "123", "report_text": "ivc filter"},
                       cfg, eng.snapshot().schema)
    assert doc.doc_id == "123"
    assert doc.fields == {"Findings": "ivc filter"}


def test_canonicalize_missing_id_rejected():
    eng = fresh_engine()
    with pytest.raises(RejectedRecord) as e:
        canonicalize({"Findings": "x"}, CanonicalizeConfig(),
                     eng.snapshot().schema)
    assert e.value.reason == "missing_id"


def test_canonicalize_unknown_field_modes():
    eng = fresh_engine()
    schema = eng.snapshot().schema
    doc = canonicalize({"doc_id": "1", "Bogus": "x", "Findings": "y"},
                       CanonicalizeConfig(), schema)
    assert "Bogus" not in doc.fields  # default: drop
    with pytest.raises(RejectedRecord) as e:
        canonicalize({"doc_id": "1", "Bogus": "x"},
                     CanonicalizeConfig(unknown_fields="error"), schema)
    assert e.value.reason == "unknown_field"


def test_canonicalize_datetime_formats():
    eng = fresh_engine()
    cfg = CanonicalizeConfig(datetime_formats=("%d/%m/%Y %H:%M",))
    doc = canonicalize({"doc_id": "1", "StudyDatetime": "01/05/2024 10:30"},
                       cfg, eng.snapshot().schema)
    assert doc.fields["StudyDatetime"] == \
        datetime(2024, 5, 1, 10, 30, tzinfo=timezone.utc)


def test_canonicalize_bad_datetime_rejected():
    eng = fresh_engine()
    with pytest.raises(RejectedRecord) as e:
        canonicalize({"doc_id": "1", "StudyDatetime": "not-a-date"},
                     CanonicalizeConfig(), eng.snapshot().schema)
    assert e.value.reason == "bad_datetime"


# -- batch conservation and dedup -------------------------------------------


def test_conservation_read_equals_upserted_plus_rejected():
    eng = fresh_engine()
    records = [rec("1"), rec("2"), {"Findings": "no id"}, rec("2"),
               {"doc_id": "3", "StudyDatetime": "garbage"}]
    stats = run(eng, records)
    assert stats.read == 5
    assert stats.read == stats.upserted + stats.rejected
    assert stats.reject_reasons == {"missing_id": 1, "superseded": 1,
                                    "bad_datetime": 1}
    assert stats.upserted == 2 and stats.committed


def test_last_record_wins_within_batch():
    eng = fresh_engine()
    run(eng, [rec("1", findings="first version"),
              rec("1", findings="second version")])
    snap = eng.snapshot()
    assert snap.doc_ids() == {"1"}
    assert snap.get_document("1").fields["Findings"] == "second version"


def test_reingest_is_idempotent():
    eng = fresh_engine()
    records = [rec("1", findings="ivc filter"), rec("2", findings="stent")]
    run(eng, records, "b1")
    first = {d: eng.snapshot().get_document(d).fields
             for d in eng.snapshot().doc_ids()}
    stats = run(eng, records, "b2")
    snap = eng.snapshot()
    assert stats.upserted == 2
    assert snap.doc_ids() == {"1", "2"}
    assert {d: snap.get_document(d).fields for d in snap.doc_ids()} == first
    page = eng.search("ivc", now=NOW)
    assert [h.doc_id for h in page.hits] == ["1"]
    assert page.total_hits == 1


def test_empty_batch_commits_nothing():
    eng = fresh_engine()
    before = eng.snapshot().snapshot_id
    stats = run(eng, [])
    assert not stats.committed
    assert eng.snapshot().snapshot_id == before


def test_batch_commits_once():
    eng = fresh_engine()
    before = eng.snapshot().snapshot_id
    run(eng, [rec(str(i)) for i in range(20)])
    assert eng.snapshot().snapshot_id == before + 1


# -- file sources -----------------------------------------------------------


def test_read_jsonl_skips_blank_lines(tmp_path):
    p = tmp_path / "a.jsonl"
    p.write_text('{"doc_id": "1"}\n\n{"doc_id": "2"}\n', encoding="utf-8")
    assert [r["doc_id"] for r in read_jsonl(str(p))] == ["1", "2"]


def test_directory_source_lexicographic_order(tmp_path):
    for name, doc_id in [("02.jsonl", "b"), ("01.jsonl", "a"),
                         ("10.jsonl", "c"), ("ignored.txt", "x")]:
        (tmp_path / name).write_text(json.dumps(rec(doc_id)) + "\n",
                                     encoding="utf-8")
    src = DirectorySource(str(tmp_path))
    assert [r["doc_id"] for r in src.records()] == ["a", "b", "c"]


def test_directory_source_single_file(tmp_path):
    p = tmp_path / "only.jsonl"
    p.write_text(json.dumps(rec("z")) + "\n", encoding="utf-8")
    assert [r["doc_id"] for r in DirectorySource(str(p)).records()] == ["z"]


# -- scheduler --------------------------------------------------------------


def write_feed(tmp_path, records, name="feed.jsonl"):
    (tmp_path / name).write_text(
        "".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def test_incremental_watermark_two_ticks(tmp_path):
    eng = fresh_engine()
    sched = Scheduler(eng, DirectorySource(str(tmp_path)))
    write_feed(tmp_path, [rec("1", upload="2025-06-01T08:00:00+00:00"),
                          rec("2", upload="2025-06-01T09:00:00+00:00")])
    stats = sched.tick_incremental(NOW)
    assert stats.upserted == 2
    assert sched.watermark == datetime(2025, 6, 1, 9, tzinfo=timezone.utc)

    # second tick: same feed plus one newer record; only the new one moves
    write_feed(tmp_path, [rec("1", upload="2025-06-01T08:00:00+00:00"),
                          rec("2", upload="2025-06-01T09:00:00+00:00"),
                          rec("3", upload="2025-06-01T10:00:00+00:00")])
    stats = sched.tick_incremental(NOW + timedelta(hours=1))
    assert stats.read == 1 and stats.upserted == 1
    assert sched.watermark == datetime(2025, 6, 1, 10, tzinfo=timezone.utc)
    assert eng.snapshot().doc_ids() == {"1", "2", "3"}


def test_records_without_upload_time_always_selected(tmp_path):
    eng = fresh_engine()
    sched = Scheduler(eng, DirectorySource(str(tmp_path)))
    write_feed(tmp_path, [rec("1", upload="2025-06-01T08:00:00+00:00")])
    sched.tick_incremental(NOW)
    write_feed(tmp_path, [rec("1", upload="2025-06-01T08:00:00+00:00"),
                          rec("undated")])
    stats = sched.tick_incremental(NOW)
    assert stats.read == 1 and stats.upserted == 1
    assert "undated" in eng.snapshot().doc_ids()


def test_nightly_repulls_24h_window(tmp_path):
    eng = fresh_engine()
    sched = Scheduler(eng, DirectorySource(str(tmp_path)))
    write_feed(tmp_path, [
        rec("old", upload="2025-05-29T12:00:00+00:00"),
        rec("recent", findings="repaired text",
            upload="2025-06-01T06:00:00+00:00"),
    ])
    stats = sched.tick_nightly(NOW)
    # only the record inside the trailing 24 h window is re-pulled
    assert stats.read == 1 and stats.upserted == 1
    assert eng.snapshot().doc_ids() == {"recent"}


def test_full_rebuild_swaps_index_and_drops_stale_docs(tmp_path):
    eng = fresh_engine()
    sched = Scheduler(eng, DirectorySource(str(tmp_path)))
    write_feed(tmp_path, [rec("1"), rec("stale")])
    sched.tick_incremental(NOW)
    assert eng.snapshot().doc_ids() == {"1", "stale"}

    old_index = eng.index
    write_feed(tmp_path, [rec("1"), rec("2")])  # stale gone from the feed
    stats = sched.tick_full(NOW + timedelta(days=1))
    assert stats.upserted == 2
    assert eng.index is not old_index  # new generation swapped in
    assert eng.snapshot().doc_ids() == {"1", "2"}


def test_full_rebuild_equals_direct_ingest(tmp_path):
    records = [rec(str(i), findings=f"finding {i}",
                   upload="2025-06-01T08:00:00+00:00") for i in range(10)]
    write_feed(tmp_path, records)

    eng_a = fresh_engine()
    sched = Scheduler(eng_a, DirectorySource(str(tmp_path)))
    sched.tick_incremental(NOW)
    sched.tick_full(NOW + timedelta(hours=1))

    eng_b = fresh_engine()
    run(eng_b, records)

    snap_a, snap_b = eng_a.snapshot(), eng_b.snapshot()
    assert snap_a.doc_ids() == snap_b.doc_ids()
    for doc_id in snap_a.doc_ids():
        assert snap_a.get_document(doc_id).fields == \
            snap_b.get_document(doc_id).fields


def test_concurrent_tick_coalesces(tmp_path):
    eng = fresh_engine()
    sched = Scheduler(eng, DirectorySource(str(tmp_path)))
    write_feed(tmp_path, [rec("1")])
    entered = threading.Event()
    release = threading.Event()

    original = sched._incremental

    def slow(now):
        entered.set()
        release.wait(timeout=5)
        return original(now)

    sched._incremental = slow
    t = threading.Thread(target=sched.tick_incremental, args=(NOW,))
    t.start()
    assert entered.wait(timeout=5)
    assert sched.tick_incremental(NOW) is None  # coalesced, not queued
    release.set()
    t.join(timeout=5)
    assert eng.snapshot().doc_ids() == {"1"}


def test_source_failure_counts_and_keeps_watermark(tmp_path):
    eng = fresh_engine()
    missing = tmp_path / "nope"
    sched = Scheduler(eng, DirectorySource(str(missing)))
    sched.watermark = NOW
    assert sched.tick_incremental(NOW) is None
    assert sched.failures == 1
    assert sched.watermark == NOW


def test_schedule_validation():
    with pytest.raises(ValueError):
        RefreshSchedule(incremental_every=timedelta(0))


def test_readers_never_see_partial_batch(tmp_path):
    """A snapshot taken mid-ingest shows none of the batch."""
    eng = fresh_engine()
    run(eng, [rec("base")])
    observed = []

    class Probe(list):
        # records list whose iteration snoops the engine between upserts
        def __iter__(self):
            for r in super().__iter__():
                observed.append(set(eng.snapshot().doc_ids()))
                yield r

    ingest_batch(eng, IngestBatch("b2", Probe([rec("x"), rec("y")]),
                                  received_at=NOW))
    assert all(s == {"base"} for s in observed)
    assert eng.snapshot().doc_ids() == {"base", "x", "y"}
