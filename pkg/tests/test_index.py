"""Inverted index tests: brute-force postings oracle, wildcard expansion
against a regex scan, snapshot isolation, persistence round-trip."""

import re
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings, strategies as st

from radsearch import analysis
from radsearch.index import (FieldDef, InvertedIndex, ReportDocument,
                             SchemaError, WildcardError, to_utc)

WORDS = ["ivc", "filter", "stent", "hepatic", "pump", "anoxic", "injury",
         "renal", "cyst", "mass", "the", "of", "acute", "chronic"]


def make_index():
    idx = InvertedIndex()
    idx.register_field(FieldDef("Findings", "analyzed_text"))
    idx.register_field(FieldDef("Title", "analyzed_text", shingled=True))
    idx.register_field(FieldDef("Modality", "exact_keyword"))
    idx.register_field(FieldDef("When", "datetime"))
    return idx


# -- schema -----------------------------------------------------------------


def test_register_field_idempotent_and_conflicting():
    idx = make_index()
    v = idx.schema_version
    assert idx.register_field(FieldDef("Findings", "analyzed_text")) == v
    with pytest.raises(SchemaError):
        idx.register_field(FieldDef("Findings", "exact_keyword"))


def test_field_kind_validation():
    with pytest.raises(SchemaError):
        FieldDef("x", "bogus")
    with pytest.raises(SchemaError):
        FieldDef("x", "datetime", shingled=True)


def test_field_names_case_insensitive():
    idx = make_index()
    snap = idx.current()
    assert snap.resolve_field("findings").name == "Findings"
    assert snap.resolve_field("FINDINGS").name == "Findings"


# -- postings oracle --------------------------------------------------------


def brute_force_postings(docs: dict[str, str], term: str, analyzer):
    """Re-analyze every stored doc and collect positions for the term."""
    expect = {}
    for doc_id, text in docs.items():
        positions = [p for t, p in analysis.analyze(text, "Findings", analyzer)
                     if t == term]
        if positions:
            expect[doc_id] = tuple(sorted(positions))
    return expect


@given(st.dictionaries(
    st.text(alphabet="abcdef", min_size=1, max_size=4),
    st.lists(st.sampled_from(WORDS), max_size=12).map(" ".join),
    max_size=15))
@settings(max_examples=60, deadline=None)
def test_postings_match_brute_force(docs):
    idx = make_index()
    for doc_id, text in docs.items():
        idx.upsert_document(ReportDocument(doc_id, {"Findings": text}))
    snap = idx.commit()
    analyzer = snap.analyzer
    terms = {t for text in docs.values()
             for t, _ in analysis.analyze(text, "Findings", analyzer)}
    for term in terms | {"zzz"}:
        expect = brute_force_postings(docs, term, analyzer)
        got = {p.doc_id: p.positions for p in snap.postings("Findings", term)}
        assert got == expect
        assert snap.document_frequency("Findings", term) == len(expect)
        for p in snap.postings("Findings", term):
            assert p.term_frequency == len(p.positions)


def test_postings_sorted_by_doc_id():
    idx = make_index()
    for doc_id in ["d3", "d1", "d2"]:
        idx.upsert_document(ReportDocument(doc_id, {"Findings": "ivc filter"}))
    snap = idx.commit()
    assert [p.doc_id for p in snap.postings("Findings", "ivc")] == ["d1", "d2", "d3"]


def test_upsert_masks_old_version():
    idx = make_index()
    idx.upsert_document(ReportDocument("d1", {"Findings": "ivc filter"}))
    idx.commit()
    idx.upsert_document(ReportDocument("d1", {"Findings": "renal cyst"}))
    snap = idx.commit()
    assert snap.postings("Findings", "ivc") == []
    assert [p.doc_id for p in snap.postings("Findings", "renal")] == ["d1"]
    assert snap.doc_count == 1


def test_delete_document():
    idx = make_index()
    idx.upsert_document(ReportDocument("d1", {"Findings": "ivc"}))
    idx.upsert_document(ReportDocument("d2", {"Findings": "ivc"}))
    idx.commit()
    idx.delete_document("d1")
    snap = idx.commit()
    assert snap.doc_ids() == {"d2"}
    assert [p.doc_id for p in snap.postings("Findings", "ivc")] == ["d2"]


def test_field_lengths_and_average():
    idx = make_index()
    idx.upsert_document(ReportDocument("a", {"Findings": "ivc filter stent"}))
    idx.upsert_document(ReportDocument("b", {"Findings": "cyst mass"}))
    idx.upsert_document(ReportDocument("c", {"Modality": "CT"}))
    snap = idx.commit()
    assert snap.field_length("Findings", "a") == 3
    assert snap.field_length("Findings", "b") == 2
    assert snap.field_length("Findings", "c") == 0
    # average over docs that have the field, not all docs
    assert snap.avg_field_length("Findings") == pytest.approx(2.5)


def test_shingles_excluded_from_length_and_dictionary():
    idx = make_index()
    idx.upsert_document(ReportDocument("a", {"Title": "hepatic arterial pump"}))
    snap = idx.commit()
    assert snap.field_length("Title", "a") == 3
    assert all(analysis.SHINGLE_SEP not in t
               for t in snap.term_dictionary("Title"))
    gram = analysis.SHINGLE_SEP.join(["hepat", "arteri"])
    assert snap.document_frequency("Title", gram) == 1


def test_datetime_normalized_to_utc():
    idx = make_index()
    idx.upsert_document(ReportDocument("a", {"When": "2024-05-01T10:00:00"}))
    snap = idx.commit()
    value = snap.get_document("a").fields["When"]
    assert value == datetime(2024, 5, 1, 10, 0, tzinfo=timezone.utc)
    assert to_utc("2024-05-01T12:00:00+02:00") == \
        datetime(2024, 5, 1, 10, 0, tzinfo=timezone.utc)


# -- wildcard expansion -----------------------------------------------------


def _regex_oracle(dictionary, pattern):
    rx = re.compile("^" + "".join(
        ".*" if c == "*" else "." if c == "?" else re.escape(c)
        for c in pattern) + "$")
    return [t for t in dictionary if rx.match(t)]


@given(st.lists(st.sampled_from(WORDS + ["filtration", "filtered", "stenting"]),
                min_size=1, max_size=20),
       st.sampled_from(["fil*", "st?nt", "f*r", "a*", "c?st", "x*", "*",
                        "filter*", "?vc", "s*g"]))
@settings(max_examples=80, deadline=None)
def test_wildcard_matches_regex_oracle(words, pattern):
    idx = make_index()
    for i, w in enumerate(words):
        idx.upsert_document(ReportDocument(f"d{i}", {"Findings": w}))
    snap = idx.commit()
    dictionary = snap.term_dictionary("Findings")
    if pattern[0] in "?*":
        with pytest.raises(WildcardError):
            snap.expand_wildcard("Findings", pattern)
        terms, truncated = snap.expand_wildcard("Findings", pattern,
                                                allow_leading=True)
    else:
        terms, truncated = snap.expand_wildcard("Findings", pattern)
    assert terms == _regex_oracle(dictionary, pattern)
    assert not truncated


def test_wildcard_cap_truncates():
    idx = make_index()
    for i in range(30):
        idx.upsert_document(ReportDocument(f"d{i}", {"Findings": f"term{i:02d}"}))
    snap = idx.commit()
    terms, truncated = snap.expand_wildcard("Findings", "term*", limit=10)
    assert len(terms) == 10 and truncated
    full, not_trunc = snap.expand_wildcard("Findings", "term*")
    assert len(full) == 30 and not not_trunc


def test_wildcard_requires_wildcard_char():
    snap = make_index().commit()
    with pytest.raises(WildcardError):
        snap.expand_wildcard("Findings", "plain")


def test_dictionary_reflects_live_docs_only():
    idx = make_index()
    idx.upsert_document(ReportDocument("d1", {"Findings": "unique"}))
    idx.commit()
    idx.delete_document("d1")
    snap = idx.commit()
    assert "uniqu" not in snap.term_dictionary("Findings")


# -- snapshot isolation -----------------------------------------------------


def test_snapshot_isolation_under_commit():
    idx = make_index()
    idx.upsert_document(ReportDocument("d1", {"Findings": "ivc filter"}))
    before = idx.commit()
    held = {"docs": before.doc_ids(),
            "postings": [p.doc_id for p in before.postings("Findings", "ivc")]}

    idx.upsert_document(ReportDocument("d2", {"Findings": "ivc stent"}))
    idx.upsert_document(ReportDocument("d1", {"Findings": "renal"}))
    after = idx.commit()

    # the held snapshot is bit-for-bit what it was
    assert before.doc_ids() == held["docs"] == {"d1"}
    assert [p.doc_id for p in before.postings("Findings", "ivc")] == \
        held["postings"] == ["d1"]
    assert before.get_document("d1").fields["Findings"] == "ivc filter"
    # while the new snapshot sees the new state
    assert after.doc_ids() == {"d1", "d2"}
    assert [p.doc_id for p in after.postings("Findings", "ivc")] == ["d2"]
    assert after.snapshot_id > before.snapshot_id


def test_uncommitted_writes_invisible():
    idx = make_index()
    idx.upsert_document(ReportDocument("d1", {"Findings": "ivc"}))
    assert idx.current().doc_count == 0
    idx.commit()
    assert idx.current().doc_count == 1


# -- persistence ------------------------------------------------------------


def test_save_load_roundtrip(tmp_path):
    idx = make_index()
    idx.upsert_document(ReportDocument("d1", {
        "Findings": "ivc filter retrieval", "Modality": "XR",
        "When": "2024-05-01T10:00:00"}))
    idx.upsert_document(ReportDocument("d2", {"Findings": "hepatic pump"}))
    idx.commit()
    idx.upsert_document(ReportDocument("d1", {"Findings": "renal cyst"}))
    idx.commit()
    idx.save(str(tmp_path / "ix"))

    loaded = InvertedIndex.load(str(tmp_path / "ix"))
    snap = loaded.current()
    assert snap.doc_ids() == {"d1", "d2"}
    assert snap.get_document("d1").fields["Findings"] == "renal cyst"
    assert [p.doc_id for p in snap.postings("Findings", "renal")] == ["d1"]
    assert snap.postings("Findings", "ivc") == []  # superseded version gone
    assert snap.resolve_field("modality").kind == "exact_keyword"
    assert snap.get_document("d2").fields["Findings"] == "hepatic pump"
