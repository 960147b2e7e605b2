"""Inspect how a score is assembled: field-weighted BM25, shingle and
passage credit, recency, filters, and pagination.

Run with: python demos/03_ranking_breakdown.py
"""

from datetime import datetime, timezone

from radsearch.engine import SearchEngine
from radsearch.index import ReportDocument
from radsearch.querylang import FilterSpec

NOW = datetime(2025, 6, 1, tzinfo=timezone.utc)

engine = SearchEngine.with_default_schema()
engine.upsert(ReportDocument("recent", {
    "PatientName": "John Smith",
    "StudyDescription": "CT abdomen",
    "Findings": "Partially occluded IVC stent. IVC stent lumen patent distally.",
    "Modality": "CT", "StudyDatetime": "2025-05-20T09:00:00+00:00"}))
engine.upsert(ReportDocument("old", {
    "PatientName": "Jane Doe",
    "StudyDescription": "CT abdomen",
    "Findings": "IVC stent in stable position.",
    "Modality": "CT", "StudyDatetime": "2015-05-20T09:00:00+00:00"}))
engine.upsert(ReportDocument("unrelated", {
    "PatientName": "John Smith",
    "StudyDescription": "MR brain",
    "Findings": "No acute intracranial abnormality.",
    "Modality": "MRI", "StudyDatetime": "2025-05-01T09:00:00+00:00"}))
engine.commit()

# Every hit carries a component breakdown: BM25 base relevance, exact
# bigram/trigram pattern credit, passage proximity, and the recency
# multiplier that the total is scaled by.
for hit in engine.search("ivc stent", now=NOW).hits:
    print(f"{hit.doc_id:10s} total={hit.total_score:7.3f}  "
          + "  ".join(f"{k}={v:.3f}" for k, v in hit.breakdown.items()))

# A name query earns shingle credit on the name field.
hit = engine.search("john smith", now=NOW).hits[0]
print(f"\n'john smith' -> {hit.doc_id}, bigram credit {hit.breakdown['bigram']:.1f}")

# Filters narrow by modality or study time without changing scores.
page = engine.search("ivc OR abnormality",
                     filters=FilterSpec(modality=frozenset({"CT"})), now=NOW)
print("\nCT only:", [h.doc_id for h in page.hits])

# Results come in pages of ten with stable, gap-free ordering.
page = engine.search("ivc stent", page=1, now=NOW)
print(f"page {page.page_number}/{page.total_pages}, "
      f"{page.total_hits} hits, {len(page.hits)} on this page")
