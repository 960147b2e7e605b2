"""Engine facade: index + analyzer + ranking configuration in one handle."""

from __future__ import annotations

from datetime import datetime

from . import analysis, ranking
from .index import FieldDef, InvertedIndex, ReportDocument
from .querylang import FilterSpec, QueryLimits
from .ranking import FieldWeights, ResultPage

DEFAULT_SCHEMA = (
    FieldDef("PatientID", "identifier"),
    FieldDef("PatientName", "analyzed_text", shingled=True, stemmed=False),
    FieldDef("PatientDOB", "datetime"),
    FieldDef("StudyDescription", "analyzed_text", shingled=True),
    FieldDef("Author", "analyzed_text", shingled=True, stemmed=False),
    FieldDef("Findings", "analyzed_text"),
    FieldDef("Impression", "analyzed_text"),
    FieldDef("Modality", "exact_keyword"),
    FieldDef("StudyDatetime", "datetime"),
    FieldDef("ReportUploadDatetime", "datetime"),
)


class SearchEngine:
    def __init__(self, index: InvertedIndex | None = None,
                 weights: FieldWeights | None = None,
                 limits: QueryLimits | None = None,
                 stopwords: frozenset[str] | None = None):
        self.index = index or InvertedIndex(stopwords=stopwords)
        self.weights = weights or FieldWeights()
        self.limits = limits or QueryLimits()

    @classmethod
    def with_default_schema(cls, **kwargs) -> "SearchEngine":
        engine = cls(**kwargs)
        for fdef in DEFAULT_SCHEMA:
            engine.index.register_field(fdef)
        return engine

    def upsert(self, doc: ReportDocument):
        self.index.upsert_document(doc)

    def commit(self):
        return self.index.commit()

    def snapshot(self):
        return self.index.current()

    def search(self, raw: str, *, filters: FilterSpec = FilterSpec(),
               page: int = 1, now: datetime | None = None,
               snap=None) -> ResultPage:
        snap = snap or self.snapshot()
        return ranking.search(raw, snap, filters=filters, page=page, now=now,
                              weights=self.weights, limits=self.limits)

    def save(self, path: str):
        self.index.save(path)

    @classmethod
    def load(cls, path: str, **kwargs) -> "SearchEngine":
        engine = cls.__new__(cls)
        engine.index = InvertedIndex.load(path)
        engine.weights = kwargs.get("weights") or FieldWeights()
        engine.limits = kwargs.get("limits") or QueryLimits()
        return engine
