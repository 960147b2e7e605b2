"""Document-oriented full-text search engine for clinical-style reports."""

from .analysis import AnalyzerConfig, Token, load_stopwords
from .engine import DEFAULT_SCHEMA, SearchEngine
from .index import FieldDef, InvertedIndex, Posting, ReportDocument, Snapshot
from .querylang import (FilterSpec, QueryLimits, QueryParseError, QueryRejected,
                        detect_boolean, optional_budget, parse_query, plan_query)
from .ranking import FieldWeights, ResultPage, ScoredHit

__version__ = "0.1.0"

__all__ = [
    "AnalyzerConfig", "DEFAULT_SCHEMA", "FieldDef", "FieldWeights",
    "FilterSpec", "InvertedIndex", "Posting", "QueryLimits",
    "QueryParseError", "QueryRejected", "ReportDocument", "ResultPage",
    "ScoredHit", "SearchEngine", "Snapshot", "Token", "detect_boolean",
    "load_stopwords", "optional_budget", "parse_query", "plan_query",
]
