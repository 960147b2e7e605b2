"""Query execution and ranking over a snapshot.

Pipeline: candidate admission (Boolean AST set or minimum-should-match
count), BM25 base relevance with field weights, bigram/trigram shingle
credit on name/title fields, proximity passage scoring on findings and
impression, a recency multiplier, filters, patient collapse, pagination.
Read-only over immutable snapshots; safe for concurrent searches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from datetime import datetime, timezone

from . import analysis, querylang
from .analysis import SHINGLE_SEP
from .index import Snapshot
from .querylang import (And, FilterSpec, Keyword, Not, Or, Phrase, QueryLimits,
                        QueryPlan, Term)

BM25_K1 = 1.2
BM25_B = 0.75


@dataclass
class FieldWeights:
    """Scoring knobs; all empirically chosen and deployment-overridable."""

    fields: dict[str, float] = dc_field(default_factory=lambda: {
        "StudyDescription": 3.0,
        "Impression": 2.0,
        "Findings": 1.0,
        "PatientName": 2.0,
        "Author": 1.5,
    })
    w_bigram: float = 1.5
    w_trigram: float = 1.5
    w_passage: float = 1.0
    passage_window: int = 12
    recency_beta: float = 0.25
    recency_tau_days: float = 730.0

    def field_weight(self, name: str) -> float:
        return self.fields.get(name, 1.0)


# Conventional schema roles; engines with a different schema remap these.
PATTERN_FIELDS = ("PatientName", "Author", "StudyDescription")
PASSAGE_FIELDS = ("Findings", "Impression")
STUDY_TIME_FIELD = "StudyDatetime"
MODALITY_FIELD = "Modality"

PER_PAGE = 10


@dataclass(slots=True)
class ScoredHit:
    doc_id: str
    total_score: float
    breakdown: dict[str, float]
    matched_terms: list[str]


@dataclass
class ResultPage:
    hits: list[ScoredHit]
    page_number: int
    total_hits: int
    total_pages: int
    per_page: int = PER_PAGE


# -- matching helpers -------------------------------------------------------


def _field_query_term(snap: Snapshot, field_name: str, text: str) -> str:
    return analysis.query_term(text, field_name, snap.analyzer)


def _search_fields(snap: Snapshot, keyword_field: str | None) -> list[str]:
    if keyword_field is not None:
        return [snap.resolve_field(keyword_field).name]
    return snap.text_fields()


def term_docs(snap: Snapshot, text: str, field_name: str | None,
              wildcard_limit: int = 1024) -> dict[str, list[str]]:
    """doc_id -> fields in which the term (or wildcard expansion) matched."""
    out: dict[str, list[str]] = {}
    for fname in _search_fields(snap, field_name):
        fd = snap.resolve_field(fname)
        if fd.kind == "datetime":
            continue
        if analysis.is_wildcard(text):
            pattern = analysis.fold(analysis.normalize(text))
            terms, _ = snap.expand_wildcard(fname, pattern, limit=wildcard_limit)
        else:
            terms = [_field_query_term(snap, fname, text)]
        for term in terms:
            for doc_id in snap.postings_map(fname, term):
                out.setdefault(doc_id, []).append(fname)
    return out


def phrase_docs(snap: Snapshot, text: str, field_name: str | None) -> dict[str, list[str]]:
    """doc_id -> fields where the quoted phrase matches with the stored
    position gaps (stopword gaps included on both sides)."""
    out: dict[str, list[str]] = {}
    for fname in _search_fields(snap, field_name):
        fd = snap.resolve_field(fname)
        if fd.kind == "datetime":
            continue
        if fd.kind in ("exact_keyword", "identifier"):
            term = analysis.fold(analysis.normalize(text))
            for doc_id in snap.postings_map(fname, term):
                out.setdefault(doc_id, []).append(fname)
            continue
        parts = analysis.phrase_terms(text, fname, snap.analyzer)
        if not parts:
            continue
        if len(parts) == 1:
            for doc_id in snap.postings_map(fname, parts[0][0]):
                out.setdefault(doc_id, []).append(fname)
            continue
        postings_by_term = {}
        ok = True
        for term, _ in parts:
            if term not in postings_by_term:
                by_doc = snap.postings_map(fname, term)
                if not by_doc:
                    ok = False
                    break
                postings_by_term[term] = {d: set(p) for d, p in by_doc.items()}
        if not ok:
            continue
        anchor_term, anchor_delta = min(
            ((t, d) for t, d in parts), key=lambda td: len(postings_by_term[td[0]]))
        for doc_id, anchor_positions in postings_by_term[anchor_term].items():
            if any(
                all(base - anchor_delta + d in postings_by_term[t].get(doc_id, ())
                    for t, d in parts)
                for base in anchor_positions
            ):
                out.setdefault(doc_id, []).append(fname)
    return out


def keyword_docs(snap: Snapshot, kw: Keyword) -> dict[str, list[str]]:
    if kw.is_phrase:
        return phrase_docs(snap, kw.text, kw.field)
    return term_docs(snap, kw.text, kw.field)


# -- Boolean evaluation -----------------------------------------------------


def eval_ast(ast, snap: Snapshot) -> set[str]:
    """Doc-id set satisfying a Boolean AST; NOT is complement within the
    snapshot's live documents."""
    if isinstance(ast, Term):
        # a term that analyzes to several tokens (e.g. hyphenated words)
        # must match them adjacently, like an implicit phrase
        return set(term_or_phrase_docs(snap, ast.text, ast.field))
    if isinstance(ast, Phrase):
        return set(phrase_docs(snap, ast.text, ast.field))
    if isinstance(ast, Not):
        return snap.doc_ids() - eval_ast(ast.child, snap)
    if isinstance(ast, And):
        result = None
        for child in ast.children:
            child_set = eval_ast(child, snap)
            result = child_set if result is None else result & child_set
            if not result:
                return set()
        return result or set()
    if isinstance(ast, Or):
        result: set[str] = set()
        for child in ast.children:
            result |= eval_ast(child, snap)
        return result
    raise TypeError(f"not an AST node: {ast!r}")


def term_or_phrase_docs(snap: Snapshot, text: str, field_name: str | None) -> dict[str, list[str]]:
    if analysis.is_wildcard(text):
        return term_docs(snap, text, field_name)
    if len(analysis.tokenize(text)) > 1:
        return phrase_docs(snap, text, field_name)
    return term_docs(snap, text, field_name)


def _positive_leaves(ast, negated: bool = False) -> list[Term | Phrase]:
    if isinstance(ast, (Term, Phrase)):
        return [] if negated else [ast]
    if isinstance(ast, Not):
        return _positive_leaves(ast.child, not negated)
    if isinstance(ast, (And, Or)):
        out = []
        for c in ast.children:
            out.extend(_positive_leaves(c, negated))
        return out
    return []


# -- scoring components -----------------------------------------------------


def _bm25(snap: Snapshot, fname: str, term: str, doc_id: str, tf: int) -> float:
    n = snap.doc_count
    df = snap.document_frequency(fname, term)
    if df == 0 or n == 0:
        return 0.0
    idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
    dl = snap.field_length(fname, doc_id)
    avg = snap.avg_field_length(fname) or 1.0
    norm = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avg)
    return idf * tf * (BM25_K1 + 1.0) / norm


def base_relevance(plan: QueryPlan, snap: Snapshot,
                   weights: FieldWeights) -> tuple[dict[str, float], dict[str, list[str]]]:
    """Admission + BM25 scoring.

    Returns (score map, matched-keyword map). Regular mode admits documents
    matching at least min_match keywords; boolean mode admits exactly the
    AST's satisfying set.
    """
    scores: dict[str, float] = {}
    matched: dict[str, list[str]] = {}

    if plan.mode == "boolean":
        admitted = eval_ast(plan.ast, snap)
        leaves = _positive_leaves(plan.ast)
        for leaf in leaves:
            if isinstance(leaf, Phrase):
                docs = phrase_docs(snap, leaf.text, leaf.field)
                label = f'"{leaf.text}"'
            else:
                docs = term_or_phrase_docs(snap, leaf.text, leaf.field)
                label = leaf.text
            scorer = _leaf_scorer(snap, weights, leaf.text)
            for doc_id, fields in docs.items():
                if doc_id not in admitted:
                    continue
                scores[doc_id] = scores.get(doc_id, 0.0) + scorer(doc_id, fields)
                matched.setdefault(doc_id, []).append(label)
        for doc_id in admitted:
            scores.setdefault(doc_id, 0.0)
            matched.setdefault(doc_id, [])
        return scores, matched

    per_keyword = [(kw, keyword_docs(snap, kw)) for kw in plan.keywords]
    counts: dict[str, int] = {}
    for _, docs in per_keyword:
        for doc_id in docs:
            counts[doc_id] = counts.get(doc_id, 0) + 1
    admitted = {d for d, c in counts.items() if c >= plan.min_match}
    for kw, docs in per_keyword:
        label = f'"{kw.text}"' if kw.is_phrase else kw.text
        scorer = _leaf_scorer(snap, weights, kw.text)
        for doc_id, fields in docs.items():
            if doc_id not in admitted:
                continue
            scores[doc_id] = scores.get(doc_id, 0.0) + scorer(doc_id, fields)
            matched.setdefault(doc_id, []).append(label)
    return scores, matched


def _leaf_scorer(snap: Snapshot, weights: FieldWeights, text: str):
    """Per-keyword scorer with all per-term work (analysis, idf, averages)
    hoisted out of the per-document loop."""
    tokens = [t.text for t in analysis.tokenize(text)]
    wildcard_leaf = analysis.is_wildcard(text)
    n = snap.doc_count
    k1, b = BM25_K1, BM25_B
    per_field: dict = {}

    def field_info(fname: str):
        info = per_field.get(fname)
        if info is None:
            fd = snap.resolve_field(fname)
            w = weights.field_weight(fd.name)
            if fd.kind in ("exact_keyword", "identifier"):
                info = (w, None, 1.0)
            else:
                avg = snap.avg_field_length(fd.name) or 1.0
                lengths = snap.field_length_map(fd.name)
                terms = []
                for tok in tokens:
                    if analysis.is_wildcard(tok):
                        continue
                    term = _field_query_term(snap, fname, tok)
                    pm = snap.postings_map(fd.name, term)
                    df = len(pm)
                    if df == 0 or n == 0:
                        continue
                    idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
                    terms.append((pm, idf, lengths))
                info = (w, terms, avg)
            per_field[fname] = info
        return info

    def score(doc_id: str, fields: list[str]) -> float:
        total = 0.0
        for fname in fields:
            w, terms, avg = field_info(fname)
            if terms is None:
                total += w
                continue
            for pm, idf, lengths in terms:
                positions = pm.get(doc_id)
                if positions:
                    tf = len(positions)
                    dl = lengths.get(doc_id, 0)
                    norm = tf + k1 * (1.0 - b + b * dl / avg)
                    total += w * idf * tf * (k1 + 1.0) / norm
            if wildcard_leaf:
                total += w  # flat credit per matched wildcard field
        return total

    return score


def _plan_term_sequence(plan: QueryPlan) -> list[str]:
    """Ordered plain query words feeding the shingle pattern searches."""
    if plan.mode == "boolean":
        words = []
        for leaf in _positive_leaves(plan.ast):
            if isinstance(leaf, Term) and leaf.field is None and not leaf.wildcard:
                words.append(leaf.text)
        return words
    return [k.text for k in plan.keywords
            if not k.is_phrase and not k.is_wildcard and k.field is None]


def ngram_search(plan: QueryPlan, snap: Snapshot, n: int,
                 weights: FieldWeights) -> dict[str, float]:
    """Shingle credit over the name/title fields for query word n-grams."""
    words = _plan_term_sequence(plan)
    if len(words) < n:
        return {}
    scores: dict[str, float] = {}
    for fname in PATTERN_FIELDS:
        try:
            fd = snap.resolve_field(fname)
        except analysis.UnknownFieldError:
            continue
        if not fd.shingled:
            continue
        w = weights.field_weight(fd.name)
        for i in range(len(words) - n + 1):
            gram = SHINGLE_SEP.join(
                _field_query_term(snap, fd.name, word) for word in words[i : i + n])
            for doc_id in snap.postings_map(fd.name, gram):
                scores[doc_id] = scores.get(doc_id, 0.0) + w
    return scores


def bigram_search(plan: QueryPlan, snap: Snapshot, weights: FieldWeights) -> dict[str, float]:
    return ngram_search(plan, snap, 2, weights)


def trigram_search(plan: QueryPlan, snap: Snapshot, weights: FieldWeights) -> dict[str, float]:
    return ngram_search(plan, snap, 3, weights)


def passage_search(plan: QueryPlan, snap: Snapshot, weights: FieldWeights) -> dict[str, float]:
    """Best proximity window over findings/impression (regular mode only).

    Window width W positions; score = (distinct keywords in the window /
    total keywords) * (distinct / window span), maxing at 1.0 when every
    keyword sits adjacent.
    """
    if plan.mode != "regular":
        return {}
    words = _plan_term_sequence(plan)
    if not words:
        return {}
    total = len(words)
    window = weights.passage_window
    scores: dict[str, float] = {}
    for fname in PASSAGE_FIELDS:
        try:
            fd = snap.resolve_field(fname)
        except analysis.UnknownFieldError:
            continue
        if total == 1:
            # one keyword: any occurrence is a perfect window by itself
            term = _field_query_term(snap, fd.name, words[0])
            for doc_id in snap.postings_map(fd.name, term):
                scores[doc_id] = 1.0
            continue
        occurrences: dict[str, list[tuple[int, int]]] = {}
        for k_idx, word in enumerate(words):
            term = _field_query_term(snap, fd.name, word)
            for doc_id, positions in snap.postings_map(fd.name, term).items():
                occurrences.setdefault(doc_id, []).extend(
                    (pos, k_idx) for pos in positions)
        for doc_id, occ in occurrences.items():
            occ.sort()
            best = 0.0
            lo = 0
            seen: dict[int, int] = {}
            for hi in range(len(occ)):
                seen[occ[hi][1]] = seen.get(occ[hi][1], 0) + 1
                while occ[hi][0] - occ[lo][0] >= window:
                    seen[occ[lo][1]] -= 1
                    if seen[occ[lo][1]] == 0:
                        del seen[occ[lo][1]]
                    lo += 1
                distinct = len(seen)
                span = occ[hi][0] - occ[lo][0] + 1
                best = max(best, (distinct / total) * (distinct / span))
            if best > 0:
                scores[doc_id] = max(scores.get(doc_id, 0.0), best)
    return scores


def recency_multiplier(study_time: datetime | None, now: datetime,
                       weights: FieldWeights) -> float:
    """1 + beta * exp(-age/tau); clamps to the maximum for future times."""
    if study_time is None:
        return 1.0
    age_days = (now - study_time).total_seconds() / 86400.0
    if age_days < 0:
        age_days = 0.0
    return 1.0 + weights.recency_beta * math.exp(-age_days / weights.recency_tau_days)


def combine(base: dict[str, float], bigram: dict[str, float],
            trigram: dict[str, float], passage: dict[str, float],
            matched: dict[str, list[str]], snap: Snapshot,
            weights: FieldWeights, now: datetime) -> list[ScoredHit]:
    hits = []
    w_bg, w_tg, w_ps = weights.w_bigram, weights.w_trigram, weights.w_passage
    beta, tau = weights.recency_beta, weights.recency_tau_days
    now_ts = now.timestamp()
    epochs = snap.datetime_epoch_map(STUDY_TIME_FIELD) if snap.schema.get(
        STUDY_TIME_FIELD.casefold()) else {}
    exp = math.exp
    for doc_id in base:
        b = base[doc_id]
        bg = bigram.get(doc_id, 0.0)
        tg = trigram.get(doc_id, 0.0)
        ps = passage.get(doc_id, 0.0)
        ts = epochs.get(doc_id)
        if ts is None:
            m = 1.0
        else:
            age_days = max(0.0, (now_ts - ts) / 86400.0)
            m = 1.0 + beta * exp(-age_days / tau)
        total = (b + w_bg * bg + w_tg * tg + w_ps * ps) * m
        labels = matched.get(doc_id, ())
        if len(labels) > 1:
            labels = sorted(set(labels))
        hits.append(ScoredHit(
            doc_id=doc_id,
            total_score=total,
            breakdown={
                "base_relevance": b,
                "bigram": bg,
                "trigram": tg,
                "passage": ps,
                "recency_multiplier": m,
            },
            matched_terms=list(labels),
        ))
    return hits


def _study_time(snap: Snapshot, doc_id: str) -> datetime | None:
    value = snap.field_value(doc_id, STUDY_TIME_FIELD)
    if isinstance(value, datetime):
        return value
    return None


def apply_filters(hits: list[ScoredHit], filters: FilterSpec,
                  snap: Snapshot) -> list[ScoredHit]:
    if filters.is_empty():
        return hits
    out = []
    modality = ({analysis.fold(m) for m in filters.modality}
                if filters.modality is not None else None)
    live = snap.doc_ids() if hits else set()
    for hit in hits:
        if hit.doc_id not in live:
            continue
        if modality is not None:
            value = snap.field_value(hit.doc_id, MODALITY_FIELD)
            if value is None or analysis.fold(str(value)) not in modality:
                continue
        if filters.time_from or filters.time_to:
            st = _study_time(snap, hit.doc_id)
            if st is None:
                continue
            if filters.time_from and st < filters.time_from:
                continue
            if filters.time_to and st > filters.time_to:
                continue
        out.append(hit)
    if filters.collapse_field:
        fd = snap.resolve_field(filters.collapse_field)
        # highest score survives per key; most recent study breaks ties
        def rank(hit: ScoredHit):
            st = _study_time(snap, hit.doc_id)
            epoch = st.timestamp() if st else float("-inf")
            return (-hit.total_score, -epoch, hit.doc_id)

        survivors = []
        seen: set = set()
        for hit in sorted(out, key=rank):
            key = snap.field_value(hit.doc_id, fd.name)
            if key is None:
                key = ("__missing__", hit.doc_id)
            if key not in seen:
                seen.add(key)
                survivors.append(hit)
        out = survivors
    return out


def sort_hits(hits: list[ScoredHit]) -> list[ScoredHit]:
    return sorted(hits, key=lambda h: (-h.total_score, h.doc_id))


def paginate(sorted_hits: list[ScoredHit], page_number: int) -> ResultPage:
    if page_number < 1:
        raise querylang.QueryRejected("bad_page", "page_number must be >= 1")
    total = len(sorted_hits)
    total_pages = max(1, math.ceil(total / PER_PAGE)) if total else 0
    start = (page_number - 1) * PER_PAGE
    return ResultPage(
        hits=sorted_hits[start : start + PER_PAGE],
        page_number=page_number,
        total_hits=total,
        total_pages=total_pages,
    )


def search(raw: str, snap: Snapshot, *, filters: FilterSpec = FilterSpec(),
           page: int = 1, now: datetime | None = None,
           weights: FieldWeights | None = None,
           limits: QueryLimits = QueryLimits(),
           stopwords: frozenset[str] | None = None) -> ResultPage:
    """Full pipeline: sanitize -> detect/parse/plan -> component searches ->
    combine -> recency -> filters -> collapse -> sort -> paginate."""
    weights = weights or FieldWeights()
    now = now or datetime.now(timezone.utc)
    stopwords = stopwords if stopwords is not None else snap.analyzer.stopwords

    cleaned = querylang.sanitize(raw, limits)
    plan = querylang.plan_query(
        cleaned, filters, stopwords,
        doc_frequency=lambda text: _default_df(snap, text))
    return run_plan(plan, snap, page=page, now=now, weights=weights)


def run_plan(plan: QueryPlan, snap: Snapshot, *, page: int = 1,
             now: datetime | None = None,
             weights: FieldWeights | None = None) -> ResultPage:
    weights = weights or FieldWeights()
    now = now or datetime.now(timezone.utc)
    base, matched = base_relevance(plan, snap, weights)
    bg = bigram_search(plan, snap, weights)
    tg = trigram_search(plan, snap, weights)
    ps = passage_search(plan, snap, weights)
    hits = combine(base, bg, tg, ps, matched, snap, weights, now)
    hits = apply_filters(hits, plan.filters, snap)
    return paginate(sort_hits(hits), page)


def _default_df(snap: Snapshot, text: str) -> int:
    total = 0
    for fname in snap.text_fields():
        term = _field_query_term(snap, fname, text)
        total += snap.document_frequency(fname, term)
    return total
