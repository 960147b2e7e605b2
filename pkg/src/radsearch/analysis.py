"""Text analysis chain: tokenizer, stopword filter, stemming, word shingles.

Everything here is a pure function over immutable inputs; the analyzer is
shared freely between the index writer and concurrent searchers.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources

from . import stemmer

# Joins the words of a shingle into a single dictionary term.
SHINGLE_SEP = "\x1f"

WILDCARD_CHARS = ("?", "*")

_TOKEN_RE = re.compile(r"[\w?*]+(?:['’][\w?*]+)*", re.UNICODE)


class UnknownFieldError(KeyError):
    """Raised when analysis is requested for a field not in the schema."""


@dataclass(frozen=True)
class Token:
    text: str
    position: int
    char_span: tuple[int, int]


@dataclass(frozen=True)
class FieldAnalysis:
    """Per-field analyzer settings."""

    stem: bool = True
    shingle_sizes: tuple[int, ...] = ()


@dataclass
class AnalyzerConfig:
    stopwords: frozenset[str]
    stemming_enabled: bool = True
    fields: dict[str, FieldAnalysis] = field(default_factory=dict)

    def field_analysis(self, name: str) -> FieldAnalysis:
        try:
            return self.fields[name]
        except KeyError:
            raise UnknownFieldError(name) from None


def load_stopwords(path=None) -> frozenset[str]:
    """Read a stopword file: one lowercase word per line, '#' comments."""
    if path is None:
        text = resources.files("radsearch.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    words = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            words.add(line.casefold())
    return frozenset(words)


def normalize(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def fold(text: str) -> str:
    """Casefold and strip diacritics where an ASCII fold exists."""
    text = text.casefold()
    decomposed = unicodedata.normalize("NFKD", text)
    stripped = "".join(c for c in decomposed if not unicodedata.combining(c))
    return stripped if stripped else text


def tokenize(text: str) -> list[Token]:
    """Split on whitespace/punctuation, keeping in-word apostrophes and
    the wildcard characters '?' and '*'. Offsets index the NFC form."""
    source = normalize(text)
    tokens = []
    for pos, match in enumerate(_TOKEN_RE.finditer(source)):
        tokens.append(Token(fold(match.group()), pos, match.span()))
    return tokens


def is_wildcard(term: str) -> bool:
    return any(c in term for c in WILDCARD_CHARS)


def stem(token: str) -> str:
    return stemmer.stem(token)


def remove_stopwords(tokens: list[Token], config: AnalyzerConfig) -> list[Token]:
    """Drop stopword tokens, keeping original positions (gaps stay)."""
    return [t for t in tokens if t.text not in config.stopwords]


def shingle(tokens: list[Token], n: int) -> list[str]:
    """Contiguous word n-grams; windows never span a position gap."""
    if n not in (2, 3):
        raise ValueError(f"shingle size must be 2 or 3, got {n}")
    grams = []
    for i in range(len(tokens) - n + 1):
        window = tokens[i : i + n]
        if all(window[k].position == window[0].position + k for k in range(n)):
            grams.append(SHINGLE_SEP.join(t.text for t in window))
    return grams


def _stem_tokens(tokens: list[Token], fa: FieldAnalysis, config: AnalyzerConfig) -> list[Token]:
    if not (config.stemming_enabled and fa.stem):
        return tokens
    return [
        t if is_wildcard(t.text) else Token(stem(t.text), t.position, t.char_span)
        for t in tokens
    ]


def analyze(text: str, field_name: str, config: AnalyzerConfig) -> list[tuple[str, int]]:
    """Full index-side chain for one field value.

    Returns (term, position) pairs; shingles carry the position of their
    first word. Deterministic for fixed inputs.
    """
    fa = config.field_analysis(field_name)
    tokens = remove_stopwords(tokenize(text), config)
    tokens = _stem_tokens(tokens, fa, config)
    terms = [(t.text, t.position) for t in tokens]
    for n in sorted(fa.shingle_sizes):
        for i in range(len(tokens) - n + 1):
            window = tokens[i : i + n]
            if all(window[k].position == window[0].position + k for k in range(n)):
                terms.append((SHINGLE_SEP.join(t.text for t in window), window[0].position))
    return terms


def query_term(text: str, field_name: str, config: AnalyzerConfig) -> str:
    """Normalize a single query keyword the way the field was indexed.

    Wildcard terms are folded but never stemmed.
    """
    fa = config.field_analysis(field_name)
    folded = fold(normalize(text))
    if is_wildcard(folded) or not (config.stemming_enabled and fa.stem):
        return folded
    return stem(folded)


def phrase_terms(text: str, field_name: str, config: AnalyzerConfig) -> list[tuple[str, int]]:
    """Analyze quoted-phrase text for positional matching against a field.

    Stopwords are dropped with their position gaps preserved, mirroring the
    index side, so the relative offsets line up with stored positions.
    """
    fa = config.field_analysis(field_name)
    tokens = remove_stopwords(tokenize(text), config)
    tokens = _stem_tokens(tokens, fa, config)
    if not tokens:
        return []
    base = tokens[0].position
    return [(t.text, t.position - base) for t in tokens]
