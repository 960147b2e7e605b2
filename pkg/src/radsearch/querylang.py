"""Boolean query compiler: detection, parsing, planning, sanitizing.

Grammar (precedence NOT > AND > OR, parentheses override; adjacency in
boolean mode means AND):

    expr    := or
    or      := and (("OR" | "|") and)*
    and     := unary (("AND" | "&" | "+") unary | unary)*
    unary   := ("NOT" | "!" | "-") unary | atom
    atom    := "(" expr ")" | phrase | fielded | term
    fielded := FIELD ":" (term | phrase)

Operator symbols bind only at word boundaries, so hyphenated terms like
"t2-weighted" survive as single terms. Lowercase and/or/not are plain words.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field as dc_field
from datetime import datetime

from . import analysis

BOOLEAN_WORDS = ("AND", "OR", "NOT")
BOOLEAN_SYMBOLS = "+-|&!"

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class QueryError(ValueError):
    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class QueryParseError(QueryError):
    pass


class QueryRejected(QueryError):
    """A sanitizer checkpoint fired; `reason` is a stable loggable code."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


# -- AST --------------------------------------------------------------------


@dataclass(frozen=True)
class Term:
    text: str
    field: str | None = None
    span: tuple[int, int] | None = None

    @property
    def wildcard(self) -> bool:
        return analysis.is_wildcard(self.text)


@dataclass(frozen=True)
class Phrase:
    text: str  # raw inner text of the quoted phrase
    field: str | None = None
    span: tuple[int, int] | None = None

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(self.text.split())


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Or:
    children: tuple


@dataclass(frozen=True)
class Not:
    child: object


QueryAst = Term | Phrase | And | Or | Not


# -- limits / sanitizer -----------------------------------------------------


@dataclass(frozen=True)
class QueryLimits:
    max_length: int = 1024
    max_clauses: int = 64
    max_wildcard_terms: int = 4


_CONTROL_RE = re.compile(r"[\x00-\x08\x0b-\x1f\x7f]")


def sanitize(raw: str, limits: QueryLimits = QueryLimits()) -> str:
    """Strip control characters and enforce the manipulation checkpoints.

    Rejects rather than rewrites on any limit violation; each violation
    carries a distinct reason code for the audit log.
    """
    cleaned = _CONTROL_RE.sub("", raw)
    if len(cleaned) > limits.max_length:
        raise QueryRejected("max_length",
                            f"query longer than {limits.max_length} characters")
    try:
        lexemes = _lex(cleaned)
    except QueryParseError:
        return cleaned  # malformed input is the parser's error to report
    atoms = [lx for lx in lexemes if lx.kind in ("word", "phrase")]
    if len(atoms) > limits.max_clauses:
        raise QueryRejected("max_clauses",
                            f"query has more than {limits.max_clauses} clauses")
    wild = [lx for lx in atoms if lx.kind == "word" and analysis.is_wildcard(lx.value)]
    if len(wild) > limits.max_wildcard_terms:
        raise QueryRejected(
            "max_wildcards",
            f"query has more than {limits.max_wildcard_terms} wildcard terms")
    return cleaned


# -- lexer ------------------------------------------------------------------


@dataclass(frozen=True)
class _Lexeme:
    kind: str  # word | phrase | lparen | rparen | op
    value: str
    pos: int


def _lex(raw: str) -> list[_Lexeme]:
    out = []
    i, n = 0, len(raw)
    while i < n:
        c = raw[i]
        if c.isspace():
            i += 1
            continue
        if c == '"':
            end = raw.find('"', i + 1)
            if end < 0:
                raise QueryParseError("unbalanced quote", i)
            out.append(_Lexeme("phrase", raw[i + 1 : end], i))
            i = end + 1
            continue
        if c == "(":
            out.append(_Lexeme("lparen", c, i))
            i += 1
            continue
        if c == ")":
            out.append(_Lexeme("rparen", c, i))
            i += 1
            continue
        start = i
        while i < n and not raw[i].isspace() and raw[i] not in '()"':
            i += 1
        word = raw[start:i]
        out.extend(_classify(word, start))
    return out


def _classify(word: str, pos: int) -> list[_Lexeme]:
    if word in BOOLEAN_WORDS:
        return [_Lexeme("op", word, pos)]
    if len(word) == 1 and word in BOOLEAN_SYMBOLS:
        return [_Lexeme("op", word, pos)]
    # prefix operators attached to a word: "-x" / "!x" negate, "+x" marks AND
    if word[0] in "-!+" and len(word) > 1:
        rest = _classify(word[1:], pos + 1)
        return [_Lexeme("op", word[0], pos)] + rest
    return [_Lexeme("word", word, pos)]


def detect_boolean(raw: str) -> bool:
    """True iff a Boolean operator appears outside quoted phrases."""
    masked = re.sub(r'"[^"]*"', lambda m: " " * len(m.group()), raw)
    if any(sym in masked for sym in BOOLEAN_SYMBOLS):
        return True
    return re.search(r"\b(AND|OR|NOT)\b", masked) is not None


# -- parser -----------------------------------------------------------------


class _Parser:
    def __init__(self, lexemes: list[_Lexeme], source: str):
        self.lexemes = lexemes
        self.source = source
        self.i = 0

    def peek(self) -> _Lexeme | None:
        return self.lexemes[self.i] if self.i < len(self.lexemes) else None

    def take(self) -> _Lexeme:
        lx = self.peek()
        if lx is None:
            raise QueryParseError("unexpected end of query", len(self.source))
        self.i += 1
        return lx

    def parse(self) -> QueryAst:
        node = self.parse_or()
        lx = self.peek()
        if lx is not None:
            raise QueryParseError(f"unexpected {lx.value!r}", lx.pos)
        return node

    def parse_or(self) -> QueryAst:
        children = [self.parse_and()]
        while True:
            lx = self.peek()
            if lx and lx.kind == "op" and lx.value in ("OR", "|"):
                self.take()
                children.append(self.parse_and())
            else:
                break
        return children[0] if len(children) == 1 else Or(tuple(children))

    def parse_and(self) -> QueryAst:
        children = [self.parse_unary()]
        while True:
            lx = self.peek()
            if lx is None or lx.kind == "rparen":
                break
            if lx.kind == "op" and lx.value in ("AND", "&", "+"):
                self.take()
                children.append(self.parse_unary())
            elif lx.kind == "op" and lx.value in ("OR", "|"):
                break
            else:
                children.append(self.parse_unary())  # adjacency = AND
        return children[0] if len(children) == 1 else And(tuple(children))

    def parse_unary(self) -> QueryAst:
        lx = self.peek()
        if lx and lx.kind == "op" and lx.value in ("NOT", "!", "-"):
            self.take()
            return Not(self.parse_unary())
        if lx and lx.kind == "op" and lx.value == "+":
            # prefix '+' marks a mandatory clause; AND-joining already is
            self.take()
            return self.parse_unary()
        if lx and lx.kind == "op":
            raise QueryParseError(f"dangling operator {lx.value!r}", lx.pos)
        return self.parse_atom()

    def parse_atom(self) -> QueryAst:
        lx = self.take()
        if lx.kind == "lparen":
            node = self.parse_or()
            closing = self.peek()
            if closing is None or closing.kind != "rparen":
                raise QueryParseError("unbalanced parenthesis", lx.pos)
            self.take()
            return node
        if lx.kind == "rparen":
            raise QueryParseError("unbalanced parenthesis", lx.pos)
        if lx.kind == "phrase":
            return Phrase(lx.value, span=(lx.pos, lx.pos + len(lx.value)))
        if lx.kind == "word":
            return self._atom_from_word(lx)
        raise QueryParseError(f"dangling operator {lx.value!r}", lx.pos)

    def _atom_from_word(self, lx: _Lexeme) -> QueryAst:
        word = lx.value
        if ":" in word:
            fname, value = word.split(":", 1)
            if _IDENT_RE.match(fname):
                if value == "":
                    nxt = self.peek()
                    if nxt and nxt.kind == "phrase":
                        self.take()
                        return Phrase(nxt.value, field=fname,
                                      span=(lx.pos, nxt.pos + len(nxt.value)))
                    raise QueryParseError(f"empty value for field {fname!r}", lx.pos)
                if value.startswith('"'):
                    # field:"phrase" with no space lexes into the word; rare,
                    # handled by the phrase lexeme path above instead
                    raise QueryParseError("quoted value must follow the colon directly", lx.pos)
                return Term(value, field=fname, span=(lx.pos, lx.pos + len(word)))
        return Term(word, span=(lx.pos, lx.pos + len(word)))


def parse_query(raw: str) -> QueryAst:
    if not raw.strip():
        raise QueryParseError("empty query", 0)
    lexemes = _lex(raw)
    if not lexemes:
        raise QueryParseError("empty query", 0)
    return _Parser(lexemes, raw).parse()


def pretty(ast: QueryAst) -> str:
    """Render an AST back to query syntax; reparses to the same structure."""
    def fmt(node, parent: str) -> str:
        if isinstance(node, Term):
            return f"{node.field}:{node.text}" if node.field else node.text
        if isinstance(node, Phrase):
            quoted = f'"{node.text}"'
            return f"{node.field}:{quoted}" if node.field else quoted
        if isinstance(node, Not):
            return "NOT " + fmt(node.child, "NOT")
        if isinstance(node, And):
            body = " AND ".join(fmt(c, "AND") for c in node.children)
            return f"({body})" if parent in ("NOT", "AND") else body
        if isinstance(node, Or):
            body = " OR ".join(fmt(c, "OR") for c in node.children)
            return f"({body})" if parent in ("NOT", "AND", "OR") else body
        raise TypeError(f"not an AST node: {node!r}")

    return fmt(ast, "")


# -- planning ---------------------------------------------------------------


@dataclass(frozen=True)
class FilterSpec:
    modality: frozenset[str] | None = None
    time_from: datetime | None = None
    time_to: datetime | None = None
    collapse_field: str | None = None

    def __post_init__(self):
        if self.time_from and self.time_to and self.time_from > self.time_to:
            raise QueryError("time_from must not be after time_to")

    def is_empty(self) -> bool:
        return (self.modality is None and self.time_from is None
                and self.time_to is None and self.collapse_field is None)


@dataclass(frozen=True)
class Keyword:
    """One planned regular-mode keyword: a term, wildcard or quoted phrase."""

    text: str
    field: str | None = None
    is_phrase: bool = False
    position: int = 0

    @property
    def is_wildcard(self) -> bool:
        return not self.is_phrase and analysis.is_wildcard(self.text)


@dataclass
class QueryPlan:
    mode: str  # "boolean" | "regular"
    raw: str
    filters: FilterSpec
    ast: QueryAst | None = None
    keywords: list[Keyword] = dc_field(default_factory=list)
    optional: list[Keyword] = dc_field(default_factory=list)
    min_match: int = 0

    @property
    def mandatory(self) -> list[Keyword]:
        return [k for k in self.keywords if k not in self.optional]


def optional_budget(n_keywords: int) -> int:
    """How many of n keywords may go unmatched (floor rounding)."""
    if n_keywords < 0:
        raise ValueError("keyword count must be >= 0")
    if n_keywords <= 4:
        return 0
    if n_keywords <= 9:
        return min(int(0.2 * n_keywords), 2)
    return int(0.3 * n_keywords)


def plan_query(raw: str, filters: FilterSpec = FilterSpec(),
               stopwords: frozenset[str] = frozenset(),
               doc_frequency=None) -> QueryPlan:
    """Compile a sanitized query string into an execution plan.

    Boolean mode keeps the parsed AST verbatim (no stopword removal, no
    optionality). Regular mode removes stopwords, computes the optional
    budget on the surviving keyword count and marks the most common
    keywords optional (`doc_frequency(text)`; ties and the no-stats case
    fall back to rightmost-first).
    """
    if detect_boolean(raw):
        ast = parse_query(raw)
        return QueryPlan(mode="boolean", raw=raw, filters=filters, ast=ast)

    keywords = _regular_keywords(raw, stopwords)
    if not keywords:
        raise QueryRejected("no_keywords", "no keywords left after stopword removal")
    budget = optional_budget(len(keywords))
    optional = _pick_optional(keywords, budget, doc_frequency)
    return QueryPlan(
        mode="regular", raw=raw, filters=filters, keywords=keywords,
        optional=optional, min_match=len(keywords) - len(optional),
    )


def _regular_keywords(raw: str, stopwords: frozenset[str]) -> list[Keyword]:
    lexemes = _lex(raw)
    keywords: list[Keyword] = []
    pos = 0
    i = 0
    while i < len(lexemes):
        lx = lexemes[i]
        if lx.kind == "phrase":
            keywords.append(Keyword(lx.value, is_phrase=True, position=pos))
            pos += 1
        elif lx.kind == "word":
            fielded = _split_fielded(lx.value)
            if fielded:
                fname, value = fielded
                if value == "" and i + 1 < len(lexemes) and lexemes[i + 1].kind == "phrase":
                    i += 1
                    keywords.append(Keyword(lexemes[i].value, field=fname,
                                            is_phrase=True, position=pos))
                else:
                    keywords.append(Keyword(value, field=fname, position=pos))
                pos += 1
            else:
                for token in analysis.tokenize(lx.value):
                    if token.text in stopwords:
                        continue
                    keywords.append(Keyword(token.text, position=pos))
                    pos += 1
        i += 1
    return keywords


def _split_fielded(word: str) -> tuple[str, str] | None:
    if ":" not in word:
        return None
    fname, value = word.split(":", 1)
    return (fname, value) if _IDENT_RE.match(fname) else None


def _pick_optional(keywords: list[Keyword], budget: int, doc_frequency) -> list[Keyword]:
    if budget <= 0:
        return []
    candidates = [k for k in keywords if not k.is_phrase and not k.is_wildcard
                  and k.field is None]
    if doc_frequency is None:
        ranked = sorted(candidates, key=lambda k: -k.position)
    else:
        # most common first (highest df = lowest idf), rightmost breaks ties
        ranked = sorted(candidates, key=lambda k: (-doc_frequency(k.text), -k.position))
    return ranked[:budget]


def count_operators(ast: QueryAst) -> int:
    """Operator count of a parsed query: Boolean operators (an n-ary
    AND/OR counts n-1), quoted phrases, and wildcard characters."""
    if isinstance(ast, Term):
        return sum(ast.text.count(c) for c in analysis.WILDCARD_CHARS)
    if isinstance(ast, Phrase):
        return 1
    if isinstance(ast, Not):
        return 1 + count_operators(ast.child)
    if isinstance(ast, (And, Or)):
        return len(ast.children) - 1 + sum(count_operators(c) for c in ast.children)
    raise TypeError(f"not an AST node: {ast!r}")
