"""Networked front door: tiered auth, audited search, de-identified export.

Tier model: tier 1 (network) is a deploy-time address allowlist, tier 2
(searcher) unlocks /search and /doc, tier 3 (researcher, protocol tag
required) unlocks /export, tier 4 (image viewer) is an outbound link stub.
Every search, page navigation, export and rejection appends exactly one
audit record.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import re
import secrets
import threading
import time as _time
from dataclasses import dataclass, field as dc_field
from datetime import datetime, timedelta, timezone

from fastapi import Depends, FastAPI, Request
from fastapi.responses import JSONResponse

from . import analysis
from .engine import SearchEngine
from .querylang import FilterSpec, QueryError, QueryRejected

TIER_ORDER = {"network": 1, "searcher": 2, "researcher": 3, "image_viewer": 4}
ADMIN_TIER = "admin"

DEFAULT_PHI_FIELDS = ("PatientID", "PatientName", "PatientDOB")
DEID_KEY_ENV = "RADSEARCH_DEID_KEY"

AUDIT_ACTIONS = ("login", "search", "page_nav", "expand_doc", "export",
                 "rejected_query")


class ServiceError(Exception):
    def __init__(self, status: int, code: str, reason: str, detail: str = ""):
        super().__init__(reason)
        self.status = status
        self.code = code
        self.reason = reason
        self.detail = detail


# -- accounts ---------------------------------------------------------------


@dataclass
class Account:
    username: str
    salt: str
    password_hash: str
    tiers: tuple[str, ...]
    protocol_tag: str = ""


def _hash_password(password: str, salt: str) -> str:
    return hashlib.pbkdf2_hmac("sha256", password.encode(), bytes.fromhex(salt),
                               100_000).hex()


class UserStore:
    """JSON-file backed account registry (provisioned via the CLI)."""

    def __init__(self, path: str | None = None):
        self.path = path
        self._users: dict[str, Account] = {}
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for row in json.load(fh):
                    acct = Account(**row)
                    acct.tiers = tuple(acct.tiers)
                    self._users[acct.username] = acct

    def add(self, username: str, password: str, tiers: tuple[str, ...],
            protocol_tag: str = ""):
        for t in tiers:
            if t not in TIER_ORDER and t != ADMIN_TIER:
                raise ValueError(f"unknown tier {t!r}")
        if "researcher" in tiers and not protocol_tag:
            raise ValueError("researcher accounts require a protocol tag")
        salt = secrets.token_hex(16)
        self._users[username] = Account(
            username, salt, _hash_password(password, salt), tuple(tiers), protocol_tag)
        self._save()

    def _save(self):
        if not self.path:
            return
        rows = [vars(a) | {"tiers": list(a.tiers)} for a in self._users.values()]
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)

    def verify(self, username: str, password: str) -> Account | None:
        acct = self._users.get(username)
        if acct is None:
            return None
        if hmac.compare_digest(acct.password_hash,
                               _hash_password(password, acct.salt)):
            return acct
        return None


# -- sessions ---------------------------------------------------------------


@dataclass(frozen=True)
class Session:
    token: str
    user_id: str
    tiers: tuple[str, ...]
    expires_at: datetime

    def allows(self, tier: str) -> bool:
        if ADMIN_TIER in self.tiers:
            return True
        need = TIER_ORDER.get(tier)
        have = max((TIER_ORDER.get(t, 0) for t in self.tiers), default=0)
        return need is not None and have >= need


class SessionStore:
    def __init__(self, ttl: timedelta = timedelta(hours=12), clock=None):
        self.ttl = ttl
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def issue(self, account: Account, requested_tier: str) -> Session:
        if requested_tier not in ("searcher", "researcher"):
            raise ServiceError(400, "bad_tier", f"cannot log in as tier {requested_tier!r}")
        probe = Session("", account.username, account.tiers, self.clock())
        if not probe.allows(requested_tier):
            raise ServiceError(403, "tier_denied",
                               f"account lacks tier {requested_tier!r}")
        if requested_tier == "researcher" and not account.protocol_tag:
            raise ServiceError(403, "protocol_required",
                               "researcher tier requires a registered protocol tag")
        session = Session(secrets.token_urlsafe(24), account.username,
                          account.tiers, self.clock() + self.ttl)
        with self._lock:
            self._sessions[session.token] = session
        return session

    def resolve(self, token: str | None) -> Session:
        if not token:
            raise ServiceError(401, "unauthenticated", "missing session token")
        with self._lock:
            session = self._sessions.get(token)
        if session is None:
            raise ServiceError(401, "unauthenticated", "unknown session token")
        if self.clock() >= session.expires_at:
            raise ServiceError(401, "session_expired", "session token expired")
        return session


# -- audit trail ------------------------------------------------------------


@dataclass(frozen=True)
class AuditRecord:
    timestamp: str
    user_id: str
    action: str
    query_text: str = ""
    result_count: int | None = None
    page_number: int | None = None
    client: str = ""
    detail: str = ""


class AuditLog:
    """Append-only trail; optionally mirrored to a JSON Lines file."""

    def __init__(self, path: str | None = None, clock=None):
        self.path = path
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self._records: list[AuditRecord] = []
        self._lock = threading.Lock()

    def append(self, user_id: str, action: str, **kw) -> AuditRecord:
        assert action in AUDIT_ACTIONS, action
        record = AuditRecord(timestamp=self.clock().isoformat(),
                             user_id=user_id, action=action, **kw)
        with self._lock:
            self._records.append(record)
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(vars(record)) + "\n")
        return record

    def query(self, user_id: str | None = None, action: str | None = None,
              time_from: datetime | None = None,
              time_to: datetime | None = None) -> list[AuditRecord]:
        with self._lock:
            records = list(self._records)
        out = []
        for r in records:
            if user_id and r.user_id != user_id:
                continue
            if action and r.action != action:
                continue
            ts = datetime.fromisoformat(r.timestamp)
            if time_from and ts < time_from:
                continue
            if time_to and ts > time_to:
                continue
            out.append(r)
        return out


# -- de-identification ------------------------------------------------------


class Deidentifier:
    """Keyed one-way surrogates, stable within one export bundle.

    The surrogate key mixes a deployment secret with a per-export nonce, so
    the same patient maps to the same surrogate inside one export but to
    different surrogates across exports.
    """

    def __init__(self, phi_fields: tuple[str, ...], secret: bytes):
        if not phi_fields:
            raise ServiceError(503, "export_disabled",
                               "PHI field list is not configured")
        self.phi_fields = phi_fields
        self._key = secret + secrets.token_bytes(16)

    def surrogate(self, value: str) -> str:
        digest = hmac.new(self._key, value.encode(), hashlib.sha256).hexdigest()
        return f"anon-{digest[:12]}"

    def apply(self, fields: dict) -> dict:
        phi_values = []
        out = dict(fields)
        lower_phi = {f.casefold() for f in self.phi_fields}
        for name, value in fields.items():
            if name.casefold() in lower_phi and value is not None:
                text = value.isoformat() if isinstance(value, datetime) else str(value)
                phi_values.append(text)
                out[name] = self.surrogate(text)
        for name, value in out.items():
            if isinstance(value, str) and name.casefold() not in lower_phi:
                out[name] = self._scrub(value, phi_values)
        return out

    def _scrub(self, text: str, phi_values: list[str]) -> str:
        for value in phi_values:
            if not value:
                continue
            text = re.sub(re.escape(value), self.surrogate(value), text,
                          flags=re.IGNORECASE)
        return text


# -- app --------------------------------------------------------------------


@dataclass
class ServiceConfig:
    phi_fields: tuple[str, ...] = DEFAULT_PHI_FIELDS
    viewer_url_template: str = ""
    session_ttl: timedelta = timedelta(hours=12)
    audit_path: str | None = None
    users_path: str | None = None
    network_allowlist: tuple[str, ...] = ()  # empty = allow all (tier 1 stub)
    deid_secret: bytes = b""

    def secret(self) -> bytes:
        if self.deid_secret:
            return self.deid_secret
        env = os.environ.get(DEID_KEY_ENV)
        return env.encode() if env else b"radsearch-dev-key"


def image_link(doc_id: str, template: str) -> str | None:
    """Deterministic viewer URL; None when no template is configured."""
    if not template:
        return None
    return template.replace("{accession}", doc_id).replace("{doc_id}", doc_id)


def create_app(engine: SearchEngine, config: ServiceConfig | None = None,
               users: UserStore | None = None, clock=None,
               scheduler=None) -> FastAPI:
    config = config or ServiceConfig()
    users = users or UserStore(config.users_path)
    clock = clock or (lambda: datetime.now(timezone.utc))
    sessions = SessionStore(ttl=config.session_ttl, clock=clock)
    audit = AuditLog(path=config.audit_path, clock=clock)

    app = FastAPI(title="radsearch")
    app.state.engine = engine
    app.state.sessions = sessions
    app.state.audit = audit
    app.state.users = users
    app.state.config = config
    app.state.scheduler = scheduler

    @app.exception_handler(ServiceError)
    async def _service_error(_req, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={
            "code": exc.code, "reason": exc.reason, "detail": exc.detail})

    def check_network(request: Request):
        if not config.network_allowlist:
            return
        host = request.client.host if request.client else ""
        if host not in config.network_allowlist:
            raise ServiceError(403, "network_denied",
                               "client address not on the allowlist")

    def current_session(request: Request) -> Session:
        check_network(request)
        auth = request.headers.get("authorization", "")
        token = auth[7:] if auth.lower().startswith("bearer ") else None
        return sessions.resolve(token)

    def client_of(request: Request) -> str:
        return request.client.host if request.client else ""

    @app.post("/auth/login")
    async def login(request: Request):
        check_network(request)
        body = await request.json()
        username = body.get("username", "")
        account = users.verify(username, body.get("password", ""))
        if account is None:
            raise ServiceError(401, "bad_credentials", "invalid username or password")
        session = sessions.issue(account, body.get("tier", "searcher"))
        audit.append(username, "login", client=client_of(request))
        return {"token": session.token,
                "expires_at": session.expires_at.isoformat(),
                "tiers": list(session.tiers)}

    def parse_filters(modality: str | None, time_from: str | None,
                      time_to: str | None, collapse: str | None) -> FilterSpec:
        from .index import to_utc
        return FilterSpec(
            modality=frozenset(m for m in (modality or "").split(",") if m) or None,
            time_from=to_utc(time_from) if time_from else None,
            time_to=to_utc(time_to) if time_to else None,
            collapse_field=collapse or None,
        )

    @app.get("/search")
    async def search(request: Request, q: str = "", page: int = 1,
                     modality: str | None = None, collapse: str | None = None,
                     explain: bool = False,
                     session: Session = Depends(current_session)):
        if not session.allows("searcher"):
            raise ServiceError(403, "tier_denied", "search requires searcher tier")
        time_from = request.query_params.get("from")
        time_to = request.query_params.get("to")
        started = _time.perf_counter()
        try:
            filters = parse_filters(modality, time_from, time_to, collapse)
            result = engine.search(q, filters=filters, page=page, now=clock())
        except (QueryRejected, QueryError, analysis.UnknownFieldError, ValueError) as exc:
            reason = getattr(exc, "reason", "invalid_query")
            audit.append(session.user_id, "rejected_query", query_text=q,
                         detail=reason, client=client_of(request))
            raise ServiceError(400, "query_rejected", reason, str(exc)) from exc
        elapsed_ms = (_time.perf_counter() - started) * 1000.0

        action = "search" if page == 1 else "page_nav"
        audit.append(session.user_id, action, query_text=q,
                     result_count=result.total_hits, page_number=page,
                     client=client_of(request))

        hits = []
        for hit in result.hits:
            doc = engine.snapshot().get_document(hit.doc_id)
            row = {
                "doc_id": hit.doc_id,
                "score": hit.total_score,
                "fields": _jsonable(doc.fields if doc else {}),
                "matched_terms": hit.matched_terms,
            }
            link = image_link(hit.doc_id, config.viewer_url_template)
            if link:
                row["image_link"] = link
            if explain:
                row["breakdown"] = hit.breakdown
            hits.append(row)
        return {
            "hits": hits,
            "page": result.page_number,
            "per_page": result.per_page,
            "total_hits": result.total_hits,
            "total_pages": result.total_pages,
            "elapsed_ms": elapsed_ms,
        }

    @app.get("/doc/{doc_id}")
    async def get_doc(doc_id: str, request: Request,
                      session: Session = Depends(current_session)):
        if not session.allows("searcher"):
            raise ServiceError(403, "tier_denied", "requires searcher tier")
        doc = engine.snapshot().get_document(doc_id)
        if doc is None:
            raise ServiceError(404, "not_found", f"no document {doc_id!r}")
        audit.append(session.user_id, "expand_doc", detail=doc_id,
                     client=client_of(request))
        row = {"doc_id": doc.doc_id, "fields": _jsonable(doc.fields)}
        link = image_link(doc_id, config.viewer_url_template)
        if link:
            row["image_link"] = link
        return row

    @app.post("/export")
    async def export(request: Request,
                     session: Session = Depends(current_session)):
        if not session.allows("researcher"):
            audit.append(session.user_id, "rejected_query",
                         detail="export_tier_denied", client=client_of(request))
            raise ServiceError(403, "tier_denied", "export requires researcher tier")
        account = users._users.get(session.user_id)
        protocol_tag = account.protocol_tag if account else ""
        if not protocol_tag:
            raise ServiceError(403, "protocol_required",
                               "export requires a registered protocol tag")
        body = await request.json()
        q = body.get("q", "")
        bundle = export_bundle(engine, q, session.user_id, config, now=clock(),
                               protocol_tag=protocol_tag)
        audit.append(session.user_id, "export", query_text=q,
                     result_count=len(bundle["documents"]),
                     client=client_of(request))
        return bundle

    @app.get("/audit")
    async def audit_endpoint(request: Request, user: str | None = None,
                             action: str | None = None,
                             session: Session = Depends(current_session)):
        if ADMIN_TIER not in session.tiers:
            raise ServiceError(403, "tier_denied", "audit review requires admin")
        from .index import to_utc
        tf = request.query_params.get("from")
        tt = request.query_params.get("to")
        records = audit.query(user_id=user, action=action,
                              time_from=to_utc(tf) if tf else None,
                              time_to=to_utc(tt) if tt else None)
        return {"records": [vars(r) for r in records]}

    @app.get("/health")
    async def health():
        return {"status": "ok", "doc_count": engine.snapshot().doc_count,
                "snapshot_id": engine.snapshot().snapshot_id}

    return app


def export_bundle(engine: SearchEngine, q: str, user_id: str,
                  config: ServiceConfig, now: datetime | None = None,
                  protocol_tag: str = "") -> dict:
    """All matching documents, de-identified; exempt from the 10-doc cap."""
    deid = Deidentifier(tuple(config.phi_fields), config.secret())
    now = now or datetime.now(timezone.utc)
    snap = engine.snapshot()
    documents = []
    page = 1
    while True:
        result = engine.search(q, page=page, now=now, snap=snap)
        for hit in result.hits:
            doc = snap.get_document(hit.doc_id)
            if doc is None:
                continue
            documents.append({"doc_id": deid.surrogate(hit.doc_id),
                              "fields": _jsonable(deid.apply(doc.fields))})
        if page >= result.total_pages:
            break
        page += 1
    return {
        "query": q,
        "generated_at": now.isoformat(),
        "requested_by": user_id,
        "protocol_tag": protocol_tag,
        "documents": documents,
    }


def _jsonable(fields: dict) -> dict:
    out = {}
    for k, v in fields.items():
        out[k] = v.isoformat() if isinstance(v, datetime) else v
    return out
