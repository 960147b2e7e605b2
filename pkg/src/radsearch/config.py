"""Service configuration file (TOML) -> typed settings."""

from __future__ import annotations

import os
from dataclasses import dataclass, field as dc_field
from datetime import time, timedelta

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .ingest import CanonicalizeConfig, RefreshSchedule
from .querylang import QueryLimits
from .ranking import FieldWeights
from .service import DEFAULT_PHI_FIELDS, ServiceConfig

CONFIG_ENV = "RADSEARCH_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class AppConfig:
    data_dir: str = "./radsearch-data"
    stopwords_path: str | None = None
    weights: FieldWeights = dc_field(default_factory=FieldWeights)
    limits: QueryLimits = dc_field(default_factory=QueryLimits)
    schedule: RefreshSchedule = dc_field(default_factory=RefreshSchedule)
    canonicalize: CanonicalizeConfig = dc_field(default_factory=CanonicalizeConfig)
    service: ServiceConfig = dc_field(default_factory=ServiceConfig)
    host: str = "127.0.0.1"
    port: int = 8080

    @property
    def index_dir(self) -> str:
        return os.path.join(self.data_dir, "index")


def load_config(path: str | None = None) -> AppConfig:
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if path is None:
        return AppConfig()
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    cfg = AppConfig()
    cfg.data_dir = raw.get("data_dir", cfg.data_dir)
    cfg.stopwords_path = raw.get("stopwords_path") or None
    cfg.host = raw.get("host", cfg.host)
    cfg.port = int(raw.get("port", cfg.port))

    w = raw.get("weights", {})
    if w:
        fields = {k: float(v) for k, v in w.get("fields", {}).items()}
        cfg.weights = FieldWeights(
            fields=fields or FieldWeights().fields,
            w_bigram=float(w.get("bigram", 1.5)),
            w_trigram=float(w.get("trigram", 1.5)),
            w_passage=float(w.get("passage", 1.0)),
            passage_window=int(w.get("passage_window", 12)),
            recency_beta=float(w.get("recency_beta", 0.25)),
            recency_tau_days=float(w.get("recency_tau_days", 730.0)),
        )

    lim = raw.get("limits", {})
    if lim:
        cfg.limits = QueryLimits(
            max_length=int(lim.get("max_length", 1024)),
            max_clauses=int(lim.get("max_clauses", 64)),
            max_wildcard_terms=int(lim.get("max_wildcard_terms", 4)),
        )

    sched = raw.get("schedule", {})
    if sched:
        hh, _, mm = str(sched.get("nightly_at", "00:00")).partition(":")
        cfg.schedule = RefreshSchedule(
            incremental_every=timedelta(minutes=float(sched.get("incremental_minutes", 20))),
            nightly_at=time(int(hh), int(mm or 0)),
            full_reindex_every=timedelta(days=float(sched.get("full_days", 180))),
        )

    ing = raw.get("ingest", {})
    if ing:
        cfg.canonicalize = CanonicalizeConfig(
            id_field=ing.get("id_field", "doc_id"),
            aliases=dict(ing.get("aliases", {})),
            datetime_formats=tuple(ing.get("datetime_formats", ())),
            unknown_fields=ing.get("unknown_fields", "drop"),
        )

    svc = raw.get("service", {})
    cfg.service = ServiceConfig(
        phi_fields=tuple(svc.get("phi_fields", DEFAULT_PHI_FIELDS)),
        viewer_url_template=svc.get("viewer_url_template", ""),
        session_ttl=timedelta(hours=float(svc.get("session_ttl_hours", 12))),
        audit_path=svc.get("audit_file") or None,
        users_path=svc.get("users_file") or None,
        network_allowlist=tuple(svc.get("network_allowlist", ())),
    )
    return cfg
