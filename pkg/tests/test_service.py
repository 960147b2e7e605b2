"""Service tests: auth tiers, session expiry, audit completeness,
de-identified export, and the HTTP response contract."""

from datetime import datetime, timedelta, timezone

import pytest
from fastapi.testclient import TestClient

from radsearch.engine import SearchEngine
from radsearch.index import ReportDocument
from radsearch.service import (Deidentifier, ServiceConfig, ServiceError,
                               UserStore, create_app, image_link)

NOW = datetime(2025, 6, 1, 12, 0, tzinfo=timezone.utc)

DOCS = {
    "acc1": {"PatientID": "111222", "PatientName": "Alice Carter",
             "Findings": "IVC filter in place. Alice Carter tolerated well.",
             "Impression": "Stable filter.", "Modality": "XR",
             "StudyDatetime": "2025-05-01T09:00:00+00:00"},
    "acc2": {"PatientID": "333444", "PatientName": "Bob Reyes",
             "Findings": "Hepatic arterial infusion pump noted.",
             "Impression": "No acute process.", "Modality": "CT",
             "StudyDatetime": "2025-04-01T09:00:00+00:00"},
}


class Clock:
    def __init__(self, now=NOW):
        self.now = now

    def __call__(self):
        return self.now

    def advance(self, **kw):
        self.now += timedelta(**kw)


def build(n_filler=0, **config_kw):
    eng = SearchEngine.with_default_schema()
    for doc_id, fields in DOCS.items():
        eng.upsert(ReportDocument(doc_id, fields))
    for i in range(n_filler):
        eng.upsert(ReportDocument(f"fill{i:03d}", {
            "PatientID": f"90{i:04d}", "PatientName": f"Pat Filler{i}",
            "Findings": "ivc filter follow up."}))
    eng.commit()
    users = UserStore()
    users.add("sue", "pw-sue", ("searcher",))
    users.add("rita", "pw-rita", ("researcher",), protocol_tag="IRB-42")
    users.add("adm", "pw-adm", ("admin",))
    clock = Clock()
    app = create_app(eng, ServiceConfig(**config_kw), users, clock=clock)
    return TestClient(app), clock, app


def login(client, user="sue", password=None, tier="searcher"):
    resp = client.post("/auth/login", json={
        "username": user, "password": password or f"pw-{user}", "tier": tier})
    assert resp.status_code == 200, resp.text
    return {"Authorization": f"Bearer {resp.json()['token']}"}


# -- auth -------------------------------------------------------------------


def test_login_bad_password_rejected():
    client, _, _ = build()
    resp = client.post("/auth/login",
                       json={"username": "sue", "password": "wrong"})
    assert resp.status_code == 401
    assert resp.json()["code"] == "bad_credentials"


def test_searcher_cannot_login_as_researcher():
    client, _, _ = build()
    resp = client.post("/auth/login", json={
        "username": "sue", "password": "pw-sue", "tier": "researcher"})
    assert resp.status_code == 403
    assert resp.json()["code"] == "tier_denied"


def test_search_requires_session():
    client, _, _ = build()
    assert client.get("/search", params={"q": "ivc"}).status_code == 401


def test_session_expires_with_clock():
    client, clock, _ = build()
    headers = login(client)
    assert client.get("/search", params={"q": "ivc"},
                      headers=headers).status_code == 200
    clock.advance(hours=13)
    resp = client.get("/search", params={"q": "ivc"}, headers=headers)
    assert resp.status_code == 401
    assert resp.json()["code"] == "session_expired"


def test_network_allowlist_blocks_unlisted_clients():
    client, _, _ = build(network_allowlist=("10.0.0.7",))
    resp = client.post("/auth/login",
                       json={"username": "sue", "password": "pw-sue"})
    assert resp.status_code == 403
    assert resp.json()["code"] == "network_denied"


def test_researcher_account_requires_protocol_tag_at_creation():
    users = UserStore()
    with pytest.raises(ValueError):
        users.add("r2", "pw", ("researcher",))


# -- search contract --------------------------------------------------------


def test_search_response_shape():
    client, _, _ = build(viewer_url_template="https://pacs/view/{accession}")
    headers = login(client)
    body = client.get("/search", params={"q": "ivc filter"},
                      headers=headers).json()
    assert set(body) == {"hits", "page", "per_page", "total_hits",
                        "total_pages", "elapsed_ms"}
    assert body["page"] == 1 and body["per_page"] == 10
    assert body["total_hits"] == 1 and body["total_pages"] == 1
    hit = body["hits"][0]
    assert hit["doc_id"] == "acc1"
    assert hit["fields"]["Modality"] == "XR"
    assert hit["image_link"] == "https://pacs/view/acc1"
    assert "breakdown" not in hit


def test_search_explain_includes_breakdown():
    client, _, _ = build()
    headers = login(client)
    body = client.get("/search", params={"q": "ivc", "explain": "true"},
                      headers=headers).json()
    assert set(body["hits"][0]["breakdown"]) == {
        "base_relevance", "bigram", "trigram", "passage",
        "recency_multiplier"}


def test_pages_capped_at_ten_documents():
    client, _, _ = build(n_filler=25)
    headers = login(client)
    seen = []
    page = 1
    while True:
        body = client.get("/search", params={"q": "ivc filter", "page": page},
                          headers=headers).json()
        assert len(body["hits"]) <= 10
        seen.extend(h["doc_id"] for h in body["hits"])
        if page >= body["total_pages"]:
            break
        page += 1
    assert len(seen) == len(set(seen)) == body["total_hits"] == 26


def test_filters_pass_through():
    client, _, _ = build()
    headers = login(client)
    body = client.get("/search", params={"q": "ivc OR hepatic",
                                         "modality": "CT"},
                      headers=headers).json()
    assert [h["doc_id"] for h in body["hits"]] == ["acc2"]
    body = client.get("/search", params={"q": "ivc OR hepatic",
                                         "from": "2025-04-15T00:00:00+00:00"},
                      headers=headers).json()
    assert [h["doc_id"] for h in body["hits"]] == ["acc1"]


def test_rejected_query_returns_400_with_reason():
    client, _, _ = build()
    headers = login(client)
    resp = client.get("/search", params={"q": "a* b* c* d* e*"},
                      headers=headers)
    assert resp.status_code == 400
    assert resp.json()["reason"] == "max_wildcards"
    resp = client.get("/search", params={"q": "ivc", "page": 0},
                      headers=headers)
    assert resp.status_code == 400


def test_doc_endpoint():
    client, _, _ = build()
    headers = login(client)
    body = client.get("/doc/acc2", headers=headers).json()
    assert body["doc_id"] == "acc2"
    assert body["fields"]["PatientName"] == "Bob Reyes"
    assert client.get("/doc/nope", headers=headers).status_code == 404


def test_health_is_public():
    client, _, _ = build()
    body = client.get("/health").json()
    assert body["status"] == "ok" and body["doc_count"] == 2


# -- audit ------------------------------------------------------------------


def test_audit_counts_searches_pages_and_rejections():
    client, _, app = build(n_filler=15)
    headers = login(client)
    n_search, m_nav, k_reject = 4, 3, 2
    for _ in range(n_search):
        client.get("/search", params={"q": "ivc filter"}, headers=headers)
    for _ in range(m_nav):
        client.get("/search", params={"q": "ivc filter", "page": 2},
                   headers=headers)
    for _ in range(k_reject):
        client.get("/search", params={"q": "a* b* c* d* e*"}, headers=headers)
    audit = app.state.audit
    assert len(audit.query(action="search")) == n_search
    assert len(audit.query(action="page_nav")) == m_nav
    assert len(audit.query(action="rejected_query")) == k_reject
    rec = audit.query(action="search")[0]
    assert rec.user_id == "sue" and rec.query_text == "ivc filter"
    assert rec.result_count == 16 and rec.page_number == 1


def test_audit_endpoint_admin_only():
    client, _, _ = build()
    headers = login(client)
    assert client.get("/audit", headers=headers).status_code == 403
    adm = login(client, "adm")
    body = client.get("/audit", headers=adm).json()
    actions = [r["action"] for r in body["records"]]
    assert actions.count("login") == 2


def test_audit_filters_by_user_and_action():
    client, _, _ = build()
    sue = login(client)
    client.get("/search", params={"q": "ivc"}, headers=sue)
    adm = login(client, "adm")
    body = client.get("/audit", params={"user": "sue", "action": "search"},
                      headers=adm).json()
    assert len(body["records"]) == 1
    assert body["records"][0]["user_id"] == "sue"


# -- export and de-identification -------------------------------------------


def test_export_denied_for_searcher_tier():
    client, _, _ = build()
    headers = login(client)
    resp = client.post("/export", json={"q": "ivc"}, headers=headers)
    assert resp.status_code == 403


def test_export_deidentifies_documents():
    client, _, _ = build()
    headers = login(client, "rita", tier="researcher")
    body = client.post("/export", json={"q": "ivc filter"},
                       headers=headers).json()
    assert body["protocol_tag"] == "IRB-42"
    assert body["requested_by"] == "rita"
    assert len(body["documents"]) == 1
    doc = body["documents"][0]
    assert doc["doc_id"].startswith("anon-")
    fields = doc["fields"]
    assert fields["PatientID"].startswith("anon-")
    assert fields["PatientName"].startswith("anon-")
    # the name leaked into Findings is scrubbed too
    assert "Alice" not in fields["Findings"]
    assert "Carter" not in fields["Findings"].replace(
        fields["PatientName"], "")
    for phi in ("111222", "Alice Carter", "acc1"):
        assert phi not in str(body["documents"])


def test_export_not_capped_at_page_size():
    client, _, _ = build(n_filler=25)
    headers = login(client, "rita", tier="researcher")
    body = client.post("/export", json={"q": "ivc filter"},
                       headers=headers).json()
    assert len(body["documents"]) == 26


def test_export_is_audited():
    client, _, app = build()
    headers = login(client, "rita", tier="researcher")
    client.post("/export", json={"q": "ivc"}, headers=headers)
    records = app.state.audit.query(action="export")
    assert len(records) == 1 and records[0].user_id == "rita"


def test_surrogates_stable_within_export_but_differ_across():
    client, _, _ = build()
    headers = login(client, "rita", tier="researcher")
    b1 = client.post("/export", json={"q": "ivc filter"},
                     headers=headers).json()
    b2 = client.post("/export", json={"q": "ivc filter"},
                     headers=headers).json()
    f1, f2 = b1["documents"][0]["fields"], b2["documents"][0]["fields"]
    # within one bundle, the same name maps to one surrogate everywhere
    assert f1["PatientName"] in f1["Findings"]
    # across bundles the per-export nonce changes every surrogate
    assert f1["PatientName"] != f2["PatientName"]
    assert b1["documents"][0]["doc_id"] != b2["documents"][0]["doc_id"]


def test_deidentifier_scrub_is_case_insensitive():
    deid = Deidentifier(("PatientName",), b"k")
    out = deid.apply({"PatientName": "Alice Carter",
                      "Findings": "Seen ALICE CARTER and alice carter."})
    assert "alice" not in out["Findings"].casefold().replace(
        out["PatientName"].casefold(), "")
    assert out["Findings"].count(out["PatientName"]) == 2


def test_deidentifier_requires_phi_fields():
    with pytest.raises(ServiceError):
        Deidentifier((), b"k")


def test_image_link_template():
    assert image_link("acc9", "") is None
    assert image_link("acc9", "https://v/{doc_id}") == "https://v/acc9"
