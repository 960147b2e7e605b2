/** In-process fixture server implementing the slice of the HTTP API the
 * client uses, plus a fetch adapter that counts every request. */

import { SearchHit } from "../src/api.js";

export interface FixtureOptions {
  totalHits?: number;
  perPage?: number;
  tiers?: string[];
  oversizedPages?: boolean; // hostile mode: returns more than per_page hits
}

export class FixtureServer {
  calls: { path: string; method: string }[] = [];
  private totalHits: number;
  private perPage: number;
  private tiers: string[];
  private oversizedPages: boolean;

  constructor(options: FixtureOptions = {}) {
    this.totalHits = options.totalHits ?? 35;
    this.perPage = options.perPage ?? 10;
    this.tiers = options.tiers ?? ["searcher"];
    this.oversizedPages = options.oversizedPages ?? false;
  }

  get searchCalls(): number {
    return this.calls.filter((c) => c.path.startsWith("/search")).length;
  }

  fetch = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = new URL(String(input), "http://fixture");
    const method = init?.method ?? "GET";
    this.calls.push({ path: url.pathname + url.search, method });
    if (init?.signal?.aborted) {
      throw new DOMException("aborted", "AbortError");
    }

    if (url.pathname === "/auth/login") {
      const body = JSON.parse(String(init?.body ?? "{}"));
      if (body.password !== "pw") {
        return json(401, { code: "bad_credentials", reason: "invalid username or password" });
      }
      return json(200, {
        token: "tok-1",
        expires_at: "2025-06-02T00:00:00+00:00",
        tiers: this.tiers,
      });
    }

    if (!(init?.headers as Record<string, string>)?.["Authorization"]) {
      return json(401, { code: "unauthenticated", reason: "missing session token" });
    }

    if (url.pathname === "/search") {
      const q = url.searchParams.get("q") ?? "";
      const page = Number(url.searchParams.get("page") ?? "1");
      if (q.includes("*****")) {
        return json(400, { code: "query_rejected", reason: "max_wildcards" });
      }
      const totalPages = Math.ceil(this.totalHits / this.perPage);
      const first = (page - 1) * this.perPage;
      let count = Math.max(0, Math.min(this.perPage, this.totalHits - first));
      if (this.oversizedPages) count = this.totalHits;
      const hits: SearchHit[] = Array.from({ length: count }, (_, i) => ({
        doc_id: `acc${first + i}`,
        score: 10 - (first + i) * 0.01,
        fields: {
          StudyDescription: `CT abdomen ${first + i}`,
          StudyDatetime: "2025-05-01T09:00:00+00:00",
          Modality: "CT",
          Findings: `Findings body for document ${first + i}.`,
          Impression: "Stable.",
        },
        matched_terms: q.split(/\s+/).filter(Boolean),
      }));
      return json(200, {
        hits,
        page,
        per_page: this.perPage,
        total_hits: this.totalHits,
        total_pages: totalPages,
        elapsed_ms: 12.5,
      });
    }

    if (url.pathname === "/export" && method === "POST") {
      if (!this.tiers.includes("researcher") && !this.tiers.includes("admin")) {
        return json(403, { code: "tier_denied", reason: "export requires researcher tier" });
      }
      return json(200, { query: "", documents: [], protocol_tag: "IRB-1" });
    }

    return json(404, { code: "not_found", reason: `no route ${url.pathname}` });
  };
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
