/** Typed client for the search service HTTP+JSON API.
 *
 * The client is the only path to the backend: the UI never touches the
 * index directly. At most one search request is in flight; starting a
 * new one aborts the previous.
 */

export interface SearchHit {
  doc_id: string;
  score: number;
  fields: Record<string, unknown>;
  matched_terms: string[];
  image_link?: string;
  breakdown?: Record<string, number>;
}

export interface SearchResponse {
  hits: SearchHit[];
  page: number;
  per_page: number;
  total_hits: number;
  total_pages: number;
  elapsed_ms: number;
}

export interface SessionInfo {
  token: string;
  expires_at: string;
  tiers: string[];
}

export interface SearchParams {
  q: string;
  page: number;
  modality?: string;
  from?: string;
  to?: string;
  collapse?: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    public reason: string,
  ) {
    super(`${code}: ${reason}`);
  }
}

export class ApiClient {
  session: SessionInfo | null = null;
  private inflight: AbortController | null = null;

  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request(path: string, init: RequestInit = {}): Promise<unknown> {
    const headers: Record<string, string> = {
      ...(init.headers as Record<string, string> | undefined),
    };
    if (this.session) headers["Authorization"] = `Bearer ${this.session.token}`;
    const resp = await this.fetchFn(this.baseUrl + path, { ...init, headers });
    const body = (await resp.json()) as Record<string, unknown>;
    if (!resp.ok) {
      throw new ApiError(
        resp.status,
        String(body.code ?? "error"),
        String(body.reason ?? resp.statusText),
      );
    }
    return body;
  }

  async login(username: string, password: string, tier = "searcher"): Promise<SessionInfo> {
    const body = (await this.request("/auth/login", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ username, password, tier }),
    })) as unknown as SessionInfo;
    this.session = body;
    return body;
  }

  /** One GET /search per call; a newer call aborts the older one. */
  async search(params: SearchParams): Promise<SearchResponse> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    const qs = new URLSearchParams({ q: params.q, page: String(params.page) });
    if (params.modality) qs.set("modality", params.modality);
    if (params.from) qs.set("from", params.from);
    if (params.to) qs.set("to", params.to);
    if (params.collapse) qs.set("collapse", params.collapse);
    try {
      return (await this.request(`/search?${qs.toString()}`, {
        signal: controller.signal,
      })) as unknown as SearchResponse;
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }

  async exportBundle(q: string): Promise<unknown> {
    return this.request("/export", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ q }),
    });
  }

  hasTier(tier: string): boolean {
    const tiers = this.session?.tiers ?? [];
    return tiers.includes(tier) || tiers.includes("admin");
  }
}
