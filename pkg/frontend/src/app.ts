/** Single-page search client: query box, accordion result list capped at
 * ten rows, pagination with direct page entry, and a responsive layout
 * that collapses to a single column below 640 px.
 *
 * Query + filters + page fully determine the rendered list; re-rendering
 * from the same state reproduces the same DOM.
 */

import { ApiClient, ApiError, SearchResponse } from "./api.js";

export const MOBILE_BREAKPOINT_PX = 640;
export const MAX_VISIBLE_ROWS = 10;

export type LayoutMode = "desktop" | "mobile";

export function layoutMode(viewportWidth: number): LayoutMode {
  return viewportWidth < MOBILE_BREAKPOINT_PX ? "mobile" : "desktop";
}

export interface AppState {
  query: string;
  page: number;
  modality: string;
  expandedDocId: string | null;
  result: SearchResponse | null;
  error: string | null;
  layout: LayoutMode;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class App {
  state: AppState;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private viewportWidth: () => number = () => window.innerWidth,
  ) {
    this.state = {
      query: "",
      page: 1,
      modality: "",
      expandedDocId: null,
      result: null,
      error: null,
      layout: layoutMode(this.viewportWidth()),
    };
    this.render();
  }

  /** One search API call per navigation (new query or page change). */
  async navigate(query: string, page: number): Promise<void> {
    this.state.query = query;
    this.state.page = page;
    this.state.expandedDocId = null;
    try {
      this.state.result = await this.api.search({
        q: query,
        page,
        modality: this.state.modality || undefined,
      });
      this.state.error = null;
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") return;
      this.state.result = null;
      this.state.error = err instanceof ApiError ? err.reason : String(err);
    }
    this.render();
  }

  /** Re-derive the layout from the viewport; query/page state persists. */
  onResize(): void {
    const mode = layoutMode(this.viewportWidth());
    if (mode !== this.state.layout) {
      this.state.layout = mode;
      this.render();
    }
  }

  toggleRow(docId: string): void {
    this.state.expandedDocId = this.state.expandedDocId === docId ? null : docId;
    this.render();
  }

  render(): void {
    const doc = this.root.ownerDocument;
    this.root.textContent = "";
    this.root.classList.toggle("mobile", this.state.layout === "mobile");
    this.root.classList.toggle("desktop", this.state.layout === "desktop");
    this.root.append(
      this.renderSearchForm(doc),
      this.renderFilters(doc),
      this.renderResults(doc),
      this.renderPagination(doc),
    );
  }

  private renderSearchForm(doc: Document): HTMLElement {
    const form = el(doc, "form", "search-form");
    const input = el(doc, "input", "query-input");
    input.type = "search";
    input.name = "q";
    input.value = this.state.query;
    const button = el(doc, "button", "search-button", "Search");
    button.type = "submit";
    form.append(input, button);
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.navigate(input.value, 1);
    });
    if (this.api.hasTier("researcher")) {
      const exp = el(doc, "button", "export-button", "Export");
      exp.type = "button";
      exp.addEventListener("click", () => {
        void this.api.exportBundle(this.state.query);
      });
      form.append(exp);
    }
    return form;
  }

  private renderFilters(doc: Document): HTMLElement {
    // On mobile the filters fold into a collapsible drawer.
    const container =
      this.state.layout === "mobile"
        ? el(doc, "details", "filters drawer")
        : el(doc, "div", "filters");
    if (container instanceof HTMLDetailsElement) {
      container.append(el(doc, "summary", "", "Filters"));
    }
    const select = el(doc, "select", "modality-select");
    for (const value of ["", "CT", "MRI", "XR", "US"]) {
      const opt = el(doc, "option", "", value || "Any modality");
      opt.value = value;
      select.append(opt);
    }
    select.value = this.state.modality;
    select.addEventListener("change", () => {
      this.state.modality = select.value;
      void this.navigate(this.state.query, 1);
    });
    container.append(select);
    return container;
  }

  private renderResults(doc: Document): HTMLElement {
    const list = el(doc, "div", "results");
    if (this.state.error) {
      list.append(el(doc, "p", "error", this.state.error));
      return list;
    }
    const result = this.state.result;
    if (!result) return list;
    list.append(
      el(
        doc,
        "p",
        "summary-line",
        `${result.total_hits} hits (${result.elapsed_ms.toFixed(0)} ms)`,
      ),
    );
    // Never hold or render more than ten report rows, whatever arrives.
    for (const hit of result.hits.slice(0, MAX_VISIBLE_ROWS)) {
      const expanded = this.state.expandedDocId === hit.doc_id;
      const row = el(doc, "article", expanded ? "row expanded" : "row collapsed");
      row.dataset.docId = hit.doc_id;
      // Copy suppression applies to collapsed rows only; expanded report
      // text stays selectable.
      row.style.userSelect = expanded ? "text" : "none";

      const header = el(doc, "header", "row-header");
      header.append(
        el(doc, "span", "row-title", String(hit.fields["StudyDescription"] ?? hit.doc_id)),
        el(doc, "span", "row-date", String(hit.fields["StudyDatetime"] ?? "")),
        el(doc, "span", "row-modality", String(hit.fields["Modality"] ?? "")),
        el(doc, "span", "row-score", hit.score.toFixed(2)),
      );
      header.addEventListener("click", () => this.toggleRow(hit.doc_id));
      row.append(header);

      if (expanded) {
        const body = el(doc, "div", "row-body");
        for (const name of ["Findings", "Impression"]) {
          const value = hit.fields[name];
          if (value) {
            body.append(el(doc, "h4", "", name), el(doc, "p", "", String(value)));
          }
        }
        if (hit.image_link) {
          const link = el(doc, "a", "image-link", "Open images");
          link.href = hit.image_link;
          link.target = "_blank";
          body.append(link);
        }
        row.append(body);
      }
      list.append(row);
    }
    return list;
  }

  private renderPagination(doc: Document): HTMLElement {
    const nav = el(doc, "nav", "pagination");
    const result = this.state.result;
    // Hidden whenever everything fits on one page.
    if (!result || result.total_pages <= 1) {
      nav.hidden = true;
      return nav;
    }
    const prev = el(doc, "button", "page-prev", "Previous");
    prev.type = "button";
    prev.disabled = result.page <= 1;
    prev.addEventListener("click", () => {
      void this.navigate(this.state.query, result.page - 1);
    });
    const next = el(doc, "button", "page-next", "Next");
    next.type = "button";
    next.disabled = result.page >= result.total_pages;
    next.addEventListener("click", () => {
      void this.navigate(this.state.query, result.page + 1);
    });
    const label = el(doc, "span", "page-label", `Page ${result.page} of ${result.total_pages}`);
    const input = el(doc, "input", "page-input");
    input.type = "number";
    input.min = "1";
    input.max = String(result.total_pages);
    input.value = String(result.page);
    const go = el(doc, "button", "page-go", "Go");
    go.type = "button";
    go.addEventListener("click", () => {
      const target = Number(input.value);
      if (Number.isInteger(target) && target >= 1 && target <= result.total_pages) {
        void this.navigate(this.state.query, target);
      }
    });
    nav.append(prev, label, input, go, next);
    return nav;
  }
}

export function mount(
  root: HTMLElement,
  api: ApiClient,
  viewportWidth?: () => number,
): App {
  const app = new App(root, api, viewportWidth);
  root.ownerDocument.defaultView?.addEventListener("resize", () => app.onResize());
  return app;
}
