// DOM rendering. hitViews() is the pure projection from an API response
// to what gets drawn; the render functions below write it into
// containers without any re-ranking or filtering.

import type { SearchResponse } from "./api.js";
import type { QueryRecord, SearchViewState } from "./state.js";

export interface HitView {
  rank: number;
  id: string;
  scoreText: string;
  scorePercent: number;
  language: string;
  snippet: string;
  sourcePath: string;
}

export function hitViews(response: SearchResponse): HitView[] {
  return response.hits.map((hit) => ({
    rank: hit.rank,
    id: hit.id,
    scoreText: hit.score.toFixed(4),
    scorePercent: Math.min(100, Math.max(0, Math.round(((hit.score + 1) / 2) * 100))),
    language: hit.language,
    snippet: hit.snippet,
    sourcePath: hit.source_path,
  }));
}

export function renderResults(doc: Document, container: Element, views: HitView[]): void {
  const items: Element[] = views.map((view) => {
    const item = doc.createElement("li");
    item.className = "hit";
    item.setAttribute("data-id", view.id);

    const header = doc.createElement("div");
    header.className = "hit-header";

    const rank = doc.createElement("span");
    rank.className = "hit-rank";
    rank.textContent = `#${view.rank}`;
    header.appendChild(rank);

    const id = doc.createElement("span");
    id.className = "hit-id";
    id.textContent = view.id;
    header.appendChild(id);

    const badge = doc.createElement("span");
    badge.className = `badge badge-${view.language}`;
    badge.textContent = view.language;
    header.appendChild(badge);

    const score = doc.createElement("span");
    score.className = "hit-score";
    score.textContent = view.scoreText;
    header.appendChild(score);

    const bar = doc.createElement("div");
    bar.className = "score-bar";
    const fill = doc.createElement("div");
    fill.className = "score-bar-fill";
    (fill as HTMLElement).style.width = `${view.scorePercent}%`;
    bar.appendChild(fill);

    const snippet = doc.createElement("pre");
    snippet.className = "hit-snippet";
    snippet.textContent = view.snippet;

    item.appendChild(header);
    item.appendChild(bar);
    item.appendChild(snippet);
    return item;
  });
  container.replaceChildren(...items);
}

export function renderError(doc: Document, banner: Element, message: string | null): void {
  if (message === null) {
    banner.replaceChildren();
    banner.setAttribute("hidden", "hidden");
    return;
  }
  banner.removeAttribute("hidden");
  const text = doc.createElement("span");
  text.textContent = message;
  banner.replaceChildren(text);
}

export function renderHistory(
  doc: Document,
  container: Element,
  records: QueryRecord[],
  onPick: (record: QueryRecord) => void,
): void {
  const items = records.map((record) => {
    const item = doc.createElement("li");
    const button = doc.createElement("button");
    button.className = "history-entry";
    const hits = record.hitCount === null ? "..." : `${record.hitCount}`;
    button.textContent = `${record.query} (k=${record.k}, ${hits} hits)`;
    button.addEventListener("click", () => onPick(record));
    item.appendChild(button);
    return item;
  });
  container.replaceChildren(...items);
}

export function renderStatus(el: Element, state: SearchViewState): void {
  if (state.status === "loading") {
    el.textContent = "searching...";
  } else if (state.status === "ready" && state.response !== null) {
    const latency = state.latencyMs === null ? "" : ` in ${state.latencyMs.toFixed(0)} ms`;
    el.textContent = `${state.response.hits.length} hits${latency}`;
  } else if (state.status === "error") {
    el.textContent = "search failed";
  } else {
    el.textContent = "";
  }
}
