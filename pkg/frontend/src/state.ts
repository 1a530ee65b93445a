// View state and transitions. Pure data in, pure data out: the DOM layer
// renders whatever the latest state says, and stale responses (an older
// request resolving after a newer one) are dropped by sequence number.

import type { SearchResponse } from "./api.js";

export interface QueryRecord {
  query: string;
  k: number;
  hitCount: number | null;
}

export type Status = "idle" | "loading" | "ready" | "error";

export interface SearchViewState {
  query: string;
  k: number;
  status: Status;
  response: SearchResponse | null;
  latencyMs: number | null;
  error: string | null;
  history: QueryRecord[];
  requestSeq: number;
  appliedSeq: number;
}

export function initialState(): SearchViewState {
  return {
    query: "",
    k: 10,
    status: "idle",
    response: null,
    latencyMs: null,
    error: null,
    history: [],
    requestSeq: 0,
    appliedSeq: 0,
  };
}

export function canSubmit(query: string): boolean {
  return query.trim().length > 0;
}

export function beginSearch(
  state: SearchViewState,
  query: string,
  k: number,
): { state: SearchViewState; requestId: number } {
  if (!canSubmit(query)) {
    throw new Error("cannot submit an empty query");
  }
  const requestId = state.requestSeq + 1;
  return {
    state: {
      ...state,
      query,
      k,
      status: "loading",
      error: null,
      history: [{ query, k, hitCount: null }, ...state.history],
      requestSeq: requestId,
    },
    requestId,
  };
}

function isStale(state: SearchViewState, requestId: number): boolean {
  return requestId !== state.requestSeq || requestId <= state.appliedSeq;
}

export function applySuccess(
  state: SearchViewState,
  requestId: number,
  response: SearchResponse,
  latencyMs: number,
): SearchViewState {
  if (isStale(state, requestId)) {
    return state;
  }
  const history = state.history.slice();
  if (history.length > 0 && history[0].hitCount === null) {
    history[0] = { ...history[0], hitCount: response.hits.length };
  }
  return {
    ...state,
    status: "ready",
    response,
    latencyMs,
    error: null,
    history,
    appliedSeq: requestId,
  };
}

export function applyFailure(
  state: SearchViewState,
  requestId: number,
  message: string,
): SearchViewState {
  if (isStale(state, requestId)) {
    return state;
  }
  // previous results stay on screen; only the banner and status change
  return {
    ...state,
    status: "error",
    error: message,
    latencyMs: null,
    appliedSeq: requestId,
  };
}
