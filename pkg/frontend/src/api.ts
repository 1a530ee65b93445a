// Typed client for the search service JSON API (schema version 1).

export interface SearchHit {
  rank: number;
  id: string;
  score: number;
  language: string;
  snippet: string;
  source_path: string;
}

export interface SearchResponse {
  v: number;
  query: string;
  k: number;
  hits: SearchHit[];
}

export interface HealthResponse {
  v: number;
  status: string;
  fingerprint: string;
  pool_size: number;
}

export type FetchLike = (url: string) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}>;

export class ApiError extends Error {
  readonly status: number | null;

  constructor(message: string, status: number | null = null) {
    super(message);
    this.status = status;
  }
}

function asRecord(value: unknown, context: string): Record<string, unknown> {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new ApiError(`malformed ${context} payload`);
  }
  return value as Record<string, unknown>;
}

export function parseSearchResponse(value: unknown): SearchResponse {
  const body = asRecord(value, "search");
  const hitsRaw = body.hits;
  if (!Array.isArray(hitsRaw)) {
    throw new ApiError("malformed search payload: hits is not an array");
  }
  const hits: SearchHit[] = hitsRaw.map((raw) => {
    const hit = asRecord(raw, "hit");
    if (typeof hit.rank !== "number" || typeof hit.id !== "string" || typeof hit.score !== "number") {
      throw new ApiError("malformed search payload: bad hit fields");
    }
    return {
      rank: hit.rank,
      id: hit.id,
      score: hit.score,
      language: typeof hit.language === "string" ? hit.language : "unknown",
      snippet: typeof hit.snippet === "string" ? hit.snippet : "",
      source_path: typeof hit.source_path === "string" ? hit.source_path : "",
    };
  });
  return {
    v: typeof body.v === "number" ? body.v : 1,
    query: typeof body.query === "string" ? body.query : "",
    k: typeof body.k === "number" ? body.k : hits.length,
    hits,
  };
}

async function callJson(url: string, fetchImpl: FetchLike): Promise<unknown> {
  let response: Awaited<ReturnType<FetchLike>>;
  try {
    response = await fetchImpl(url);
  } catch (err) {
    throw new ApiError(`service unreachable: ${err instanceof Error ? err.message : String(err)}`);
  }
  if (!response.ok) {
    throw new ApiError(`service returned HTTP ${response.status}`, response.status);
  }
  return response.json();
}

export async function fetchSearch(
  base: string,
  query: string,
  k: number,
  fetchImpl: FetchLike,
): Promise<SearchResponse> {
  const url = `${base.replace(/\/$/, "")}/api/search?q=${encodeURIComponent(query)}&k=${k}`;
  return parseSearchResponse(await callJson(url, fetchImpl));
}

export async function fetchHealth(base: string, fetchImpl: FetchLike): Promise<HealthResponse> {
  const body = asRecord(
    await callJson(`${base.replace(/\/$/, "")}/api/health`, fetchImpl),
    "health",
  );
  return {
    v: typeof body.v === "number" ? body.v : 1,
    status: typeof body.status === "string" ? body.status : "unknown",
    fingerprint: typeof body.fingerprint === "string" ? body.fingerprint : "",
    pool_size: typeof body.pool_size === "number" ? body.pool_size : 0,
  };
}
