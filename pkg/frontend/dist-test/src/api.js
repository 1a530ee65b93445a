// Typed client for the search service JSON API (schema version 1).
export class ApiError extends Error {
    constructor(message, status = null) {
        super(message);
        this.status = status;
    }
}
function asRecord(value, context) {
    if (typeof value !== "object" || value === null || Array.isArray(value)) {
        throw new ApiError(`malformed ${context} payload`);
    }
    return value;
}
export function parseSearchResponse(value) {
    const body = asRecord(value, "search");
    const hitsRaw = body.hits;
    if (!Array.isArray(hitsRaw)) {
        throw new ApiError("malformed search payload: hits is not an array");
    }
    const hits = hitsRaw.map((raw) => {
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
async function callJson(url, fetchImpl) {
    let response;
    try {
        response = await fetchImpl(url);
    }
    catch (err) {
        throw new ApiError(`service unreachable: ${err instanceof Error ? err.message : String(err)}`);
    }
    if (!response.ok) {
        throw new ApiError(`service returned HTTP ${response.status}`, response.status);
    }
    return response.json();
}
export async function fetchSearch(base, query, k, fetchImpl) {
    const url = `${base.replace(/\/$/, "")}/api/search?q=${encodeURIComponent(query)}&k=${k}`;
    return parseSearchResponse(await callJson(url, fetchImpl));
}
export async function fetchHealth(base, fetchImpl) {
    const body = asRecord(await callJson(`${base.replace(/\/$/, "")}/api/health`, fetchImpl), "health");
    return {
        v: typeof body.v === "number" ? body.v : 1,
        status: typeof body.status === "string" ? body.status : "unknown",
        fingerprint: typeof body.fingerprint === "string" ? body.fingerprint : "",
        pool_size: typeof body.pool_size === "number" ? body.pool_size : 0,
    };
}
