// View state and transitions. Pure data in, pure data out: the DOM layer
// renders whatever the latest state says, and stale responses (an older
// request resolving after a newer one) are dropped by sequence number.
export function initialState() {
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
export function canSubmit(query) {
    return query.trim().length > 0;
}
export function beginSearch(state, query, k) {
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
function isStale(state, requestId) {
    return requestId !== state.requestSeq || requestId <= state.appliedSeq;
}
export function applySuccess(state, requestId, response, latencyMs) {
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
export function applyFailure(state, requestId, message) {
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
