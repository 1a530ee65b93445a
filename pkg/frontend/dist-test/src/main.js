// Browser wiring: reads the controls, drives state transitions, renders.
import { fetchSearch } from "./api.js";
import { renderError, renderHistory, renderResults, renderStatus, hitViews } from "./render.js";
import { applyFailure, applySuccess, beginSearch, canSubmit, initialState, } from "./state.js";
const base = window.location.origin;
function el(id) {
    const found = document.getElementById(id);
    if (!found) {
        throw new Error(`missing element #${id}`);
    }
    return found;
}
const queryInput = el("query");
const kInput = el("k");
const kValue = el("k-value");
const submitButton = el("submit");
const statusEl = el("status");
const errorBanner = el("error-banner");
const resultsEl = el("results");
const historyEl = el("history");
let state = initialState();
function render() {
    renderStatus(statusEl, state);
    renderError(document, errorBanner, state.status === "error" ? state.error : null);
    if (state.response !== null) {
        renderResults(document, resultsEl, hitViews(state.response));
    }
    renderHistory(document, historyEl, state.history, (record) => {
        queryInput.value = record.query;
        kInput.value = String(record.k);
        kValue.textContent = String(record.k);
        void submit();
    });
    submitButton.disabled = !canSubmit(queryInput.value);
}
async function submit() {
    const query = queryInput.value;
    if (!canSubmit(query)) {
        return;
    }
    const k = Number(kInput.value) || 10;
    const begun = beginSearch(state, query, k);
    state = begun.state;
    render();
    const started = performance.now();
    try {
        const response = await fetchSearch(base, query, k, fetch.bind(window));
        state = applySuccess(state, begun.requestId, response, performance.now() - started);
    }
    catch (err) {
        state = applyFailure(state, begun.requestId, err instanceof Error ? err.message : String(err));
    }
    render();
}
submitButton.addEventListener("click", () => void submit());
queryInput.addEventListener("keydown", (event) => {
    if (event.key === "Enter") {
        void submit();
    }
});
queryInput.addEventListener("input", () => {
    submitButton.disabled = !canSubmit(queryInput.value);
});
kInput.addEventListener("input", () => {
    kValue.textContent = kInput.value;
});
kValue.textContent = kInput.value;
render();
