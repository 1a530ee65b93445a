"""Read-only HTTP facade over a built index and its checkpoint.

The service loads everything at startup (refusing to start on a stale
index), answers searches from the immutable index snapshot, and serves
the web UI's static assets at the root when a static directory is
available.
"""

from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import HTMLResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .checkpoint import load_checkpoint
from .index import load_index, search

API_VERSION = 1

STATIC_DIR_ENV = "CODESEARCH_STATIC"

_FALLBACK_PAGE = """<!doctype html>
<html><head><title>codesearch</title></head>
<body>
<h1>codesearch service</h1>
<p>The web UI is not bundled with this deployment. API endpoints:</p>
<ul>
<li><code>GET /api/search?q=&lt;text&gt;&amp;k=&lt;int&gt;</code></li>
<li><code>GET /api/health</code></li>
<li><code>GET /api/stats</code></li>
</ul>
</body></html>
"""


class SearchHitModel(BaseModel):
    rank: int
    id: str
    score: float
    language: str
    snippet: str
    source_path: str


class SearchResponse(BaseModel):
    v: int = API_VERSION
    query: str
    k: int
    hits: list[SearchHitModel]


class HealthResponse(BaseModel):
    v: int = API_VERSION
    status: str
    fingerprint: str
    pool_size: int


class StatsResponse(BaseModel):
    v: int = API_VERSION
    count: int
    dim: int
    fingerprint: str
    index_version: int
    languages: dict[str, int]


def create_app(
    index_path: str | Path,
    checkpoint_path: str | Path,
    static_dir: str | Path | None = None,
) -> FastAPI:
    loaded = load_checkpoint(checkpoint_path)
    bundle = loaded.bundle
    bundle.eval_mode()
    index = load_index(index_path)
    if bundle.fingerprint() != index.fingerprint:
        # refuse to start rather than serve results from a stale index
        from .index import StaleIndexError

        raise StaleIndexError(
            f"index {index_path} was not built from checkpoint {checkpoint_path}"
        )

    app = FastAPI(title="codesearch", version="0.1.0")

    @app.get("/api/search", response_model=SearchResponse)
    def api_search(q: str = Query(default=""), k: int = Query(default=10)):
        if not q.strip():
            raise HTTPException(status_code=400, detail="missing query parameter q")
        if not 1 <= k <= 100:
            raise HTTPException(status_code=400, detail="k must be in [1, 100]")
        hits = search(index, bundle, q, k)
        return SearchResponse(
            query=q,
            k=k,
            hits=[SearchHitModel(**hit.to_dict()) for hit in hits],
        )

    @app.get("/api/health", response_model=HealthResponse)
    def api_health():
        return HealthResponse(status="ok", fingerprint=index.fingerprint, pool_size=len(index))

    @app.get("/api/stats", response_model=StatsResponse)
    def api_stats():
        return StatsResponse(
            count=len(index),
            dim=int(index.vectors.shape[1]),
            fingerprint=index.fingerprint,
            index_version=index.version,
            languages=index.languages(),
        )

    resolved_static = static_dir or os.environ.get(STATIC_DIR_ENV)
    if resolved_static and Path(resolved_static).is_dir():
        app.mount("/", StaticFiles(directory=str(resolved_static), html=True), name="webui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def root():
            return _FALLBACK_PAGE

    return app


def serve(
    index_path: str | Path,
    checkpoint_path: str | Path,
    host: str = "127.0.0.1",
    port: int = 8080,
    static_dir: str | Path | None = None,
) -> None:
    import uvicorn

    app = create_app(index_path, checkpoint_path, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
