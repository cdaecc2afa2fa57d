"""FastAPI application over a loaded rewrite system.

Artifacts are loaded once and never mutated, so the app is safe to serve
concurrently. The /rewrite endpoint answers exactly like the one-shot
command-line rewrite against the same artifacts.
"""

from fastapi import FastAPI

from collabqr.pipeline import RewriteSystem
from collabqr.service.schemas import HealthResponse, RewriteRequest, RewriteResponse


def create_app(system: RewriteSystem) -> FastAPI:
    app = FastAPI(title="collabqr", docs_url=None, redoc_url=None)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(
            status="ok",
            users=len(system.graph.user_ids),
            entities=len(system.graph.entity_ids),
            index_users=len(system.indexes),
        )

    @app.post("/rewrite", response_model=RewriteResponse)
    def rewrite(request: RewriteRequest) -> RewriteResponse:
        decision = system.rewrite(request.user_id, request.query)
        return RewriteResponse(
            triggered=decision.triggered,
            rewrite=decision.rewrite,
            score=decision.score,
        )

    return app
