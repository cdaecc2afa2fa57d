"""Request and response bodies for the rewrite service."""

from pydantic import BaseModel, Field


class RewriteRequest(BaseModel):
    user_id: str = Field(min_length=1)
    query: str = Field(min_length=1)


class RewriteResponse(BaseModel):
    triggered: bool
    rewrite: str | None
    score: float


class HealthResponse(BaseModel):
    status: str
    users: int
    entities: int
    index_users: int
