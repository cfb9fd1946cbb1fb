"""Pydantic request/response models for the orchestrator service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class BackendsSpec(BaseModel):
    """How a request wants its model backends built.

    kind=auto uses the UR_BACKENDS endpoints config when set, else the
    deterministic mocks. kind=mock accepts a fixture plant manifest (keys
    the perception mocks) and an optional chat script.
    """

    kind: Literal["auto", "mock", "http"] = "auto"
    fixture: str | None = None
    script: list[str] | None = None
    config: str | None = None
    embed_dim: int = 64
    embed_seed: int = 0


class BudgetSpec(BaseModel):
    max_tokens: int = 10000
    pixels_per_token_side: int = 28


class AbstractRequest(BaseModel):
    image: str
    chunks: int = 10
    budget: BudgetSpec = Field(default_factory=BudgetSpec)
    out: str | None = None
    backends: BackendsSpec = Field(default_factory=BackendsSpec)


class AbstractResponse(BaseModel):
    index: dict
    saved_to: str | None
    chunk_count: int
    total_caption_tokens: int
    raw_token_estimate: int


class RetrieveRequest(BaseModel):
    index: str
    query: str
    topk: int = 5
    backends: BackendsSpec = Field(default_factory=BackendsSpec)


class ScoredChunkModel(BaseModel):
    chunk_id: int
    score: float
    caption: str
    bbox: list[int]


class RetrieveResponse(BaseModel):
    results: list[ScoredChunkModel]
    rendered: str


class QuestionPayload(BaseModel):
    id: str = "q0"
    question: str
    options: list[str]
    answer: str | None = None
    subset: str = "satellite"
    level: str = "micro"
    language: str = "en"


class EpisodeConfigModel(BaseModel):
    max_tool_calls: int = 12
    max_parse_retries: int = 2
    max_model_turns: int = 20
    default_chunk_num: int = 10
    retrieval_topk: int = 5


class AskRequest(BaseModel):
    image: str
    question: QuestionPayload
    mode: Literal["agent", "e2e", "end_to_end"] = "agent"
    backends: BackendsSpec = Field(default_factory=BackendsSpec)
    config: EpisodeConfigModel = Field(default_factory=EpisodeConfigModel)
    e2e_budget: BudgetSpec = Field(default_factory=BudgetSpec)


class AskResponse(BaseModel):
    question_id: str
    status: str
    final_answer: str | None
    correct: bool | None
    tool_counts: dict[str, int]
    model_turns: int
    transcript: list[dict]


class EvalRequest(BaseModel):
    manifest: str
    mode: Literal["agent", "e2e", "end_to_end"] = "agent"
    backends: BackendsSpec = Field(default_factory=BackendsSpec)
    config: EpisodeConfigModel = Field(default_factory=EpisodeConfigModel)
    parallelism: int = 4
    out: str | None = None
    episodes_dir: str | None = None
    e2e_budget: BudgetSpec = Field(default_factory=BudgetSpec)


class EvalResponse(BaseModel):
    report: dict
    saved_to: str | None
    episodes_dir: str | None


class DatagenRequest(BaseModel):
    image: str
    tile: int = 1024
    out: str
    backends: BackendsSpec = Field(default_factory=BackendsSpec)
    seed: int = 0
    regional: int = 2
    global_: int = Field(default=2, alias="global")
    subset: str = "satellite"
    filter: bool = True

    model_config = {"populate_by_name": True}


class DatagenResponse(BaseModel):
    out: str
    entries: int
    stats: dict


class StatsRequest(BaseModel):
    image: str
    backends: BackendsSpec = Field(default_factory=BackendsSpec)
    vocabulary: list[str] | None = None
    tile: int = 1024


class StatsResponse(BaseModel):
    object_count: int


class FixtureRequest(BaseModel):
    seed: int = 0
    width: int
    height: int
    plants: dict
    out: str
    subset: str | None = None


class FixtureResponse(BaseModel):
    image: str
    plants: str
    questions: str
    n_plants: int
    n_questions: int


class ErrorBody(BaseModel):
    code: str
    message: str
