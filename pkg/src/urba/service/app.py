"""The orchestrator service: core operations behind a FastAPI app.

File paths in requests are interpreted on the service host (this is a
local orchestrator, typically run next to the data). Errors surface as
``{code, message}``: 400 for invalid input, 502 for backend failures.
"""

from __future__ import annotations

import os

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..abstraction import abstract_image, index_to_dict, load_index, save_index
from ..agent import EpisodeConfig, EpisodeStatus, run_episode
from ..backends import (
    UR_BACKENDS_ENV,
    Backends,
    backends_from_endpoints,
    load_endpoints,
)
from ..backends.mocks import mock_backends
from ..data_engine import object_count, run_pipeline, write_candidates
from ..errors import BackendError, BackendUnavailable, UrbaError
from ..fixtures import load_plant_manifest
from ..harness.evaluate import run_eval
from ..harness.fixture import generate_fixture
from ..harness.manifest import load_manifest
from ..image_store import TokenBudget, estimate_raw_tokens, open_image
from ..records import QuestionRecord
from ..retrieval import embed_corpus, render_results, retrieve
from . import models

_INPUT_ERRORS = (
    "invalid-argument",
    "missing-file",
    "unsupported-format",
    "corrupt-header",
    "bounds",
    "manifest",
    "index-corrupt",
    "version-mismatch",
    "malformed-call",
    "unknown-tool",
    "bad-args",
    "no-index",
)


def resolve_backends(spec: models.BackendsSpec) -> Backends:
    kind = spec.kind
    if kind == "auto":
        kind = "http" if os.environ.get(UR_BACKENDS_ENV) else "mock"
    if kind == "http":
        return backends_from_endpoints(load_endpoints(spec.config))
    manifest = load_plant_manifest(spec.fixture) if spec.fixture else None
    return mock_backends(
        manifest, script=spec.script, embed_dim=spec.embed_dim, embed_seed=spec.embed_seed
    )


def _budget(spec: models.BudgetSpec) -> TokenBudget:
    return TokenBudget(
        max_tokens=spec.max_tokens, pixels_per_token_side=spec.pixels_per_token_side
    )


def _episode_config(spec: models.EpisodeConfigModel) -> EpisodeConfig:
    return EpisodeConfig(
        max_tool_calls=spec.max_tool_calls,
        max_parse_retries=spec.max_parse_retries,
        max_model_turns=spec.max_model_turns,
        default_chunk_num=spec.default_chunk_num,
        retrieval_topk=spec.retrieval_topk,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="urba orchestrator", version=__version__)

    @app.exception_handler(UrbaError)
    async def urba_error_handler(_request: Request, exc: UrbaError):
        if isinstance(exc, (BackendUnavailable, BackendError)):
            status = 502
        elif exc.code in _INPUT_ERRORS:
            status = 400
        else:
            status = 500
        return JSONResponse(
            status_code=status, content={"code": exc.code, "message": exc.message}
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "service": "urba-orchestrator", "version": __version__}

    @app.post("/v1/abstract", response_model=models.AbstractResponse)
    def abstract(req: models.AbstractRequest):
        backends = resolve_backends(req.backends)
        ref = open_image(req.image)
        budget = _budget(req.budget)
        index = abstract_image(ref, req.chunks, backends.caption, budget)
        if req.out:
            save_index(index, req.out)
        return models.AbstractResponse(
            index=index_to_dict(index),
            saved_to=req.out,
            chunk_count=len(index.chunks),
            total_caption_tokens=index.total_caption_tokens,
            raw_token_estimate=estimate_raw_tokens(ref, budget),
        )

    @app.post("/v1/retrieve", response_model=models.RetrieveResponse)
    def retrieve_endpoint(req: models.RetrieveRequest):
        backends = resolve_backends(req.backends)
        index = load_index(req.index)
        eidx = embed_corpus(index, backends.embed)
        results = retrieve(eidx, req.query, req.topk, backends.embed)
        return models.RetrieveResponse(
            results=[
                models.ScoredChunkModel(
                    chunk_id=s.chunk_id,
                    score=s.score,
                    caption=s.caption,
                    bbox=s.region.to_list(),
                )
                for s in results
            ],
            rendered=render_results(results),
        )

    @app.post("/v1/ask", response_model=models.AskResponse)
    def ask(req: models.AskRequest):
        backends = resolve_backends(req.backends)
        q = req.question
        record = QuestionRecord(
            id=q.id,
            image=req.image,
            subset=q.subset,
            level=q.level,
            question=q.question,
            options=tuple(q.options),
            answer=q.answer or "A",
            language=q.language,
        )
        mode = "end_to_end" if req.mode in ("e2e", "end_to_end") else "agent"
        _report, outcomes = run_eval(
            [record],
            mode,
            backends,
            _episode_config(req.config),
            parallelism=1,
            e2e_budget=_budget(req.e2e_budget),
        )
        o = outcomes[0]
        correct = o.correct if q.answer else None
        return models.AskResponse(
            question_id=o.question_id,
            status=o.status,
            final_answer=o.final_answer,
            correct=correct,
            tool_counts=o.tool_counts,
            model_turns=o.model_turns,
            transcript=list(o.transcript),
        )

    @app.post("/v1/eval", response_model=models.EvalResponse)
    def eval_endpoint(req: models.EvalRequest):
        backends = resolve_backends(req.backends)
        records = load_manifest(req.manifest)
        mode = "end_to_end" if req.mode in ("e2e", "end_to_end") else "agent"
        report, _outcomes = run_eval(
            records,
            mode,
            backends,
            _episode_config(req.config),
            parallelism=req.parallelism,
            episodes_dir=req.episodes_dir,
            e2e_budget=_budget(req.e2e_budget),
        )
        if req.out:
            with open(req.out, "w", encoding="utf-8") as fh:
                fh.write(report.to_json())
        return models.EvalResponse(
            report=report.to_dict(), saved_to=req.out, episodes_dir=req.episodes_dir
        )

    @app.post("/v1/datagen", response_model=models.DatagenResponse)
    def datagen(req: models.DatagenRequest):
        backends = resolve_backends(req.backends)
        ref = open_image(req.image)
        entries, stats = run_pipeline(
            ref,
            backends.vlm,
            backends.vlm if req.filter else None,
            tile=req.tile,
            counts={"regional": req.regional, "global": req.global_},
            seed=req.seed,
            subset=req.subset,
        )
        write_candidates(entries, req.out)
        return models.DatagenResponse(
            out=req.out,
            entries=len(entries),
            stats={
                "tiles": stats.tiles,
                "micro": stats.micro,
                "composed": stats.composed,
                "rejected_tiles": stats.rejected_tiles,
                "shortfall": stats.shortfall,
                "statuses": stats.statuses,
            },
        )

    @app.post("/v1/stats/object-count", response_model=models.StatsResponse)
    def stats(req: models.StatsRequest):
        backends = resolve_backends(req.backends)
        ref = open_image(req.image)
        vocab = tuple(req.vocabulary) if req.vocabulary else None
        kwargs = {"tile": req.tile}
        if vocab:
            count = object_count(ref, backends.ground, vocab, **kwargs)
        else:
            count = object_count(ref, backends.ground, **kwargs)
        return models.StatsResponse(object_count=count)

    @app.post("/v1/fixture", response_model=models.FixtureResponse)
    def fixture(req: models.FixtureRequest):
        result = generate_fixture(
            req.seed, req.width, req.height, req.plants, req.out, subset=req.subset
        )
        return models.FixtureResponse(
            image=result.image_path,
            plants=result.plants_path,
            questions=result.questions_path,
            n_plants=len(result.manifest.plants),
            n_questions=len(result.records),
        )

    return app
