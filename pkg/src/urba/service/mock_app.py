"""Mock backend server: the /v1/* wire protocol over deterministic mocks.

Serves all five roles from one app. Protocol errors are non-200 with
``{code, message}``; oversized payloads get 413 payload-too-large.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from ..backends import DEFAULT_PAYLOAD_CAP
from ..backends.http import decode_image_b64
from ..backends.mocks import (
    HashEmbedder,
    MarkerCaptioner,
    MarkerGrounder,
    MarkerVlm,
    RuleChat,
    ScriptedChat,
)
from ..errors import BackendError, UrbaError
from ..fixtures import PlantManifest, load_plant_manifest


class ChatRequest(BaseModel):
    messages: list[dict]


class CaptionRequest(BaseModel):
    image_b64: str


class VlmRequest(BaseModel):
    image_b64: str
    prompt: str


class GroundRequest(BaseModel):
    image_b64: str
    keyword: str


class EmbedRequest(BaseModel):
    texts: list[str]


def create_mock_app(
    manifest: PlantManifest | str | None = None,
    *,
    script: list[str] | None = None,
    payload_cap: int = DEFAULT_PAYLOAD_CAP,
    embed_dim: int = 64,
    embed_seed: int = 0,
) -> FastAPI:
    if isinstance(manifest, str):
        manifest = load_plant_manifest(manifest)
    chat = ScriptedChat(script) if script is not None else RuleChat({})
    captioner = MarkerCaptioner(manifest)
    vlm = MarkerVlm(manifest)
    grounder = MarkerGrounder(manifest)
    embedder = HashEmbedder(dim=embed_dim, seed=embed_seed)

    app = FastAPI(title="urba mock backends")

    @app.exception_handler(UrbaError)
    async def urba_error_handler(_request: Request, exc: UrbaError):
        if exc.code == "payload-too-large":
            status = 413
        elif isinstance(exc, BackendError):
            status = 503
        else:
            status = 400
        return JSONResponse(
            status_code=status, content={"code": exc.code, "message": exc.message}
        )

    def _image(b64: str) -> bytes:
        if len(b64) > payload_cap:
            raise UrbaError(
                f"payload {len(b64)} bytes exceeds cap {payload_cap}",
                code="payload-too-large",
            )
        return decode_image_b64(b64)

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "roles": ["chat", "caption", "vlm", "ground", "embed"],
            "model": "urba-mocks",
            "fixture": manifest.image if manifest else None,
        }

    @app.post("/v1/chat")
    def chat_endpoint(req: ChatRequest):
        return {"text": chat.chat(req.messages)}

    @app.post("/v1/caption")
    def caption_endpoint(req: CaptionRequest):
        return {"text": captioner.caption(_image(req.image_b64))}

    @app.post("/v1/vlm")
    def vlm_endpoint(req: VlmRequest):
        return {"text": vlm.vlm(_image(req.image_b64), req.prompt)}

    @app.post("/v1/ground")
    def ground_endpoint(req: GroundRequest):
        boxes = grounder.ground(_image(req.image_b64), req.keyword)
        return {
            "boxes": [
                {"bbox": b.bbox.to_list(), "score": b.score, "label": b.label}
                for b in boxes
            ]
        }

    @app.post("/v1/embed")
    def embed_endpoint(req: EmbedRequest):
        vectors = embedder.embed(req.texts)
        return {"vectors": [v.values.tolist() for v in vectors], "dim": embedder.dim}

    return app
