"""Backend interfaces for the five external model roles.

Roles: decision chat, captioner, VLM, grounder, embedder. The data engine's
generator and filter roles reuse the chat and VLM interfaces. Deterministic
mocks live in :mod:`urba.backends.mocks`; HTTP clients speaking the /v1/*
wire protocol live in :mod:`urba.backends.http`.

The endpoints config file (pointed to by the ``UR_BACKENDS`` env var or
passed explicitly) maps role -> {url, timeout, retries, backoff}.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from ..errors import InvalidArgument, ManifestError
from ..geometry import BBox
from ..retrieval import Embedding

ROLES = ("chat", "caption", "vlm", "ground", "embed")

UR_BACKENDS_ENV = "UR_BACKENDS"

DEFAULT_PAYLOAD_CAP = 24 * 1024 * 1024  # bytes, post-encoding


@dataclass(frozen=True)
class GroundingBox:
    bbox: BBox
    score: float
    label: str

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidArgument(f"grounding score must be in [0,1], got {self.score}")


class ChatBackend(Protocol):
    def chat(self, messages: list[dict]) -> str: ...


class CaptionBackend(Protocol):
    def caption(self, image: bytes) -> str: ...


class VlmBackend(Protocol):
    def vlm(self, image: bytes, prompt: str) -> str: ...


class GroundBackend(Protocol):
    def ground(self, image: bytes, keyword: str) -> list[GroundingBox]: ...


class EmbedBackend(Protocol):
    def embed(self, texts: list[str]) -> list[Embedding]: ...


@dataclass
class Backends:
    """One client per role; any subset may be present."""

    chat: ChatBackend | None = None
    caption: CaptionBackend | None = None
    vlm: VlmBackend | None = None
    ground: GroundBackend | None = None
    embed: EmbedBackend | None = None


@dataclass(frozen=True)
class BackendEndpoint:
    role: str
    url: str
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.25

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidArgument(f"unknown backend role {self.role!r}")
        if self.retries < 0:
            raise InvalidArgument("retries must be >= 0")


def load_endpoints(path: str | Path | None = None) -> dict[str, BackendEndpoint]:
    """Read the role -> endpoint config; path defaults to $UR_BACKENDS."""
    if path is None:
        path = os.environ.get(UR_BACKENDS_ENV)
        if not path:
            raise ManifestError(f"no endpoints config: {UR_BACKENDS_ENV} is unset")
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"unreadable endpoints config {path}: {exc}") from exc
    endpoints = {}
    for role, cfg in raw.items():
        if role not in ROLES:
            raise ManifestError(f"unknown role {role!r} in endpoints config")
        endpoints[role] = BackendEndpoint(
            role=role,
            url=cfg["url"],
            timeout=float(cfg.get("timeout", 30.0)),
            retries=int(cfg.get("retries", 2)),
            backoff=float(cfg.get("backoff", 0.25)),
        )
    return endpoints


def backends_from_endpoints(
    endpoints: dict[str, BackendEndpoint], transport=None
) -> Backends:
    from .http import HttpCaption, HttpChat, HttpEmbed, HttpGround, HttpVlm

    makers = {
        "chat": HttpChat,
        "caption": HttpCaption,
        "vlm": HttpVlm,
        "ground": HttpGround,
        "embed": HttpEmbed,
    }
    built = {
        role: makers[role](ep, transport=transport) for role, ep in endpoints.items()
    }
    return Backends(**built)
