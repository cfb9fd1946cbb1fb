"""Deterministic mock backends.

Perception mocks (caption/vlm/ground) decode marker glyph ids from the
pixels they receive and look up text in a fixture plant manifest, so mock
"perception" is checkable against the planted ground truth rather than
canned. The embed mock derives a unit vector from a seeded hash of the
exact text: identical texts embed identically (cosine 1.0), distinct texts
get reproducible pseudo-random directions.
"""

from __future__ import annotations

import hashlib
import json
import re

import numpy as np

from ..errors import BackendError, InvalidArgument
from ..fixtures import EMPTY_MANIFEST, PlantManifest
from ..image_store import decode_image_bytes
from ..markers import scan_markers
from ..retrieval import Embedding
from . import GroundingBox

NO_CONTENT = "[no notable content]"

_DECOYS = ("a fountain", "a windmill", "a lighthouse", "an obelisk", "a water tower")


def _normalize(text: str) -> str:
    return re.sub(r"[^a-z0-9 ]+", "", text.lower()).strip()


class ScriptedChat:
    """Replays a fixed list of responses; exhaustion is a backend error."""

    def __init__(self, script: list[str]):
        self._script = list(script)
        self._next = 0

    def chat(self, messages: list[dict]) -> str:
        if not messages:
            raise InvalidArgument("chat requires at least one message")
        if self._next >= len(self._script):
            raise BackendError(
                f"script exhausted after {len(self._script)} responses",
                code="script-exhausted",
            )
        text = self._script[self._next]
        self._next += 1
        return text


class RuleChat:
    """Maps a hash of the last message to canned text; unknown -> default."""

    def __init__(self, rules: dict[str, str], default: str = "FINAL ANSWER: A"):
        self._rules = dict(rules)
        self._default = default

    @staticmethod
    def key_for(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def chat(self, messages: list[dict]) -> str:
        if not messages:
            raise InvalidArgument("chat requires at least one message")
        return self._rules.get(self.key_for(messages[-1]["content"]), self._default)


class _MarkerMock:
    def __init__(self, manifest: PlantManifest | None = None):
        self.manifest = manifest or EMPTY_MANIFEST

    def _visible_plants(self, image: bytes):
        pixels = decode_image_bytes(image)
        plants = []
        for marker_id, bbox in scan_markers(pixels):
            plant = self.manifest.by_marker(marker_id)
            if plant is not None:
                plants.append((plant, bbox))
        return plants

    def _summary(self, plants) -> str:
        if not plants:
            return NO_CONTENT
        parts = [
            f"region contains marker {p.marker}: {p.caption}"
            for p, _ in sorted(plants, key=lambda t: t[0].marker)
        ]
        return "; ".join(parts)


class MarkerCaptioner(_MarkerMock):
    def caption(self, image: bytes) -> str:
        return self._summary(self._visible_plants(image))


class MarkerVlm(_MarkerMock):
    """Answers prompts from the visible plants' QA tables."""

    def vlm(self, image: bytes, prompt: str) -> str:
        plants = self._visible_plants(image)
        wanted = _normalize(prompt)
        for plant, _ in plants:
            for q, a in plant.vlm_qa:
                if _normalize(q) == wanted:
                    return a
        return self._summary(plants)


class MarkerQaGenerator(_MarkerMock):
    """Plays the data engine's generator: emits strict-JSON QA replies."""

    def vlm(self, image: bytes, prompt: str) -> str:
        plants = self._visible_plants(image)
        if "micro" in prompt.lower():
            qas = []
            for plant, _ in sorted(plants, key=lambda t: t[0].marker):
                qas.extend(plant.micro_qa)
            return json.dumps({"qas": qas[:2]}, ensure_ascii=False)
        classes = sorted({p.cls for p, _ in plants})
        if len(classes) < 2:
            return json.dumps({"qas": []})
        correct = " and ".join(classes[:2])
        decoys = [d for d in _DECOYS if d not in classes]
        options = [
            correct,
            f"{classes[0]} and {decoys[0]}",
            f"{decoys[1]} and {classes[1]}",
            f"{decoys[0]} and {decoys[2]}",
        ]
        slot = sum(p.marker for p, _ in plants) % 4
        options[0], options[slot] = options[slot], options[0]
        qa = {
            "question": f"Which pair of landmarks appears across these regions?",
            "options": options,
            "answer": "ABCD"[options.index(correct)],
        }
        return json.dumps({"qas": [qa]}, ensure_ascii=False)


class MarkerGrounder(_MarkerMock):
    """Keyword match against planted classes; boxes in received-image coords."""

    def ground(self, image: bytes, keyword: str) -> list[GroundingBox]:
        if not keyword:
            raise InvalidArgument("keyword must be non-empty")
        wanted = _normalize(keyword)
        hits = []
        for plant, bbox in self._visible_plants(image):
            cls = _normalize(plant.cls)
            if wanted and (wanted in cls or cls in wanted):
                hits.append((plant, bbox))
        hits.sort(key=lambda t: t[0].marker)
        boxes = [
            GroundingBox(bbox=bbox, score=max(0.1, round(0.9 - 0.1 * i, 6)), label=p.cls)
            for i, (p, bbox) in enumerate(hits)
        ]
        boxes.sort(key=lambda b: -b.score)
        return boxes


class ConstantVlm:
    """Always answers the same text; handy as a filter-model stand-in."""

    def __init__(self, text: str):
        self._text = text

    def vlm(self, image: bytes, prompt: str) -> str:
        return self._text


class HashEmbedder:
    """Unit vector from a seeded hash of the exact text (default dim 64)."""

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise InvalidArgument("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self.id = f"hash-embedder-d{dim}-s{seed}"

    def _vector(self, text: str) -> Embedding:
        digest = hashlib.sha256(f"{self.seed}\x00{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.dim)
        return Embedding(v / np.linalg.norm(v))

    def embed(self, texts: list[str]) -> list[Embedding]:
        if not texts:
            raise InvalidArgument("embed requires a non-empty list of texts")
        if any(not t for t in texts):
            raise InvalidArgument("embed requires non-empty texts")
        return [self._vector(t) for t in texts]


def mock_backends(
    manifest: PlantManifest | None = None,
    *,
    script: list[str] | None = None,
    embed_dim: int = 64,
    embed_seed: int = 0,
):
    """Full deterministic bundle keyed to a fixture manifest."""
    from . import Backends

    return Backends(
        chat=ScriptedChat(script) if script is not None else RuleChat({}),
        caption=MarkerCaptioner(manifest),
        vlm=MarkerVlm(manifest),
        ground=MarkerGrounder(manifest),
        embed=HashEmbedder(dim=embed_dim, seed=embed_seed),
    )
