"""HTTP clients for the /v1/* backend wire protocol.

All requests are POSTed JSON; images cross the wire as base64-encoded PNG
inside the JSON body. Non-200 responses carry ``{code, message}`` and map
to typed errors; transport failures are retried exactly ``retries`` times
with exponential backoff before raising backend-unavailable.
"""

from __future__ import annotations

import base64
import time

import httpx

from ..errors import BackendError, BackendUnavailable, PayloadTooLarge
from ..geometry import BBox
from ..retrieval import Embedding
from . import DEFAULT_PAYLOAD_CAP, BackendEndpoint, GroundingBox


def encode_image_b64(image: bytes, cap: int = DEFAULT_PAYLOAD_CAP) -> str:
    encoded = base64.b64encode(image).decode("ascii")
    if len(encoded) > cap:
        raise PayloadTooLarge(
            f"encoded image payload {len(encoded)} bytes exceeds cap {cap}"
        )
    return encoded


def decode_image_b64(data: str) -> bytes:
    return base64.b64decode(data.encode("ascii"))


class _HttpClient:
    path = ""

    def __init__(self, endpoint: BackendEndpoint, *, transport=None, payload_cap: int = DEFAULT_PAYLOAD_CAP):
        self.endpoint = endpoint
        self.payload_cap = payload_cap
        self.id = f"{endpoint.role}@{endpoint.url}"
        self._client = httpx.Client(
            base_url=endpoint.url, timeout=endpoint.timeout, transport=transport
        )

    def _post(self, payload: dict) -> dict:
        last_exc: Exception | None = None
        for attempt in range(self.endpoint.retries + 1):
            if attempt and self.endpoint.backoff > 0:
                time.sleep(self.endpoint.backoff * (2 ** (attempt - 1)))
            try:
                resp = self._client.post(self.path, json=payload)
            except httpx.HTTPError as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = BackendError(
                    f"{self.path} returned {resp.status_code}", code="server-error"
                )
                continue
            if resp.status_code != 200:
                try:
                    body = resp.json()
                    code, message = body["code"], body["message"]
                except Exception:
                    code, message = "protocol", f"non-JSON error body ({resp.status_code})"
                if code == "payload-too-large":
                    raise PayloadTooLarge(message)
                raise BackendError(message, code=code)
            return resp.json()
        raise BackendUnavailable(
            f"{self.endpoint.role} backend unreachable at {self.endpoint.url}{self.path} "
            f"after {self.endpoint.retries + 1} attempts: {last_exc}"
        )

    def close(self) -> None:
        self._client.close()


class HttpChat(_HttpClient):
    path = "/v1/chat"

    def chat(self, messages: list[dict]) -> str:
        return self._post({"messages": messages})["text"]


class HttpCaption(_HttpClient):
    path = "/v1/caption"

    def caption(self, image: bytes) -> str:
        return self._post({"image_b64": encode_image_b64(image, self.payload_cap)})["text"]


class HttpVlm(_HttpClient):
    path = "/v1/vlm"

    def vlm(self, image: bytes, prompt: str) -> str:
        return self._post(
            {"image_b64": encode_image_b64(image, self.payload_cap), "prompt": prompt}
        )["text"]


class HttpGround(_HttpClient):
    path = "/v1/ground"

    def ground(self, image: bytes, keyword: str) -> list[GroundingBox]:
        body = self._post(
            {"image_b64": encode_image_b64(image, self.payload_cap), "keyword": keyword}
        )
        return [
            GroundingBox(
                bbox=BBox.from_list(b["bbox"]), score=float(b["score"]), label=b["label"]
            )
            for b in body["boxes"]
        ]


class HttpEmbed(_HttpClient):
    path = "/v1/embed"

    def embed(self, texts: list[str]) -> list[Embedding]:
        body = self._post({"texts": texts})
        return [Embedding(v) for v in body["vectors"]]
