"""Black-box conformance suite for the /v1/* backend wire protocol.

Runs identically against the mock servers and real model servers: schema
shape, error codes, and embedding dim consistency. Quality of outputs is
out of scope. Pass an httpx-compatible client (live base_url or in-process
ASGI transport); failures raise AssertionError with the failing check.
"""

from __future__ import annotations

import base64
from io import BytesIO


def _tiny_png() -> str:
    import numpy as np
    from PIL import Image

    buf = BytesIO()
    Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8), "RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _assert_error_body(resp, context: str, expect_code: str | None = None):
    assert resp.status_code != 200, f"{context}: expected an error status"
    body = resp.json()
    assert isinstance(body.get("code"), str) and body["code"], f"{context}: missing error code"
    assert isinstance(body.get("message"), str), f"{context}: missing error message"
    if expect_code:
        assert body["code"] == expect_code, (
            f"{context}: expected code {expect_code!r}, got {body['code']!r}"
        )


def check_healthz(client, expect_role: str | None = None):
    resp = client.get("/healthz")
    assert resp.status_code == 200, "/healthz must return 200"
    body = resp.json()
    assert isinstance(body, dict), "/healthz must return a JSON object"
    assert "model" in body, "/healthz must report the served model id"
    if expect_role is not None:
        assert body.get("role") == expect_role, (
            f"/healthz role {body.get('role')!r} != {expect_role!r}"
        )


def check_caption(client):
    png = _tiny_png()
    resp = client.post("/v1/caption", json={"image_b64": png})
    assert resp.status_code == 200, f"/v1/caption: {resp.status_code} {resp.text[:200]}"
    body = resp.json()
    assert isinstance(body.get("text"), str) and body["text"], "/v1/caption: empty text"
    bad = client.post("/v1/caption", json={"image_b64": "!!! not base64 image !!!"})
    _assert_error_body(bad, "/v1/caption with undecodable image")


def check_vlm(client):
    resp = client.post("/v1/vlm", json={"image_b64": _tiny_png(), "prompt": "what is this?"})
    assert resp.status_code == 200, f"/v1/vlm: {resp.status_code} {resp.text[:200]}"
    assert isinstance(resp.json().get("text"), str), "/v1/vlm: text missing"


def check_ground(client):
    resp = client.post("/v1/ground", json={"image_b64": _tiny_png(), "keyword": "tower"})
    assert resp.status_code == 200, f"/v1/ground: {resp.status_code} {resp.text[:200]}"
    boxes = resp.json().get("boxes")
    assert isinstance(boxes, list), "/v1/ground: boxes must be a list"
    for b in boxes:
        bbox = b.get("bbox")
        assert (
            isinstance(bbox, list)
            and len(bbox) == 4
            and all(isinstance(v, int) for v in bbox)
        ), f"/v1/ground: bbox must be a 4-array of ints, got {bbox!r}"
        assert isinstance(b.get("score"), (int, float)) and 0 <= b["score"] <= 1, (
            "/v1/ground: score must be in [0,1]"
        )
        assert isinstance(b.get("label"), str), "/v1/ground: label must be a string"


def check_embed(client):
    resp = client.post("/v1/embed", json={"texts": ["alpha", "beta", "alpha"]})
    assert resp.status_code == 200, f"/v1/embed: {resp.status_code} {resp.text[:200]}"
    body = resp.json()
    vectors, dim = body.get("vectors"), body.get("dim")
    assert isinstance(vectors, list) and len(vectors) == 3, "/v1/embed: one vector per text"
    assert isinstance(dim, int) and dim >= 1, "/v1/embed: dim must be a positive int"
    for v in vectors:
        assert isinstance(v, list) and len(v) == dim, "/v1/embed: inconsistent dims"
        assert all(isinstance(x, (int, float)) for x in v), "/v1/embed: non-numeric component"
    bad = client.post("/v1/embed", json={"texts": []})
    _assert_error_body(bad, "/v1/embed with empty list")


def check_chat(client):
    resp = client.post(
        "/v1/chat", json={"messages": [{"role": "user", "content": "hello"}]}
    )
    assert resp.status_code == 200, f"/v1/chat: {resp.status_code} {resp.text[:200]}"
    assert isinstance(resp.json().get("text"), str), "/v1/chat: text missing"


def check_payload_cap(client, payload_cap: int):
    resp = client.post("/v1/caption", json={"image_b64": "A" * (payload_cap + 1)})
    _assert_error_body(resp, "/v1/caption oversized payload", expect_code="payload-too-large")


_CHECKS = {
    "caption": check_caption,
    "vlm": check_vlm,
    "ground": check_ground,
    "embed": check_embed,
    "chat": check_chat,
}


def run_contract_suite(
    client,
    roles: tuple[str, ...] = ("caption", "vlm", "ground", "embed"),
    *,
    expect_role: str | None = None,
    payload_cap: int | None = None,
) -> list[str]:
    """All checks for the given roles; returns the names that ran."""
    ran = []
    check_healthz(client, expect_role=expect_role)
    ran.append("healthz")
    for role in roles:
        _CHECKS[role](client)
        ran.append(role)
    if payload_cap is not None and "caption" in roles:
        check_payload_cap(client, payload_cap)
        ran.append("payload-cap")
    return ran
