"""Tool registry and dispatch for the language-only agent.

Calling convention inside model text: one fenced block tagged ``tool``
whose body is ``{"tool": <name>, "args": {...}}``. The six tools are
semantic_abstraction, semantic_retrieval, vlm, crop, ground, enhance.
Results render back to bounded deterministic text; errors come back as
``ERROR[code]: message`` for the model to self-correct.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import image_store
from .abstraction import abstract_image, count_tokens, load_index, truncate_to_tokens
from .backends import Backends
from .errors import (
    BackendError,
    BackendUnavailable,
    PayloadTooLarge,
    ToolCallError,
    UrbaError,
)
from .geometry import BBox
from .image_store import ImageRef, PixelWindow, TokenBudget
from .retrieval import EmbeddedIndex, embed_corpus, render_results, retrieve

TOOL_NAMES = ("semantic_abstraction", "semantic_retrieval", "vlm", "crop", "ground", "enhance")

RESULT_CAP_TOKENS = 4096
MAX_MATERIALIZE_PIXELS = 64_000_000  # crop/enhance guard; perception views downscale instead

_TOOL_BLOCK = re.compile(r"```tool[ \t]*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class ArgSpec:
    name: str
    kind: str  # string | int | float | bbox | image | index
    required: bool = True
    default: object = None


@dataclass(frozen=True)
class ToolSpec:
    name: str
    purpose: str
    args: tuple[ArgSpec, ...]
    result: str  # text | image-handle | index-handle | bbox-list


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: dict

    def to_json(self) -> str:
        return json.dumps({"tool": self.tool, "args": self.args}, ensure_ascii=False)


@dataclass(frozen=True)
class ImageHandle:
    id: str
    width: int
    height: int
    kind: str  # source | window
    provenance: ToolCall | None = None


@dataclass(frozen=True)
class ToolResult:
    ok: bool
    payload: str | None = None
    error_code: str | None = None
    error_message: str | None = None
    handles: tuple[str, ...] = ()

    def __post_init__(self):
        if self.ok == (self.payload is None):
            raise ValueError("exactly one of payload/error must be present")


def build_default_registry(
    default_chunk_num: int = 10, default_topk: int = 5
) -> dict[str, ToolSpec]:
    specs = [
        ToolSpec(
            name="semantic_abstraction",
            purpose=(
                "Partition the full source image into captioned chunks and build a "
                "retrievable index; works on img_0."
            ),
            args=(
                ArgSpec("image", "image"),
                ArgSpec("chunk_number", "int", required=False, default=default_chunk_num),
            ),
            result="index-handle",
        ),
        ToolSpec(
            name="semantic_retrieval",
            purpose="Return the top-k chunk captions most similar to a text query.",
            args=(
                ArgSpec("json", "index"),
                ArgSpec("query", "string"),
                ArgSpec("topk", "int", required=False, default=default_topk),
            ),
            result="text",
        ),
        ToolSpec(
            name="vlm",
            purpose="Ask a visual question about an image (auto-resized to fit the model).",
            args=(ArgSpec("image", "image"), ArgSpec("prompt", "string")),
            result="text",
        ),
        ToolSpec(
            name="crop",
            purpose="Extract an exact rectangular subregion as a new image handle.",
            args=(ArgSpec("image", "image"), ArgSpec("bbox", "bbox")),
            result="image-handle",
        ),
        ToolSpec(
            name="ground",
            purpose="Detect objects matching a keyword; returns scored bounding boxes.",
            args=(ArgSpec("image", "image"), ArgSpec("keyword", "string")),
            result="bbox-list",
        ),
        ToolSpec(
            name="enhance",
            purpose="Brightness/contrast/sharpness/color adjustment as a new image handle.",
            args=(
                ArgSpec("image", "image"),
                ArgSpec("brightness", "float", required=False, default=1.0),
                ArgSpec("contrast", "float", required=False, default=1.0),
                ArgSpec("sharpness", "float", required=False, default=1.0),
                ArgSpec("color", "float", required=False, default=1.0),
            ),
            result="image-handle",
        ),
    ]
    return {s.name: s for s in specs}


def _check_kind(name: str, kind: str, value):
    if isinstance(value, bool):
        raise ToolCallError("bad-args", f"argument {name!r} must be {kind}, got a boolean")
    if kind in ("string", "image", "index"):
        if not isinstance(value, str) or not value:
            raise ToolCallError("bad-args", f"argument {name!r} must be a non-empty string")
    elif kind == "int":
        if not isinstance(value, int):
            raise ToolCallError("bad-args", f"argument {name!r} must be an integer")
    elif kind == "float":
        if not isinstance(value, (int, float)):
            raise ToolCallError("bad-args", f"argument {name!r} must be a number")
    elif kind == "bbox":
        ok = (
            isinstance(value, list)
            and len(value) == 4
            and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
        )
        if not ok:
            raise ToolCallError(
                "bad-args", f"argument {name!r} must be a bbox 4-array [x0,y0,x1,y1] of integers"
            )


def make_tool_call(registry: dict[str, ToolSpec], tool: str, args: dict) -> ToolCall:
    """Validate args against the schema and fill optional defaults."""
    spec = registry.get(tool)
    if spec is None:
        raise ToolCallError(
            "unknown-tool",
            f"unknown tool {tool!r}; valid tools: {', '.join(sorted(registry))}",
        )
    known = {a.name: a for a in spec.args}
    unknown = sorted(set(args) - set(known))
    if unknown:
        raise ToolCallError("bad-args", f"unknown arguments for {tool}: {', '.join(unknown)}")
    completed = {}
    for a in spec.args:
        if a.name in args:
            _check_kind(a.name, a.kind, args[a.name])
            value = args[a.name]
            if a.kind == "float":
                value = float(value)
            completed[a.name] = value
        elif a.required:
            raise ToolCallError("bad-args", f"missing required argument {a.name!r} for {tool}")
        else:
            completed[a.name] = a.default
    return ToolCall(tool=tool, args=completed)


def render_call(call: ToolCall) -> str:
    """The fenced-block text a model would emit for this call."""
    return f"```tool\n{call.to_json()}\n```"


def count_tool_blocks(text: str) -> int:
    return len(_TOOL_BLOCK.findall(text))


def parse_tool_call(text: str, registry: dict[str, ToolSpec]) -> ToolCall | None:
    """First valid fenced ``tool`` block, or None when no block exists.

    When blocks exist but none validates, the first block's error is raised
    (its message goes back to the model verbatim).
    """
    blocks = _TOOL_BLOCK.findall(text)
    if not blocks:
        return None
    first_error: ToolCallError | None = None
    for body in blocks:
        try:
            try:
                raw = json.loads(body)
            except json.JSONDecodeError as exc:
                raise ToolCallError("malformed-call", f"tool block is not valid JSON: {exc}")
            if not isinstance(raw, dict) or not isinstance(raw.get("tool"), str):
                raise ToolCallError(
                    "malformed-call", 'tool block must be {"tool": str, "args": object}'
                )
            args = raw.get("args", {})
            if not isinstance(args, dict):
                raise ToolCallError("malformed-call", '"args" must be a JSON object')
            return make_tool_call(registry, raw["tool"], args)
        except ToolCallError as exc:
            if first_error is None:
                first_error = exc
    raise first_error


class EpisodeContext:
    """Single-episode tool state: handles, transcript, usage counters.

    img_0 always denotes the episode's source image. One context is used
    strictly sequentially by one episode.
    """

    def __init__(
        self,
        ref: ImageRef,
        backends: Backends,
        registry: dict[str, ToolSpec] | None = None,
        *,
        perception_budget: TokenBudget | None = None,
        abstraction_budget: TokenBudget | None = None,
        max_materialize_pixels: int = MAX_MATERIALIZE_PIXELS,
        result_cap_tokens: int = RESULT_CAP_TOKENS,
    ):
        self.ref = ref
        self.backends = backends
        self.registry = registry if registry is not None else build_default_registry()
        self.perception_budget = perception_budget or TokenBudget(max_tokens=10000)
        self.abstraction_budget = abstraction_budget or TokenBudget(max_tokens=10000)
        self.max_materialize_pixels = max_materialize_pixels
        self.result_cap_tokens = result_cap_tokens
        self.transcript: list[dict] = []
        self.tool_counts: dict[str, int] = {name: 0 for name in self.registry}
        self.handles: dict[str, ImageHandle] = {}
        self._images: dict[str, ImageRef | PixelWindow] = {}
        self._indexes: dict[str, EmbeddedIndex] = {}
        self._n_images = 0
        self._n_indexes = 0
        source = ImageHandle(id="img_0", width=ref.width, height=ref.height, kind="source")
        self.handles["img_0"] = source
        self._images["img_0"] = ref
        self._n_images = 1

    def add_step(self, role: str, text: str, call: ToolCall | None = None, error=None) -> None:
        step: dict = {"turn": len(self.transcript), "role": role, "text": text}
        if call is not None:
            step["call"] = {"tool": call.tool, "args": call.args}
        if error is not None:
            step["error"] = error
        self.transcript.append(step)

    def _new_image(self, window: PixelWindow, provenance: ToolCall) -> ImageHandle:
        hid = f"img_{self._n_images}"
        self._n_images += 1
        handle = ImageHandle(
            id=hid, width=window.width, height=window.height, kind="window", provenance=provenance
        )
        self.handles[hid] = handle
        self._images[hid] = window
        return handle

    def _new_index(self, eidx: EmbeddedIndex) -> str:
        hid = f"idx_{self._n_indexes}"
        self._n_indexes += 1
        self._indexes[hid] = eidx
        return hid

    def _get_image(self, hid: str) -> tuple[ImageHandle, ImageRef | PixelWindow]:
        if hid not in self.handles:
            raise ToolCallError("bad-args", f"unknown image handle {hid!r}")
        return self.handles[hid], self._images[hid]

    def _perception_png(self, hid: str) -> bytes:
        """A budget-fit view of the image for caption/vlm/ground backends."""
        handle, img = self._get_image(hid)
        if isinstance(img, ImageRef):
            view = image_store.downsample_to_budget(img, self.perception_budget)
        else:
            view = image_store.downsample_window(img, self.perception_budget)
        return image_store.encode_png(view)

    def _perception_dims(self, hid: str) -> tuple[int, int]:
        handle, img = self._get_image(hid)
        if isinstance(img, ImageRef):
            w, h = img.width, img.height
        else:
            w, h = img.width, img.height
        fw, fh = image_store._fit_dims(w, h, self.perception_budget)
        if image_store._tokens_for(w, h, self.perception_budget) <= self.perception_budget.max_tokens:
            fw, fh = w, h
        return fw, fh


def _bbox_arg(call: ToolCall, handle: ImageHandle) -> BBox:
    try:
        box = BBox.from_list(call.args["bbox"])
    except UrbaError as exc:
        raise ToolCallError("bad-args", f"invalid bbox: {exc}") from exc
    if box.x1 > handle.width or box.y1 > handle.height:
        raise ToolCallError(
            "bad-args",
            f"bbox out of bounds for {handle.id} ({handle.width}×{handle.height})",
        )
    return box


def dispatch(call: ToolCall, ctx: EpisodeContext) -> ToolResult:
    """Execute a validated call; never raises past the episode loop."""
    ctx.tool_counts[call.tool] = ctx.tool_counts.get(call.tool, 0) + 1
    try:
        result = _dispatch_inner(call, ctx)
    except ToolCallError as exc:
        result = ToolResult(ok=False, error_code=exc.code, error_message=exc.message)
    except PayloadTooLarge as exc:
        result = ToolResult(ok=False, error_code=exc.code, error_message=exc.message)
    except (BackendUnavailable, BackendError) as exc:
        result = ToolResult(ok=False, error_code=exc.code, error_message=exc.message)
    except UrbaError as exc:
        code = "bad-args" if exc.code in ("bounds", "invalid-argument") else exc.code
        result = ToolResult(ok=False, error_code=code, error_message=exc.message)
    except Exception as exc:  # noqa: BLE001 - episode loop must survive
        result = ToolResult(ok=False, error_code="internal", error_message=str(exc))
    ctx.add_step(
        "tool",
        render_result(result, ctx.result_cap_tokens),
        call=call,
        error=None
        if result.ok
        else {"code": result.error_code, "msg": result.error_message},
    )
    return result


def _dispatch_inner(call: ToolCall, ctx: EpisodeContext) -> ToolResult:
    name = call.tool
    if name == "semantic_abstraction":
        handle, img = ctx._get_image(call.args["image"])
        if handle.kind != "source":
            raise ToolCallError(
                "bad-args", "semantic_abstraction works on the source image img_0"
            )
        if ctx.backends.caption is None or ctx.backends.embed is None:
            raise BackendUnavailable("no caption/embed backend configured")
        index = abstract_image(
            img, call.args["chunk_number"], ctx.backends.caption, ctx.abstraction_budget
        )
        eidx = embed_corpus(index, ctx.backends.embed)
        hid = ctx._new_index(eidx)
        return ToolResult(
            ok=True,
            payload=(
                f"created {hid}: {len(index.chunks)} chunks "
                f"(grid {index.rows}×{index.cols}, requested {index.requested_n}) "
                f"from {handle.id}"
            ),
            handles=(hid,),
        )

    if name == "semantic_retrieval":
        key = call.args["json"]
        eidx = ctx._indexes.get(key)
        if eidx is None:
            if Path(key).is_file():
                if ctx.backends.embed is None:
                    raise BackendUnavailable("no embed backend configured")
                eidx = embed_corpus(load_index(key), ctx.backends.embed)
            else:
                raise ToolCallError(
                    "no-index",
                    f"no abstraction index {key!r}: call semantic_abstraction first",
                )
        results = retrieve(eidx, call.args["query"], call.args["topk"], ctx.backends.embed)
        return ToolResult(ok=True, payload=render_results(results))

    if name == "vlm":
        if ctx.backends.vlm is None:
            raise BackendUnavailable("no vlm backend configured")
        png = ctx._perception_png(call.args["image"])
        answer = ctx.backends.vlm.vlm(png, call.args["prompt"])
        return ToolResult(ok=True, payload=answer)

    if name == "crop":
        handle, img = ctx._get_image(call.args["image"])
        box = _bbox_arg(call, handle)
        if box.area > ctx.max_materialize_pixels:
            raise ToolCallError(
                "too-large",
                f"crop of {box.area} px exceeds the {ctx.max_materialize_pixels} px "
                "limit; crop a smaller region",
            )
        if isinstance(img, ImageRef):
            window = image_store.read_window(img, box)
        else:
            window = image_store.crop_window(img, box)
        new = ctx._new_image(window, call)
        return ToolResult(
            ok=True,
            payload=(
                f"created {new.id} ({new.width}×{new.height} px) from {handle.id} "
                f"bbox [{box.x0},{box.y0},{box.x1},{box.y1}]"
            ),
            handles=(new.id,),
        )

    if name == "ground":
        if ctx.backends.ground is None:
            raise BackendUnavailable("no ground backend configured")
        handle, _ = ctx._get_image(call.args["image"])
        png = ctx._perception_png(call.args["image"])
        boxes = ctx.backends.ground.ground(png, call.args["keyword"])
        vw, vh = ctx._perception_dims(call.args["image"])
        sx, sy = handle.width / vw, handle.height / vh
        rendered = []
        for gb in boxes:
            b = gb.bbox
            rendered.append(
                {
                    "bbox": [
                        min(handle.width, round(b.x0 * sx)),
                        min(handle.height, round(b.y0 * sy)),
                        min(handle.width, round(b.x1 * sx)),
                        min(handle.height, round(b.y1 * sy)),
                    ],
                    "score": round(gb.score, 6),
                    "label": gb.label,
                }
            )
        payload = json.dumps(rendered, ensure_ascii=False) if rendered else "[]"
        return ToolResult(ok=True, payload=payload)

    if name == "enhance":
        handle, img = ctx._get_image(call.args["image"])
        if isinstance(img, ImageRef):
            if img.width * img.height > ctx.max_materialize_pixels:
                raise ToolCallError(
                    "too-large",
                    f"enhance of the full {img.width}×{img.height} source exceeds "
                    f"the {ctx.max_materialize_pixels} px limit; crop first",
                )
            window = image_store.read_window(img, img.bounds)
        else:
            window = img
        params = image_store.EnhanceParams(
            brightness=call.args["brightness"],
            contrast=call.args["contrast"],
            sharpness=call.args["sharpness"],
            color=call.args["color"],
        )
        out = image_store.enhance(window, params)
        new = ctx._new_image(out, call)
        return ToolResult(
            ok=True,
            payload=(
                f"created {new.id} ({new.width}×{new.height} px) from {handle.id} "
                f"enhance(brightness={params.brightness}, contrast={params.contrast}, "
                f"sharpness={params.sharpness}, color={params.color})"
            ),
            handles=(new.id,),
        )

    raise ToolCallError("unknown-tool", f"unknown tool {name!r}")


def render_result(result: ToolResult, cap_tokens: int = RESULT_CAP_TOKENS) -> str:
    """Deterministic bounded text for the next model turn."""
    if not result.ok:
        return f"ERROR[{result.error_code}]: {result.error_message}"
    text = result.payload
    if count_tokens(text) > cap_tokens:
        text = truncate_to_tokens(text, max(1, cap_tokens - 3))[0] + "[truncated]"
    return f"OK: {text}"
