"""Semantic abstraction: turn an image into captioned chunks under a token cap.

The built index is the JSON handed between the abstraction and retrieval
tools: ``{"version":1, "image_id", "width", "height", "requested_n",
"grid":{"rows","cols"}, "budget":{"max_tokens","pixels_per_token_side"},
"chunks":[{"id","bbox","caption","caption_tokens","failed"}]}``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import (
    AbstractionFailed,
    BackendUnavailable,
    IndexCorrupt,
    InvalidArgument,
    VersionMismatch,
)
from .geometry import BBox, grid_boxes, grid_shape
from .image_store import ImageRef, TokenBudget, downsample_region, encode_png

INDEX_VERSION = 1
PLACEHOLDER_CAPTION = "[uncaptioned]"
TRUNCATION_MARK = "…"

DEFAULT_CAPTION_PROMPT = (
    "Describe all visible objects, text, people, and activities in this "
    "image region in detail."
)


def count_tokens(text: str) -> int:
    """Default token counting rule: ceil(utf8_bytes / 4).

    Pluggable: operations below accept any ``counter(text) -> int``.
    """
    return math.ceil(len(text.encode("utf-8")) / 4)


def truncate_to_tokens(text: str, max_tokens: int, counter=count_tokens) -> tuple[str, bool]:
    """Longest prefix (plus a visible truncation mark) within max_tokens."""
    if max_tokens < 1:
        raise InvalidArgument(f"max_tokens must be >= 1, got {max_tokens}")
    if counter(text) <= max_tokens:
        return text, False
    lo, hi = 0, len(text)  # invariant: prefix of lo chars fits
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if counter(text[:mid] + TRUNCATION_MARK) <= max_tokens:
            lo = mid
        else:
            hi = mid - 1
    return text[:lo] + TRUNCATION_MARK, True


@dataclass(frozen=True)
class Chunk:
    id: int
    region: BBox
    caption: str
    caption_tokens: int
    failed: bool = False


@dataclass(frozen=True)
class AbstractionIndex:
    image_id: str
    width: int
    height: int
    requested_n: int
    rows: int
    cols: int
    chunks: tuple[Chunk, ...]
    budget: TokenBudget
    version: int = INDEX_VERSION

    @property
    def total_caption_tokens(self) -> int:
        """T_lang of the whole index."""
        return sum(c.caption_tokens for c in self.chunks)

    def chunk_by_id(self, chunk_id: int) -> Chunk:
        return self.chunks[chunk_id]


def abstract_image(
    ref: ImageRef,
    chunk_num: int,
    captioner,
    budget: TokenBudget,
    *,
    prompt: str = DEFAULT_CAPTION_PROMPT,
    parallelism: int = 4,
    token_counter=count_tokens,
) -> AbstractionIndex:
    """Partition, caption every chunk, enforce the per-caption token cap.

    Per-chunk backend failures yield flagged placeholder captions rather than
    aborting the build; at least one caption must succeed.
    """
    if chunk_num < 1:
        raise InvalidArgument(f"chunk_num must be >= 1, got {chunk_num}")
    rows, cols = grid_shape(ref.width, ref.height, chunk_num)
    boxes = grid_boxes(ref.width, ref.height, rows, cols)

    def caption_one(box: BBox) -> tuple[str, bool, Exception | None]:
        try:
            window = downsample_region(ref, box, budget)
            text = captioner.caption(encode_png(window))
            if not text:
                text = PLACEHOLDER_CAPTION
            return text, False, None
        except Exception as exc:  # noqa: BLE001 - placeholder-on-failure by contract
            return PLACEHOLDER_CAPTION, True, exc

    if parallelism > 1 and len(boxes) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(caption_one, boxes))
    else:
        outcomes = [caption_one(b) for b in boxes]

    failures = [exc for _, failed, exc in outcomes if failed]
    if len(failures) == len(boxes):
        if failures and all(isinstance(e, BackendUnavailable) for e in failures):
            raise BackendUnavailable(f"captioner unreachable for all {len(boxes)} chunks")
        raise AbstractionFailed(f"all {len(boxes)} chunk captions failed")

    chunks = []
    for i, (box, (text, failed, _)) in enumerate(zip(boxes, outcomes)):
        text, _truncated = truncate_to_tokens(text, budget.max_tokens, token_counter)
        chunks.append(
            Chunk(
                id=i,
                region=box,
                caption=text,
                caption_tokens=token_counter(text),
                failed=failed,
            )
        )
    return AbstractionIndex(
        image_id=Path(ref.path).name,
        width=ref.width,
        height=ref.height,
        requested_n=chunk_num,
        rows=rows,
        cols=cols,
        chunks=tuple(chunks),
        budget=budget,
    )


def index_to_dict(index: AbstractionIndex) -> dict:
    return {
        "version": index.version,
        "image_id": index.image_id,
        "width": index.width,
        "height": index.height,
        "requested_n": index.requested_n,
        "grid": {"rows": index.rows, "cols": index.cols},
        "budget": {
            "max_tokens": index.budget.max_tokens,
            "pixels_per_token_side": index.budget.pixels_per_token_side,
        },
        "chunks": [
            {
                "id": c.id,
                "bbox": c.region.to_list(),
                "caption": c.caption,
                "caption_tokens": c.caption_tokens,
                "failed": c.failed,
            }
            for c in index.chunks
        ],
    }


def save_index(index: AbstractionIndex, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(index_to_dict(index), ensure_ascii=False), encoding="utf-8"
    )


def index_from_dict(raw: dict) -> AbstractionIndex:
    if not isinstance(raw, dict):
        raise IndexCorrupt("index file must hold a JSON object")
    version = raw.get("version")
    if version != INDEX_VERSION:
        raise VersionMismatch(f"index version {version!r}, expected {INDEX_VERSION}")
    try:
        budget = TokenBudget(
            max_tokens=raw["budget"]["max_tokens"],
            pixels_per_token_side=raw["budget"]["pixels_per_token_side"],
        )
        grid = raw["grid"]
        index = AbstractionIndex(
            image_id=raw["image_id"],
            width=raw["width"],
            height=raw["height"],
            requested_n=raw["requested_n"],
            rows=grid["rows"],
            cols=grid["cols"],
            chunks=tuple(
                Chunk(
                    id=c["id"],
                    region=BBox.from_list(c["bbox"]),
                    caption=c["caption"],
                    caption_tokens=c["caption_tokens"],
                    failed=bool(c.get("failed", False)),
                )
                for c in raw["chunks"]
            ),
            budget=budget,
        )
    except (KeyError, TypeError, InvalidArgument) as exc:
        raise IndexCorrupt(f"malformed index: {exc}") from exc
    _validate_index(index)
    return index


def load_index(path: str | Path) -> AbstractionIndex:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IndexCorrupt(f"unreadable index file {path}: {exc}") from exc
    return index_from_dict(raw)


def _validate_index(index: AbstractionIndex) -> None:
    n = index.rows * index.cols
    if len(index.chunks) != n:
        raise IndexCorrupt(
            f"{len(index.chunks)} chunks but grid says {index.rows}x{index.cols}"
        )
    expected = grid_boxes(index.width, index.height, index.rows, index.cols)
    for i, (chunk, box) in enumerate(zip(index.chunks, expected)):
        if chunk.id != i:
            raise IndexCorrupt(f"chunk ids must be row-major 0..{n - 1}")
        if chunk.region != box:
            raise IndexCorrupt(
                f"chunk {i} region {chunk.region.to_list()} does not tile the grid "
                f"(expected {box.to_list()})"
            )
        if not chunk.caption:
            raise IndexCorrupt(f"chunk {i} has an empty caption")
        if chunk.caption_tokens > index.budget.max_tokens:
            raise IndexCorrupt(
                f"chunk {i} caption_tokens {chunk.caption_tokens} exceeds "
                f"budget {index.budget.max_tokens}"
            )
