"""Semantic retrieval: embed captions and queries, rank by cosine, top-k.

Scoring is exhaustive (an image yields at most a few hundred chunks) and
exact: results sort by (score desc, chunk_id asc). The rendered result list
is the text the decision model sees, one line per hit:
``[chunk {id}] bbox=[x0,y0,x1,y1] score={:.6f}: {caption}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .abstraction import AbstractionIndex
from .errors import DimMismatch, EmbedInconsistent, InvalidArgument, ZeroNorm
from .geometry import BBox, RegionSet, union_regions

EMBED_BATCH = 64


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidArgument("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgument("embedding components must be finite")
        if not np.any(arr):
            raise ZeroNorm("zero vector is not a valid embedding")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class ScoredChunk:
    chunk_id: int
    score: float
    caption: str
    region: BBox


@dataclass(frozen=True)
class EmbeddedIndex:
    base: AbstractionIndex
    embeddings: tuple[Embedding, ...]
    embedder_id: str

    def __post_init__(self):
        if len(self.embeddings) != len(self.base.chunks):
            raise EmbedInconsistent(
                f"{len(self.embeddings)} embeddings for {len(self.base.chunks)} chunks"
            )
        dims = {e.dim for e in self.embeddings}
        if len(dims) > 1:
            raise EmbedInconsistent(f"inconsistent embedding dims {sorted(dims)}")


def embed_corpus(index: AbstractionIndex, embedder) -> EmbeddedIndex:
    """One embedding per caption, batched, aligned by chunk id."""
    texts = [c.caption for c in index.chunks]
    vectors: list[Embedding] = []
    for start in range(0, len(texts), EMBED_BATCH):
        batch = texts[start : start + EMBED_BATCH]
        got = embedder.embed(batch)
        if len(got) != len(batch):
            raise EmbedInconsistent(f"embedder returned {len(got)} vectors for {len(batch)} texts")
        vectors.extend(got)
    return EmbeddedIndex(
        base=index,
        embeddings=tuple(vectors),
        embedder_id=getattr(embedder, "id", embedder.__class__.__name__),
    )


def cosine(a: Embedding, b: Embedding) -> float:
    if a.dim != b.dim:
        raise DimMismatch(f"embedding dims differ: {a.dim} vs {b.dim}")
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        raise ZeroNorm("cosine undefined for zero-norm vectors")
    return float(np.dot(a.values, b.values) / (na * nb))


def retrieve(
    eidx: EmbeddedIndex,
    query: str,
    k: int,
    embedder,
    *,
    include_flagged: bool = False,
) -> list[ScoredChunk]:
    """Top-k chunks by cosine; ties break toward the lower chunk id.

    Flagged (failed-caption) chunks are excluded unless include_flagged.
    An empty or fully-flagged index yields an empty result, not an error.
    """
    if k < 1:
        raise InvalidArgument(f"k must be >= 1, got {k}")
    if not query:
        raise InvalidArgument("query must be non-empty")
    candidates = [
        (chunk, emb)
        for chunk, emb in zip(eidx.base.chunks, eidx.embeddings)
        if include_flagged or not chunk.failed
    ]
    if not candidates:
        return []
    (query_emb,) = embedder.embed([query])
    scored = [
        ScoredChunk(
            chunk_id=chunk.id,
            score=cosine(query_emb, emb),
            caption=chunk.caption,
            region=chunk.region,
        )
        for chunk, emb in candidates
    ]
    scored.sort(key=lambda s: (-s.score, s.chunk_id))
    return scored[: min(k, len(scored))]


def aggregate_regions(results: list[ScoredChunk]) -> RegionSet:
    """Union of the retrieved chunks' regions."""
    return union_regions([s.region for s in results])


def render_results(results: list[ScoredChunk]) -> str:
    """Exact tool-facing rendering of a retrieval result list."""
    if not results:
        return "(no results)"
    lines = [
        f"[chunk {s.chunk_id}] bbox=[{s.region.x0},{s.region.y0},{s.region.x1},{s.region.y1}] "
        f"score={s.score:.6f}: {s.caption}"
        for s in results
    ]
    return "\n".join(lines)
