"""Benchmark-construction pipeline: tiling, QA generation, composition,
automatic difficulty filtering, and the object-count statistic.

Generator replies are parsed strictly and rejected (never repaired) when
they do not conform; rejection is logged and surfaces in pipeline stats.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BackendError, BackendUnavailable, InvalidArgument
from .geometry import BBox, adjacent
from .image_store import (
    ImageRef,
    PixelWindow,
    TokenBudget,
    downsample_window,
    encode_png,
    read_window,
)
from .records import LETTERS, QuestionRecord

log = logging.getLogger(__name__)

MICRO_QA_INSTRUCTION = (
    "Generate 0-2 micro-level question-answer pairs about fine-grained visual "
    "details (objects, text, attributes, activities) in this image tile. Reply "
    'with strict JSON only: {"qas": [{"question": str, "options": [4 distinct '
    'strings], "answer": "A"|"B"|"C"|"D"}]}. Reply {"qas": []} if the tile has '
    "no question-worthy content."
)

COMPOSE_INSTRUCTION = (
    "Compose one {level}-level multiple-choice question that integrates the "
    "regions shown side by side in this image. Region descriptions follow; each "
    "gives the region's bounding box in the original image and a question-answer "
    "pair about it.\n{regions}\nReply with strict JSON only: "
    '{{"qas": [{{"question": str, "options": [4 distinct strings], '
    '"answer": "A"|"B"|"C"|"D"}}]}}.'
)

FILTER_PROMPT = (
    "{question}\nOptions:\n{options}\nReply with the letter of the correct "
    "option only."
)

DEFAULT_VOCABULARY = ("pagoda", "bridge", "lantern", "boat", "tower", "tree", "person")


@dataclass(frozen=True)
class QACandidate:
    question: str
    options: tuple[str, str, str, str]
    answer: str
    level: str
    source_tiles: tuple[BBox, ...]
    language: str = "en"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.options) != 4:
            raise InvalidArgument("a candidate must have exactly 4 options")
        if self.answer not in LETTERS:
            raise InvalidArgument(f"answer must be one of {LETTERS}, got {self.answer!r}")
        if self.level not in ("micro", "regional", "global"):
            raise InvalidArgument(f"unknown level {self.level!r}")

    def gold_option(self) -> str:
        return self.options[LETTERS.index(self.answer)]


def check_level_invariant(level: str, tiles: tuple[BBox, ...]) -> bool:
    """micro: one tile; regional: >=2 tiles whose adjacency graph is
    connected; global: >=2 tiles with at least one non-adjacent pair."""
    if level == "micro":
        return len(tiles) == 1
    if len(tiles) < 2:
        return False
    if level == "regional":
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in range(len(tiles)):
                if j not in seen and adjacent(tiles[i], tiles[j]):
                    seen.add(j)
                    frontier.append(j)
        return len(seen) == len(tiles)
    return any(
        not adjacent(tiles[i], tiles[j])
        for i in range(len(tiles))
        for j in range(i + 1, len(tiles))
    )


def tile_image(ref: ImageRef, tile: int) -> list[BBox]:
    """Row-major non-overlapping tile x tile boxes; edge tiles shrink."""
    if tile < 64:
        raise InvalidArgument(f"tile size must be >= 64, got {tile}")
    boxes = []
    for y0 in range(0, ref.height, tile):
        for x0 in range(0, ref.width, tile):
            boxes.append(BBox(x0, y0, min(x0 + tile, ref.width), min(y0 + tile, ref.height)))
    return boxes


def _provenance(backend, instruction: str) -> dict:
    return {
        "backend": getattr(backend, "id", backend.__class__.__name__),
        "prompt_hash": hashlib.sha256(instruction.encode("utf-8")).hexdigest()[:16],
    }


def _parse_qa_reply(reply: str, max_count: int) -> list[dict] | None:
    """Strict parse of {"qas": [...]}; None means rejected."""
    try:
        raw = json.loads(reply)
    except json.JSONDecodeError:
        return None
    if not isinstance(raw, dict) or not isinstance(raw.get("qas"), list):
        return None
    qas = raw["qas"]
    if len(qas) > max_count:
        return None
    parsed = []
    for qa in qas:
        if not isinstance(qa, dict):
            return None
        question, options, answer = qa.get("question"), qa.get("options"), qa.get("answer")
        if not isinstance(question, str) or not question:
            return None
        if (
            not isinstance(options, list)
            or len(options) != 4
            or len(set(options)) != 4
            or not all(isinstance(o, str) and o for o in options)
        ):
            return None
        if answer not in LETTERS:
            return None
        parsed.append({"question": question, "options": options, "answer": answer})
    return parsed


def gen_micro(
    window: PixelWindow, generator, *, tile: BBox | None = None, language: str = "en"
) -> list[QACandidate]:
    """0-2 micro candidates for one tile; non-conforming replies are
    rejected and logged, never repaired.

    ``tile`` overrides the recorded source tile when the window is a
    downsampled view living in its own frame.
    """
    source = tile or window.origin
    reply = generator.vlm(encode_png(window), MICRO_QA_INSTRUCTION)
    parsed = _parse_qa_reply(reply, max_count=2)
    if parsed is None:
        log.warning("rejecting generator reply for tile %s: %r", source.to_list(), reply[:200])
        return []
    prov = _provenance(generator, MICRO_QA_INSTRUCTION)
    return [
        QACandidate(
            question=qa["question"],
            options=tuple(qa["options"]),
            answer=qa["answer"],
            level="micro",
            source_tiles=(source,),
            language=language,
            provenance=prov,
        )
        for qa in parsed
    ]


def _montage(windows: list[PixelWindow], budget: TokenBudget) -> PixelWindow:
    views = [downsample_window(w, budget) for w in windows]
    height = max(v.height for v in views)
    sep = 8
    width = sum(v.width for v in views) + sep * (len(views) - 1)
    canvas = np.zeros((height, width, 3), dtype=np.uint8)
    x = 0
    for v in views:
        canvas[: v.height, x : x + v.width] = v.pixels
        x += v.width + sep
    return PixelWindow(origin=BBox(0, 0, width, height), pixels=canvas)


def _groups_for_level(
    tiles: list[BBox], level: str, rng: random.Random, want: int, max_size: int = 3
) -> list[tuple[int, ...]]:
    n = len(tiles)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if level == "regional":
        eligible = [p for p in pairs if adjacent(tiles[p[0]], tiles[p[1]])]
        triples = []
        for i, j in eligible:
            for k in range(n):
                if k in (i, j):
                    continue
                group = tuple(sorted((i, j, k)))
                if check_level_invariant("regional", tuple(tiles[g] for g in group)):
                    triples.append(group)
        candidates = eligible + sorted(set(triples))
    else:
        candidates = [p for p in pairs if not adjacent(tiles[p[0]], tiles[p[1]])]
    rng.shuffle(candidates)
    if max_size < 3:
        candidates = [g for g in candidates if len(g) <= max_size]
    return candidates[:want]


def compose_levels(
    tiles_with_windows: list[tuple[BBox, PixelWindow]],
    micro_qas: dict[int, list[QACandidate]],
    generator,
    counts: dict[str, int],
    *,
    seed: int = 0,
    budget: TokenBudget | None = None,
    language: str = "en",
) -> tuple[list[QACandidate], dict[str, int]]:
    """Regional/global candidates from tile groups; returns (candidates,
    shortfall per level) when eligible tiles run out."""
    budget = budget or TokenBudget(max_tokens=4096)
    eligible = [i for i, _ in enumerate(tiles_with_windows) if micro_qas.get(i)]
    tiles = [tiles_with_windows[i][0] for i in eligible]
    out: list[QACandidate] = []
    shortfall: dict[str, int] = {}
    rng = random.Random(seed)
    for level in ("regional", "global"):
        want = counts.get(level, 0)
        if want <= 0:
            continue
        groups = _groups_for_level(tiles, level, rng, want)
        shortfall[level] = max(0, want - len(groups))
        for group in groups:
            idxs = [eligible[g] for g in group]
            group_tiles = tuple(tiles_with_windows[i][0] for i in idxs)
            regions_text = "\n".join(
                f"- bbox {tiles_with_windows[i][0].to_list()}: "
                f"Q: {micro_qas[i][0].question} A: {micro_qas[i][0].gold_option()}"
                for i in idxs
            )
            instruction = COMPOSE_INSTRUCTION.format(level=level, regions=regions_text)
            montage = _montage([tiles_with_windows[i][1] for i in idxs], budget)
            reply = generator.vlm(encode_png(montage), instruction)
            parsed = _parse_qa_reply(reply, max_count=1)
            if not parsed:
                log.warning("rejecting %s-level reply for tiles %s", level, list(group))
                continue
            if not check_level_invariant(level, group_tiles):
                log.warning("group %s violates %s invariant; skipped", list(group), level)
                continue
            qa = parsed[0]
            out.append(
                QACandidate(
                    question=qa["question"],
                    options=tuple(qa["options"]),
                    answer=qa["answer"],
                    level=level,
                    source_tiles=group_tiles,
                    language=language,
                    provenance=_provenance(generator, COMPOSE_INSTRUCTION),
                )
            )
    return out, shortfall


@dataclass(frozen=True)
class FilterDecision:
    status: str  # kept | dropped:too-easy | dropped:malformed | unfiltered
    detail: str = ""


def auto_filter(
    candidate: QACandidate,
    ref: ImageRef,
    filter_backend,
    budget: TokenBudget | None = None,
    *,
    trials: int = 3,
    threshold: int = 2,
) -> FilterDecision:
    """Drop candidates a budget-compressed VLM answers correctly in
    >= threshold of trials (too easy) or that are structurally malformed."""
    from .agent import extract_answer
    from .image_store import downsample_to_budget

    if len(set(candidate.options)) != 4:
        return FilterDecision("dropped:malformed", "duplicate options")
    if candidate.answer not in LETTERS:
        return FilterDecision("dropped:malformed", f"answer {candidate.answer!r} out of range")

    budget = budget or TokenBudget(max_tokens=1024)
    options = "\n".join(f"{letter}. {o}" for letter, o in zip(LETTERS, candidate.options))
    prompt = FILTER_PROMPT.format(question=candidate.question, options=options)
    try:
        png = encode_png(downsample_to_budget(ref, budget))
        correct = 0
        for _ in range(trials):
            reply = filter_backend.vlm(png, prompt)
            if extract_answer(reply) == candidate.answer:
                correct += 1
    except (BackendUnavailable, BackendError) as exc:
        return FilterDecision("unfiltered", f"filter backend unavailable: {exc}")
    if correct >= threshold:
        return FilterDecision("dropped:too-easy", f"{correct}/{trials} correct at compressed size")
    return FilterDecision("kept", f"{correct}/{trials} correct at compressed size")


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        self.parent[self.find(i)] = self.find(j)


def object_count(
    ref: ImageRef,
    grounder,
    vocabulary: tuple[str, ...] = DEFAULT_VOCABULARY,
    *,
    tile: int = 1024,
    pad: int = 256,
    merge_iou: float = 0.5,
) -> int:
    """Detected instances across padded tiles, merged across seams by
    same-label IoU >= merge_iou."""
    detections: list[tuple[str, BBox]] = []
    for box in tile_image(ref, tile):
        padded = BBox(
            max(0, box.x0 - pad),
            max(0, box.y0 - pad),
            min(ref.width, box.x1 + pad),
            min(ref.height, box.y1 + pad),
        )
        window = read_window(ref, padded)
        png = encode_png(window)
        for keyword in vocabulary:
            for gb in grounder.ground(png, keyword):
                b = gb.bbox
                detections.append(
                    (
                        gb.label,
                        BBox(b.x0 + padded.x0, b.y0 + padded.y0, b.x1 + padded.x0, b.y1 + padded.y0),
                    )
                )
    if not detections:
        return 0
    uf = _UnionFind(len(detections))
    for i in range(len(detections)):
        for j in range(i + 1, len(detections)):
            if detections[i][0] == detections[j][0] and detections[i][1].iou(
                detections[j][1]
            ) >= merge_iou:
                uf.union(i, j)
    return len({uf.find(i) for i in range(len(detections))})


@dataclass(frozen=True)
class PipelineStats:
    tiles: int
    micro: int
    composed: int
    rejected_tiles: int
    shortfall: dict[str, int]
    statuses: dict[str, int]


def run_pipeline(
    ref: ImageRef,
    generator,
    filter_backend=None,
    *,
    tile: int = 1024,
    counts: dict[str, int] | None = None,
    seed: int = 0,
    subset: str = "satellite",
    language: str = "en",
    gen_budget: TokenBudget | None = None,
) -> tuple[list[dict], PipelineStats]:
    """Full engine: tile -> micro QA -> compose -> filter -> manifest entries.

    Entries are QuestionRecord dicts plus provenance/status/source_tiles;
    without a filter backend, candidates pass through as pending-review.
    """
    counts = counts or {"regional": 2, "global": 2}
    gen_budget = gen_budget or TokenBudget(max_tokens=4096)
    boxes = tile_image(ref, tile)
    tiles_with_windows: list[tuple[BBox, PixelWindow]] = []
    micro_qas: dict[int, list[QACandidate]] = {}
    rejected = 0
    for i, box in enumerate(boxes):
        view = downsample_window(read_window(ref, box), gen_budget)
        tiles_with_windows.append((box, view))
        qas = gen_micro(view, generator, tile=box, language=language)
        if qas:
            micro_qas[i] = qas
        else:
            rejected += 1
    composed, shortfall = compose_levels(
        tiles_with_windows, micro_qas, generator, counts, seed=seed, budget=gen_budget, language=language
    )
    candidates = [qa for qas in micro_qas.values() for qa in qas] + composed

    entries: list[dict] = []
    statuses: dict[str, int] = {}
    image_id = Path(ref.path).name
    for k, cand in enumerate(candidates):
        if filter_backend is not None:
            decision = auto_filter(cand, ref, filter_backend)
        else:
            decision = FilterDecision("pending-review", "filter stage skipped")
        statuses[decision.status] = statuses.get(decision.status, 0) + 1
        record = QuestionRecord(
            id=f"{image_id}-{cand.level}-{k}",
            image=ref.path,
            subset=subset,
            level=cand.level,
            question=cand.question,
            options=cand.options,
            answer=cand.answer,
            language=cand.language,
        )
        entries.append(
            {
                **record.to_dict(),
                "source_tiles": [t.to_list() for t in cand.source_tiles],
                "provenance": cand.provenance,
                "status": decision.status,
                "status_detail": decision.detail,
            }
        )
    stats = PipelineStats(
        tiles=len(boxes),
        micro=sum(len(v) for v in micro_qas.values()),
        composed=len(composed),
        rejected_tiles=rejected,
        shortfall=shortfall,
        statuses=statuses,
    )
    return entries, stats


def write_candidates(entries: list[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
