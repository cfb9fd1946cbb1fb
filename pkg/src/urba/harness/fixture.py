"""Synthetic gigapixel fixture generator.

Writes a raw-synthetic image (gradient background + planted marker glyphs),
the plant manifest (exact bboxes, classes, captions, QA tables), and an
auto-built question manifest at all three levels. Byte-deterministic for a
given seed and spec, so a 16384x16384 "gigapixel" fixture costs a few
hundred bytes on disk.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path

from ..errors import InvalidArgument
from ..fixtures import Plant, PlantManifest
from ..geometry import BBox, adjacent
from ..image_store import write_synthetic
from ..records import LETTERS, QuestionRecord
from .manifest import write_manifest

DECOY_CLASSES = (
    "a fountain",
    "a windmill",
    "a lighthouse",
    "an obelisk",
    "a water tower",
    "a grain silo",
)

DISTRACTOR_CLASSES = ("tree", "rock", "bush", "hut", "fence", "pond")

_QUESTION_SUBSETS = ("satellite", "street_view")


@dataclass(frozen=True)
class FixtureResult:
    image_path: str
    plants_path: str
    questions_path: str
    manifest: PlantManifest
    records: list[QuestionRecord]
    question_meta: list[dict]


def _stable_seed(*parts) -> int:
    # str hashes are process-randomized; derive rng seeds via sha256 instead
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _tile_of(box: BBox, tile: int, width: int, height: int) -> BBox:
    cx = (box.x0 + box.x1) // 2
    cy = (box.y0 + box.y1) // 2
    x0 = (cx // tile) * tile
    y0 = (cy // tile) * tile
    return BBox(x0, y0, min(x0 + tile, width), min(y0 + tile, height))


def _options_with(correct: str, decoys: list[str], slot: int) -> tuple[tuple[str, ...], str]:
    pool = [d for d in decoys if d != correct]
    options = pool[:3]
    options.insert(slot % 4, correct)
    if len(options) != 4 or len(set(options)) != 4:
        raise InvalidArgument("could not build 4 distinct options")
    return tuple(options), LETTERS[options.index(correct)]


def generate_fixture(
    seed: int,
    width: int,
    height: int,
    plant_spec: dict,
    out_dir: str | Path,
    *,
    subset: str | None = None,
) -> FixtureResult:
    """Deterministic fixture: image + plant manifest + question manifest."""
    if width < 256 or height < 256:
        raise InvalidArgument(f"fixture dimensions must be >= 256, got {width}x{height}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    tile = int(plant_spec.get("tile", 1024))

    plants: list[Plant] = []
    for raw in plant_spec.get("plants", []):
        size = int(raw.get("size", 256))
        x = min(max(0, int(raw["x"])), width - size)
        y = min(max(0, int(raw["y"])), height - size)
        box = BBox(x, y, x + size, y + size)
        cls = raw["class"]
        cx, cy = (box.x0 + box.x1) // 2, (box.y0 + box.y1) // 2
        micro_qa = {
            "question": f"Which object is planted near position ({cx}, {cy}) in this image?",
            "options": None,  # filled below once all classes are known
            "answer": None,
            "marker": int(raw["marker"]),
        }
        plants.append(
            Plant(
                marker=int(raw["marker"]),
                bbox=box,
                cls=cls,
                caption=raw.get("caption", f"a {cls}"),
                vlm_qa=tuple((q["prompt"], q["answer"]) for q in raw.get("vlm_qa", [])),
                micro_qa=(micro_qa,),
            )
        )
    for i, a in enumerate(plants):
        for b in plants[i + 1 :]:
            if a.bbox.intersects(b.bbox):
                raise InvalidArgument(
                    f"plants {a.marker} and {b.marker} overlap: invalid spec"
                )

    # fill micro QA options now that the class pool is complete
    all_classes = [p.cls for p in plants]
    filled: list[Plant] = []
    for p in plants:
        decoys = [c for c in all_classes if c != p.cls] + list(DECOY_CLASSES)
        slot = random.Random(_stable_seed(seed, p.marker)).randrange(4)
        options, answer = _options_with(p.cls, decoys, slot)
        qa = dict(p.micro_qa[0])
        qa["options"] = list(options)
        qa["answer"] = answer
        filled.append(
            Plant(
                marker=p.marker,
                bbox=p.bbox,
                cls=p.cls,
                caption=p.caption,
                vlm_qa=p.vlm_qa,
                micro_qa=(qa,),
            )
        )
    plants = filled

    # distractor plants: deterministic placement avoiding existing boxes
    n_distractors = int(plant_spec.get("distractors", 0))
    taken = [p.bbox for p in plants]
    for i in range(n_distractors):
        size = 128
        for _attempt in range(100):
            x = rng.randrange(0, max(1, width - size))
            y = rng.randrange(0, max(1, height - size))
            box = BBox(x, y, x + size, y + size)
            pad = BBox(
                max(0, x - 32), max(0, y - 32), min(width, x + size + 32), min(height, y + size + 32)
            )
            if not any(pad.intersects(t) for t in taken):
                break
        else:
            continue
        taken.append(box)
        cls = DISTRACTOR_CLASSES[i % len(DISTRACTOR_CLASSES)]
        plants.append(
            Plant(marker=2000 + i, bbox=box, cls=cls, caption=f"a {cls}", vlm_qa=(), micro_qa=())
        )

    image_path = out / "fixture.ursy"
    write_synthetic(
        image_path,
        width,
        height,
        seed=seed,
        plants=[(p.marker, p.bbox) for p in plants],
    )

    manifest = PlantManifest(
        image=image_path.name, width=width, height=height, plants=tuple(plants)
    )

    def pick_subset(i: int) -> str:
        return subset or _QUESTION_SUBSETS[i % len(_QUESTION_SUBSETS)]

    listed = [p for p in plants if p.micro_qa]
    records: list[QuestionRecord] = []
    meta: list[dict] = []
    for p in listed:
        qa = p.micro_qa[0]
        qid = f"fx{seed}-micro-{p.marker}"
        records.append(
            QuestionRecord(
                id=qid,
                image=image_path.name,
                subset=pick_subset(len(records)),
                level="micro",
                question=qa["question"],
                options=tuple(qa["options"]),
                answer=qa["answer"],
            )
        )
        meta.append(
            {
                "id": qid,
                "level": "micro",
                "markers": [p.marker],
                "tiles": [_tile_of(p.bbox, tile, width, height).to_list()],
            }
        )

    def pair_question(kind: str, a: Plant, b: Plant) -> None:
        correct = " and ".join(sorted([a.cls, b.cls]))
        decoys = [
            f"{sorted([a.cls, b.cls])[0]} and {DECOY_CLASSES[0]}",
            f"{DECOY_CLASSES[1]} and {sorted([a.cls, b.cls])[1]}",
            f"{DECOY_CLASSES[2]} and {DECOY_CLASSES[3]}",
        ]
        slot = random.Random(_stable_seed(seed, kind, a.marker, b.marker)).randrange(4)
        options, answer = _options_with(correct, [correct] + decoys, slot)
        wording = "neighboring" if kind == "regional" else "distant, unrelated"
        qid = f"fx{seed}-{kind}-{a.marker}-{b.marker}"
        records.append(
            QuestionRecord(
                id=qid,
                image=image_path.name,
                subset=pick_subset(len(records)),
                level=kind,
                question=f"Which pair of objects appears in {wording} regions of this image?",
                options=options,
                answer=answer,
            )
        )
        meta.append(
            {
                "id": qid,
                "level": kind,
                "markers": [a.marker, b.marker],
                "tiles": [
                    _tile_of(a.bbox, tile, width, height).to_list(),
                    _tile_of(b.bbox, tile, width, height).to_list(),
                ],
            }
        )

    regional_done = global_done = False
    for i, a in enumerate(listed):
        for b in listed[i + 1 :]:
            ta = _tile_of(a.bbox, tile, width, height)
            tb = _tile_of(b.bbox, tile, width, height)
            if ta == tb:
                continue
            if not regional_done and adjacent(ta, tb):
                pair_question("regional", a, b)
                regional_done = True
            elif not global_done and not adjacent(ta, tb):
                pair_question("global", a, b)
                global_done = True
    plants_path = out / "plants.json"
    payload = manifest.to_dict()
    payload["questions"] = meta
    plants_path.write_text(
        json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8"
    )
    questions_path = out / "questions.jsonl"
    write_manifest(records, questions_path)
    return FixtureResult(
        image_path=str(image_path),
        plants_path=str(plants_path),
        questions_path=str(questions_path),
        manifest=manifest,
        records=records,
        question_meta=meta,
    )
