"""Plant manifest: what the synthetic fixture planted, and where.

The manifest is the shared ground truth between the fixture generator and
the mock perception backends: marker id -> bbox, object class, caption
text, and per-marker VQA pairs. Mocks decode marker ids from pixels and
look the rest up here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ManifestError
from .geometry import BBox


@dataclass(frozen=True)
class Plant:
    marker: int
    bbox: BBox
    cls: str
    caption: str
    vlm_qa: tuple[tuple[str, str], ...] = field(default=())
    micro_qa: tuple[dict, ...] = field(default=())


@dataclass(frozen=True)
class PlantManifest:
    image: str
    width: int
    height: int
    plants: tuple[Plant, ...]

    def by_marker(self, marker: int) -> Plant | None:
        for p in self.plants:
            if p.marker == marker:
                return p
        return None

    def to_dict(self) -> dict:
        return {
            "image": self.image,
            "width": self.width,
            "height": self.height,
            "plants": [
                {
                    "marker": p.marker,
                    "bbox": p.bbox.to_list(),
                    "class": p.cls,
                    "caption": p.caption,
                    "vlm_qa": [{"prompt": q, "answer": a} for q, a in p.vlm_qa],
                    "micro_qa": list(p.micro_qa),
                }
                for p in self.plants
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PlantManifest":
        try:
            plants = tuple(
                Plant(
                    marker=p["marker"],
                    bbox=BBox.from_list(p["bbox"]),
                    cls=p["class"],
                    caption=p["caption"],
                    vlm_qa=tuple((q["prompt"], q["answer"]) for q in p.get("vlm_qa", [])),
                    micro_qa=tuple(p.get("micro_qa", [])),
                )
                for p in raw["plants"]
            )
            return cls(
                image=raw["image"], width=raw["width"], height=raw["height"], plants=plants
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed plant manifest: {exc}") from exc


def save_plant_manifest(manifest: PlantManifest, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(manifest.to_dict(), ensure_ascii=False, indent=2), encoding="utf-8"
    )


def load_plant_manifest(path: str | Path) -> PlantManifest:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"unreadable plant manifest {path}: {exc}") from exc
    return PlantManifest.from_dict(raw)


EMPTY_MANIFEST = PlantManifest(image="", width=0, height=0, plants=())
