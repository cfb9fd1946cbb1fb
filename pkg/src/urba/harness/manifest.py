"""JSONL question manifests: one record per line, validated with line
numbers, image paths resolved relative to the manifest file."""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import ManifestError
from ..records import QuestionRecord


def load_manifest(path: str | Path) -> list[QuestionRecord]:
    p = Path(path)
    if not p.is_file():
        raise ManifestError(f"no such manifest: {p}")
    base = p.parent
    records: list[QuestionRecord] = []
    seen: set[str] = set()
    missing: list[str] = []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{p}:{lineno}: invalid JSON: {exc}") from exc
        try:
            record = QuestionRecord.from_dict(raw)
        except ManifestError as exc:
            raise ManifestError(f"{p}:{lineno}: {exc}") from exc
        if record.id in seen:
            raise ManifestError(f"{p}:{lineno}: duplicate question id {record.id!r}")
        seen.add(record.id)
        image = Path(record.image)
        if not image.is_absolute():
            image = base / image
        if not image.is_file():
            missing.append(f"{record.id}: {image}")
        record = QuestionRecord.from_dict({**record.to_dict(), "image": str(image)})
        records.append(record)
    if missing:
        raise ManifestError(
            f"{p}: {len(missing)} image file(s) missing:\n  " + "\n  ".join(missing)
        )
    return records


def write_manifest(records: list[QuestionRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
