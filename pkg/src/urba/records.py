"""Question records: the unit of evaluation.

Four distinct options, answer letter A-D, closed subset/level enums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ManifestError

SUBSETS = ("portrait_scroll", "narrative_scroll", "satellite", "street_view")
LEVELS = ("micro", "regional", "global")
LETTERS = "ABCD"

# humanistic = scroll subsets, natural = satellite + street view
CATEGORIES = {
    "humanistic": ("portrait_scroll", "narrative_scroll"),
    "natural": ("satellite", "street_view"),
}


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    image: str
    subset: str
    level: str
    question: str
    options: tuple[str, str, str, str]
    answer: str
    language: str = "en"

    def __post_init__(self):
        if not self.id:
            raise ManifestError("question id must be non-empty")
        if self.subset not in SUBSETS:
            raise ManifestError(f"unknown subset {self.subset!r}; valid: {SUBSETS}")
        if self.level not in LEVELS:
            raise ManifestError(f"unknown level {self.level!r}; valid: {LEVELS}")
        if len(self.options) != 4 or len(set(self.options)) != 4:
            raise ManifestError("options must be exactly 4 distinct texts")
        if self.answer not in LETTERS:
            raise ManifestError(f"answer must be one of {LETTERS}, got {self.answer!r}")

    @property
    def gold_option(self) -> str:
        return self.options[LETTERS.index(self.answer)]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image": self.image,
            "subset": self.subset,
            "level": self.level,
            "question": self.question,
            "options": list(self.options),
            "answer": self.answer,
            "language": self.language,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "QuestionRecord":
        try:
            return cls(
                id=str(raw["id"]),
                image=raw["image"],
                subset=raw["subset"],
                level=raw["level"],
                question=raw["question"],
                options=tuple(raw["options"]),
                answer=raw["answer"],
                language=raw.get("language", "en"),
            )
        except KeyError as exc:
            raise ManifestError(f"question record missing field {exc}") from exc
