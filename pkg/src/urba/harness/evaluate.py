"""Evaluation runs and the accuracy metric.

Accuracy is correct/valid within each slice, valid = episodes whose final
answer parses to a letter; slices with no valid episodes report "n/a",
never 0. The primary overall figure is micro-averaged across questions;
a macro average over the four subsets is also emitted. Counts fold
budget_exhausted into ``invalid`` (no parseable answer) and keep backend
failures under ``failed``; episode artifacts retain fine-grained statuses.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..agent import EpisodeConfig, EpisodeStatus, extract_answer, run_episode
from ..backends import Backends
from ..errors import BackendError, BackendUnavailable, InvalidArgument
from ..image_store import TokenBudget, downsample_to_budget, encode_png, open_image
from ..records import CATEGORIES, LEVELS, SUBSETS, QuestionRecord
from ..tools import TOOL_NAMES

E2E_PROMPT = (
    "{question}\nOptions:\n{options}\nAnswer the single-choice question. "
    "Reply with FINAL ANSWER: <letter>."
)

REPORT_NOTES = (
    "end-to-end resize interpolation: exact area-average (artifact choice)",
    "overall is micro-averaged over questions; overall_macro_subsets is the "
    "macro average over subsets with valid episodes",
    "counts.invalid includes budget-exhausted episodes (no parseable answer)",
    'accuracy slices with zero valid episodes report "n/a"',
)


@dataclass(frozen=True)
class EpisodeOutcome:
    question_id: str
    subset: str
    level: str
    gold: str
    status: str
    final_answer: str | None
    correct: bool | None
    tool_counts: dict[str, int]
    model_turns: int
    wall_time: float
    transcript: tuple[dict, ...] = ()

    def summary_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "subset": self.subset,
            "level": self.level,
            "gold": self.gold,
            "status": self.status,
            "final_answer": self.final_answer,
            "correct": self.correct,
            "tool_counts": self.tool_counts,
            "model_turns": self.model_turns,
        }


@dataclass(frozen=True)
class EvalReport:
    mode: str
    per_subset: dict[str, float | None]
    per_category: dict[str, float | None]
    per_level: dict[str, float | None]
    overall: float | None
    overall_macro_subsets: float | None
    counts: dict[str, int]
    tool_usage: dict | None
    notes: tuple[str, ...] = REPORT_NOTES

    @staticmethod
    def _acc(value: float | None):
        return "n/a" if value is None else value

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "per_subset": {k: self._acc(v) for k, v in self.per_subset.items()},
            "per_category": {k: self._acc(v) for k, v in self.per_category.items()},
            "per_level": {k: self._acc(v) for k, v in self.per_level.items()},
            "overall": self._acc(self.overall),
            "overall_macro_subsets": self._acc(self.overall_macro_subsets),
            "counts": self.counts,
            "tool_usage": self.tool_usage,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2)


def tool_usage_stats(tool_counts_list: list[dict[str, int]]) -> dict:
    """Per-tool mean calls per episode (zero-call episodes included) and
    the overall mean across tools."""
    if not tool_counts_list:
        raise InvalidArgument("tool_usage_stats requires at least one episode")
    n = len(tool_counts_list)
    per_tool = {
        name: sum(tc.get(name, 0) for tc in tool_counts_list) / n for name in TOOL_NAMES
    }
    overall = sum(per_tool.values()) / len(per_tool)
    return {"per_tool": per_tool, "overall_mean": overall}


def _slice_accuracy(outcomes: list[EpisodeOutcome]) -> float | None:
    valid = [o for o in outcomes if o.status == EpisodeStatus.ANSWERED.value]
    if not valid:
        return None
    return sum(1 for o in valid if o.correct) / len(valid)


def build_report(outcomes: list[EpisodeOutcome], mode: str) -> EvalReport:
    per_subset = {
        s: _slice_accuracy([o for o in outcomes if o.subset == s]) for s in SUBSETS
    }
    per_category = {
        cat: _slice_accuracy([o for o in outcomes if o.subset in members])
        for cat, members in CATEGORIES.items()
    }
    per_level = {
        lv: _slice_accuracy([o for o in outcomes if o.level == lv]) for lv in LEVELS
    }
    overall = _slice_accuracy(outcomes)
    present = [v for v in per_subset.values() if v is not None]
    macro = sum(present) / len(present) if present else None
    answered = [o for o in outcomes if o.status == EpisodeStatus.ANSWERED.value]
    counts = {
        "total": len(outcomes),
        "valid": len(answered),
        "correct": sum(1 for o in answered if o.correct),
        "invalid": sum(
            1
            for o in outcomes
            if o.status
            in (EpisodeStatus.INVALID.value, EpisodeStatus.BUDGET_EXHAUSTED.value)
        ),
        "failed": sum(
            1 for o in outcomes if o.status == EpisodeStatus.BACKEND_FAILURE.value
        ),
    }
    tool_usage = tool_usage_stats([o.tool_counts for o in outcomes]) if mode == "agent" and outcomes else None
    return EvalReport(
        mode=mode,
        per_subset=per_subset,
        per_category=per_category,
        per_level=per_level,
        overall=overall,
        overall_macro_subsets=macro,
        counts=counts,
        tool_usage=tool_usage,
    )


def _run_agent_episode(record: QuestionRecord, backends: Backends, config: EpisodeConfig) -> EpisodeOutcome:
    ref = open_image(record.image)
    result = run_episode(record, ref, backends, config=config)
    answered = result.status == EpisodeStatus.ANSWERED
    return EpisodeOutcome(
        question_id=record.id,
        subset=record.subset,
        level=record.level,
        gold=record.answer,
        status=result.status.value,
        final_answer=result.final_answer,
        correct=(result.final_answer == record.answer) if answered else None,
        tool_counts=result.tool_counts,
        model_turns=result.model_turns,
        wall_time=result.wall_time,
        transcript=result.transcript,
    )


def _run_e2e_episode(record: QuestionRecord, backends: Backends, budget: TokenBudget) -> EpisodeOutcome:
    import time

    start = time.perf_counter()
    try:
        ref = open_image(record.image)
        window = downsample_to_budget(ref, budget)
        options = "\n".join(f"{letter}. {o}" for letter, o in zip("ABCD", record.options))
        prompt = E2E_PROMPT.format(question=record.question, options=options)
        text = backends.vlm.vlm(encode_png(window), prompt)
        answer = extract_answer(text)
        status = EpisodeStatus.ANSWERED if answer else EpisodeStatus.INVALID
        transcript = ({"turn": 0, "role": "model", "text": text},)
    except (BackendUnavailable, BackendError) as exc:
        answer, status = None, EpisodeStatus.BACKEND_FAILURE
        transcript = (
            {"turn": 0, "role": "tool", "text": f"ERROR[{exc.code}]: {exc.message}",
             "error": {"code": exc.code, "msg": exc.message}},
        )
    return EpisodeOutcome(
        question_id=record.id,
        subset=record.subset,
        level=record.level,
        gold=record.answer,
        status=status.value,
        final_answer=answer,
        correct=(answer == record.answer) if status == EpisodeStatus.ANSWERED else None,
        tool_counts={name: 0 for name in TOOL_NAMES},
        model_turns=1,
        wall_time=time.perf_counter() - start,
        transcript=transcript,
    )


def run_eval(
    records: list[QuestionRecord],
    mode: str,
    backends,
    config: EpisodeConfig | None = None,
    *,
    parallelism: int = 4,
    episodes_dir: str | Path | None = None,
    e2e_budget: TokenBudget | None = None,
) -> tuple[EvalReport, list[EpisodeOutcome]]:
    """Evaluate records in a bounded worker pool.

    ``backends`` is a Backends bundle or a callable record -> Backends
    (lets tests give每 episode its own scripted decision model).
    Per-episode failures are data, never exceptions. Report assembly is
    deterministic in manifest order regardless of completion order.
    """
    if mode not in ("agent", "end_to_end", "e2e"):
        raise InvalidArgument(f"unknown eval mode {mode!r}")
    mode = "end_to_end" if mode == "e2e" else mode
    config = config or EpisodeConfig()
    budget = e2e_budget or TokenBudget(max_tokens=10000)
    provider = backends if callable(backends) else (lambda record: backends)

    def run_one(record: QuestionRecord) -> EpisodeOutcome:
        b = provider(record)
        if mode == "agent":
            return _run_agent_episode(record, b, config)
        return _run_e2e_episode(record, b, budget)

    if parallelism > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(run_one, records))
    else:
        outcomes = [run_one(r) for r in records]

    report = build_report(outcomes, mode)
    if episodes_dir is not None:
        write_episode_artifacts(outcomes, episodes_dir, mode)
    return report, outcomes


def write_episode_artifacts(
    outcomes: list[EpisodeOutcome], episodes_dir: str | Path, mode: str
) -> None:
    """episodes.jsonl summary plus one transcript JSON per episode."""
    d = Path(episodes_dir)
    d.mkdir(parents=True, exist_ok=True)
    with (d / "episodes.jsonl").open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"mode": mode}) + "\n")
        for o in outcomes:
            fh.write(json.dumps(o.summary_dict(), ensure_ascii=False) + "\n")
    for o in outcomes:
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in o.question_id)
        artifact = {
            **o.summary_dict(),
            "wall_time": o.wall_time,
            "transcript": list(o.transcript),
        }
        (d / f"{safe}.json").write_text(
            json.dumps(artifact, ensure_ascii=False, indent=2), encoding="utf-8"
        )


def recompute_report(episodes_dir: str | Path) -> EvalReport:
    """Rebuild the report purely from the episodes.jsonl artifact."""
    lines = (Path(episodes_dir) / "episodes.jsonl").read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    outcomes = []
    for line in lines[1:]:
        raw = json.loads(line)
        outcomes.append(
            EpisodeOutcome(
                question_id=raw["question_id"],
                subset=raw["subset"],
                level=raw["level"],
                gold=raw["gold"],
                status=raw["status"],
                final_answer=raw["final_answer"],
                correct=raw["correct"],
                tool_counts=raw["tool_counts"],
                model_turns=raw["model_turns"],
                wall_time=0.0,
            )
        )
    return build_report(outcomes, header["mode"])
