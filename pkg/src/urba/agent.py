"""The episode loop: decision-model turns alternating with tool executions.

The decision model is text-only by interface: the conversation consists of
string contents exclusively, so pixels cannot reach it by construction.
Tool results come back as user-role turns. Episodes end answered, invalid
(no parseable answer after retries), budget_exhausted, or backend_failure.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from enum import Enum

from .backends import Backends
from .errors import BackendError, BackendUnavailable, InvalidArgument, ToolCallError
from .records import QuestionRecord
from .image_store import ImageRef
from .tools import (
    EpisodeContext,
    ToolSpec,
    build_default_registry,
    count_tool_blocks,
    dispatch,
    parse_tool_call,
    render_result,
)

FINAL_ANSWER_CONVENTION = "FINAL ANSWER: <letter>"

_ANSWER_PATTERN = re.compile(
    r"final\s*answer\s*[:：\-]*\s*[\(\[\{]?\s*([A-Da-d])(?![A-Za-z])", re.IGNORECASE
)


class EpisodeStatus(str, Enum):
    ANSWERED = "answered"
    INVALID = "invalid"
    BUDGET_EXHAUSTED = "budget_exhausted"
    BACKEND_FAILURE = "backend_failure"


@dataclass(frozen=True)
class EpisodeConfig:
    max_tool_calls: int = 12
    max_parse_retries: int = 2
    max_model_turns: int = 20
    default_chunk_num: int = 10
    retrieval_topk: int = 5

    def __post_init__(self):
        if min(self.max_tool_calls, self.max_model_turns, self.default_chunk_num, self.retrieval_topk) < 1:
            raise InvalidArgument("episode budgets must be >= 1")
        if self.max_parse_retries < 0:
            raise InvalidArgument("max_parse_retries must be >= 0")


@dataclass(frozen=True)
class EpisodeResult:
    question_id: str
    final_answer: str | None
    status: EpisodeStatus
    transcript: tuple[dict, ...]
    tool_counts: dict[str, int]
    wall_time: float
    model_turns: int

    def transcript_jsonl(self) -> str:
        return "\n".join(json.dumps(step, ensure_ascii=False) for step in self.transcript)


def build_system_prompt(
    registry: dict[str, ToolSpec], question: QuestionRecord, width: int, height: int
) -> str:
    """Deterministic system prompt: question, image info, tool schemas,
    calling and final-answer conventions."""
    lines = [
        "You are a decision model answering a four-option single-choice question "
        "about an ultra-high-resolution image.",
        "You cannot see the image directly; interact with it only through the tools below.",
        "",
        f"Image: img_0 ({width}×{height} px)",
        f"Question: {question.question}",
        "Options:",
    ]
    for letter, option in zip("ABCD", question.options):
        lines.append(f"{letter}. {option}")
    lines.append("")
    lines.append("Tools:")
    for name in sorted(registry):
        spec = registry[name]
        args = ", ".join(
            f"{a.name}: {a.kind}" + ("" if a.required else f" = {a.default}")
            for a in spec.args
        )
        lines.append(f"- {spec.name}({args}) -> {spec.result}: {spec.purpose}")
    lines += [
        "",
        "To call a tool, reply with exactly one fenced block tagged `tool`:",
        "```tool",
        '{"tool": "<name>", "args": {...}}',
        "```",
        "The tool result arrives in the next message.",
        "",
        f"When you know the answer, reply with: {FINAL_ANSWER_CONVENTION}",
    ]
    return "\n".join(lines)


def extract_answer(model_text: str) -> str | None:
    """Last 'FINAL ANSWER: X' occurrence; bare single-letter text accepted."""
    matches = _ANSWER_PATTERN.findall(model_text)
    if matches:
        return matches[-1].upper()
    stripped = model_text.strip()
    if len(stripped) == 1 and stripped.upper() in "ABCD":
        return stripped.upper()
    return None


def run_episode(
    question: QuestionRecord,
    image: ImageRef,
    backends: Backends,
    registry: dict[str, ToolSpec] | None = None,
    config: EpisodeConfig | None = None,
    *,
    context: EpisodeContext | None = None,
) -> EpisodeResult:
    """One full agent run on one question. The loop itself never raises."""
    config = config or EpisodeConfig()
    if registry is None:
        registry = build_default_registry(config.default_chunk_num, config.retrieval_topk)
    ctx = context or EpisodeContext(image, backends, registry)
    start = time.perf_counter()

    system = build_system_prompt(registry, question, image.width, image.height)
    conversation: list[dict] = [
        {"role": "system", "content": system},
        {"role": "user", "content": "Begin. Use tools as needed, then give your final answer."},
    ]

    status = EpisodeStatus.BUDGET_EXHAUSTED
    answer: str | None = None
    recoveries = 0
    dispatched = 0
    model_turns = 0

    while model_turns < config.max_model_turns:
        try:
            text = backends.chat.chat(conversation)
        except (BackendUnavailable, BackendError) as exc:
            ctx.add_step("tool", f"ERROR[{exc.code}]: {exc.message}", error={"code": exc.code, "msg": exc.message})
            status = EpisodeStatus.BACKEND_FAILURE
            break
        model_turns += 1
        ctx.add_step("model", text)
        conversation.append({"role": "assistant", "content": text})

        try:
            call = parse_tool_call(text, registry)
        except ToolCallError as exc:
            feedback = f"ERROR[{exc.code}]: {exc.message}"
            ctx.add_step("tool", feedback, error={"code": exc.code, "msg": exc.message})
            if recoveries >= config.max_parse_retries:
                status = EpisodeStatus.INVALID
                break
            recoveries += 1
            conversation.append(
                {"role": "user", "content": f"{feedback}\nRe-emit a valid tool call or reply {FINAL_ANSWER_CONVENTION}."}
            )
            continue

        if call is None:
            answer = extract_answer(text)
            if answer is not None:
                status = EpisodeStatus.ANSWERED
                break
            if recoveries >= config.max_parse_retries:
                status = EpisodeStatus.INVALID
                break
            recoveries += 1
            conversation.append(
                {"role": "user", "content": f"No answer detected. Respond with {FINAL_ANSWER_CONVENTION}."}
            )
            continue

        if dispatched >= config.max_tool_calls:
            notice = (
                f"Tool-call budget of {config.max_tool_calls} exhausted. "
                f"Respond with {FINAL_ANSWER_CONVENTION}."
            )
            ctx.add_step("tool", notice)
            conversation.append({"role": "user", "content": notice})
            continue

        if count_tool_blocks(text) > 1:
            ctx.add_step("tool", "note: multiple tool blocks in one turn; only the first valid block was executed")
        result = dispatch(call, ctx)
        dispatched += 1
        conversation.append(
            {"role": "user", "content": render_result(result, ctx.result_cap_tokens)}
        )

    return EpisodeResult(
        question_id=question.id,
        final_answer=answer,
        status=status,
        transcript=tuple(ctx.transcript),
        tool_counts=dict(ctx.tool_counts),
        wall_time=time.perf_counter() - start,
        model_turns=model_turns,
    )
