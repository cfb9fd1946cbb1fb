"""Dataset loading, evaluation runs, metrics, and fixture generation."""

from .evaluate import (
    EpisodeOutcome,
    EvalReport,
    recompute_report,
    run_eval,
    tool_usage_stats,
)
from .fixture import generate_fixture
from .manifest import load_manifest

__all__ = [
    "EpisodeOutcome",
    "EvalReport",
    "generate_fixture",
    "load_manifest",
    "recompute_report",
    "run_eval",
    "tool_usage_stats",
]
