"""Holistic scoring of a webpage by a vision-capable model.

Three dimensions look at rendered screenshots (interactivity, visual
quality, informativeness); two look at the HTML source (completeness,
connectivity). Every verdict is a score in [1, 5] plus a non-empty
rationale; out-of-range scores are clamped and flagged rather than
dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import GatewayError, JudgeFailureError
from .gateway import ChatRequest, ImagePart, Message, TextPart
from .html_analyzer import Element, PageModel
from .resources import load_text, render

VISUAL_DIMENSIONS = ("interactive", "aesthetic", "informative")
SOURCE_DIMENSIONS = ("completeness_llm", "connectivity_llm")
ALL_DIMENSIONS = VISUAL_DIMENSIONS + SOURCE_DIMENSIONS

_RUBRICS = {
    "interactive": "judge_interactive",
    "aesthetic": "judge_aesthetic",
    "informative": "judge_informative",
    "completeness_llm": "judge_completeness",
    "connectivity_llm": "judge_connectivity",
}

# Source-excerpt shaping: whole tags and attributes always survive; only
# text runs are shortened.
EXCERPT_BUDGET = 60_000
TEXT_RUN_LIMIT = 200

_SKIP_CONTENT = frozenset({"script", "style", "template"})


@dataclass(frozen=True)
class JudgeVerdict:
    dimension: str
    score: float
    rationale: str
    model: str
    clamped: bool = False


def _score_validator(data):
    if not isinstance(data, dict):
        raise ValueError("reply must be a JSON object")
    if "score" not in data:
        raise ValueError("missing required key 'score'")
    try:
        score = float(data["score"])
    except (TypeError, ValueError):
        raise ValueError("'score' must be a number")
    rationale = str(data.get("rationale", "")).strip()
    if not rationale:
        raise ValueError("'rationale' must be a non-empty string")
    return score, rationale


def _clamped_verdict(dimension: str, score: float, rationale: str,
                     model: str) -> JudgeVerdict:
    bounded = min(5.0, max(1.0, score))
    return JudgeVerdict(dimension=dimension, score=bounded, rationale=rationale,
                        model=model, clamped=bounded != score)


class _Budget:
    def __init__(self, limit: int):
        self.remaining = limit
        self.truncated = False

    def take(self, chunk: str) -> bool:
        if len(chunk) > self.remaining:
            self.truncated = True
            return False
        self.remaining -= len(chunk)
        return True


def _format_open_tag(node: Element) -> str:
    attrs = "".join(f' {k}="{v}"' for k, v in node.attrs.items() if v is not None)
    flags = "".join(f" {k}" for k, v in node.attrs.items() if v is None)
    return f"<{node.tag}{attrs}{flags}>"


def _emit(node, budget: _Budget, out: list) -> bool:
    if isinstance(node, str):
        text = " ".join(node.split())
        if not text:
            return True
        if len(text) > TEXT_RUN_LIMIT:
            text = text[:TEXT_RUN_LIMIT] + "…"
        if not budget.take(text):
            return False
        out.append(text)
        return True
    open_tag = _format_open_tag(node)
    close_tag = f"</{node.tag}>"
    if not budget.take(open_tag + close_tag):
        return False
    out.append(open_tag)
    if node.tag not in _SKIP_CONTENT:
        for child in node.children:
            if not _emit(child, budget, out):
                out.append(close_tag)
                return False
    out.append(close_tag)
    return True


def html_excerpt(page: PageModel, *, budget: int = EXCERPT_BUDGET) -> str:
    """Serialize the parsed tree for a source-reading judge. Tags and
    attribute values (hrefs in particular) are never cut; long text runs
    are, and the whole document is capped at `budget` characters."""
    tracker = _Budget(budget)
    out = []
    for child in page.root.children:
        if not _emit(child, tracker, out):
            break
    if tracker.truncated:
        out.append("<!-- excerpt truncated -->")
    return "".join(out)


def _run_scored_request(parts, dimension, gateway, profile, tag):
    req = ChatRequest(messages=(Message(role="user", parts=tuple(parts)),),
                      temperature=0.0, max_tokens=600,
                      schema_tag=f"judge_{dimension}_v1")
    (score, rationale), resp = gateway.complete_structured(
        req, _score_validator, profile, family="judge", tag=tag)
    return score, rationale, resp.model


def judge_screenshots(screenshots, dimension: str, gateway, profile, *,
                      tag: str = "") -> JudgeVerdict:
    """Score one visual dimension from full-page screenshots.

    When the pile exceeds the profile's per-request image limit, each
    chunk is scored separately and a synthesis request combines the
    partial verdicts.
    """
    if dimension not in VISUAL_DIMENSIONS:
        raise ValueError(f"{dimension!r} is not a screenshot dimension")
    if not screenshots:
        raise JudgeFailureError(dimension, "no screenshots available")
    rubric = load_text(_RUBRICS[dimension])
    per_call = max(1, profile.max_images_per_request)
    chunks = [screenshots[i:i + per_call]
              for i in range(0, len(screenshots), per_call)]
    try:
        if len(chunks) == 1:
            parts = [TextPart(rubric)] + [ImagePart(str(s)) for s in chunks[0]]
            score, rationale, model = _run_scored_request(
                parts, dimension, gateway, profile, tag)
            return _clamped_verdict(dimension, score, rationale, model)

        partials = []
        for i, chunk in enumerate(chunks):
            note = (f"These screenshots are segment {i + 1} of {len(chunks)} "
                    f"of one long page. Score this segment alone; a combined "
                    f"verdict comes later.")
            parts = [TextPart(rubric + "\n\n" + note)]
            parts += [ImagePart(str(s)) for s in chunk]
            score, rationale, _ = _run_scored_request(
                parts, dimension, gateway, profile, tag)
            partials.append(f"Segment {i + 1}: score {score}, {rationale}")
        synthesis = render(load_text("judge_synthesis"),
                           partials="\n".join(partials))
        parts = [TextPart(rubric + "\n\n" + synthesis)]
        score, rationale, model = _run_scored_request(
            parts, dimension, gateway, profile, tag)
        return _clamped_verdict(dimension, score, rationale, model)
    except GatewayError as exc:
        raise JudgeFailureError(dimension, str(exc)) from exc


def judge_html(page: PageModel, dimension: str, gateway, profile, *,
               tag: str = "") -> JudgeVerdict:
    """Score one source dimension from the trimmed HTML excerpt."""
    if dimension not in SOURCE_DIMENSIONS:
        raise ValueError(f"{dimension!r} is not a source dimension")
    rubric = load_text(_RUBRICS[dimension])
    excerpt = html_excerpt(page)
    parts = [TextPart(rubric + "\n\nHTML source:\n" + excerpt)]
    try:
        score, rationale, model = _run_scored_request(
            parts, dimension, gateway, profile, tag)
    except GatewayError as exc:
        raise JudgeFailureError(dimension, str(exc)) from exc
    return _clamped_verdict(dimension, score, rationale, model)


def run_judge_panel(screenshots, page: PageModel, gateway, profile, *,
                    dimensions=ALL_DIMENSIONS, tag: str = ""):
    """Score every requested dimension, isolating failures per dimension.

    Returns (verdicts, failures) where failures maps dimension to the
    reason it could not be scored.
    """
    verdicts = []
    failures = {}
    for dim in dimensions:
        try:
            if dim in VISUAL_DIMENSIONS:
                verdicts.append(judge_screenshots(screenshots, dim, gateway,
                                                  profile, tag=tag))
            else:
                verdicts.append(judge_html(page, dim, gateway, profile, tag=tag))
        except JudgeFailureError as exc:
            failures[dim] = str(exc)
    return verdicts, failures


def aggregate_panel(verdicts, expected=ALL_DIMENSIONS):
    """Collapse verdicts to per-dimension statistics.

    Returns (aggregates, missing): aggregates maps dimension to
    mean/min/max/n over however many verdicts arrived for it; missing
    lists expected dimensions with no verdict at all.
    """
    grouped = {}
    for v in verdicts:
        grouped.setdefault(v.dimension, []).append(v.score)
    aggregates = {
        dim: {
            "mean": sum(scores) / len(scores),
            "min": min(scores),
            "max": max(scores),
            "n": len(scores),
        }
        for dim, scores in grouped.items()
    }
    missing = tuple(d for d in expected if d not in grouped)
    return aggregates, missing
