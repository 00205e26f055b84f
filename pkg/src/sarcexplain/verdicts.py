"""Turn raw completions into a three-way verdict plus explanation."""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass

from .prompts import Strategy

logger = logging.getLogger(__name__)


class Label(enum.Enum):
    SARCASTIC = "sarcastic"
    NOT_SARCASTIC = "not_sarcastic"
    NEED_CONTEXT = "need_context"


class EmptyCompletion(ValueError):
    pass


class NoExplanationFound(ValueError):
    pass


@dataclass(frozen=True)
class Verdict:
    label: Label
    explanation: str | None = None

    def __post_init__(self) -> None:
        if self.label is Label.SARCASTIC:
            if not self.explanation or not self.explanation.strip():
                raise ValueError("a sarcastic verdict needs a non-empty explanation")
        elif self.explanation is not None:
            raise ValueError(f"{self.label.value} verdicts carry no explanation")

    @classmethod
    def sarcastic(cls, explanation: str) -> "Verdict":
        return cls(Label.SARCASTIC, explanation)

    @classmethod
    def not_sarcastic(cls) -> "Verdict":
        return cls(Label.NOT_SARCASTIC)

    @classmethod
    def need_context(cls) -> "Verdict":
        return cls(Label.NEED_CONTEXT)

    @property
    def is_sarcastic(self) -> bool:
        return self.label is Label.SARCASTIC

    def to_dict(self) -> dict:
        return {"label": self.label.value, "explanation": self.explanation}

    @classmethod
    def from_dict(cls, data: dict) -> "Verdict":
        return cls(Label(data["label"]), data.get("explanation"))


def render(verdict: Verdict) -> str:
    """Canonical text form; ``parse_verdict`` maps it back to ``verdict``."""
    if verdict.label is Label.SARCASTIC:
        return f"sarcastic. Explanation: {verdict.explanation}"
    return verdict.label.value


# Underscore spellings are deliberate label tokens wherever they appear.
_NS_TOKEN = re.compile(r"not_sarcastic", re.I)
_NC_TOKEN = re.compile(r"needs?_context", re.I)
# Spaced spellings read as prose unless they sit on the decision line.
_NS_SPACED = re.compile(r"\bnot[\s-]+sarcastic\b", re.I)
_NC_SPACED = re.compile(r"\bneeds?[\s-]+(?:more\s+)?context\b", re.I)
_STANDALONE_STRIP = " \t\"'`*_.:!-()[]>#"
_SARCASTIC_LEAD = re.compile(r"^[\W_]*sarcastic\b", re.I)

_LEADING_MARKER = re.compile(
    r"^[\s*_#>\"'`]*(?:sarcastic\s*[.:!-]+|explanation\s*[:.-]|final\s+(?:answer|explanation)\s*[:.-])[\s*_\"'`]*",
    re.I,
)
_EXPLANATION_MARKER = re.compile(r"\bexplanation[*_]*\s*:", re.I)
_STEP6_HEADER = re.compile(
    r"^[\s#>*_]*(?:step\s*6\b|6\s*[.):]|final\s+explanation\b)", re.I
)
_HEADER_PREFIX = re.compile(
    r"^[\s#>*_]*(?:step\s*6|6\s*[.):])?[\s*_:.-]*(?:final\s+explanation)?[\s*_:.-]*",
    re.I,
)


def _label_in_line(line: str) -> Label | None:
    if _NS_TOKEN.search(line):
        return Label.NOT_SARCASTIC
    if _NC_TOKEN.search(line):
        return Label.NEED_CONTEXT
    if _SARCASTIC_LEAD.match(line):
        return None
    if _NS_SPACED.search(line):
        return Label.NOT_SARCASTIC
    if _NC_SPACED.search(line):
        return Label.NEED_CONTEXT
    return None


def _label_in_text(text: str) -> Label | None:
    if _NS_TOKEN.search(text):
        return Label.NOT_SARCASTIC
    if _NC_TOKEN.search(text):
        return Label.NEED_CONTEXT
    for line in text.splitlines():
        bare = line.strip(_STANDALONE_STRIP).lower()
        if _NS_SPACED.fullmatch(bare):
            return Label.NOT_SARCASTIC
        if _NC_SPACED.fullmatch(bare):
            return Label.NEED_CONTEXT
    return None


def _strip_markers(text: str) -> str:
    text = text.strip()
    while True:
        stripped = _LEADING_MARKER.sub("", text, count=1).lstrip(" \t\n*_").strip()
        if stripped == text:
            return text
        text = stripped


def _paragraphs(text: str) -> list[str]:
    return [p.strip() for p in re.split(r"\n\s*\n", text) if p.strip()]


def _step6_section(text: str) -> str | None:
    lines = text.splitlines()
    for idx in range(len(lines) - 1, -1, -1):
        if _STEP6_HEADER.match(lines[idx]):
            head_rest = _HEADER_PREFIX.sub("", lines[idx], count=1).strip()
            body = "\n".join(([head_rest] if head_rest else []) + lines[idx + 1 :]).strip()
            return body
    return None


def extract_explanation(text: str, strategy: Strategy | str) -> str:
    """Pull the explanation out of a completion already judged sarcastic.

    PMP outputs use the section after the last step-6 / "Final Explanation"
    header; everything else uses the text after an ``Explanation:`` marker,
    else the last paragraph.
    """
    strategy = Strategy.parse(strategy)
    text = text.strip()
    candidate = None
    if strategy is Strategy.PMP:
        candidate = _step6_section(text)
    if candidate is None:
        marker = None
        for marker in _EXPLANATION_MARKER.finditer(text):
            pass
        if marker is not None and strategy is not Strategy.PMP:
            candidate = text[marker.end() :]
        else:
            paragraphs = _paragraphs(text)
            candidate = paragraphs[-1] if paragraphs else ""
    explanation = _strip_markers(candidate)
    if not explanation:
        raise NoExplanationFound("completion has no explanation text")
    return explanation


def parse_verdict(text: str, strategy: Strategy | str) -> Verdict:
    """Classify a completion.

    Label tokens are looked for on the final non-empty line first, then in
    the whole text. A sarcastic completion without any usable explanation
    becomes ``need_context`` so every sample still gets one verdict.
    """
    if text is None or not text.strip():
        raise EmptyCompletion("completion is empty")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    label = _label_in_line(lines[-1]) or _label_in_text(text)
    if label is Label.NOT_SARCASTIC:
        return Verdict.not_sarcastic()
    if label is Label.NEED_CONTEXT:
        return Verdict.need_context()
    try:
        return Verdict.sarcastic(extract_explanation(text, strategy))
    except NoExplanationFound:
        logger.info("no explanation found in completion; scoring as need_context")
        return Verdict.need_context()
