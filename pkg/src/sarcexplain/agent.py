"""Thought/Action/Observation loop for the knowledge-gap (KG) strategy."""

from __future__ import annotations

import ast
import json
import logging
import re
from dataclasses import dataclass
from typing import Callable, Iterator, Protocol

from .dataset_io import Sample
from .llm_client import Completion, EndpointConfig, GenerationConfig
from .prompts import Message, PromptBundle, Strategy, build_prompt
from .search import NO_RESULTS, SearchProvider, SearchTool

logger = logging.getLogger(__name__)

SEARCH = "Search"
FINAL_ANSWER = "Final Answer"
DEFAULT_MAX_STEPS = 8
DEFAULT_INCOMPATIBLE_THRESHOLD = 0.5
CORRECTIVE_PROMPT = (
    "Your last output was not a valid action blob. Reply with a Thought and exactly one "
    'JSON blob: {"action": "Search" or "Final Answer", "action_input": "..."}'
)

FINAL_ANSWER_OUTCOME = "final_answer"
BUDGET_OUTCOME = "step_budget_exceeded"
FAILURE_OUTCOME = "protocol_failure"


class ActionParseError(ValueError):
    pass


class NoJsonFound(ActionParseError):
    pass


class InvalidJson(ActionParseError):
    pass


class UnknownAction(ActionParseError):
    def __init__(self, name: object) -> None:
        self.name = name
        super().__init__(f"unknown action {name!r}")


class MissingKey(ActionParseError):
    def __init__(self, key: str) -> None:
        self.key = key
        super().__init__(f"action blob has no {key!r} key")


@dataclass(frozen=True)
class Action:
    name: str
    input: str


@dataclass(frozen=True)
class AgentStep:
    thought: str
    action: Action
    observation: str = ""
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "thought": self.thought,
            "action": {"name": self.action.name, "input": self.action.input},
            "observation": self.observation,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AgentStep":
        return cls(
            thought=data["thought"],
            action=Action(data["action"]["name"], data["action"]["input"]),
            observation=data.get("observation", ""),
            warnings=tuple(data.get("warnings", ())),
        )


@dataclass(frozen=True)
class Outcome:
    kind: str
    detail: str | None = None

    @classmethod
    def final_answer(cls, text: str) -> "Outcome":
        return cls(FINAL_ANSWER_OUTCOME, text)

    @classmethod
    def budget_exceeded(cls) -> "Outcome":
        return cls(BUDGET_OUTCOME)

    @classmethod
    def protocol_failure(cls, reason: str) -> "Outcome":
        return cls(FAILURE_OUTCOME, reason)


@dataclass(frozen=True)
class AgentTrace:
    sample_id: str
    steps: tuple[AgentStep, ...]
    outcome: Outcome
    turns: int = 0

    @property
    def final_answer(self) -> str | None:
        return self.outcome.detail if self.outcome.kind == FINAL_ANSWER_OUTCOME else None

    @property
    def failed(self) -> bool:
        return self.outcome.kind == FAILURE_OUTCOME

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "steps": [s.to_dict() for s in self.steps],
            "outcome": {"kind": self.outcome.kind, "detail": self.outcome.detail},
            "turns": self.turns,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AgentTrace":
        return cls(
            sample_id=data["sample_id"],
            steps=tuple(AgentStep.from_dict(s) for s in data["steps"]),
            outcome=Outcome(data["outcome"]["kind"], data["outcome"].get("detail")),
            turns=data.get("turns", 0),
        )


class ToolRegistry(dict):
    """Tool name -> ``fn(query) -> observation``. Tools must be thread-safe."""

    @classmethod
    def with_search(cls, provider: SearchProvider, **kwargs) -> "ToolRegistry":
        return cls({SEARCH: SearchTool(provider, **kwargs)})


class ChatModel(Protocol):
    def complete(self, bundle: PromptBundle, cfg: GenerationConfig, ep: EndpointConfig) -> Completion: ...


# -- action blob parsing ------------------------------------------------------

def _object_spans(text: str) -> Iterator[tuple[int, int]]:
    """Yield (start, end) of every top-level balanced ``{...}`` span.

    Brace counting skips over quoted strings of either quote style.
    """
    i, n = 0, len(text)
    while i < n:
        start = text.find("{", i)
        if start < 0:
            return
        depth, quote, escaped = 0, None, False
        j = start
        while j < n:
            ch = text[j]
            if quote:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == quote:
                    quote = None
            elif ch in "\"'":
                quote = ch
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    yield start, j + 1
                    break
            j += 1
        else:
            i = start + 1
            continue
        i = j + 1


def _load_object(blob: str) -> dict | None:
    for candidate in (blob, blob.replace("“", '"').replace("”", '"')):
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            try:
                obj = ast.literal_eval(candidate)
            except (ValueError, SyntaxError, MemoryError, RecursionError):
                continue
        if isinstance(obj, dict):
            return obj
    return None


_ACTION_NAMES = {"search": SEARCH, "final answer": FINAL_ANSWER, "final_answer": FINAL_ANSWER}
_TRAILING_MARKER = re.compile(r"(?:\s*(?:```(?:json)?|action\s*:))+\s*$", re.I)
_LEADING_THOUGHT = re.compile(r"^\s*(?:thought(?:\s*\d+)?\s*:)\s*", re.I)


def _input_text(value: object) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, dict):
        for key in ("tool_input", "query", "input"):
            if isinstance(value.get(key), str):
                return value[key]
    return json.dumps(value, ensure_ascii=False)


def parse_action_blob(model_output: str, warnings: list[str] | None = None) -> tuple[str, Action]:
    """Split model output into the thought and its single action.

    Only the first JSON object counts; any later ones are reported through
    ``warnings`` and ignored.
    """
    first: tuple[int, int, dict] | None = None
    seen_span = False
    extra = 0
    for start, end in _object_spans(model_output or ""):
        seen_span = True
        obj = _load_object(model_output[start:end])
        if obj is None:
            continue
        if first is None:
            first = (start, end, obj)
        else:
            extra += 1
    if first is None:
        if seen_span:
            raise InvalidJson("no parseable JSON object in model output")
        raise NoJsonFound("model output contains no JSON object")
    if extra:
        msg = f"ignored {extra} extra action blob(s)"
        logger.warning(msg)
        if warnings is not None:
            warnings.append(msg)

    start, _, obj = first
    for key in ("action", "action_input"):
        if key not in obj:
            raise MissingKey(key)
    raw_name = obj["action"]
    name = _ACTION_NAMES.get(str(raw_name).strip().casefold()) if isinstance(raw_name, str) else None
    if name is None:
        raise UnknownAction(raw_name)

    thought = _TRAILING_MARKER.sub("", model_output[:start])
    thought = _LEADING_THOUGHT.sub("", thought).strip()
    return thought, Action(name, _input_text(obj["action_input"]))


def _blob_end(model_output: str) -> int:
    for start, end in _object_spans(model_output):
        if _load_object(model_output[start:end]) is not None:
            return end
    return len(model_output)


# -- the loop -----------------------------------------------------------------

def run_agent(
    sample: Sample,
    tools: ToolRegistry | dict[str, Callable[[str], str]],
    client: ChatModel,
    ep: EndpointConfig,
    cfg: GenerationConfig,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> AgentTrace:
    """Run one KG episode.

    Each turn re-sends the whole transcript. One malformed reply earns a
    corrective re-prompt; a second consecutive one ends the episode. A
    failing tool becomes an ``Error: ...`` observation once; a second tool
    failure ends the episode.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    bundle = build_prompt(Strategy.KG, sample)
    steps: list[AgentStep] = []
    turns = malformed = tool_errors = 0

    def done(outcome: Outcome) -> AgentTrace:
        return AgentTrace(sample.id, tuple(steps), outcome, turns)

    while len(steps) < max_steps:
        turns += 1
        try:
            output = client.complete(bundle, cfg, ep).text
        except Exception as exc:  # client already applied its retry policy
            return done(Outcome.protocol_failure(f"client error: {exc}"))

        notes: list[str] = []
        try:
            thought, action = parse_action_blob(output, notes)
        except ActionParseError as exc:
            malformed += 1
            if malformed > 1:
                reason = "no action blob" if isinstance(exc, NoJsonFound) else f"invalid action blob: {exc}"
                return done(Outcome.protocol_failure(reason))
            bundle = bundle.extend(
                Message("assistant", output.strip() or "(empty reply)"),
                Message("user", CORRECTIVE_PROMPT),
            )
            continue
        malformed = 0

        if action.name == FINAL_ANSWER:
            steps.append(AgentStep(thought, action, "", tuple(notes)))
            return done(Outcome.final_answer(action.input))

        tool = tools.get(action.name)
        try:
            if tool is None:
                raise LookupError(f"tool {action.name!r} is not available")
            observation = tool(action.input) or NO_RESULTS
        except Exception as exc:
            tool_errors += 1
            observation = f"Error: {exc}"
            if tool_errors > 1:
                steps.append(AgentStep(thought, action, observation, tuple(notes)))
                return done(Outcome.protocol_failure(f"tool error: {exc}"))
        steps.append(AgentStep(thought, action, observation, tuple(notes)))
        bundle = bundle.extend(
            Message("assistant", output[: _blob_end(output)].strip()),
            Message("user", f"Observation: {observation}"),
        )
    return done(Outcome.budget_exceeded())


@dataclass(frozen=True)
class CompatibilityVerdict:
    compatible: bool
    failures: int
    n: int
    threshold: float = DEFAULT_INCOMPATIBLE_THRESHOLD

    @property
    def failure_rate(self) -> float:
        return self.failures / self.n if self.n else 0.0


def kg_compatibility_check(
    trace_set: list[AgentTrace], threshold: float = DEFAULT_INCOMPATIBLE_THRESHOLD
) -> CompatibilityVerdict:
    """A run is incompatible when the protocol-failure fraction exceeds ``threshold``."""
    failures = sum(1 for t in trace_set if t.failed)
    n = len(trace_set)
    rate = failures / n if n else 0.0
    return CompatibilityVerdict(rate <= threshold, failures, n, threshold)


__all__ = [
    "Action",
    "ActionParseError",
    "AgentStep",
    "AgentTrace",
    "CompatibilityVerdict",
    "FINAL_ANSWER",
    "InvalidJson",
    "MissingKey",
    "NoJsonFound",
    "Outcome",
    "SEARCH",
    "ToolRegistry",
    "UnknownAction",
    "kg_compatibility_check",
    "parse_action_blob",
    "run_agent",
]
