"""Prompt construction for the five prompting strategies."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .dataset_io import Sample, Variety

TEXT_PREFIX = "Text: "


class Strategy(enum.Enum):
    ZERO = "zero"
    FEW = "few"
    ORIGIN = "origin"
    KG = "kg"
    PMP = "pmp"

    @classmethod
    def parse(cls, value: "str | Strategy") -> "Strategy":
        if isinstance(value, Strategy):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown strategy {value!r}") from None


class OriginUnsupportedVariety(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"invalid role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class PromptBundle:
    messages: tuple[Message, ...]
    strategy: Strategy

    def to_dicts(self) -> list[dict]:
        return [m.to_dict() for m in self.messages]

    def extend(self, *messages: Message) -> "PromptBundle":
        return PromptBundle(self.messages + tuple(messages), self.strategy)

    def render(self) -> str:
        """Human-readable dump used by ``explain-prompt`` and the golden files."""
        return "\n\n".join(f"[{m.role}]\n{m.content}" for m in self.messages) + "\n"


@dataclass(frozen=True)
class Exemplar:
    text: str
    explanation: str


def _template(name: str) -> str:
    return resources.files(__package__).joinpath("templates", name).read_text("utf-8")


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return _template(f"{name}.txt").rstrip("\n")


@lru_cache(maxsize=1)
def _exemplars() -> tuple[Exemplar, ...]:
    raw = json.loads(_template("exemplars.json"))
    return tuple(Exemplar(**item) for item in raw)


def few_shot_exemplars() -> list[Exemplar]:
    return list(_exemplars())


def build_kg_system_prompt() -> str:
    return load_template("kg")


def _few_instruction() -> str:
    items = [
        f"{i}. Text: {ex.text}\nExplanation: {ex.explanation}"
        for i, ex in enumerate(_exemplars(), 1)
    ]
    return load_template("few") + "\n\n" + "\n\n".join(items)


def _origin_instruction(variety: Variety) -> str:
    if variety not in (Variety.AUSTRALIAN, Variety.INDIAN):
        raise OriginUnsupportedVariety(
            f"origin prompting needs an Australian or Indian sample, got {variety.display_name}"
        )
    return load_template("origin").replace("{variety}", variety.display_name)


def system_instruction(strategy: Strategy, variety: Variety | None = None) -> str:
    if strategy is Strategy.ZERO:
        return load_template("zero")
    if strategy is Strategy.FEW:
        return _few_instruction()
    if strategy is Strategy.ORIGIN:
        if variety is None:
            raise OriginUnsupportedVariety("origin prompting needs a sample variety")
        return _origin_instruction(variety)
    if strategy is Strategy.PMP:
        return load_template("pmp")
    return build_kg_system_prompt()


def build_prompt(strategy: Strategy | str, sample: Sample) -> PromptBundle:
    """Render the system instruction and the ``Text: ...`` user turn.

    For ``Strategy.KG`` this is only the opening turn of the agent episode.
    """
    strategy = Strategy.parse(strategy)
    system = system_instruction(strategy, sample.variety)
    return PromptBundle(
        messages=(
            Message("system", system),
            Message("user", TEXT_PREFIX + sample.text),
        ),
        strategy=strategy,
    )
