"""Loading, validating and summarising sarcasm-explanation datasets.

Datasets are JSON Lines files with one object per line::

    {"id": "au-001", "text": "...", "variety": "au",
     "label": "sarcastic", "explanation": "..."}
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean

logger = logging.getLogger(__name__)

SARCASTIC = "sarcastic"
REQUIRED_FIELDS = ("id", "text", "variety", "label")


class Variety(enum.Enum):
    STANDARD_AMERICAN = "us"
    AUSTRALIAN = "au"
    INDIAN = "in"

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def parse(cls, value: "str | Variety") -> "Variety":
        """Accept a serialized code (``"au"``) or a display name (``"Australian"``)."""
        if isinstance(value, Variety):
            return value
        key = str(value).strip().lower()
        for variety in cls:
            if key in (variety.value, variety.display_name.lower(), variety.name.lower()):
                return variety
        raise ValueError(f"unknown variety {value!r}")


_DISPLAY_NAMES = {
    Variety.STANDARD_AMERICAN: "StandardAmerican",
    Variety.AUSTRALIAN: "Australian",
    Variety.INDIAN: "Indian",
}


class DatasetError(ValueError):
    """Base class for dataset loading and validation failures."""


class MalformedLine(DatasetError):
    def __init__(self, line_no: int, reason: str) -> None:
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class MissingField(DatasetError):
    def __init__(self, line_no: int, field_name: str) -> None:
        self.line_no = line_no
        self.field = field_name
        super().__init__(f"line {line_no}: missing field {field_name!r}")


class DuplicateId(DatasetError):
    def __init__(self, sample_id: str) -> None:
        self.id = sample_id
        super().__init__(f"duplicate sample id {sample_id!r}")


class VarietyMismatch(DatasetError):
    def __init__(self, line_no: int, found: Variety, expected: Variety) -> None:
        self.line_no = line_no
        self.found = found
        self.expected = expected
        super().__init__(
            f"line {line_no}: variety {found.value!r} does not match expected {expected.value!r}"
        )


class EmptyDataset(DatasetError):
    pass


@dataclass(frozen=True)
class Sample:
    id: str
    text: str
    variety: Variety
    gold_label: str = SARCASTIC
    gold_explanation: str = ""

    @property
    def is_sarcastic(self) -> bool:
        return self.gold_label == SARCASTIC

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "variety": self.variety.value,
            "label": self.gold_label,
            "explanation": self.gold_explanation,
        }


@dataclass(frozen=True)
class Dataset:
    name: str
    samples: tuple[Sample, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def flagged(self) -> list[str]:
        """Ids of rows whose gold label is not ``sarcastic``."""
        return [s.id for s in self.samples if not s.is_sarcastic]


@dataclass(frozen=True)
class StatsRow:
    n: int
    avg_text_words: float
    avg_expl_words: float


def word_count(text: str) -> int:
    return len(text.split())


def _parse_line(line_no: int, raw: str) -> Sample:
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedLine(line_no, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(payload, dict):
        raise MalformedLine(line_no, "expected a JSON object")

    for name in REQUIRED_FIELDS:
        if name not in payload or payload[name] is None:
            raise MissingField(line_no, name)

    sample_id = payload["id"]
    if isinstance(sample_id, bool) or not isinstance(sample_id, (str, int)):
        raise MalformedLine(line_no, "id must be a string or integer")
    sample_id = str(sample_id)

    text = payload["text"]
    if not isinstance(text, str) or not text.strip():
        raise MalformedLine(line_no, "text must be a non-empty string")

    try:
        variety = Variety.parse(payload["variety"])
    except ValueError as exc:
        raise MalformedLine(line_no, str(exc)) from exc

    label = str(payload["label"]).strip().lower()
    explanation = payload.get("explanation")
    if explanation is not None and not isinstance(explanation, str):
        raise MalformedLine(line_no, "explanation must be a string")
    if label == SARCASTIC and (explanation is None or not explanation.strip()):
        raise MissingField(line_no, "explanation")

    return Sample(
        id=sample_id,
        text=text,
        variety=variety,
        gold_label=label,
        gold_explanation=explanation or "",
    )


def load_dataset(
    path: str | Path,
    expected_variety: Variety | None = None,
    name: str | None = None,
) -> Dataset:
    """Load a JSONL dataset, validating every line.

    Blank lines are ignored. Line numbers in errors are 1-based file lines.
    """
    path = Path(path)
    samples: list[Sample] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, 1):
            if not raw.strip():
                continue
            sample = _parse_line(line_no, raw)
            if expected_variety is not None and sample.variety is not expected_variety:
                raise VarietyMismatch(line_no, sample.variety, expected_variety)
            if sample.id in seen:
                raise DuplicateId(sample.id)
            seen.add(sample.id)
            samples.append(sample)

    dataset = Dataset(name=name or path.stem, samples=tuple(samples))
    if dataset.flagged:
        logger.warning(
            "%s: %d non-sarcastic row(s) loaded; they are excluded from evaluation",
            dataset.name,
            len(dataset.flagged),
        )
    return dataset


def dump_dataset(dataset: Dataset | list[Sample], path: str | Path) -> None:
    samples = dataset.samples if isinstance(dataset, Dataset) else dataset
    with Path(path).open("w", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(json.dumps(sample.to_dict(), ensure_ascii=False) + "\n")


def dataset_stats(ds: Dataset) -> StatsRow:
    if not ds.samples:
        raise EmptyDataset(f"dataset {ds.name!r} has no samples")
    return StatsRow(
        n=len(ds.samples),
        avg_text_words=fmean(word_count(s.text) for s in ds.samples),
        avg_expl_words=fmean(word_count(s.gold_explanation) for s in ds.samples),
    )
