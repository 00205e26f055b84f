"""Detection accuracy, explanation similarity, LLM-judge scores and significance."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset_io import Sample
from .llm_client import EndpointConfig, GenerationConfig
from .prompts import Message, PromptBundle, Strategy, load_template
from .verdicts import Label, Verdict

logger = logging.getLogger(__name__)

RUBRIC = (
    (0, "Irrelevant or incoherent explanation"),
    (1, "Barely related, vague or generic statement"),
    (2, "Somewhat related but incomplete or unclear reasoning"),
    (3, "Reasonable explanation, covers core sarcastic cue"),
    (4, "Strong explanation with appropriate contextual grounding"),
    (5, "Excellent explanation, highly aligned with human interpretation"),
)
JUDGE_GENERATION = GenerationConfig(max_new_tokens=256, temperature=0.0, top_p=1.0)
JUDGE_RETRIES = 2
JUDGE_CORRECTION = "Reply with only the score: a single integer from 0 to 5."
EXACT_MAX_N = 20

ZERO_POLICY = "zero"
EXCLUDE_POLICY = "exclude"

STATUS_OK = "ok"
STATUS_NA = "n/a"
STATUS_SKIPPED = "-"


class EmptyInput(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class ZeroVector(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class UnparsableJudgeReply(ValueError):
    pass


class JudgeFailure(RuntimeError):
    pass


# -- detection ----------------------------------------------------------------

def accuracy(verdicts: Sequence[Verdict]) -> float:
    """Fraction of sarcastic verdicts; every gold label is ``sarcastic``."""
    if not verdicts:
        raise EmptyInput("no verdicts")
    return sum(v.is_sarcastic for v in verdicts) / len(verdicts)


def error_counts(verdicts: Sequence[Verdict]) -> tuple[int, int]:
    ns = sum(v.label is Label.NOT_SARCASTIC for v in verdicts)
    nc = sum(v.label is Label.NEED_CONTEXT for v in verdicts)
    return ns, nc


# -- similarity ---------------------------------------------------------------

def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    a = np.asarray(u, dtype=float)
    b = np.asarray(v, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"vector shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def explanation_similarity(gold: str, generated: str, client, embed_ep: EndpointConfig) -> float:
    return cosine_similarity(client.embed(gold, embed_ep), client.embed(generated, embed_ep))


# -- judge ----------------------------------------------------------------------

def rubric_text() -> str:
    return "\n".join(f"{score}: {desc}" for score, desc in RUBRIC)


def load_judge_template(path: str | Path | None = None) -> str:
    if path is None:
        return load_template("judge")
    return Path(path).read_text("utf-8").rstrip("\n")


def build_judge_prompt(sample: Sample, generated: str, template: str | None = None) -> PromptBundle:
    template = template or load_judge_template()
    content = (
        template.replace("{text}", sample.text)
        .replace("{gold}", sample.gold_explanation)
        .replace("{generated}", generated)
        .replace("{rubric}", rubric_text())
    )
    # Judge bundles reuse the ZERO tag; the strategy field is informational only.
    return PromptBundle((Message("user", content),), Strategy.ZERO)


_SCORE_LABELLED = re.compile(r"score\W{0,3}(?:is\s+|of\s+)?(\d+)", re.I)
_INTEGER = re.compile(r"\d+")


def parse_judge_reply(reply: str) -> int:
    """First integer in the reply, preferring one introduced by ``score``."""
    match = _SCORE_LABELLED.search(reply or "") or _INTEGER.search(reply or "")
    if match is None:
        raise UnparsableJudgeReply(f"no integer in judge reply {reply!r:.80}")
    value = int(match.group(1) if match.re is _SCORE_LABELLED else match.group(0))
    if not 0 <= value <= 5:
        raise UnparsableJudgeReply(f"judge score {value} outside 0..5")
    return value


def judge_score(
    sample: Sample,
    generated: str,
    judge_ep: EndpointConfig,
    client,
    template: str | None = None,
    cfg: GenerationConfig = JUDGE_GENERATION,
    retries: int = JUDGE_RETRIES,
) -> int:
    """Ask the judge model for a 0-5 score; raise :class:`JudgeFailure` if it never gives one.

    Each retry appends a correction turn, so retries are distinct requests
    (and distinct cache entries).
    """
    if not generated or not generated.strip():
        raise ValueError("generated explanation is empty")
    bundle = build_judge_prompt(sample, generated, template)
    reply = ""
    for attempt in range(retries + 1):
        reply = client.complete(bundle, cfg, judge_ep).text
        try:
            return parse_judge_reply(reply)
        except UnparsableJudgeReply as exc:
            logger.debug("judge attempt %d for %s: %s", attempt + 1, sample.id, exc)
            bundle = bundle.extend(
                Message("assistant", reply.strip() or "(empty reply)"),
                Message("user", JUDGE_CORRECTION),
            )
    raise JudgeFailure(f"judge gave no usable score for {sample.id}; last reply {reply!r:.80}")


# -- significance ---------------------------------------------------------------

def _sign_flip_sums(diffs: np.ndarray) -> np.ndarray:
    """All 2^n signed sums of ``diffs``, built by doubling."""
    sums = np.zeros(1)
    for d in diffs:
        sums = np.concatenate((sums + d, sums - d))
    return sums


def paired_permutation_test(
    scores_a: Sequence[float],
    scores_b: Sequence[float],
    resamples: int = 10_000,
    seed: int = 0,
    method: str = "auto",
) -> float:
    """Two-sided paired sign-flip permutation test on ``a - b``.

    Statistic is ``|sum(d)|``. ``method="auto"`` enumerates all sign patterns
    when ``n <= 20`` and otherwise draws ``resamples`` random patterns from a
    generator seeded with ``seed``; the Monte Carlo p-value is
    ``(hits + 1) / (resamples + 1)``.
    """
    if len(scores_a) != len(scores_b):
        raise LengthMismatch(f"{len(scores_a)} vs {len(scores_b)} paired scores")
    diffs = np.asarray(scores_a, dtype=float) - np.asarray(scores_b, dtype=float)
    n = len(diffs)
    if n == 0:
        return 1.0
    observed = abs(diffs.sum())
    tol = 1e-9 * max(1.0, float(np.abs(diffs).sum()))
    if method == "auto":
        method = "exact" if n <= EXACT_MAX_N else "monte_carlo"

    if method == "exact":
        sums = _sign_flip_sums(diffs)
        return float(np.count_nonzero(np.abs(sums) >= observed - tol) / sums.size)
    if method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")

    rng = np.random.default_rng(seed)
    hits, remaining = 0, resamples
    while remaining:
        chunk = min(remaining, 4096)
        signs = rng.integers(0, 2, size=(chunk, n), dtype=np.int8) * 2 - 1
        hits += int(np.count_nonzero(np.abs(signs @ diffs) >= observed - tol))
        remaining -= chunk
    return (hits + 1) / (resamples + 1)


# -- aggregation ----------------------------------------------------------------

@dataclass(frozen=True)
class SampleScore:
    sample_id: str
    verdict: Verdict
    similarity: float | None = None
    judge: int | None = None
    judge_failed: bool = False

    def __post_init__(self) -> None:
        if not self.verdict.is_sarcastic and (self.similarity is not None or self.judge is not None):
            raise ValueError("non-sarcastic verdicts carry no similarity or judge score")
        if self.judge is not None and not 0 <= self.judge <= 5:
            raise ValueError("judge score outside 0..5")


@dataclass(frozen=True)
class MetricRow:
    dataset: str
    strategy: str
    model_id: str
    status: str = STATUS_OK
    n: int = 0
    accuracy: float | None = None
    similarity: float | None = None
    judge: float | None = None
    ns_count: int = 0
    nc_count: int = 0
    p_vs_zero: float | None = None
    judge_failures: int = 0

    @classmethod
    def placeholder(cls, dataset: str, strategy: str, model_id: str, status: str, n: int = 0) -> "MetricRow":
        return cls(dataset, strategy, model_id, status=status, n=n)


def _mean(values: list[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def _correctness(scores: Sequence[SampleScore]) -> dict[str, float]:
    return {s.sample_id: 1.0 if s.verdict.is_sarcastic else 0.0 for s in scores}


def aggregate(
    run: Sequence[SampleScore],
    zero_baseline: Sequence[SampleScore] | None = None,
    *,
    dataset: str = "",
    strategy: str = "",
    model_id: str = "",
    policy: str = ZERO_POLICY,
    resamples: int = 10_000,
    seed: int = 0,
) -> MetricRow:
    """Fold per-sample scores into one table row.

    Under the ``zero`` policy a not-sarcastic / need-context verdict counts as
    similarity 0 and judge 0. Under ``exclude`` those samples are left out of
    the similarity and judge means. Judge failures are always left out of the
    judge mean and counted separately.
    """
    if not run:
        raise EmptyInput("no sample scores to aggregate")
    if policy not in (ZERO_POLICY, EXCLUDE_POLICY):
        raise ValueError(f"unknown missing-score policy {policy!r}")
    verdicts = [s.verdict for s in run]
    ns, nc = error_counts(verdicts)

    sims, judges = [], []
    for s in run:
        if s.verdict.is_sarcastic:
            sims.append(s.similarity if s.similarity is not None else 0.0)
            if not s.judge_failed:
                judges.append(float(s.judge if s.judge is not None else 0))
        elif policy == ZERO_POLICY:
            sims.append(0.0)
            judges.append(0.0)

    p_value = None
    if zero_baseline is not None:
        ours, base = _correctness(run), _correctness(zero_baseline)
        if ours.keys() != base.keys():
            raise LengthMismatch("run and zero baseline cover different samples")
        ids = sorted(ours)
        p_value = paired_permutation_test(
            [ours[i] for i in ids], [base[i] for i in ids], resamples=resamples, seed=seed
        )

    return MetricRow(
        dataset=dataset,
        strategy=strategy,
        model_id=model_id,
        status=STATUS_OK,
        n=len(run),
        accuracy=accuracy(verdicts),
        similarity=_mean(sims),
        judge=_mean(judges),
        ns_count=ns,
        nc_count=nc,
        p_vs_zero=p_value,
        judge_failures=sum(s.judge_failed for s in run),
    )
