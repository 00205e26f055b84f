"""End-to-end experiment runs with resumable on-disk state.

Run directory layout::

    <run_dir>/
      manifest.json
      scores/<dataset>_<strategy>_<model>.jsonl   one record per sample, append-only
      traces/<dataset>_<strategy>_<model>.jsonl   KG agent traces
      report.md  report.csv  report.json
      figures/metrics.png  figures/errors.png
"""

from __future__ import annotations

import json
import logging
import shutil
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import httpx

from .agent import AgentTrace, ToolRegistry, kg_compatibility_check, run_agent
from .config import ConfigError, RunConfig
from .dataset_io import Dataset, DatasetError, Sample, Variety, load_dataset
from .llm_client import EndpointConfig, LLMClient, LLMError, safe_name
from .metrics import (
    STATUS_NA,
    STATUS_SKIPPED,
    JudgeFailure,
    MetricRow,
    SampleScore,
    aggregate,
    explanation_similarity,
    judge_score,
)
from .prompts import Strategy, build_prompt
from .report import RunReport, error_rows, render_csv, render_figures, render_json, render_markdown
from .search import DuckDuckGoSearch, FixtureSearch, SearchProvider
from .verdicts import EmptyCompletion, Verdict, parse_verdict

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class ConfigDigestMismatch(RuntimeError):
    pass


class NoPriorRun(RuntimeError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    completion: str | None
    verdict: Verdict
    similarity: float | None = None
    judge: int | None = None
    judge_failed: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        data = asdict(self)
        data["verdict"] = self.verdict.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "SampleRecord":
        return cls(**{**data, "verdict": Verdict.from_dict(data["verdict"])})

    def score(self) -> SampleScore:
        return SampleScore(self.sample_id, self.verdict, self.similarity, self.judge, self.judge_failed)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    out = []
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError:
                logger.warning("%s: skipping truncated record", path)
    return out


class _Sink:
    """Append-only JSONL writer shared by worker callbacks."""

    def __init__(self) -> None:
        self._lock = threading.Lock()

    def append(self, path: Path, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n"
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("a", encoding="utf-8") as handle:
                handle.write(line)


class Runner:
    def __init__(
        self,
        cfg: RunConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        offline: bool = False,
        search_provider: SearchProvider | None = None,
    ) -> None:
        self.cfg = cfg
        self.offline = offline
        self.client = LLMClient(cfg.cache_dir, transport=transport, offline=offline)
        self.judge_template = cfg.judge_template_text()
        self._search_provider = search_provider
        self._sink = _Sink()

    # -- setup --------------------------------------------------------------

    def _tools(self) -> ToolRegistry:
        provider = self._search_provider
        if provider is None:
            agent = self.cfg.agent
            if agent.search_backend == "live":
                provider = DuckDuckGoSearch()
            elif agent.search_fixtures is not None:
                provider = FixtureSearch.from_path(agent.search_fixtures)
            else:
                provider = FixtureSearch({})
        return ToolRegistry.with_search(
            provider, top_k=self.cfg.agent.search_top_k, budget=self.cfg.agent.observation_budget
        )

    def _load_datasets(self) -> list[Dataset]:
        datasets = []
        for i, spec in enumerate(self.cfg.datasets):
            try:
                datasets.append(load_dataset(spec.path, spec.variety, name=spec.name))
            except FileNotFoundError:
                raise ConfigError(f"datasets[{i}].path", f"{spec.path} does not exist") from None
            except DatasetError as exc:
                raise ConfigError(f"datasets[{i}].path", f"{spec.path}: {exc}") from None
        return datasets

    def _prepare_dir(self, run_dir: Path, resume: bool) -> dict:
        digest = self.cfg.digest()
        manifest_path = run_dir / MANIFEST
        previous = json.loads(manifest_path.read_text("utf-8")) if manifest_path.exists() else None
        if previous is not None and previous.get("config_digest") != digest:
            raise ConfigDigestMismatch(
                f"{run_dir} holds a run with config digest {previous.get('config_digest')}, "
                f"current config has {digest}"
            )
        if resume and previous is None:
            raise NoPriorRun(f"nothing to resume in {run_dir}")
        if not resume:
            for sub in ("scores", "traces", "figures"):
                shutil.rmtree(run_dir / sub, ignore_errors=True)
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "config_digest": digest,
            "status": "running",
            "started_at": previous["started_at"] if resume and previous else _now(),
            "resumed_at": _now() if resume else None,
        }
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")
        return manifest

    # -- per-sample work -------------------------------------------------------

    def _evaluate(
        self, sample: Sample, strategy: Strategy, model: EndpointConfig, tools: ToolRegistry
    ) -> tuple[SampleRecord, AgentTrace | None]:
        cfg = self.cfg
        trace = None
        try:
            if strategy is Strategy.KG:
                trace = run_agent(sample, tools, self.client, model, cfg.generation, cfg.agent.max_steps)
                detail = trace.outcome.detail or ""
                if trace.failed and detail.startswith("client error"):
                    return SampleRecord(sample.id, None, Verdict.need_context(), error=detail), trace
                text = trace.final_answer
            else:
                text = self.client.complete(build_prompt(strategy, sample), cfg.generation, model).text
            try:
                verdict = parse_verdict(text, strategy) if text is not None else Verdict.need_context()
            except EmptyCompletion:
                verdict = Verdict.need_context()
            if not verdict.is_sarcastic:
                return SampleRecord(sample.id, text, verdict), trace
            similarity = explanation_similarity(
                sample.gold_explanation, verdict.explanation, self.client, cfg.embedder
            )
            try:
                judge = judge_score(sample, verdict.explanation, cfg.judge, self.client, self.judge_template)
                judge_failed = False
            except JudgeFailure as exc:
                logger.warning("%s", exc)
                judge, judge_failed = None, True
            return SampleRecord(sample.id, text, verdict, similarity, judge, judge_failed), trace
        except (LLMError, ValueError) as exc:
            logger.warning("sample %s (%s/%s) failed: %s", sample.id, strategy.value, model.model_id, exc)
            return SampleRecord(sample.id, None, Verdict.need_context(), error=str(exc)), trace

    # -- orchestration ---------------------------------------------------------

    def run(self, resume: bool = False, run_dir: str | Path | None = None) -> RunReport:
        cfg = self.cfg
        run_dir = Path(run_dir) if run_dir is not None else cfg.resolved_run_dir()
        datasets = self._load_datasets()
        manifest = self._prepare_dir(run_dir, resume)
        tools = self._tools() if Strategy.KG in cfg.strategies else ToolRegistry()

        rows: list[MetricRow] = []
        totals = {"evaluated": 0, "hard_failures": 0, "protocol_failures": 0, "judge_failures": 0}
        kg_status: dict[str, dict] = {}
        skipped_rows: dict[str, int] = {}

        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            for ds in datasets:
                samples = [s for s in ds.samples if s.is_sarcastic]
                if len(samples) != len(ds.samples):
                    skipped_rows[ds.name] = len(ds.samples) - len(samples)
                    logger.warning("%s: skipping %d non-sarcastic row(s)", ds.name, skipped_rows[ds.name])
                for model in cfg.models:
                    cell_scores: dict[Strategy, list[SampleScore]] = {}
                    cell_rows: dict[Strategy, MetricRow] = {}
                    for strategy in cfg.strategies:
                        name = f"{ds.name}_{strategy.value}_{safe_name(model.model_id)}.jsonl"
                        if strategy is Strategy.ORIGIN and _origin_unsupported(ds, samples):
                            cell_rows[strategy] = MetricRow.placeholder(
                                ds.name, strategy.value, model.model_id, STATUS_SKIPPED
                            )
                            continue
                        records, traces = self._run_cell(
                            pool, run_dir, name, samples, strategy, model, tools, resume
                        )
                        totals["evaluated"] += len(records)
                        totals["hard_failures"] += sum(r.error is not None for r in records)
                        totals["judge_failures"] += sum(r.judge_failed for r in records)
                        if not samples:
                            cell_rows[strategy] = MetricRow.placeholder(
                                ds.name, strategy.value, model.model_id, STATUS_SKIPPED
                            )
                            continue
                        if strategy is Strategy.KG:
                            verdict = kg_compatibility_check(traces, cfg.agent.incompatible_threshold)
                            totals["protocol_failures"] += verdict.failures
                            kg_status[f"{ds.name}/{model.model_id}"] = {
                                "compatible": verdict.compatible,
                                "failures": verdict.failures,
                                "n": verdict.n,
                            }
                            if not verdict.compatible:
                                cell_rows[strategy] = MetricRow.placeholder(
                                    ds.name, strategy.value, model.model_id, STATUS_NA, len(samples)
                                )
                                continue
                        cell_scores[strategy] = [r.score() for r in records]

                    baseline = cell_scores.get(Strategy.ZERO)
                    for strategy in cfg.strategies:
                        if strategy in cell_rows:
                            rows.append(cell_rows[strategy])
                            continue
                        rows.append(
                            aggregate(
                                cell_scores[strategy],
                                baseline if strategy is not Strategy.ZERO else None,
                                dataset=ds.name,
                                strategy=strategy.value,
                                model_id=model.model_id,
                                policy=cfg.missing_score_policy,
                                resamples=cfg.significance_resamples,
                                seed=cfg.seed,
                            )
                        )

        evaluated = totals["evaluated"]
        degraded = bool(evaluated) and totals["hard_failures"] / evaluated > cfg.failure_budget
        stable = {
            "config_digest": manifest["config_digest"],
            "models": [m.model_id for m in cfg.models],
            "judge_model": cfg.judge.model_id,
            "embedder_model": cfg.embedder.model_id,
            "top_k_passthrough": {m.model_id: m.supports_top_k for m in cfg.models},
            "generation": asdict(cfg.generation),
            "samples": {ds.name: len(ds.samples) - skipped_rows.get(ds.name, 0) for ds in datasets},
            "skipped_non_sarcastic": skipped_rows,
            "kg_compatibility": kg_status,
            **totals,
            "degraded": degraded,
        }
        report = RunReport(rows=rows, error_table=error_rows(rows), manifest=stable)
        self._write_outputs(run_dir, report, manifest, degraded)
        return report

    def _run_cell(
        self,
        pool: ThreadPoolExecutor,
        run_dir: Path,
        name: str,
        samples: list[Sample],
        strategy: Strategy,
        model: EndpointConfig,
        tools: ToolRegistry,
        resume: bool,
    ) -> tuple[list[SampleRecord], list[AgentTrace]]:
        scores_path = run_dir / "scores" / name
        traces_path = run_dir / "traces" / name
        done: dict[str, SampleRecord] = {}
        traces: dict[str, AgentTrace] = {}
        if resume:
            for raw in _read_jsonl(scores_path):
                done[raw["sample_id"]] = SampleRecord.from_dict(raw)
            for raw in _read_jsonl(traces_path):
                traces[raw["sample_id"]] = AgentTrace.from_dict(raw)
            done = {k: v for k, v in done.items() if v.error is None}

        todo = [s for s in samples if s.id not in done]
        futures = {pool.submit(self._evaluate, s, strategy, model, tools): s for s in todo}
        for future in as_completed(futures):
            record, trace = future.result()
            done[record.sample_id] = record
            if trace is not None:
                traces[trace.sample_id] = trace
                self._sink.append(traces_path, trace.to_dict())
            self._sink.append(scores_path, record.to_dict())

        ids = [s.id for s in samples]
        return [done[i] for i in ids], [traces[i] for i in ids if i in traces]

    def _write_outputs(self, run_dir: Path, report: RunReport, manifest: dict, degraded: bool) -> None:
        (run_dir / "report.md").write_text(render_markdown(report), "utf-8")
        (run_dir / "report.csv").write_text(render_csv(report), "utf-8")
        (run_dir / "report.json").write_text(render_json(report), "utf-8")
        try:
            render_figures(report, run_dir / "figures")
        except Exception as exc:  # figures are a convenience, never fatal
            logger.warning("could not render figures: %s", exc)
        stats = self.client.stats
        manifest.update(
            {
                **report.manifest,
                "status": "degraded" if degraded else "complete",
                "finished_at": _now(),
                "offline": self.offline,
                "client": {
                    "network_calls": stats.network_calls,
                    "cache_hits": stats.cache_hits,
                    "cache_misses": stats.cache_misses,
                    "cache_hit_ratio": stats.cache_hit_ratio,
                    "retries": stats.retries,
                },
            }
        )
        (run_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")

    def close(self) -> None:
        self.client.close()


def _origin_unsupported(ds: Dataset, samples: list[Sample]) -> bool:
    return any(s.variety is Variety.STANDARD_AMERICAN for s in samples) or (
        not samples and all(s.variety is Variety.STANDARD_AMERICAN for s in ds.samples)
    )


def run_experiment(cfg: RunConfig, *, run_dir: str | Path | None = None, **runner_kwargs) -> RunReport:
    runner = Runner(cfg, **runner_kwargs)
    try:
        return runner.run(resume=False, run_dir=run_dir)
    finally:
        runner.close()


def resume(cfg: RunConfig, *, run_dir: str | Path | None = None, **runner_kwargs) -> RunReport:
    runner = Runner(cfg, **runner_kwargs)
    try:
        return runner.run(resume=True, run_dir=run_dir)
    finally:
        runner.close()


def load_report(run_dir: str | Path) -> RunReport:
    path = Path(run_dir) / "report.json"
    return RunReport.from_dict(json.loads(path.read_text("utf-8")))
