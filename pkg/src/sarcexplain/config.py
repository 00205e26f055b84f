"""Run configuration: a TOML document validated up front.

Example::

    seed = 0
    concurrency = 4
    cache_dir = "cache"
    strategies = ["zero", "few", "origin", "kg", "pmp"]

    [generation]
    temperature = 1.0

    [[datasets]]
    name = "besstie-au"
    path = "data/besstie_au.jsonl"
    variety = "au"

    [[models]]
    base_url = "http://localhost:8000/v1"
    model_id = "google/gemma-3-12b-it"

    [judge]
    base_url = "https://api.openai.com/v1"
    model_id = "gpt-4o"
    api_key_env = "OPENAI_API_KEY"

    [embedder]
    base_url = "http://localhost:8001/v1"
    model_id = "sentence-transformers/all-MiniLM-L6-v2"

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .agent import DEFAULT_INCOMPATIBLE_THRESHOLD, DEFAULT_MAX_STEPS
from .dataset_io import Variety
from .llm_client import EndpointConfig, GenerationConfig
from .metrics import EXCLUDE_POLICY, ZERO_POLICY, load_judge_template
from .prompts import Strategy
from .search import DEFAULT_BUDGET, DEFAULT_TOP_K

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    def __init__(self, path: str, message: str) -> None:
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: Path
    variety: Variety


@dataclass(frozen=True)
class AgentSettings:
    max_steps: int = DEFAULT_MAX_STEPS
    search_backend: str = "fixtures"
    search_fixtures: Path | None = None
    search_top_k: int = DEFAULT_TOP_K
    observation_budget: int = DEFAULT_BUDGET
    incompatible_threshold: float = DEFAULT_INCOMPATIBLE_THRESHOLD


@dataclass(frozen=True)
class RunConfig:
    datasets: tuple[DatasetSpec, ...]
    strategies: tuple[Strategy, ...]
    models: tuple[EndpointConfig, ...]
    judge: EndpointConfig
    embedder: EndpointConfig
    generation: GenerationConfig = GenerationConfig()
    cache_dir: Path = Path("cache")
    runs_dir: Path = Path("runs")
    run_dir: Path | None = None
    seed: int = 0
    concurrency: int = 4
    agent: AgentSettings = AgentSettings()
    missing_score_policy: str = ZERO_POLICY
    judge_template: Path | None = None
    significance_resamples: int = 10_000
    failure_budget: float = 0.05
    source: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.datasets:
            raise ConfigError("datasets", "at least one dataset is required")
        if not self.strategies:
            raise ConfigError("strategies", "at least one strategy is required")
        if not self.models:
            raise ConfigError("models", "at least one model is required")

    def judge_template_text(self) -> str:
        return load_judge_template(self.judge_template)

    def digest_payload(self) -> dict:
        """Everything that can change results; excludes secrets and scheduling knobs."""
        agent = asdict(self.agent)
        agent["search_fixtures"] = _file_digest(self.agent.search_fixtures)
        return {
            "datasets": [
                {"name": d.name, "variety": d.variety.value, "sha256": _file_digest(d.path)}
                for d in self.datasets
            ],
            "strategies": [s.value for s in self.strategies],
            "models": [m.identity() for m in self.models],
            "judge": self.judge.identity(),
            "embedder": self.embedder.identity(),
            "generation": asdict(self.generation),
            "seed": self.seed,
            "agent": agent,
            "missing_score_policy": self.missing_score_policy,
            "judge_template": hashlib.sha256(self.judge_template_text().encode()).hexdigest(),
            "significance_resamples": self.significance_resamples,
        }

    def digest(self) -> str:
        blob = json.dumps(self.digest_payload(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def resolved_run_dir(self) -> Path:
        return self.run_dir if self.run_dir is not None else self.runs_dir / self.digest()


def _file_digest(path: Path | None) -> str | None:
    if path is None:
        return None
    if path.is_dir():
        h = hashlib.sha256()
        for child in sorted(path.glob("*.json")):
            h.update(child.name.encode())
            h.update(child.read_bytes())
        return h.hexdigest()
    try:
        return hashlib.sha256(path.read_bytes()).hexdigest()
    except FileNotFoundError:
        return None


# -- validation helpers ---------------------------------------------------------

def _get(table: dict, key: str, kind: type | tuple, where: str, default: Any = ...) -> Any:
    path = f"{where}.{key}" if where else key
    if key not in table:
        if default is ...:
            raise ConfigError(path, "required key is missing")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if isinstance(value, bool) and kind is not bool:
        raise ConfigError(path, f"expected {kind.__name__}, got bool")
    if not isinstance(value, kind):
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigError(path, f"expected {name}, got {type(value).__name__}")
    return value


def _check_keys(table: dict, allowed: set[str], where: str) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}" if where else key, "unknown key")


def _path(value: str, base: Path) -> Path:
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


def _endpoint(table: dict, where: str) -> EndpointConfig:
    if not isinstance(table, dict):
        raise ConfigError(where, "expected a table")
    names = {f.name for f in fields(EndpointConfig)}
    _check_keys(table, names, where)
    kwargs = {
        "base_url": _get(table, "base_url", str, where),
        "model_id": _get(table, "model_id", str, where),
        "api_key": _get(table, "api_key", str, where, ""),
        "api_key_env": _get(table, "api_key_env", str, where, None),
        "timeout_s": _get(table, "timeout_s", float, where, 60.0),
        "max_retries": _get(table, "max_retries", int, where, 3),
        "supports_top_k": _get(table, "supports_top_k", bool, where, True),
        "max_in_flight": _get(table, "max_in_flight", int, where, 4),
    }
    try:
        return EndpointConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def _generation(table: dict) -> GenerationConfig:
    where = "generation"
    _check_keys(table, {f.name for f in fields(GenerationConfig)}, where)
    defaults = GenerationConfig()
    try:
        return GenerationConfig(
            max_new_tokens=_get(table, "max_new_tokens", int, where, defaults.max_new_tokens),
            temperature=_get(table, "temperature", float, where, defaults.temperature),
            top_p=_get(table, "top_p", float, where, defaults.top_p),
            top_k=_get(table, "top_k", int, where, defaults.top_k),
            seed=_get(table, "seed", int, where, None),
        )
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def _agent(table: dict, base: Path) -> AgentSettings:
    where = "agent"
    _check_keys(table, {f.name for f in fields(AgentSettings)}, where)
    d = AgentSettings()
    backend = _get(table, "search_backend", str, where, d.search_backend)
    if backend not in ("live", "fixtures"):
        raise ConfigError(f"{where}.search_backend", "must be 'live' or 'fixtures'")
    fixtures = _get(table, "search_fixtures", str, where, None)
    settings = AgentSettings(
        max_steps=_get(table, "max_steps", int, where, d.max_steps),
        search_backend=backend,
        search_fixtures=_path(fixtures, base) if fixtures else None,
        search_top_k=_get(table, "search_top_k", int, where, d.search_top_k),
        observation_budget=_get(table, "observation_budget", int, where, d.observation_budget),
        incompatible_threshold=_get(table, "incompatible_threshold", float, where, d.incompatible_threshold),
    )
    if settings.max_steps < 1:
        raise ConfigError(f"{where}.max_steps", "must be >= 1")
    if not 0 <= settings.incompatible_threshold <= 1:
        raise ConfigError(f"{where}.incompatible_threshold", "must be in [0, 1]")
    return settings


TOP_LEVEL = {
    "datasets", "strategies", "models", "judge", "embedder", "generation", "cache_dir",
    "runs_dir", "run_dir", "seed", "concurrency", "agent", "missing_score_policy",
    "judge_template", "significance_resamples", "failure_budget",
}


def parse_config(doc: dict, base_dir: str | Path = ".", source: Path | None = None) -> RunConfig:
    base = Path(base_dir)
    _check_keys(doc, TOP_LEVEL, "")

    raw_datasets = _get(doc, "datasets", list, "")
    datasets = []
    seen_names = set()
    for i, item in enumerate(raw_datasets):
        where = f"datasets[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(where, "expected a table")
        _check_keys(item, {"name", "path", "variety"}, where)
        name = _get(item, "name", str, where)
        if name in seen_names:
            raise ConfigError(f"{where}.name", f"duplicate dataset name {name!r}")
        seen_names.add(name)
        try:
            variety = Variety.parse(_get(item, "variety", str, where))
        except ValueError as exc:
            raise ConfigError(f"{where}.variety", str(exc)) from None
        datasets.append(DatasetSpec(name, _path(_get(item, "path", str, where), base), variety))

    strategies = []
    for i, value in enumerate(_get(doc, "strategies", list, "", [s.value for s in Strategy])):
        try:
            strategy = Strategy.parse(value)
        except ValueError as exc:
            raise ConfigError(f"strategies[{i}]", str(exc)) from None
        if strategy not in strategies:
            strategies.append(strategy)

    models = tuple(
        _endpoint(m, f"models[{i}]") for i, m in enumerate(_get(doc, "models", list, ""))
    )
    if len({m.model_id for m in models}) != len(models):
        raise ConfigError("models", "model_id values must be unique")

    policy = _get(doc, "missing_score_policy", str, "", ZERO_POLICY)
    if policy not in (ZERO_POLICY, EXCLUDE_POLICY):
        raise ConfigError("missing_score_policy", f"must be {ZERO_POLICY!r} or {EXCLUDE_POLICY!r}")
    concurrency = _get(doc, "concurrency", int, "", 4)
    if concurrency < 1:
        raise ConfigError("concurrency", "must be >= 1")
    failure_budget = _get(doc, "failure_budget", float, "", 0.05)
    if not 0 <= failure_budget <= 1:
        raise ConfigError("failure_budget", "must be in [0, 1]")
    resamples = _get(doc, "significance_resamples", int, "", 10_000)
    if resamples < 1:
        raise ConfigError("significance_resamples", "must be >= 1")
    template = _get(doc, "judge_template", str, "", None)
    run_dir = _get(doc, "run_dir", str, "", None)

    if template and not _path(template, base).is_file():
        raise ConfigError("judge_template", f"file {template} does not exist")

    return RunConfig(
        datasets=tuple(datasets),
        strategies=tuple(strategies),
        models=models,
        judge=_endpoint(_get(doc, "judge", dict, ""), "judge"),
        embedder=_endpoint(_get(doc, "embedder", dict, ""), "embedder"),
        generation=_generation(_get(doc, "generation", dict, "", {})),
        cache_dir=_path(_get(doc, "cache_dir", str, "", "cache"), base),
        runs_dir=_path(_get(doc, "runs_dir", str, "", "runs"), base),
        run_dir=_path(run_dir, base) if run_dir else None,
        seed=_get(doc, "seed", int, "", 0),
        concurrency=concurrency,
        agent=_agent(_get(doc, "agent", dict, "", {}), base),
        missing_score_policy=policy,
        judge_template=_path(template, base) if template else None,
        significance_resamples=resamples,
        failure_budget=failure_budget,
        source=source,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with path.open("rb") as handle:
            doc = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError("", f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"{path} is not valid TOML: {exc}") from None
    return parse_config(doc, path.parent, source=path)
