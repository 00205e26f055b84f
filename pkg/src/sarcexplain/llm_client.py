"""Chat-completion and embedding client with retries and a replay cache.

Endpoints speak the common JSON chat-completions wire format::

    POST {base_url}/chat/completions  {"model", "messages", "max_tokens", ...}
    POST {base_url}/embeddings        {"model", "input"}

Every successful response is stored under
``<cache_dir>/<model_id>/<digest>.json`` so later runs can replay it without
touching the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx

from .prompts import Message, PromptBundle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenerationConfig:
    max_new_tokens: int = 1024
    temperature: float = 1.0
    top_p: float = 0.95
    top_k: int = 64
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0")

    def replace(self, **changes) -> "GenerationConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_id: str
    api_key: str = field(default="", repr=False)
    api_key_env: str | None = None
    timeout_s: float = 60.0
    max_retries: int = 3
    supports_top_k: bool = True
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.timeout_s < 1:
            raise ValueError("timeout_s must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    @property
    def key(self) -> str:
        if self.api_key:
            return self.api_key
        if self.api_key_env:
            return os.environ.get(self.api_key_env, "")
        return ""

    def identity(self) -> dict:
        """Fields that change what the endpoint returns (no secrets)."""
        return {
            "base_url": self.base_url,
            "model_id": self.model_id,
            "supports_top_k": self.supports_top_k,
        }


@dataclass(frozen=True)
class Completion:
    text: str
    finish_reason: str
    latency_ms: int
    model_id: str
    cached: bool = field(default=False, compare=False)
    retries: int = field(default=0, compare=False)


class LLMError(RuntimeError):
    pass


class RequestTimeout(LLMError):
    pass


class HttpStatus(LLMError):
    def __init__(self, code: int, body: str = "") -> None:
        self.code = code
        self.body = body
        super().__init__(f"HTTP {code}: {body[:200]}")


class RateLimited(HttpStatus):
    def __init__(self, body: str = "") -> None:
        super().__init__(429, body)


class ExhaustedRetries(LLMError):
    def __init__(self, attempts: int, last_error: Exception) -> None:
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"gave up after {attempts} attempt(s): {last_error}")


class DimensionMismatch(LLMError):
    pass


class CacheMiss(LLMError):
    """Raised in offline mode when a request has no recorded response."""


class MalformedResponse(LLMError):
    pass


def _normalize_messages(messages: Iterable[Message | dict]) -> list[dict]:
    out = []
    for m in messages:
        role, content = (m.role, m.content) if isinstance(m, Message) else (m["role"], m["content"])
        out.append({"role": role.strip().lower(), "content": content.replace("\r\n", "\n")})
    return out


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def cache_key(
    bundle: PromptBundle | Sequence[Message | dict], cfg: GenerationConfig, model_id: str
) -> str:
    messages = bundle.messages if isinstance(bundle, PromptBundle) else bundle
    return _digest(
        {
            "kind": "chat",
            "model": model_id,
            "messages": _normalize_messages(messages),
            "generation": asdict(cfg),
        }
    )


def embed_key(text: str, model_id: str) -> str:
    return _digest({"kind": "embed", "model": model_id, "input": text.replace("\r\n", "\n")})


_UNSAFE = re.compile(r"[^A-Za-z0-9._-]+")


def safe_name(value: str) -> str:
    return _UNSAFE.sub("_", value).strip("_") or "model"


class ReplayCache:
    """Append-only directory of ``digest -> {request, response}`` records."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def path(self, model_id: str, digest: str) -> Path:
        return self.root / safe_name(model_id) / f"{digest}.json"

    def get(self, model_id: str, digest: str) -> dict | None:
        path = self.path(model_id, digest)
        try:
            return json.loads(path.read_text("utf-8"))["response"]
        except FileNotFoundError:
            return None

    def put(self, model_id: str, digest: str, request: dict, response: dict) -> None:
        path = self.path(model_id, digest)
        if path.exists():
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        record = {"request": request, "response": response}
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(record, handle, ensure_ascii=False, indent=1, sort_keys=True)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise


def backoff_delays(max_retries: int, base: float = 0.5, cap: float = 30.0) -> list[float]:
    """Sleep before retry ``i`` (0-based); exponential and nondecreasing."""
    return [min(cap, base * 2**i) for i in range(max_retries)]


@dataclass
class ClientStats:
    network_calls: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    retries: int = 0

    @property
    def cache_hit_ratio(self) -> float | None:
        total = self.cache_hits + self.cache_misses
        return self.cache_hits / total if total else None


class LLMClient:
    """Thread-safe client shared by every worker of a run.

    ``transport`` lets tests and offline fixture runs plug in an in-process
    backend (``httpx.MockTransport``). ``offline=True`` turns every cache miss
    into :class:`CacheMiss` instead of a network call.
    """

    def __init__(
        self,
        cache: ReplayCache | str | Path | None = None,
        *,
        transport: httpx.BaseTransport | None = None,
        offline: bool = False,
        sleep: Callable[[float], None] = time.sleep,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
    ) -> None:
        if cache is not None and not isinstance(cache, ReplayCache):
            cache = ReplayCache(cache)
        self.cache = cache
        self.offline = offline
        self.stats = ClientStats()
        self._sleep = sleep
        self._backoff = (backoff_base, backoff_cap)
        self._http = httpx.Client(transport=transport)
        self._lock = threading.Lock()
        self._slots: dict[tuple[str, str], threading.BoundedSemaphore] = {}
        self._dims: dict[str, int] = {}

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "LLMClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _count(self, name: str, n: int = 1) -> None:
        with self._lock:
            setattr(self.stats, name, getattr(self.stats, name) + n)

    def _slot(self, ep: EndpointConfig) -> threading.BoundedSemaphore:
        with self._lock:
            key = (ep.base_url, ep.model_id)
            if key not in self._slots:
                self._slots[key] = threading.BoundedSemaphore(ep.max_in_flight)
            return self._slots[key]

    def _lookup(self, model_id: str, digest: str) -> dict | None:
        hit = self.cache.get(model_id, digest) if self.cache is not None else None
        self._count("cache_hits" if hit is not None else "cache_misses")
        if hit is None and self.offline:
            raise CacheMiss(f"no recorded response for {model_id}/{digest}")
        return hit

    def _post(self, ep: EndpointConfig, route: str, payload: dict) -> tuple[dict, int]:
        """POST with retries; returns (json body, retries used)."""
        url = ep.base_url.rstrip("/") + route
        headers = {"Content-Type": "application/json"}
        if ep.key:
            headers["Authorization"] = f"Bearer {ep.key}"
        delays = backoff_delays(ep.max_retries, *self._backoff)
        last: Exception | None = None
        for attempt in range(ep.max_retries + 1):
            if attempt:
                self._count("retries")
                self._sleep(delays[attempt - 1])
            try:
                with self._slot(ep):
                    self._count("network_calls")
                    resp = self._http.post(url, json=payload, headers=headers, timeout=ep.timeout_s)
            except httpx.TimeoutException as exc:
                last = RequestTimeout(f"{url} timed out after {ep.timeout_s}s")
                last.__cause__ = exc
            except httpx.TransportError as exc:
                last = LLMError(f"transport error talking to {url}: {exc}")
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json(), attempt
                    except ValueError as exc:
                        raise MalformedResponse(f"{url} returned non-JSON body") from exc
                if resp.status_code == 429:
                    last = RateLimited(resp.text)
                elif resp.status_code >= 500:
                    last = HttpStatus(resp.status_code, resp.text)
                else:
                    raise HttpStatus(resp.status_code, resp.text)
            logger.debug("attempt %d on %s failed: %s", attempt + 1, url, last)
        raise ExhaustedRetries(ep.max_retries + 1, last)

    def complete(
        self, bundle: PromptBundle, cfg: GenerationConfig, ep: EndpointConfig
    ) -> Completion:
        if not bundle.messages:
            raise ValueError("prompt bundle is empty")
        digest = cache_key(bundle, cfg, ep.model_id)
        hit = self._lookup(ep.model_id, digest)
        if hit is not None:
            return Completion(**hit, cached=True)

        payload = {
            "model": ep.model_id,
            "messages": _normalize_messages(bundle.messages),
            "max_tokens": cfg.max_new_tokens,
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
        }
        if ep.supports_top_k:
            payload["top_k"] = cfg.top_k
        if cfg.seed is not None:
            payload["seed"] = cfg.seed

        started = time.perf_counter()
        body, retries = self._post(ep, "/chat/completions", payload)
        latency_ms = int((time.perf_counter() - started) * 1000)
        try:
            choice = body["choices"][0]
            text = choice["message"].get("content")
            reason = choice.get("finish_reason") or "stop"
        except (KeyError, IndexError, TypeError, AttributeError) as exc:
            raise MalformedResponse(f"unexpected chat response shape: {body!r:.200}") from exc
        if text is None:
            text, reason = "", "error"
        elif reason not in ("stop", "length"):
            reason = "stop"
        result = {
            "text": text,
            "finish_reason": reason,
            "latency_ms": latency_ms,
            "model_id": ep.model_id,
        }
        if self.cache is not None:
            self.cache.put(ep.model_id, digest, payload, result)
        return Completion(**result, retries=retries)

    def embed(self, text: str, ep: EndpointConfig) -> list[float]:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        digest = embed_key(text, ep.model_id)
        vector = self._lookup(ep.model_id, digest)
        if vector is None:
            payload = {"model": ep.model_id, "input": text}
            body, _ = self._post(ep, "/embeddings", payload)
            try:
                vector = [float(x) for x in body["data"][0]["embedding"]]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise MalformedResponse(f"unexpected embedding response: {body!r:.200}") from exc
            self._check_dim(ep.model_id, vector)
            if self.cache is not None:
                self.cache.put(ep.model_id, digest, payload, vector)
            return vector
        self._check_dim(ep.model_id, vector)
        return vector

    def _check_dim(self, model_id: str, vector: list[float]) -> None:
        with self._lock:
            expected = self._dims.setdefault(model_id, len(vector))
        if len(vector) != expected:
            raise DimensionMismatch(
                f"{model_id} returned a {len(vector)}-d vector, earlier vectors were {expected}-d"
            )
