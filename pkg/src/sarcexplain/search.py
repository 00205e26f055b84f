"""Web-search tool used by the knowledge-gap agent."""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Protocol

import httpx

DEFAULT_TOP_K = 3
DEFAULT_BUDGET = 1500
NO_RESULTS = "No results found."


class SearchUnavailable(RuntimeError):
    pass


class SearchProvider(Protocol):
    def search(self, query: str) -> list[str]: ...


def normalize_query(query: str) -> str:
    return re.sub(r"\s+", " ", query).strip().casefold()


class FixtureSearch:
    """Offline provider backed by a ``{query: [snippet, ...]}`` JSON mapping."""

    def __init__(self, results: dict[str, list[str]] | None = None) -> None:
        self._results = {normalize_query(q): list(v) for q, v in (results or {}).items()}

    @classmethod
    def from_path(cls, path: str | Path) -> "FixtureSearch":
        """Load one JSON file, or merge every ``*.json`` file of a directory."""
        path = Path(path)
        files = sorted(path.glob("*.json")) if path.is_dir() else [path]
        merged: dict[str, list[str]] = {}
        for file in files:
            merged.update(json.loads(file.read_text("utf-8")))
        return cls(merged)

    def search(self, query: str) -> list[str]:
        return list(self._results.get(normalize_query(query), []))


class DuckDuckGoSearch:
    """Live provider using the DuckDuckGo instant-answer JSON API."""

    url = "https://api.duckduckgo.com/"

    def __init__(self, timeout_s: float = 10.0, client: httpx.Client | None = None) -> None:
        self._client = client or httpx.Client(timeout=timeout_s, follow_redirects=True)

    def search(self, query: str) -> list[str]:
        params = {"q": query, "format": "json", "no_html": "1", "skip_disambig": "1"}
        try:
            resp = self._client.get(self.url, params=params)
            resp.raise_for_status()
            data = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise SearchUnavailable(f"search backend failed: {exc}") from exc

        snippets = [data.get(k) for k in ("Answer", "AbstractText", "Definition")]
        stack = list(data.get("RelatedTopics") or [])
        while stack:
            topic = stack.pop(0)
            if "Topics" in topic:
                stack[:0] = topic["Topics"]
            else:
                snippets.append(topic.get("Text"))
        return [s for s in snippets if isinstance(s, str) and s.strip()]


class SearchTool:
    """Callable tool: top-k snippets joined and cut to the observation budget."""

    def __init__(
        self, provider: SearchProvider, top_k: int = DEFAULT_TOP_K, budget: int = DEFAULT_BUDGET
    ) -> None:
        if top_k < 1 or budget < 1:
            raise ValueError("top_k and budget must be positive")
        self.provider = provider
        self.top_k = top_k
        self.budget = budget

    def __call__(self, query: str) -> str:
        if not query or not query.strip():
            raise ValueError("search query is empty")
        results = self.provider.search(query)[: self.top_k]
        if not results:
            return NO_RESULTS
        return "\n".join(r.strip() for r in results)[: self.budget]


def search_tool(query: str, provider: SearchProvider, top_k: int = DEFAULT_TOP_K,
                budget: int = DEFAULT_BUDGET) -> str:
    return SearchTool(provider, top_k, budget)(query)
