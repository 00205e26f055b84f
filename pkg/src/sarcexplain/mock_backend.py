"""Deterministic stand-ins for chat, embedding and judge endpoints.

A :class:`MockEndpoint` answers the same JSON routes as a real inference
server. It can be mounted in-process (``endpoint.transport()``) or served
over real HTTP on localhost (``with endpoint.serve() as url``).

Run ``python -m sarcexplain.mock_backend --responses FILE`` to serve a
fixture model for offline demos of the full pipeline.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import re
import threading
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Iterable, Iterator

import httpx

from .prompts import TEXT_PREFIX, Strategy, build_kg_system_prompt, system_instruction

ChatFn = Callable[[list[dict], dict], "str | tuple[str, str]"]
EmbedFn = Callable[[str], list[float]]


def chat_payload(text: str, finish_reason: str = "stop", model: str = "mock") -> dict:
    return {
        "object": "chat.completion",
        "model": model,
        "choices": [
            {"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": finish_reason}
        ],
    }


def embedding_payload(vector: list[float], model: str = "mock") -> dict:
    return {"object": "list", "model": model, "data": [{"index": 0, "embedding": vector}]}


def scripted(replies: Iterable[str]) -> ChatFn:
    """Chat function that returns ``replies`` in order, repeating the last one."""
    queue = deque(replies)
    lock = threading.Lock()
    last = [""]

    def chat(messages: list[dict], body: dict) -> str:
        with lock:
            if queue:
                last[0] = queue.popleft()
            return last[0]

    return chat


class MockEndpoint:
    """Scriptable endpoint with optional fault injection.

    ``faults`` is a sequence of HTTP status codes returned, one per request,
    before normal answers resume. Every request body is kept in ``requests``.
    """

    def __init__(
        self,
        chat: ChatFn | None = None,
        embed: EmbedFn | dict[str, list[float]] | None = None,
        faults: Iterable[int] = (),
    ) -> None:
        self.chat = chat
        self.embed = (lambda t: embed[t]) if isinstance(embed, dict) else embed
        self.requests: list[tuple[str, dict]] = []
        self._faults = deque(faults)
        self._lock = threading.Lock()

    def handle(self, route: str, body: dict) -> tuple[int, dict]:
        with self._lock:
            self.requests.append((route, body))
            fault = self._faults.popleft() if self._faults else None
        if fault is not None:
            return fault, {"error": {"message": f"injected fault {fault}"}}
        model = body.get("model", "mock")
        if route.endswith("/chat/completions") and self.chat is not None:
            reply = self.chat(body.get("messages", []), body)
            text, reason = reply if isinstance(reply, tuple) else (reply, "stop")
            return 200, chat_payload(text, reason, model)
        if route.endswith("/embeddings") and self.embed is not None:
            return 200, embedding_payload(self.embed(body["input"]), model)
        return 404, {"error": {"message": f"no handler for {route}"}}

    @property
    def calls(self) -> int:
        return len(self.requests)

    def transport(self) -> httpx.MockTransport:
        def handler(request: httpx.Request) -> httpx.Response:
            status, payload = self.handle(request.url.path, json.loads(request.content or b"{}"))
            return httpx.Response(status, json=payload)

        return httpx.MockTransport(handler)

    @contextlib.contextmanager
    def serve(self, host: str = "127.0.0.1", port: int = 0) -> Iterator[str]:
        server = ThreadingHTTPServer((host, port), _handler_class(self))
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            yield f"http://{host}:{server.server_address[1]}/v1"
        finally:
            server.shutdown()
            server.server_close()


def _handler_class(endpoint: MockEndpoint) -> type[BaseHTTPRequestHandler]:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self) -> None:  # noqa: N802
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length) or b"{}")
            status, payload = endpoint.handle(self.path, body)
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args) -> None:
            pass

    return Handler


# -- fixture model used by the offline pipeline replay -----------------------

JUDGE_MODEL = "mock-judge"
EMBED_MODEL = "mock-embed"
UNJUDGEABLE = "UNJUDGEABLE"
_WORD = re.compile(r"[a-z]+")


def letter_embedding(text: str) -> list[float]:
    """26-d vector of a-z letter counts."""
    counts = [0.0] * 26
    for ch in text.lower():
        if "a" <= ch <= "z":
            counts[ord(ch) - 97] += 1.0
    return counts


def _field(prompt: str, name: str) -> str:
    match = re.search(rf"^{name}: (.*)$", prompt, re.M)
    return match.group(1) if match else ""


def overlap_judge(prompt: str) -> str:
    """Score = min(5, shared distinct lowercase words // 2), as ``Score: n``."""
    gold = _field(prompt, "Ground truth explanation")
    generated = _field(prompt, "Generated explanation")
    if UNJUDGEABLE in generated:
        return "6"
    shared = set(_WORD.findall(gold.lower())) & set(_WORD.findall(generated.lower()))
    return f"Score: {min(5, len(shared) // 2)}"


def _identify_strategy(system: str) -> Strategy:
    if system == build_kg_system_prompt():
        return Strategy.KG
    if system.startswith("This text is from "):
        return Strategy.ORIGIN
    for strategy in (Strategy.ZERO, Strategy.FEW, Strategy.PMP):
        if system == system_instruction(strategy):
            return strategy
    raise KeyError("unrecognised system prompt")


class FixtureModel:
    """Replays canned model replies keyed by strategy and sample text.

    ``responses[strategy][text]`` is either a reply string or, for KG, a list
    of per-turn replies picked by the number of assistant turns so far.
    """

    def __init__(self, responses: dict[str, dict[str, str | list[str]]]) -> None:
        self.responses = responses

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureModel":
        return cls(json.loads(Path(path).read_text("utf-8")))

    def chat(self, messages: list[dict], body: dict) -> str:
        if body.get("model") == JUDGE_MODEL:
            return overlap_judge("\n".join(m["content"] for m in messages))
        strategy = _identify_strategy(messages[0]["content"])
        text = messages[1]["content"].removeprefix(TEXT_PREFIX)
        reply = self.responses[strategy.value][text]
        if isinstance(reply, list):
            turn = sum(1 for m in messages if m["role"] == "assistant")
            reply = reply[min(turn, len(reply) - 1)]
        return reply

    def endpoint(self) -> MockEndpoint:
        return MockEndpoint(chat=self.chat, embed=letter_embedding)


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description="Serve a fixture model over HTTP.")
    parser.add_argument("--responses", required=True, help="fixture responses JSON")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    args = parser.parse_args(argv)
    endpoint = FixtureModel.from_file(args.responses).endpoint()
    with endpoint.serve(args.host, args.port) as url:
        print(f"serving fixture model at {url} (Ctrl-C to stop)", flush=True)
        try:
            threading.Event().wait()
        except KeyboardInterrupt:
            pass


if __name__ == "__main__":
    main()


__all__ = [
    "EMBED_MODEL",
    "JUDGE_MODEL",
    "FixtureModel",
    "MockEndpoint",
    "chat_payload",
    "embedding_payload",
    "letter_embedding",
    "overlap_judge",
    "scripted",
]
