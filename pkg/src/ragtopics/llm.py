"""Chat-completion clients: an HTTP backend and a scripted mock for tests."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import httpx

from .errors import BackendUnavailable, EmptyResponse, ResponseTooLong, ScriptExhausted

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant", "tool")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message must have content")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class CompletionParams:
    model_name: str = "gpt-4o"
    temperature: float = 0.2
    max_output_chars: int = 20_000
    seed: int | None = None

    def __post_init__(self):
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_output_chars < 1:
            raise ValueError("max_output_chars must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Exchange:
    """One request/response pair as sent to and received from a backend."""

    messages: list[dict]
    params: dict
    response: str

    def to_dict(self) -> dict:
        return {"request": {"messages": self.messages, "params": self.params}, "response": self.response}


class ChatClient:
    """Base class; subclasses implement ``_send``.

    Every successful call is appended to ``exchanges`` and passed to each
    listener, so callers can keep their own transcript.
    """

    def __init__(self):
        self.exchanges: list[Exchange] = []
        self.calls = 0
        self.listeners: list[Callable[[Exchange], None]] = []

    def _send(self, messages: Sequence[ChatMessage], params: CompletionParams) -> str:
        raise NotImplementedError

    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        self.calls += 1
        text = self._send(messages, params)
        if not text or not text.strip():
            raise EmptyResponse("backend returned an empty completion")
        if len(text) > params.max_output_chars:
            raise ResponseTooLong(f"completion of {len(text)} chars exceeds {params.max_output_chars}")
        exchange = Exchange([m.to_dict() for m in messages], params.to_dict(), text)
        self.exchanges.append(exchange)
        for listener in self.listeners:
            listener(exchange)
        return text


class ScriptedChatClient(ChatClient):
    """Returns pre-recorded responses by call ordinal, ignoring the request."""

    def __init__(self, responses: Sequence[str]):
        super().__init__()
        self.responses = list(responses)
        self._next = 0

    def _send(self, messages, params) -> str:
        if self._next >= len(self.responses):
            raise ScriptExhausted(f"script has only {len(self.responses)} responses")
        text = self.responses[self._next]
        self._next += 1
        return text


def load_script(path: str | Path) -> list[str] | list[list[str]]:
    """Read a mock script: a JSON/YAML list of strings, or ``{"rounds": [[...], ...]}``."""
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(raw)
    else:
        data = json.loads(raw)
    if isinstance(data, dict):
        if "rounds" in data:
            return [list(map(str, r)) for r in data["rounds"]]
        data = data["responses"]
    if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
        raise ValueError(f"{path}: script must be a list of response strings")
    return data


class HttpChatClient(ChatClient):
    """Client for a chat-completions endpoint.

    POSTs ``{model, messages, temperature[, seed]}`` to ``{base_url}/chat/completions``
    and reads ``choices[0].message.content``.
    """

    def __init__(self, base_url: str, api_key_env: str = "OPENAI_API_KEY", max_attempts: int = 3,
                 backoff_base: float = 0.5, timeout: float = 120.0,
                 transport: httpx.BaseTransport | None = None, sleep: Callable[[float], None] = time.sleep):
        super().__init__()
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.sleep = sleep
        headers = {}
        key = os.environ.get(api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _send(self, messages, params) -> str:
        body = {
            "model": params.model_name,
            "messages": [m.to_dict() for m in messages],
            "temperature": params.temperature,
        }
        if params.seed is not None:
            body["seed"] = params.seed
        last_exc: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = self._client.post(self.url, json=body)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (httpx.HTTPError, KeyError, IndexError, ValueError, TypeError) as exc:
                last_exc = exc
                logger.warning("chat request failed (attempt %d/%d): %s", attempt + 1, self.max_attempts, exc)
                if attempt + 1 < self.max_attempts:
                    self.sleep(self.backoff_base * 2**attempt)
        raise BackendUnavailable(f"chat endpoint failed after {self.max_attempts} attempts: {last_exc}")


@dataclass
class LlmConfig:
    backend: str = "scripted"  # scripted | http
    base_url: str | None = None
    api_key_env: str = "OPENAI_API_KEY"
    script_path: str | None = None
    max_attempts: int = 3
    backoff_base: float = 0.5
    params: CompletionParams = field(default_factory=CompletionParams)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


def client_factory(config: LlmConfig, script: list | None = None) -> Callable[[int], ChatClient]:
    """Return ``make(round_number) -> ChatClient`` giving each round its own client."""
    if config.backend == "http":
        if not config.base_url:
            raise ValueError("http LLM backend requires base_url")
        return lambda _round: HttpChatClient(config.base_url, config.api_key_env, config.max_attempts,
                                             config.backoff_base)
    if config.backend != "scripted":
        raise ValueError(f"unknown LLM backend {config.backend!r}")
    if script is None:
        if not config.script_path:
            raise ValueError("scripted LLM backend requires script_path")
        script = load_script(config.script_path)
    if script and isinstance(script[0], list):
        per_round = script
        return lambda n: ScriptedChatClient(per_round[(n - 1) % len(per_round)])
    # a flat script is replayed from the start for every round
    return lambda _round: ScriptedChatClient(script)
