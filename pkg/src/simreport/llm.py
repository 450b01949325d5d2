"""Backend-agnostic chat-completion client.

Two backends speak through one :func:`chat` entry point: an HTTP backend
posting ``{model, messages, temperature}`` to a chat-completions endpoint
and reading ``choices[0].message.content``, and a scripted
:class:`MockScript` that makes every pipeline run deterministic in tests.
Reasoning-model "think" segments are stripped from completions before they
reach any downstream parser.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import requests

from .errors import (
    AuthError,
    BackendError,
    ConfigError,
    MockExhausted,
    MockMismatch,
    TransportError,
)

DEFAULT_THINK_MARKERS = ("<think>", "</think>")

#: Status codes treated as transient and retried alongside transport errors.
_RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class Message:
    role: Role
    content: str
    tool_result_id: str | None = None

    def __post_init__(self) -> None:
        if self.role is not Role.TOOL and not self.content:
            raise ValueError(f"{self.role.value} message has empty content")

    def to_dict(self) -> dict:
        obj: dict = {"role": self.role.value, "content": self.content}
        if self.tool_result_id is not None:
            obj["tool_result_id"] = self.tool_result_id
        return obj


def system(content: str) -> Message:
    return Message(Role.SYSTEM, content)


def user(content: str) -> Message:
    return Message(Role.USER, content)


def assistant(content: str) -> Message:
    return Message(Role.ASSISTANT, content)


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True)
class Completion:
    text: str
    finish_reason: FinishReason
    usage: Usage | None = None


@dataclass(frozen=True)
class BackendConfig:
    """Connection settings for a live chat-completions endpoint.

    ``temperature`` is the default used for analysis turns; extraction
    turns pass an explicit 0.  An empty ``api_key_env`` means the endpoint
    needs no bearer token.
    """

    endpoint_url: str
    model_name: str
    api_key_env: str = ""
    temperature: float = 0.2
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_base: float = 0.25
    think_markers: tuple[str, str] | None = DEFAULT_THINK_MARKERS

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be at least 1")
        if self.temperature < 0:
            raise ConfigError("temperature must be non-negative")


@dataclass(frozen=True)
class MockEntry:
    reply: str
    match: str | None = None


class MockScript:
    """FIFO scripted backend; consumption is serialized across threads.

    An entry with ``match`` set requires the current (last) user message to
    contain that substring, pinning the scripted reply to the pipeline
    stage it was written for.
    """

    def __init__(self, entries: Sequence[MockEntry]):
        if not entries:
            raise ConfigError("mock script needs at least one entry")
        self._entries = list(entries)
        self._next = 0
        self._lock = threading.Lock()
        self.model_name = "mock"

    @property
    def consumed(self) -> int:
        return self._next

    @property
    def remaining(self) -> int:
        return len(self._entries) - self._next

    def reply_for(self, messages: Sequence[Message]) -> Completion:
        with self._lock:
            if self._next >= len(self._entries):
                raise MockExhausted(
                    f"mock script exhausted after {len(self._entries)} replies"
                )
            entry = self._entries[self._next]
            if entry.match is not None:
                current = _last_user_content(messages)
                if entry.match not in current:
                    raise MockMismatch(
                        f"mock entry {self._next} expects a user message containing "
                        f"{entry.match!r}; got: {current[:120]!r}"
                    )
            self._next += 1
            return Completion(text=entry.reply, finish_reason=FinishReason.STOP)


def _last_user_content(messages: Sequence[Message]) -> str:
    for message in reversed(messages):
        if message.role is Role.USER:
            return message.content
    return ""


def make_mock(script: Iterable[Mapping[str, str] | MockEntry]) -> MockScript:
    """Build a MockScript from ``[{"reply": ..., "match": ...?}, ...]``."""
    entries = []
    for item in script:
        if isinstance(item, MockEntry):
            entries.append(item)
            continue
        if "reply" not in item or not item["reply"]:
            raise ConfigError("each mock entry needs a non-empty 'reply'")
        unknown = sorted(set(item) - {"reply", "match"})
        if unknown:
            raise ConfigError("mock entry has unknown key(s): " + ", ".join(unknown))
        entries.append(MockEntry(reply=item["reply"], match=item.get("match")))
    return MockScript(entries)


def load_mock_script(path: str | os.PathLike) -> MockScript:
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read mock script {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"mock script {path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(data, list):
        raise ConfigError(f"mock script {path} must be a JSON array of entries")
    return make_mock(data)


def strip_think(text: str, markers: tuple[str, str] | None = DEFAULT_THINK_MARKERS) -> str:
    """Remove marker-delimited reasoning segments; an unclosed segment is
    dropped through the end of the text."""
    if markers is None:
        return text
    start, end = markers
    out = []
    pos = 0
    while True:
        i = text.find(start, pos)
        if i < 0:
            out.append(text[pos:])
            break
        out.append(text[pos:i])
        j = text.find(end, i + len(start))
        if j < 0:
            break
        pos = j + len(end)
    return "".join(out).strip()


def chat(backend: BackendConfig | MockScript, messages: Sequence[Message],
         *, temperature: float | None = None) -> Completion:
    """Send one chat turn to the backend and return its completion.

    Transport failures (and transient 429/5xx statuses) are retried up to
    ``max_attempts`` with exponential backoff before raising
    :class:`TransportError` / :class:`BackendError`.
    """
    if not messages:
        raise ValueError("chat needs at least one message")
    if isinstance(backend, MockScript):
        completion = backend.reply_for(messages)
        return Completion(text=strip_think(completion.text),
                          finish_reason=completion.finish_reason,
                          usage=completion.usage)
    return _http_chat(backend, messages, temperature)


def _http_chat(config: BackendConfig, messages: Sequence[Message],
               temperature: float | None) -> Completion:
    headers = {"Content-Type": "application/json"}
    if config.api_key_env:
        api_key = os.environ.get(config.api_key_env)
        if not api_key:
            raise AuthError(
                f"environment variable {config.api_key_env!r} is not set"
            )
        headers["Authorization"] = f"Bearer {api_key}"
    payload = {
        "model": config.model_name,
        "messages": [m.to_dict() for m in messages],
        "temperature": config.temperature if temperature is None else temperature,
    }

    last_transport: Exception | None = None
    last_backend: BackendError | None = None
    for attempt in range(1, config.max_attempts + 1):
        try:
            response = requests.post(config.endpoint_url, json=payload,
                                     headers=headers, timeout=config.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_transport = exc
        else:
            if response.status_code in _RETRY_STATUSES:
                last_backend = BackendError(
                    f"backend answered {response.status_code}",
                    status=response.status_code, body_excerpt=response.text[:200],
                )
            elif not 200 <= response.status_code < 300:
                raise BackendError(
                    f"backend answered {response.status_code}: {response.text[:200]}",
                    status=response.status_code, body_excerpt=response.text[:200],
                )
            else:
                return _parse_completion(response, config)
        if attempt < config.max_attempts and config.backoff_base > 0:
            time.sleep(config.backoff_base * 2 ** (attempt - 1))

    if last_backend is not None:
        raise last_backend
    raise TransportError(
        f"cannot reach {config.endpoint_url} after {config.max_attempts} "
        f"attempt(s): {last_transport}",
        attempts=config.max_attempts,
    )


def _parse_completion(response: requests.Response, config: BackendConfig) -> Completion:
    try:
        body = response.json()
        choice = body["choices"][0]
        text = choice["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise BackendError(
            f"malformed backend response: {exc}", status=response.status_code,
            body_excerpt=response.text[:200],
        ) from exc
    if not isinstance(text, str) or not text:
        raise BackendError("backend returned an empty completion",
                           status=response.status_code,
                           body_excerpt=response.text[:200])
    reason = choice.get("finish_reason")
    finish = FinishReason.LENGTH if reason == "length" else FinishReason.STOP
    usage = None
    raw_usage = body.get("usage")
    if isinstance(raw_usage, dict):
        try:
            usage = Usage(prompt_tokens=int(raw_usage["prompt_tokens"]),
                          completion_tokens=int(raw_usage["completion_tokens"]))
        except (KeyError, TypeError, ValueError):
            usage = None
    return Completion(text=strip_think(text, config.think_markers),
                      finish_reason=finish, usage=usage)


def first_json_payload(text: str):
    """Extract the first JSON payload from assistant text.

    Prefers fenced ```json blocks, then a bare fenced block, then the whole
    text.  Raises ValueError when nothing parses.
    """
    candidates = []
    for tag in ("```json", "```"):
        pos = 0
        while True:
            i = text.find(tag, pos)
            if i < 0:
                break
            start = i + len(tag)
            j = text.find("```", start)
            if j < 0:
                break
            candidates.append(text[start:j])
            pos = j + 3
        if candidates:
            break
    candidates.append(text)
    for candidate in candidates:
        try:
            return json.loads(candidate.strip())
        except json.JSONDecodeError:
            continue
    raise ValueError("no JSON payload found in assistant text")
