"""Chat models: a chat-completions HTTP client and deterministic test doubles."""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol

import httpx

from .errors import EmptyOutput, MalformedResponse, ModelUnavailable, ScriptExhausted

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")

SUMMARY_OPEN = "<<<SUMMARY"
SUMMARY_CLOSE = ">>>"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ChatExchange:
    messages: tuple[ChatMessage, ...]
    model_id: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("an exchange needs at least one message")
        if sum(1 for m in self.messages if m.role == "system") > 1:
            raise ValueError("at most one system message is allowed")
        if any(m.role == "system" for m in self.messages[1:]):
            raise ValueError("the system message must come first")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    @property
    def user_text(self) -> str:
        """Concatenated content of all user messages."""
        return "\n\n".join(m.content for m in self.messages if m.role == "user")

    def to_dict(self) -> dict:
        return {
            "messages": [m.to_dict() for m in self.messages],
            "model_id": self.model_id,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ChatExchange:
        return cls(
            messages=tuple(ChatMessage(m["role"], m["content"]) for m in d["messages"]),
            model_id=d.get("model_id", ""),
            temperature=float(d.get("temperature", 0.0)),
            max_output_tokens=int(d.get("max_output_tokens", 1024)),
        )


class ChatModel(Protocol):
    def complete(self, exchange: ChatExchange) -> str: ...


class ScriptedModel:
    """Replies with canned strings in order; running past the end is an error.

    Owned by a single run. ``calls`` records every exchange received.
    """

    def __init__(self, script: Iterable[str]) -> None:
        self.script = list(script)
        self.cursor = 0
        self.calls: list[ChatExchange] = []

    def complete(self, exchange: ChatExchange) -> str:
        self.calls.append(exchange)
        if self.cursor >= len(self.script):
            raise ScriptExhausted(f"script of {len(self.script)} replies exhausted")
        reply = self.script[self.cursor]
        self.cursor += 1
        return reply


class ReactiveModel:
    """Test double whose reply is a function of the incoming exchange."""

    def __init__(self, respond: Callable[[ChatExchange], str]) -> None:
        self.respond = respond
        self.calls: list[ChatExchange] = []

    def complete(self, exchange: ChatExchange) -> str:
        self.calls.append(exchange)
        return self.respond(exchange)


class ChatCompletionsClient:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint.

    Transient failures (transport errors, HTTP 429 and 5xx) are retried with
    exponential backoff; ``max_in_flight`` caps concurrent requests when the
    client is shared across worker threads.
    """

    def __init__(
        self,
        endpoint: str,
        *,
        api_key: str | None = None,
        attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 120.0,
        max_in_flight: int = 8,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.attempts = attempts
        self.backoff = backoff
        key = api_key if api_key is not None else os.environ.get("CTRLSUM_CHAT_API_KEY")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _payload(self, exchange: ChatExchange) -> dict:
        return {
            "model": exchange.model_id,
            "messages": [m.to_dict() for m in exchange.messages],
            "temperature": exchange.temperature,
            "max_tokens": exchange.max_output_tokens,
        }

    def complete(self, exchange: ChatExchange) -> str:
        payload = self._payload(exchange)
        last: object = None
        for attempt in range(self.attempts):
            try:
                with self._slots:
                    resp = self._client.post(self.endpoint, json=payload)
            except httpx.TransportError as exc:
                last = exc
            else:
                if resp.status_code < 400:
                    return self._parse(resp)
                if resp.status_code != 429 and resp.status_code < 500:
                    raise ModelUnavailable(f"chat endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
                last = f"HTTP {resp.status_code}"
            if attempt + 1 < self.attempts:
                delay = self.backoff * (2**attempt)
                log.warning("chat request failed (%s); retrying in %.1fs", last, delay)
                time.sleep(delay)
        raise ModelUnavailable(f"chat endpoint failed after {self.attempts} attempts: {last}")

    @staticmethod
    def _parse(resp: httpx.Response) -> str:
        try:
            body = resp.json()
            content = body["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected chat response shape: {exc!r}") from exc
        if not isinstance(content, str):
            raise MalformedResponse("message content is not a string")
        return content

    def close(self) -> None:
        self._client.close()


def _summary_blocks(raw: str) -> list[str]:
    blocks: list[str] = []
    current: list[str] | None = None
    for line in raw.splitlines():
        marker = line.strip()
        if marker == SUMMARY_OPEN:
            current = []
        elif marker == SUMMARY_CLOSE and current is not None:
            blocks.append("\n".join(current))
            current = None
        elif current is not None:
            current.append(line)
    return blocks


def extract_summary(raw: str) -> str:
    """Return the last complete ``<<<SUMMARY`` ... ``>>>`` block, else the trimmed reply."""
    blocks = _summary_blocks(raw)
    text = blocks[-1].strip() if blocks else raw.strip()
    if not text:
        raise EmptyOutput("model reply contains no summary text")
    return text
