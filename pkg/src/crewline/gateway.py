"""Chat-completion gateway over an OpenAI-compatible endpoint or a script.

The gateway makes exactly one attempt per call. Retry policy belongs to the
stages, which can see whether a reply was usable.
"""
from __future__ import annotations

import json
import logging
import os
import time
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any, Protocol

import requests

from .domain import BackendConfig, BackendKind, DomainError, EventKind, Role, nfc

logger = logging.getLogger(__name__)

API_KEY_ENV = "CREWLINE_API_KEY"
CHAT_PATH = "/v1/chat/completions"
MESSAGE_ROLES = ("system", "user", "assistant")


class GatewayError(Exception):
    """Base class for failed chat calls."""


class Timeout(GatewayError):
    pass


class UpstreamError(GatewayError):
    def __init__(self, message: str, status: int | None = None, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body


class ScriptMiss(GatewayError):
    def __init__(self, key: str):
        super().__init__(f"no scripted reply for key {key!r}")
        self.key = key


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in MESSAGE_ROLES:
            raise DomainError(f"message role must be one of {MESSAGE_ROLES}")
        if not isinstance(self.content, str):
            raise DomainError("message content must be text")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float
    max_tokens: int
    correlation_id: str
    # Lookup key for the scripted backend: "<stage>:<revision>:<call>".
    script_key: str | None = None

    def __post_init__(self) -> None:
        msgs = tuple(m if isinstance(m, Message) else Message(**m) for m in self.messages)
        if not msgs:
            raise DomainError("a chat request needs at least one message")
        if msgs[0].role != "system":
            raise DomainError("the first message must have role=system")
        object.__setattr__(self, "messages", msgs)
        if isinstance(self.temperature, bool) or not 0 <= self.temperature <= 2:
            raise DomainError("temperature must be within [0, 2]")
        if isinstance(self.max_tokens, bool) or not isinstance(self.max_tokens, int) or self.max_tokens <= 0:
            raise DomainError("max_tokens must be a positive integer")
        if not self.correlation_id:
            raise DomainError("correlation_id is required")


@dataclass(frozen=True)
class ChatResponse:
    content: str
    model: str
    latency_ms: int
    correlation_id: str


def build_wire_body(request: ChatRequest, model: str | None = None) -> dict[str, Any]:
    """Map a request onto the chat-completions JSON body.

    Keys are emitted in a fixed order (model, messages, temperature,
    max_tokens) and temperature is always present, including 0.
    """
    return {
        "model": model if model is not None else request.model,
        "messages": [m.to_dict() for m in request.messages],
        "temperature": float(request.temperature),
        "max_tokens": int(request.max_tokens),
    }


def encode_wire_body(body: Mapping[str, Any]) -> bytes:
    return json.dumps(body, ensure_ascii=False, indent=2).encode("utf-8") + b"\n"


def decode_completion(data: Any) -> tuple[str, str | None]:
    """Pull ``(content, model)`` out of a chat-completions response body."""
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise UpstreamError("response body has no choices[0].message.content", body=json.dumps(data)[:2000]) from None
    if not isinstance(content, str):
        raise UpstreamError("choices[0].message.content is not text")
    model = data.get("model") if isinstance(data, Mapping) else None
    return content, model if isinstance(model, str) else None


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


class ScriptedBackend:
    """Deterministic backend answering from a ``key -> reply`` table.

    Exact keys win; otherwise ``stage:rev:*``, ``stage:*:call`` and
    ``stage:*:*`` wildcards are tried in that order.
    """

    def __init__(self, script: Mapping[str, str], model: str = "scripted"):
        self.script = dict(script)
        self.model = model

    def resolve(self, key: str) -> str:
        if key in self.script:
            return self.script[key]
        parts = key.split(":")
        if len(parts) == 3:
            stage, rev, call = parts
            for candidate in (f"{stage}:{rev}:*", f"{stage}:*:{call}", f"{stage}:*:*"):
                if candidate in self.script:
                    return self.script[candidate]
        raise ScriptMiss(key)

    def complete(self, request: ChatRequest) -> ChatResponse:
        if request.script_key is None:
            raise ScriptMiss("<no script key>")
        content = self.resolve(request.script_key)
        return ChatResponse(content=content, model=request.model, latency_ms=0, correlation_id=request.correlation_id)


class HttpBackend:
    """Client for ``POST {base_url}/v1/chat/completions``."""

    def __init__(self, base_url: str, model: str, timeout_ms: int, session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/")
        self.base_url = self.base_url.removesuffix("/v1")
        self.model = model
        self.timeout_ms = timeout_ms
        self.session = session or requests.Session()

    @property
    def url(self) -> str:
        return self.base_url + CHAT_PATH

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json; charset=utf-8", "Accept": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def complete(self, request: ChatRequest) -> ChatResponse:
        body = encode_wire_body(build_wire_body(request, self.model))
        timeout_s = self.timeout_ms / 1000.0
        started = time.monotonic()
        try:
            resp = self.session.post(self.url, data=body, headers=self._headers(), timeout=(timeout_s, timeout_s))
        except requests.Timeout:
            raise Timeout(f"no response from {self.url} within {self.timeout_ms} ms") from None
        except requests.RequestException as exc:
            raise UpstreamError(f"request to {self.url} failed: {exc}") from None
        elapsed_ms = int((time.monotonic() - started) * 1000)
        if elapsed_ms > self.timeout_ms:
            raise Timeout(f"response from {self.url} took {elapsed_ms} ms (> {self.timeout_ms} ms)")
        if not 200 <= resp.status_code < 300:
            raise UpstreamError(f"HTTP {resp.status_code} from {self.url}", status=resp.status_code, body=resp.text)
        try:
            data = resp.json()
        except ValueError:
            raise UpstreamError("response body is not JSON", status=resp.status_code, body=resp.text) from None
        content, model = decode_completion(data)
        return ChatResponse(
            content=nfc(content),
            model=model or self.model,
            latency_ms=elapsed_ms,
            correlation_id=request.correlation_id,
        )


def make_backend(config: BackendConfig) -> Backend:
    if config.kind is BackendKind.HTTP:
        assert config.base_url is not None and config.model is not None
        return HttpBackend(config.base_url, config.model, config.timeout_ms)
    return ScriptedBackend(config.script or {}, model=config.model_name)


def chat(backend: Backend | BackendConfig, request: ChatRequest, sink: Any = None, stage: Role | None = None) -> ChatResponse:
    """Run one chat call, reporting it to ``sink`` as a request/response pair.

    ``sink`` is anything with ``emit(kind, stage, payload)``. A failed call
    still emits an ``llm_response`` event carrying the error, then re-raises.
    """
    if isinstance(backend, BackendConfig):
        backend = make_backend(backend)
    if sink is not None:
        sink.emit(
            EventKind.LLM_REQUEST,
            stage,
            {
                "correlation_id": request.correlation_id,
                "key": request.script_key,
                "model": request.model,
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
                "messages": [m.to_dict() for m in request.messages],
            },
        )
    try:
        response = backend.complete(request)
    except GatewayError as exc:
        if sink is not None:
            sink.emit(
                EventKind.LLM_RESPONSE,
                stage,
                {
                    "correlation_id": request.correlation_id,
                    "key": request.script_key,
                    "error": type(exc).__name__,
                    "message": str(exc),
                },
            )
        raise
    if response.correlation_id != request.correlation_id:
        raise UpstreamError("backend returned a response for a different correlation id")
    if sink is not None:
        sink.emit(
            EventKind.LLM_RESPONSE,
            stage,
            {
                "correlation_id": response.correlation_id,
                "key": request.script_key,
                "model": response.model,
                "latency_ms": response.latency_ms,
                "content": response.content,
            },
        )
    return response
