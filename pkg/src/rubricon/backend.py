"""Model backends: remote chat endpoints, a math-OCR endpoint, scripted
mocks for offline runs, and a content-addressed response cache.

Requests are identified by a fingerprint computed from their content, so
caching and fixture lookup work identically across processes and machines.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

from .errors import (
    BudgetError,
    CacheIOError,
    ConfigError,
    RefusalError,
    TransportError,
    ValidationError,
)

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "RUBRICON_API_KEY"
DEFAULT_MAX_OUTPUT = 2048


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    data: bytes
    media_type: str = "image/png"


UserPart = TextPart | ImagePart


@dataclass(frozen=True)
class ModelRequest:
    """One completion request, self-describing enough to fingerprint."""

    backend_name: str
    system_prompt: str
    user_parts: tuple[UserPart, ...]
    temperature: float
    max_output: int = DEFAULT_MAX_OUTPUT
    request_tag: str = ""

    def __post_init__(self) -> None:
        if not self.user_parts:
            raise ValidationError("user_parts: at least one part is required")
        if not (math.isfinite(self.temperature) and self.temperature >= 0):
            raise ValidationError("temperature: must be finite and non-negative")
        if self.max_output < 1:
            raise ValidationError("max_output: must be positive")


@dataclass(frozen=True)
class ModelResponse:
    """Raw reply text plus bookkeeping about where it came from."""

    text: str
    backend_name: str
    cached: bool = False
    latency: float = 0.0


def _hash_field(hasher: "hashlib._Hash", data: bytes) -> None:
    hasher.update(len(data).to_bytes(8, "big"))
    hasher.update(data)


def prompt_fingerprint(request: ModelRequest) -> str:
    """Stable content hash of a request, ignoring the sample slot.

    Image parts contribute a digest of their bytes, so equal pixels in
    equal encodings collide and anything else does not.
    """
    hasher = hashlib.sha256()
    _hash_field(hasher, b"rubricon-request-v1")
    _hash_field(hasher, request.system_prompt.encode("utf-8"))
    for part in request.user_parts:
        if isinstance(part, TextPart):
            _hash_field(hasher, b"text")
            _hash_field(hasher, part.text.encode("utf-8"))
        else:
            _hash_field(hasher, b"image")
            _hash_field(hasher, part.media_type.encode("utf-8"))
            _hash_field(hasher, hashlib.sha256(part.data).digest())
    _hash_field(hasher, repr(request.temperature).encode("ascii"))
    return hasher.hexdigest()


def request_fingerprint(request: ModelRequest, sample_index: int) -> str:
    """Fingerprint of (request content, sample slot); the cache key."""
    hasher = hashlib.sha256()
    _hash_field(hasher, prompt_fingerprint(request).encode("ascii"))
    _hash_field(hasher, str(sample_index).encode("ascii"))
    return hasher.hexdigest()


class Backend(Protocol):
    name: str

    def complete(self, request: ModelRequest, sample_index: int = 0) -> ModelResponse:
        ...


@dataclass(frozen=True)
class BackendConfig:
    """One backend block from the run config."""

    name: str
    kind: str
    endpoint: str = ""
    model: str = ""
    api_key_env: str = DEFAULT_API_KEY_ENV
    max_parallel: int = 4
    rpm: int = 0
    retries: int = 3
    max_requests: int = 0
    fixtures: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("chat", "math-ocr", "mock"):
            raise ConfigError(f"backend {self.name}: unknown kind {self.kind!r}")
        if self.kind in ("chat", "math-ocr") and not self.endpoint:
            raise ConfigError(f"backend {self.name}: kind {self.kind} requires an endpoint")
        if self.max_parallel < 1:
            raise ConfigError(f"backend {self.name}: max_parallel must be positive")


class RateLimiter:
    """Bounds in-flight requests and, optionally, request starts per minute."""

    def __init__(self, max_parallel: int, rpm: int = 0):
        self._slots = threading.BoundedSemaphore(max_parallel)
        self._rpm = rpm
        self._lock = threading.Lock()
        self._window: list[float] = []

    def __enter__(self) -> "RateLimiter":
        self._slots.acquire()
        if self._rpm > 0:
            self._wait_for_window()
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self._slots.release()

    def _wait_for_window(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._window = [t for t in self._window if now - t < 60.0]
                if len(self._window) < self._rpm:
                    self._window.append(now)
                    return
                wait = 60.0 - (now - self._window[0])
            time.sleep(max(wait, 0.05))


class MockBackend:
    """Replays scripted responses keyed by prompt fingerprint.

    A fingerprint maps to an ordered list of canned texts; the sample
    slot picks an entry (wrapping), so repeated sampling of one prompt
    walks the list deterministically.
    """

    def __init__(self, name: str, fixtures: Mapping[str, Sequence[str]]):
        self.name = name
        self._fixtures = {k: list(v) for k, v in fixtures.items()}

    @classmethod
    def from_dir(cls, name: str, path: str | Path) -> "MockBackend":
        path = Path(path)
        if not path.is_dir():
            raise ConfigError(f"mock fixtures directory not found: {path}")
        fixtures: dict[str, list[str]] = {}
        for file in sorted(path.glob("*.json")):
            try:
                raw = json.loads(file.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"unreadable fixture file {file}: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError(f"fixture file {file}: top level must be a mapping")
            for key, responses in raw.items():
                if not isinstance(responses, list) or not all(
                    isinstance(r, str) for r in responses
                ):
                    raise ConfigError(f"fixture file {file}: {key}: expected a list of strings")
                fixtures[key] = responses
        return cls(name, fixtures)

    def complete(self, request: ModelRequest, sample_index: int = 0) -> ModelResponse:
        key = prompt_fingerprint(request)
        responses = self._fixtures.get(key)
        if not responses:
            raise ConfigError(
                f"mock backend {self.name}: no fixture for fingerprint {key} "
                f"(tag={request.request_tag!r})"
            )
        text = responses[sample_index % len(responses)]
        return ModelResponse(text=text, backend_name=self.name, cached=False)


def _b64_data_url(part: ImagePart) -> str:
    encoded = base64.b64encode(part.data).decode("ascii")
    return f"data:{part.media_type};base64,{encoded}"


class _RemoteBackend:
    """Shared wire plumbing: auth, retries with backoff, budget, limits."""

    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        self.name = config.name
        self._config = config
        self._limiter = RateLimiter(config.max_parallel, config.rpm)
        self._budget_lock = threading.Lock()
        self._requests_made = 0
        self._client = httpx.Client(transport=transport, timeout=120.0)

    def _auth_headers(self) -> dict[str, str]:
        key = os.environ.get(self._config.api_key_env, "")
        if not key:
            raise ConfigError(
                f"backend {self.name}: environment variable "
                f"{self._config.api_key_env} is not set"
            )
        return {"Authorization": f"Bearer {key}"}

    def _charge_budget(self) -> None:
        if self._config.max_requests <= 0:
            return
        with self._budget_lock:
            if self._requests_made >= self._config.max_requests:
                raise BudgetError(
                    f"backend {self.name}: request cap of "
                    f"{self._config.max_requests} exceeded"
                )
            self._requests_made += 1

    def _post_with_retries(self, body: dict[str, Any]) -> dict[str, Any]:
        self._charge_budget()
        headers = self._auth_headers()
        attempts = max(self._config.retries, 1)
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt > 0:
                delay = min(0.5 * 2 ** (attempt - 1), 8.0)
                time.sleep(delay)
            try:
                with self._limiter:
                    response = self._client.post(
                        self._config.endpoint, json=body, headers=headers
                    )
            except httpx.HTTPError as exc:
                last_error = exc
                logger.warning(
                    "backend %s: transport failure on attempt %d/%d: %s",
                    self.name, attempt + 1, attempts, exc,
                )
                continue
            if response.status_code >= 500:
                last_error = TransportError(
                    f"backend {self.name}: server error {response.status_code}"
                )
                logger.warning(
                    "backend %s: status %d on attempt %d/%d",
                    self.name, response.status_code, attempt + 1, attempts,
                )
                continue
            if response.status_code >= 400:
                raise RefusalError(
                    f"backend {self.name}: request rejected with status "
                    f"{response.status_code}: {response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise TransportError(
                    f"backend {self.name}: non-JSON reply: {exc}"
                ) from exc
        raise TransportError(
            f"backend {self.name}: all {attempts} attempts failed: {last_error}"
        ) from last_error


class ChatBackend(_RemoteBackend):
    """Chat-completions endpoint speaking the common messages wire shape."""

    def complete(self, request: ModelRequest, sample_index: int = 0) -> ModelResponse:
        content: list[dict[str, Any]] = []
        for part in request.user_parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                content.append(
                    {"type": "image_url", "image_url": {"url": _b64_data_url(part)}}
                )
        messages: list[dict[str, Any]] = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": content})
        body = {
            "model": self._config.model,
            "temperature": request.temperature,
            "max_tokens": request.max_output,
            "messages": messages,
        }
        started = time.monotonic()
        data = self._post_with_retries(body)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(
                f"backend {self.name}: reply missing choices[0].message.content"
            ) from exc
        if not isinstance(text, str):
            raise TransportError(f"backend {self.name}: reply content is not text")
        return ModelResponse(
            text=text, backend_name=self.name, latency=time.monotonic() - started
        )


class MathOcrBackend(_RemoteBackend):
    """Dedicated formula-recognition endpoint; takes one image, returns text.

    The instruction block and temperature have no wire equivalent here
    and are ignored.
    """

    def complete(self, request: ModelRequest, sample_index: int = 0) -> ModelResponse:
        images = [p for p in request.user_parts if isinstance(p, ImagePart)]
        if len(images) != 1:
            raise ConfigError(
                f"backend {self.name}: expects exactly one image part, got {len(images)}"
            )
        body = {"src": _b64_data_url(images[0]), "formats": ["text"]}
        started = time.monotonic()
        data = self._post_with_retries(body)
        text = data.get("text")
        if not isinstance(text, str):
            raise TransportError(f"backend {self.name}: reply missing 'text'")
        return ModelResponse(
            text=text, backend_name=self.name, latency=time.monotonic() - started
        )


def build_backend(
    config: BackendConfig, transport: httpx.BaseTransport | None = None
) -> Backend:
    if config.kind == "mock":
        if not config.fixtures:
            raise ConfigError(f"backend {config.name}: mock kind requires a fixtures path")
        return MockBackend.from_dir(config.name, config.fixtures)
    if config.kind == "chat":
        return ChatBackend(config, transport)
    return MathOcrBackend(config, transport)


class CachingBackend:
    """Content-addressed response cache around any backend.

    One file per request fingerprint; a hit never touches the wrapped
    backend.  Identical concurrent misses are collapsed to one upstream
    call per process.
    """

    _HEADER_SEPARATOR = "\n"

    def __init__(self, inner: Backend, cache_dir: str | Path):
        self.name = inner.name
        self._inner = inner
        self._dir = Path(cache_dir)
        try:
            self._dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CacheIOError(f"cannot create cache directory {self._dir}: {exc}") from exc
        self._flight_lock = threading.Lock()
        self._in_flight: dict[str, threading.Lock] = {}

    def _path(self, fingerprint: str) -> Path:
        return self._dir / fingerprint

    def _read(self, fingerprint: str) -> str | None:
        path = self._path(fingerprint)
        try:
            raw = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return None
        except OSError as exc:
            raise CacheIOError(f"cannot read cache entry {path}: {exc}") from exc
        if self._HEADER_SEPARATOR not in raw:
            logger.warning("discarding truncated cache entry %s", path)
            return None
        _header, text = raw.split(self._HEADER_SEPARATOR, 1)
        return text

    def _write(self, fingerprint: str, request: ModelRequest, text: str) -> None:
        header = json.dumps(
            {"backend": self.name, "tag": request.request_tag}, sort_keys=True
        )
        path = self._path(fingerprint)
        tmp = path.with_name(path.name + ".tmp")
        try:
            tmp.write_text(header + self._HEADER_SEPARATOR + text, encoding="utf-8")
            tmp.replace(path)
        except OSError as exc:
            raise CacheIOError(f"cannot write cache entry {path}: {exc}") from exc

    def complete(self, request: ModelRequest, sample_index: int = 0) -> ModelResponse:
        fingerprint = request_fingerprint(request, sample_index)
        cached = self._read(fingerprint)
        if cached is not None:
            return ModelResponse(text=cached, backend_name=self.name, cached=True)
        with self._flight_lock:
            gate = self._in_flight.setdefault(fingerprint, threading.Lock())
        with gate:
            cached = self._read(fingerprint)
            if cached is not None:
                return ModelResponse(text=cached, backend_name=self.name, cached=True)
            response = self._inner.complete(request, sample_index)
            self._write(fingerprint, request, response.text)
        with self._flight_lock:
            self._in_flight.pop(fingerprint, None)
        return response
