"""Chat and embedding clients.

:class:`ModelClient` owns retry and accounting; subclasses implement one raw
completion and one raw embedding call. Two backends ship here: an
OpenAI-compatible HTTP client and :class:`ScriptedClient`, a deterministic
offline mock driven by per-role response queues.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import mimetypes
import os
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, Union

import httpx
import numpy as np

from .errors import (
    AuthFailure,
    DimensionMismatch,
    ModelUnavailable,
    ScriptExhausted,
    TransientModelError,
)

logger = logging.getLogger(__name__)

MAX_RETRY_BUDGET = 5
VISUAL_TEXT_PREFIX = "figure/table described as: "


class Role(str, Enum):
    INITIALIZER = "initializer"
    EVOLVER = "evolver"
    DECOMPOSER = "decomposer"
    WORKER = "worker"
    CHECKER = "checker"
    REASONER = "reasoner"
    JUDGE = "judge"


@dataclass(frozen=True)
class ImagePart:
    path: Path

    def data_url(self) -> str:
        mime = mimetypes.guess_type(str(self.path))[0] or "image/png"
        payload = base64.b64encode(Path(self.path).read_bytes()).decode("ascii")
        return f"data:{mime};base64,{payload}"


Part = Union[str, ImagePart]


@dataclass(frozen=True)
class ChatRequest:
    role: Role
    parts: tuple[Part, ...]
    temperature: float = 0.0
    max_tokens: int = 2048

    def __post_init__(self) -> None:
        if not any(isinstance(p, str) for p in self.parts):
            raise ValueError("a chat request needs at least one text part")

    @classmethod
    def build(
        cls, role: Role | str, text: str, images: Iterable[Path] = (), **params: Any
    ) -> ChatRequest:
        parts: list[Part] = [text]
        parts.extend(ImagePart(Path(p)) for p in images)
        return cls(Role(role), tuple(parts), **params)

    @property
    def text(self) -> str:
        return "\n".join(p for p in self.parts if isinstance(p, str))

    @property
    def images(self) -> list[ImagePart]:
        return [p for p in self.parts if isinstance(p, ImagePart)]


@dataclass
class ClientConfig:
    endpoint: str = "http://localhost:8000/v1"
    model: str = "Qwen3-VL-32B-Instruct"
    embedding_model: str = "text-embedding-3-small"
    api_key_env: str = "G2_API_KEY"
    timeout: float = 120.0
    retry_budget: int = 3
    vision_capable: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.retry_budget <= MAX_RETRY_BUDGET:
            raise ValueError(f"retry_budget must be in [0, {MAX_RETRY_BUDGET}]")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


@dataclass
class Completion:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


class CallLedger:
    """Per-role call, attempt and token accounting. Safe for concurrent use."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.calls: dict[str, int] = defaultdict(int)
        self.attempts: dict[str, int] = defaultdict(int)
        self.prompt_tokens: dict[str, int] = defaultdict(int)
        self.completion_tokens: dict[str, int] = defaultdict(int)
        self.embed_calls = 0
        self.embedded_texts = 0
        self.wall_time = 0.0

    def record_attempt(self, role: str) -> None:
        with self._lock:
            self.attempts[role] += 1

    def record_call(self, role: str, prompt_tokens: int, completion_tokens: int, seconds: float) -> None:
        with self._lock:
            self.calls[role] += 1
            self.prompt_tokens[role] += prompt_tokens
            self.completion_tokens[role] += completion_tokens
            self.wall_time += seconds

    def record_embed(self, n_texts: int, seconds: float) -> None:
        with self._lock:
            self.embed_calls += 1
            self.embedded_texts += n_texts
            self.wall_time += seconds

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())

    @property
    def total_tokens(self) -> int:
        return sum(self.prompt_tokens.values()) + sum(self.completion_tokens.values())

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {
                "calls": dict(sorted(self.calls.items())),
                "attempts": dict(sorted(self.attempts.items())),
                "prompt_tokens": dict(sorted(self.prompt_tokens.items())),
                "completion_tokens": dict(sorted(self.completion_tokens.items())),
                "embed_calls": self.embed_calls,
                "embedded_texts": self.embedded_texts,
                "wall_time": self.wall_time,
            }


class ModelClient:
    """Base class: retries transient failures with exponential backoff."""

    vision_capable: bool = False

    def __init__(self, retry_budget: int = 3, backoff: float = 0.5, ledger: CallLedger | None = None) -> None:
        if not 0 <= retry_budget <= MAX_RETRY_BUDGET:
            raise ValueError(f"retry_budget must be in [0, {MAX_RETRY_BUDGET}]")
        self.retry_budget = retry_budget
        self.backoff = backoff
        self.ledger = ledger if ledger is not None else CallLedger()

    def _complete(self, request: ChatRequest) -> Completion:
        raise NotImplementedError

    def _embed(self, texts: list[str]) -> list[Sequence[float]]:
        raise NotImplementedError

    def _with_retries(self, what: str, fn: Callable[[], Any], on_attempt: Callable[[], None] | None = None) -> Any:
        last: Exception | None = None
        for attempt in range(self.retry_budget + 1):
            if on_attempt:
                on_attempt()
            try:
                return fn()
            except TransientModelError as exc:
                last = exc
                logger.warning("%s attempt %d/%d failed: %s", what, attempt + 1, self.retry_budget + 1, exc)
                if attempt < self.retry_budget and self.backoff > 0:
                    time.sleep(self.backoff * 2**attempt)
        raise ModelUnavailable(f"{what} failed after {self.retry_budget + 1} attempts: {last}") from last

    def chat(self, request: ChatRequest) -> str:
        if request.images and not self.vision_capable:
            raise ValueError("image attachments sent to a client that is not vision-capable")
        role = request.role.value
        start = time.perf_counter()
        completion: Completion = self._with_retries(
            f"chat[{role}]", lambda: self._complete(request), lambda: self.ledger.record_attempt(role)
        )
        prompt_tokens = completion.prompt_tokens
        if prompt_tokens is None:
            prompt_tokens = estimate_tokens(request.text)
        completion_tokens = completion.completion_tokens
        if completion_tokens is None:
            completion_tokens = estimate_tokens(completion.text)
        self.ledger.record_call(role, prompt_tokens, completion_tokens, time.perf_counter() - start)
        return completion.text

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed() needs at least one text")
        start = time.perf_counter()
        raw = self._with_retries("embed", lambda: self._embed(list(texts)))
        if len(raw) != len(texts):
            raise ModelUnavailable(f"embedding backend returned {len(raw)} vectors for {len(texts)} texts")
        vectors = [np.asarray(v, dtype=np.float64) for v in raw]
        dim = len(vectors[0])
        for v in vectors:
            if v.ndim != 1 or len(v) != dim:
                raise DimensionMismatch(dim, len(v))
        self.ledger.record_embed(len(texts), time.perf_counter() - start)
        return vectors


class OpenAICompatClient(ModelClient):
    """Client for servers exposing ``/chat/completions`` and ``/embeddings``."""

    def __init__(
        self,
        config: ClientConfig,
        transport: httpx.BaseTransport | None = None,
        backoff: float = 0.5,
        ledger: CallLedger | None = None,
    ) -> None:
        super().__init__(config.retry_budget, backoff, ledger)
        self.config = config
        self.vision_capable = config.vision_capable
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(
            base_url=config.endpoint.rstrip("/") + "/",
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._http.close()

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        try:
            resp = self._http.post(path, json=payload)
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            raise TransientModelError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthFailure(f"HTTP {resp.status_code}: {resp.text[:300]}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientModelError(f"HTTP {resp.status_code}: {resp.text[:300]}")
        if resp.status_code >= 400:
            raise ModelUnavailable(f"HTTP {resp.status_code}: {resp.text[:300]}")
        try:
            return resp.json()
        except json.JSONDecodeError as exc:
            raise TransientModelError(f"non-JSON response body: {resp.text[:200]!r}") from exc

    @staticmethod
    def message_content(request: ChatRequest) -> str | list[dict[str, Any]]:
        if not request.images:
            return request.text
        content: list[dict[str, Any]] = []
        for part in request.parts:
            if isinstance(part, str):
                content.append({"type": "text", "text": part})
            else:
                content.append({"type": "image_url", "image_url": {"url": part.data_url()}})
        return content

    def _complete(self, request: ChatRequest) -> Completion:
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": self.message_content(request)}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        data = self._post("chat/completions", payload)
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransientModelError(f"unexpected completion payload: {str(data)[:200]}") from exc
        usage = data.get("usage") or {}
        return Completion(text, usage.get("prompt_tokens"), usage.get("completion_tokens"))

    def _embed(self, texts: list[str]) -> list[Sequence[float]]:
        data = self._post("embeddings", {"model": self.config.embedding_model, "input": texts})
        try:
            items = sorted(data["data"], key=lambda d: d.get("index", 0))
            return [item["embedding"] for item in items]
        except (KeyError, TypeError) as exc:
            raise TransientModelError(f"unexpected embeddings payload: {str(data)[:200]}") from exc


def mock_embedding(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic pseudo-random unit vector for ``text``.

    The first 8 bytes (little-endian) of ``sha256(f"{seed}:{text}")`` seed a
    ``numpy.random.default_rng``; a standard-normal draw of length ``dim`` is
    then normalized to unit length.
    """
    digest = hashlib.sha256(f"{seed}:{text}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


Responder = Callable[[ChatRequest], str]
ScriptEntry = Union[str, dict, Responder]


class ScriptedClient(ModelClient):
    """Offline client replaying scripted responses per role.

    ``script`` maps a role name to a queue of entries. An entry is a response
    string, a callable ``(request) -> str``, or ``{"error": kind}`` where kind
    is ``"transient"``, ``"auth"`` or ``"unavailable"``. Once a role's queue is
    empty its ``defaults`` entry (if any) answers every further call.
    ``embeddings`` pins exact vectors for given texts; other texts get
    :func:`mock_embedding` vectors.
    """

    def __init__(
        self,
        script: dict[str, list[ScriptEntry]] | None = None,
        defaults: dict[str, ScriptEntry] | None = None,
        embeddings: dict[str, Sequence[float]] | None = None,
        dim: int = 16,
        seed: int = 0,
        vision_capable: bool = False,
        retry_budget: int = 3,
        ledger: CallLedger | None = None,
    ) -> None:
        super().__init__(retry_budget, backoff=0.0, ledger=ledger)
        self._lock = threading.Lock()
        self._queues = {Role(k).value: deque(v) for k, v in (script or {}).items()}
        self._defaults = {Role(k).value: v for k, v in (defaults or {}).items()}
        self._pinned = {k: list(v) for k, v in (embeddings or {}).items()}
        self.dim = dim
        self.seed = seed
        self.vision_capable = vision_capable
        self.requests: list[ChatRequest] = []

    @classmethod
    def from_file(cls, path: str | Path, **overrides: Any) -> ScriptedClient:
        """Load a mock script file.

        Format: ``{"dim": 16, "seed": 0, "vision_capable": false,
        "script": {role: [entries]}, "defaults": {role: entry},
        "embeddings": {text: [floats]}}``. A default of ``"auto"`` selects the
        built-in schema-valid responder for that role.
        """
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        defaults = {
            role: (auto_responder(role) if entry == "auto" else entry)
            for role, entry in data.get("defaults", {}).items()
        }
        kwargs = dict(
            script=data.get("script", {}),
            defaults=defaults,
            embeddings=data.get("embeddings", {}),
            dim=data.get("dim", 16),
            seed=data.get("seed", 0),
            vision_capable=data.get("vision_capable", False),
        )
        kwargs.update(overrides)
        return cls(**kwargs)

    def _next_entry(self, role: str) -> ScriptEntry:
        with self._lock:
            queue = self._queues.get(role)
            if queue:
                return queue.popleft()
        if role in self._defaults:
            return self._defaults[role]
        raise ScriptExhausted(f"no scripted response left for role {role!r}")

    def _complete(self, request: ChatRequest) -> Completion:
        with self._lock:
            self.requests.append(request)
        entry = self._next_entry(request.role.value)
        if callable(entry):
            return Completion(entry(request))
        if isinstance(entry, dict):
            kind = entry.get("error")
            if kind == "transient":
                raise TransientModelError("scripted transient failure")
            if kind == "auth":
                raise AuthFailure("scripted auth failure")
            if kind == "unavailable":
                raise ModelUnavailable("scripted outage")
            return Completion(json.dumps(entry))
        return Completion(str(entry))

    def _embed(self, texts: list[str]) -> list[Sequence[float]]:
        return [self._pinned[t] if t in self._pinned else mock_embedding(t, self.dim, self.seed) for t in texts]

    def prompts_for(self, role: Role | str) -> list[str]:
        role = Role(role)
        return [r.text for r in self.requests if r.role is role]


def _auto_initializer(request: ChatRequest) -> str:
    body = request.text.rsplit("Content for analysis:\n", 1)[-1]
    words = [w.strip(".,;:()[]\"'").lower() for w in body.split()]
    words = [w for w in words if len(w) > 3]
    keywords = list(dict.fromkeys(words))[:3] or ["content"]
    summary = " ".join(body.split()[:20]) or "Empty unit."
    return json.dumps({"keywords": keywords, "summary": summary, "tags": ["document", "auto", "mock"]})


_AUTO_RESPONSES: dict[str, Responder] = {
    "initializer": _auto_initializer,
    "evolver": lambda r: json.dumps(
        {"suggested_connections": [], "should_update": False, "new_summary": "", "new_keywords": []}
    ),
    "decomposer": lambda r: (
        '<dag>{"nodes": [{"id": "root", "task": "question", "type": "question", "children": ["n1"]},'
        ' {"id": "n1", "task": "Find the facts needed to answer the question.", "type": "sub-question",'
        ' "children": []}], "edges": [{"from": "root", "to": "n1"}]}</dag>'
    ),
    "worker": lambda r: "<thought>scripted</thought><output>scripted sub-answer</output>",
    "checker": lambda r: '<check>{"sufficient": true, "gaps": []}</check>',
    "reasoner": lambda r: "<thought>scripted</thought><output>scripted answer</output>",
    "judge": lambda r: json.dumps({"accuracy": 1, "reasoning": "scripted"}),
}


def auto_responder(role: str) -> Responder:
    """A fixed, schema-valid responder for ``role`` (offline smoke runs)."""
    return _AUTO_RESPONSES[Role(role).value]


class RecordingClient(ModelClient):
    """Delegating wrapper that logs every (role, prompt, response) exchange."""

    def __init__(self, inner: ModelClient) -> None:
        self.inner = inner
        self.vision_capable = inner.vision_capable
        self.ledger = inner.ledger
        self.exchanges: list[tuple[str, str, str]] = []
        self._lock = threading.Lock()

    def chat(self, request: ChatRequest) -> str:
        response = self.inner.chat(request)
        with self._lock:
            self.exchanges.append((request.role.value, request.text, response))
        return response

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        return self.inner.embed(texts)
