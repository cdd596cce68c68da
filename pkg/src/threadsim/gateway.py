"""Text-generation and embedding backends behind one cached, rate-limited gateway.

Two backends are provided: :class:`LiveBackend` talks to an OpenAI-style
HTTP API (``/chat/completions`` and ``/embeddings``), :class:`MockBackend`
is a deterministic stand-in whose outputs are pure functions of their
inputs. The :class:`Gateway` adds an append-only JSONL response cache,
retry with exponential backoff, a request-rate ceiling and a call budget.
"""
from __future__ import annotations

import collections
import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import (
    AuthError,
    BackendUnavailable,
    BudgetExceeded,
    EmptyText,
    TransientBackendError,
)
from .scenario import GenerationParams, PromptBundle, ScenarioKind

log = logging.getLogger(__name__)

LIVE_EMBED_DIM = 1536
MOCK_EMBED_DIM = 384
DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _seed_from(*parts) -> int:
    return int(_digest(list(parts))[:16], 16)


@dataclass(frozen=True)
class GenerationRequest:
    prompt: PromptBundle
    params: GenerationParams = field(default_factory=GenerationParams)
    run_index: int = 0


@dataclass(frozen=True)
class GeneratedComment:
    target_ref: str
    scenario: ScenarioKind
    run_index: int
    text: str
    backend_id: str
    cached: bool
    author: str = ""
    candidate: str | None = None
    temperature: float = 0.0

    def to_dict(self) -> dict:
        return {
            "target_ref": self.target_ref,
            "scenario": self.scenario.value,
            "run_index": self.run_index,
            "author": self.author,
            "candidate": self.candidate,
            "temperature": self.temperature,
            "backend_id": self.backend_id,
            "text": self.text,
        }


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    model_id: str

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


# ---------------------------------------------------------------- backends


class Backend(Protocol):
    backend_id: str

    def complete(self, prompt: str, params: GenerationParams, run_index: int, meta: dict) -> str: ...

    def embed(self, text: str, model_id: str) -> list[float]: ...


PRO_MARKER = "has my full support"
ANTI_MARKER = "I could never back"
NEUTRAL_MARKER = "Hard to say where I stand on this"

_MOCK_VOCAB = (
    "folks honestly thread point really think maybe people vote debate news policy "
    "country change media campaign rally polls states jobs plan record trust future "
    "support question answer today tomorrow week month year issue facts story source "
    "voters economy border health party leaders primary general election win lose"
).split()

_CLASSIFY_HEAD = "You can only return three numbers"
_CLASSIFY_TEXT = re.compile(r"Continue classifying the following comment: (.*)\nAssistant:\s*$", re.S)


def mock_generate(prompt: PromptBundle, params: GenerationParams, run_index: int, seed: int = 0) -> str:
    """Scripted comment: stance phrase set by scenario, filler seeded by the inputs."""
    rng = random.Random(_seed_from("gen", prompt.text, params.to_dict(), run_index, seed))
    name = prompt.candidate.value if prompt.candidate else "the candidate"
    if prompt.scenario is ScenarioKind.PRO_CANDIDATE:
        stance = f"Honestly, {name} {PRO_MARKER}."
    elif prompt.scenario is ScenarioKind.ANTI_CANDIDATE:
        stance = f"Honestly, {ANTI_MARKER} {name}."
    else:
        stance = f"{NEUTRAL_MARKER} one."
    filler = " ".join(rng.choice(_MOCK_VOCAB) for _ in range(rng.randint(8, 16)))
    return f"{stance} {filler.capitalize()}."


def mock_classify(prompt: str) -> str:
    """Scripted classifier reply keyed on the mock generator's stance phrases."""
    m = _CLASSIFY_TEXT.search(prompt)
    text = m.group(1) if m else prompt
    if PRO_MARKER in text:
        return "1, 1, 0"
    if ANTI_MARKER in text:
        return "-1, -1, 0"
    return "0, 0, 0"


_TOKEN_RE = re.compile(r"\w+", re.U)


def hashed_bow(text: str, dim: int = MOCK_EMBED_DIM, salt: str = "") -> np.ndarray:
    """Signed feature hashing of lowercase word tokens, L2-normalized."""
    vec = np.zeros(dim)
    for tok in _TOKEN_RE.findall(text.lower()):
        h = hashlib.blake2b((salt + tok).encode("utf-8"), digest_size=16).digest()
        bucket = int.from_bytes(h[:8], "little") % dim
        sign = 1.0 if h[8] & 1 else -1.0
        vec[bucket] += sign
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


class MockBackend:
    """Deterministic backend: scripted generations, scripted classifications, hashed embeddings."""

    def __init__(self, dim: int = MOCK_EMBED_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.backend_id = f"mock-{dim}"
        self.calls = 0

    def complete(self, prompt: str, params: GenerationParams, run_index: int, meta: dict) -> str:
        self.calls += 1
        if prompt.startswith(_CLASSIFY_HEAD):
            return mock_classify(prompt)
        bundle = meta.get("bundle")
        if bundle is None:
            bundle = PromptBundle(ScenarioKind.NO_HISTORY, "", "", prompt, 0)
        return mock_generate(bundle, params, run_index, self.seed)

    def embed(self, text: str, model_id: str) -> list[float]:
        self.calls += 1
        return hashed_bow(text, self.dim).tolist()


class LiveBackend:
    """OpenAI-compatible HTTP backend; the key is read from the environment only."""

    def __init__(
        self,
        base_url: str = "https://api.openai.com/v1",
        api_key: str | None = None,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = 60.0,
        client=None,
    ):
        import httpx

        self.base_url = base_url.rstrip("/")
        self._key = api_key if api_key is not None else os.environ.get(api_key_env)
        if not self._key:
            raise AuthError(f"no API key in ${api_key_env}")
        self._client = client or httpx.Client(timeout=timeout)
        self.backend_id = f"live:{self.base_url}"

    def _post(self, path: str, payload: dict) -> dict:
        import httpx

        try:
            resp = self._client.post(
                f"{self.base_url}{path}",
                json=payload,
                headers={"Authorization": f"Bearer {self._key}"},
            )
        except httpx.TransportError as exc:
            raise TransientBackendError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"backend rejected credential ({resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def complete(self, prompt: str, params: GenerationParams, run_index: int, meta: dict) -> str:
        data = self._post(
            "/chat/completions",
            {
                "model": params.model_name,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": params.temperature,
                "top_p": params.top_p,
            },
        )
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"unexpected completion payload: {exc}") from exc

    def embed(self, text: str, model_id: str) -> list[float]:
        data = self._post("/embeddings", {"model": model_id, "input": text})
        try:
            return list(data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"unexpected embedding payload: {exc}") from exc


# ------------------------------------------------------------------ plumbing


class ResponseCache:
    """Append-only JSONL cache: one ``{key_hash, request_digest, response_text|vector}`` per line.

    The whole file is loaded at open; a truncated trailing line from an
    interrupted run is ignored. Writes are serialized by a lock.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._data: dict[str, dict] = {}
        self._lock = threading.Lock()
        self.writes = 0
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    try:
                        entry = json.loads(line)
                        self._data[entry["key_hash"]] = entry
                    except (json.JSONDecodeError, KeyError, TypeError):
                        continue

    def __len__(self) -> int:
        return len(self._data)

    def get(self, key: str) -> dict | None:
        return self._data.get(key)

    def put(self, key: str, request_digest: str, **payload) -> None:
        entry = {"key_hash": key, "request_digest": request_digest, **payload}
        with self._lock:
            self._data[key] = entry
            self.writes += 1
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")

    def compact(self) -> None:
        """Rewrite the file sorted by key so completed runs have canonical bytes."""
        if not self.path or not self.path.exists():
            return
        with self._lock:
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                for key in sorted(self._data):
                    fh.write(json.dumps(self._data[key], sort_keys=True, ensure_ascii=False) + "\n")
            os.replace(tmp, self.path)


class RateLimiter:
    """Caps concurrent requests and requests per sliding 60 s window."""

    def __init__(
        self,
        max_in_flight: int = 4,
        per_minute: int | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.per_minute = per_minute
        self.clock = clock
        self.sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self._stamps: collections.deque[float] = collections.deque()
        self.max_in_flight = max_in_flight
        self.in_flight = 0
        self.peak_in_flight = 0
        self.history: list[float] = []

    def __enter__(self):
        self._slots.acquire()
        with self._lock:
            if self.per_minute:
                while True:
                    now = self.clock()
                    while self._stamps and now - self._stamps[0] >= 60.0:
                        self._stamps.popleft()
                    if len(self._stamps) < self.per_minute:
                        break
                    self.sleep(60.0 - (now - self._stamps[0]))
                self._stamps.append(now)
            self.history.append(self.clock())
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        return self

    def __exit__(self, *exc):
        with self._lock:
            self.in_flight -= 1
        self._slots.release()
        return False


@dataclass
class RetryPolicy:
    attempts: int = 5
    base_delay: float = 1.0
    jitter: float = 0.25
    sleep: Callable[[float], None] = time.sleep
    rng: random.Random = field(default_factory=lambda: random.Random(0))

    def delay(self, k: int) -> float:
        return self.base_delay * 2**k * (1.0 + self.jitter * self.rng.random())

    def call(self, fn: Callable[[], object]):
        for k in range(self.attempts):
            try:
                return fn()
            except TransientBackendError as exc:
                if k == self.attempts - 1:
                    raise BackendUnavailable(f"gave up after {self.attempts} attempts: {exc}") from exc
                wait = self.delay(k)
                log.warning("transient backend failure (%s); retrying in %.1fs", exc, wait)
                self.sleep(wait)


class Gateway:
    """Shared entry point for generation, classification and embedding calls."""

    def __init__(
        self,
        backend: Backend,
        cache: ResponseCache | None = None,
        retry: RetryPolicy | None = None,
        limiter: RateLimiter | None = None,
        max_calls: int | None = None,
    ):
        self.backend = backend
        self.cache = cache if cache is not None else ResponseCache()
        self.retry = retry or RetryPolicy()
        self.limiter = limiter or RateLimiter()
        self.max_calls = max_calls
        self.calls = 0
        self.cache_hits = 0
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}

    def _key_lock(self, key: str) -> threading.Lock:
        # identical concurrent requests wait for the first one instead of calling twice
        with self._lock:
            return self._key_locks.setdefault(key, threading.Lock())

    def _reserve_call(self) -> None:
        with self._lock:
            if self.max_calls is not None and self.calls >= self.max_calls:
                raise BudgetExceeded(f"call budget of {self.max_calls} exhausted")
            self.calls += 1

    def _hit(self) -> None:
        with self._lock:
            self.cache_hits += 1

    def complete(
        self,
        prompt: str,
        params: GenerationParams | None = None,
        run_index: int = 0,
        *,
        salt: str = "",
        meta: dict | None = None,
    ) -> tuple[str, bool]:
        """Raw completion; returns ``(text, cached)``."""
        params = params or GenerationParams()
        key = _digest(["complete", self.backend.backend_id, prompt, params.to_dict(), run_index, salt])
        with self._key_lock(key):
            hit = self.cache.get(key)
            if hit is not None:
                self._hit()
                return hit["response_text"], True
            self._reserve_call()

            def call():
                with self.limiter:
                    return self.backend.complete(prompt, params, run_index, meta or {})

            text = self.retry.call(call)
            if not text or not text.strip():
                raise BackendUnavailable("backend returned an empty completion")
            self.cache.put(key, hashlib.sha256(prompt.encode("utf-8")).hexdigest(), response_text=text)
            return text, False

    def generate(self, request: GenerationRequest) -> GeneratedComment:
        bundle = request.prompt
        text, cached = self.complete(bundle.text, request.params, request.run_index, meta={"bundle": bundle})
        return GeneratedComment(
            target_ref=bundle.target_ref,
            scenario=bundle.scenario,
            run_index=request.run_index,
            text=text,
            backend_id=self.backend.backend_id,
            cached=cached,
            author=bundle.author,
            candidate=bundle.candidate.value if bundle.candidate else None,
            temperature=request.params.temperature,
        )

    def embed(self, text: str, model_id: str = "mock") -> EmbeddingVector:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        key = _digest(["embed", self.backend.backend_id, model_id, text])
        with self._key_lock(key):
            hit = self.cache.get(key)
            if hit is not None:
                self._hit()
                return EmbeddingVector(np.asarray(hit["vector"], dtype=float), model_id)
            self._reserve_call()

            def call():
                with self.limiter:
                    return self.backend.embed(text, model_id)

            values = np.asarray(self.retry.call(call), dtype=float)
            if not np.all(np.isfinite(values)):
                raise BackendUnavailable("embedding contains non-finite values")
            self.cache.put(key, hashlib.sha256(text.encode("utf-8")).hexdigest(), vector=values.tolist())
            return EmbeddingVector(values, model_id)
