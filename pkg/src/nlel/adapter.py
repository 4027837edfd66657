"""Transport boundary to text-generation and retrieval backends.

The core never talks to a provider directly: labellers, tuners and the child
reasoner all go through a :class:`Backend`. Two are provided, a seeded mock and
a generic HTTP JSON completion client.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

from .schema import DECODING_FIELDS, ControlSchema, check_field_value

log = logging.getLogger(__name__)


class AdapterError(Exception):
    """Base class for backend failures surfaced to callers."""


class BackendTimeout(AdapterError):
    pass


class TransportError(AdapterError):
    pass


class RateLimited(AdapterError):
    pass


class MalformedResponse(AdapterError):
    pass


@dataclass(frozen=True)
class Usage:
    role: str
    prompt_tokens: int
    completion_tokens: int
    backend_id: str = ""

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "backend_id": self.backend_id,
        }


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    decoding: Mapping[str, Any] = field(default_factory=dict)
    n: int = 1
    timeout_ms: int = 30_000

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        unknown = set(self.decoding) - set(DECODING_FIELDS)
        if unknown:
            raise ValueError(f"non-decoding fields in request: {sorted(unknown)}")

    @property
    def max_tokens(self) -> int | None:
        return self.decoding.get("max_tokens")

    def digest(self) -> str:
        body = json.dumps(
            {"prompt": self.prompt, "decoding": dict(self.decoding), "n": self.n}, sort_keys=True
        )
        return hashlib.sha256(body.encode()).hexdigest()


@dataclass(frozen=True)
class GenerationResponse:
    texts: tuple[str, ...]
    prompt_tokens: int
    completion_tokens: int
    backend_id: str

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise MalformedResponse("negative token counts")

    def usage(self, role: str) -> Usage:
        return Usage(role, self.prompt_tokens, self.completion_tokens, self.backend_id)


class Backend(Protocol):
    backend_id: str

    def complete(self, req: GenerationRequest) -> GenerationResponse: ...


def decoding_from(pi: Mapping[str, Any] | Any) -> dict[str, Any]:
    return {name: pi[name] for name in DECODING_FIELDS}


def check_request(req: GenerationRequest, schema: ControlSchema) -> None:
    for name, value in req.decoding.items():
        _, problems = check_field_value(schema.field(name), value)
        if problems:
            raise ValueError(f"decoding parameter {problems[0].message}")


def generate(req: GenerationRequest, backend: Backend, schema: ControlSchema | None = None) -> GenerationResponse:
    """Validate the request's decoding values (when a schema is given) and dispatch."""
    if schema is not None:
        check_request(req, schema)
    return backend.complete(req)


def count_tokens(text: str) -> int:
    """Whitespace token count; the mock backends' synthetic tokenizer."""
    return len(text.split())


def _truncate(text: str, limit: int | None) -> str:
    if limit is None:
        return text
    words = text.split()
    return text if len(words) <= limit else " ".join(words[:limit])


Responder = Callable[[GenerationRequest, random.Random], "str | Sequence[str]"]


class MockBackend:
    """Seeded, stateless scripted backend.

    ``script`` is either a list of texts (a request for ``n`` completions gets
    the first ``n``, cycling) or a responder ``f(request, rng) -> text(s)``
    whose rng is seeded from ``(seed, request)``. ``lengths`` fixes synthetic
    completion token counts per text; otherwise texts are counted by words.
    Completions are always capped at the request's ``max_tokens``.
    """

    def __init__(
        self,
        script: Sequence[str] | Responder,
        seed: int = 0,
        lengths: Sequence[int] | None = None,
        backend_id: str = "mock",
    ):
        if not callable(script) and not script:
            raise ValueError("script must be non-empty")
        self.script = script
        self.seed = seed
        self.lengths = list(lengths) if lengths is not None else None
        self.backend_id = backend_id

    def _rng(self, req: GenerationRequest) -> random.Random:
        return random.Random(f"{self.seed}:{req.digest()}")

    def complete(self, req: GenerationRequest) -> GenerationResponse:
        if callable(self.script):
            out = self.script(req, self._rng(req))
            texts = [out] if isinstance(out, str) else list(out)
            if len(texts) < req.n:
                texts = [texts[i % len(texts)] for i in range(req.n)]
            texts = texts[: req.n]
        else:
            texts = [self.script[i % len(self.script)] for i in range(req.n)]
        cap = req.max_tokens
        counts = []
        for i, text in enumerate(texts):
            n = self.lengths[i % len(self.lengths)] if self.lengths else count_tokens(text)
            counts.append(n if cap is None else min(n, cap))
        texts = [_truncate(t, cap) for t in texts]
        return GenerationResponse(tuple(texts), count_tokens(req.prompt), sum(counts), self.backend_id)


class TokenBucket:
    """Thread-safe token bucket limiting request rate."""

    def __init__(
        self,
        rate: float,
        capacity: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if rate <= 0 or capacity <= 0:
            raise ValueError("rate and capacity must be positive")
        self.rate = rate
        self.capacity = capacity
        self._tokens = capacity
        self._clock = clock
        self._sleep = sleep
        self._stamp = clock()
        self._lock = threading.Lock()

    def try_acquire(self, amount: float = 1.0) -> float:
        """Take ``amount`` if available; return the wait needed otherwise (0 on success)."""
        with self._lock:
            now = self._clock()
            self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
            self._stamp = now
            if self._tokens >= amount:
                self._tokens -= amount
                return 0.0
            return (amount - self._tokens) / self.rate

    def acquire(self, amount: float = 1.0) -> None:
        while (wait := self.try_acquire(amount)) > 0:
            self._sleep(wait)


class HTTPBackend:
    """Generic chat-completion-style JSON client.

    Request body: ``{"prompt", "n", <decoding fields>}``. The response must
    carry either ``texts`` or OpenAI-like ``choices`` plus a ``usage`` object
    with ``prompt_tokens`` and ``completion_tokens``. Rate limits (429), 5xx,
    timeouts and malformed bodies are retried with capped exponential backoff.
    """

    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        timeout_ms: int = 30_000,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        bucket: TokenBucket | None = None,
        backend_id: str = "http",
    ):
        self.url = url
        self.api_key = api_key
        self.timeout_ms = timeout_ms
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.client = client or httpx.Client()
        self.sleep = sleep
        self.bucket = bucket
        self.backend_id = backend_id

    @classmethod
    def from_env(cls, prefix: str = "NLEL_", **kwargs: Any) -> HTTPBackend:
        url = os.environ.get(f"{prefix}BACKEND_URL")
        if not url:
            raise ValueError(f"{prefix}BACKEND_URL is not set")
        timeout = int(os.environ.get(f"{prefix}TIMEOUT_MS", "30000"))
        return cls(url, api_key=os.environ.get(f"{prefix}API_KEY"), timeout_ms=timeout, **kwargs)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _parse(self, payload: Any, n: int) -> GenerationResponse:
        if not isinstance(payload, dict):
            raise MalformedResponse("response is not a JSON object")
        if "texts" in payload:
            texts = payload["texts"]
        elif "choices" in payload:
            texts = []
            for choice in payload["choices"]:
                if not isinstance(choice, dict):
                    raise MalformedResponse("choice is not an object")
                text = choice.get("text")
                if text is None and isinstance(choice.get("message"), dict):
                    text = choice["message"].get("content")
                texts.append(text)
        else:
            raise MalformedResponse("response has neither 'texts' nor 'choices'")
        if not isinstance(texts, list) or not texts or not all(isinstance(t, str) for t in texts):
            raise MalformedResponse("texts must be a non-empty list of strings")
        usage = payload.get("usage")
        if not isinstance(usage, dict):
            raise MalformedResponse("response lacks a usage object")
        try:
            prompt_tokens = int(usage["prompt_tokens"])
            completion_tokens = int(usage["completion_tokens"])
        except (KeyError, TypeError, ValueError):
            raise MalformedResponse("usage counts missing or non-integer") from None
        return GenerationResponse(tuple(texts[:n]), prompt_tokens, completion_tokens, self.backend_id)

    def complete(self, req: GenerationRequest) -> GenerationResponse:
        body = {"prompt": req.prompt, "n": req.n, **dict(req.decoding)}
        timeout = (req.timeout_ms or self.timeout_ms) / 1000.0
        last: AdapterError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1))
                log.info("retrying %s after %s (attempt %d, sleeping %.2fs)", self.backend_id, last, attempt, delay)
                self.sleep(delay)
            if self.bucket is not None:
                self.bucket.acquire()
            log.debug("POST %s auth=%s n=%d", self.url, "Bearer ***" if self.api_key else "none", req.n)
            try:
                resp = self.client.post(self.url, json=body, headers=self._headers(), timeout=timeout)
            except httpx.TimeoutException as exc:
                last = BackendTimeout(str(exc) or "request timed out")
                continue
            except httpx.HTTPError as exc:
                last = TransportError(str(exc) or type(exc).__name__)
                continue
            if resp.status_code == 429:
                last = RateLimited(f"HTTP 429 from {self.backend_id}")
                continue
            if resp.status_code >= 500:
                last = TransportError(f"HTTP {resp.status_code} from {self.backend_id}")
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code} from {self.backend_id}")
            try:
                return self._parse(resp.json(), req.n)
            except MalformedResponse as exc:
                last = exc
            except ValueError as exc:
                last = MalformedResponse(f"body is not JSON: {exc}")
        assert last is not None
        raise last


@dataclass(frozen=True)
class RetrievalResult:
    snippets: tuple[str, ...]
    usage: Usage


class MockRetrieval:
    """Fixed snippets per corpus, mixed by the control vector's retrieval weights.

    Each call costs a configured constant number of tokens (tooling cost).
    """

    backend_id = "mock-retrieval"

    def __init__(self, corpora: Mapping[str, Sequence[str]], k: int = 3, tokens_per_call: int = 32):
        self.corpora = {name: list(snips) for name, snips in corpora.items()}
        self.k = k
        self.tokens_per_call = tokens_per_call

    def retrieve(self, query: str, weights: Mapping[str, float]) -> RetrievalResult:
        live = [(c, w) for c, w in weights.items() if w > 0 and c != "none" and self.corpora.get(c)]
        total = sum(w for _, w in live)
        quotas: list[tuple[str, int]] = []
        if total > 0:
            raw = [(c, self.k * w / total) for c, w in live]
            counts = {c: int(q) for c, q in raw}
            leftover = self.k - sum(counts.values())
            order = sorted(raw, key=lambda cq: (-(cq[1] - int(cq[1])), cq[0]))
            for c, _ in order[:leftover]:
                counts[c] += 1
            quotas = [(c, counts[c]) for c, _ in live]
        snippets = []
        for corpus, count in quotas:
            pool = self.corpora[corpus]
            snippets.extend(f"[{corpus}] {pool[i % len(pool)]}" for i in range(count))
        return RetrievalResult(tuple(snippets), Usage("retrieval", 0, self.tokens_per_call, self.backend_id))
