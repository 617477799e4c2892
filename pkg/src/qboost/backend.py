"""Logit providers: deterministic stub, JSONL record/replay cache, HTTP client.

Every provider answers a :class:`LogitQuery` with a :class:`WordLogitRecord`
holding one logit per candidate word, all read from the same next-token
distribution right after the prompt. Scoring only ever sees those records, so
providers are interchangeable.

Wire contract for the HTTP provider::

    POST {endpoint}/v1/logits
    {"prompt": str, "image_b64": str, "candidates": [str, ...]}
    -> {"logits": {word: number, ...}, "model": str}

The server evaluates the first sub-token of ``" " + word`` for each candidate.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import httpx

from .errors import (
    BackendRejected,
    BackendUnreachable,
    CacheMiss,
    CacheWriteError,
    ConfigError,
    IncompleteBackendResponse,
    InvalidBackendLogit,
)
from .prompts import TonePromptSet

log = logging.getLogger(__name__)

ENV_ENDPOINT = "QBOOST_HTTP_ENDPOINT"
ENV_TOKEN = "QBOOST_HTTP_TOKEN"

BACKEND_KINDS = ("stub", "replay", "http")


def prompt_digest(prompt_text: str, candidate_words: Sequence[str]) -> str:
    """SHA-256 hex digest of the prompt text plus the ordered candidate list."""
    payload = json.dumps(
        {"candidates": list(candidate_words), "prompt": prompt_text},
        ensure_ascii=False,
        separators=(",", ":"),
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LogitQuery:
    item_id: str
    frame_index: int
    media_ref: str | Path | bytes | None
    prompt_text: str
    candidate_words: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidate_words", tuple(self.candidate_words))
        if not self.candidate_words:
            raise ValueError("candidate_words must be nonempty")
        if len(set(self.candidate_words)) != len(self.candidate_words):
            raise ValueError("candidate_words must be unique")
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")

    @property
    def digest(self) -> str:
        return prompt_digest(self.prompt_text, self.candidate_words)


@dataclass(frozen=True)
class WordLogitRecord:
    item_id: str
    frame_index: int
    word_logits: dict[str, float]
    provider_id: str
    prompt_digest: str


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "stub"
    endpoint: str | None = None
    auth_token: str | None = None
    timeout: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 4
    cache_path: str | None = None
    backoff_base: float = 0.5
    # stub-only settings
    seed: int = 0
    stub_range: tuple[float, float] = (0.0, 12.0)
    latent: Mapping[str, float] | None = None
    latent_from_mos: bool = False
    noise: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ConfigError(f"unknown backend kind: {self.kind!r}")
        if self.kind == "http" and not self.endpoint:
            raise ConfigError("http backend requires an endpoint")
        if self.kind == "replay" and not self.cache_path:
            raise ConfigError("replay backend requires a cache path")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        lo, hi = self.stub_range
        if not lo < hi:
            raise ConfigError("stub_range must satisfy lo < hi")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], env: Mapping[str, str] | None = None) -> "BackendConfig":
        data = dict(data)
        env = os.environ if env is None else env
        if env.get(ENV_ENDPOINT):
            data["endpoint"] = env[ENV_ENDPOINT]
        if env.get(ENV_TOKEN):
            data["auth_token"] = env[ENV_TOKEN]
        if "stub_range" in data:
            data["stub_range"] = tuple(data["stub_range"])
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown backend settings: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        # auth_token is deliberately left out so saved configs carry no secret
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "max_in_flight": self.max_in_flight,
            "cache_path": self.cache_path,
            "backoff_base": self.backoff_base,
            "seed": self.seed,
            "stub_range": list(self.stub_range),
            "latent": dict(self.latent) if self.latent is not None else None,
            "latent_from_mos": self.latent_from_mos,
            "noise": self.noise,
        }


def _validated_logits(query: LogitQuery, logits: Mapping[str, Any], who: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for word in query.candidate_words:
        if word not in logits:
            raise IncompleteBackendResponse(
                f"incomplete backend response from {who}: missing {word!r} "
                f"(item {query.item_id!r}, frame {query.frame_index})"
            )
        value = logits[word]
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise InvalidBackendLogit(f"invalid backend logit for {word!r}: {value!r}")
        out[word] = float(value)
    return out


# --- stub -------------------------------------------------------------------


def _unit_hash(*parts: object) -> float:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def latent_tone_logits(q: float, scale: float = 12.0) -> dict[str, float]:
    """Tone logits that rise (pos) or fall (neg) with a latent quality ``q``."""
    return {
        "pos": scale * q,
        "neu": scale * (1.0 - abs(2.0 * q - 1.0)),
        "neg": scale * (1.0 - q),
    }


class StubBackend:
    """Deterministic test double.

    Without latent qualities every logit is a hash of
    ``(seed, item, frame, word)`` mapped into ``value_range``. With a latent
    quality for an item, words in a tone group get that tone's latent logit,
    optionally perturbed by hashed noise in ``[-noise, noise]``.
    """

    def __init__(
        self,
        seed: int = 0,
        value_range: tuple[float, float] = (0.0, 12.0),
        latent: Mapping[str, float] | None = None,
        prompts: TonePromptSet | None = None,
        noise: float = 0.0,
    ):
        self.seed = seed
        self.value_range = value_range
        self.latent = dict(latent) if latent is not None else None
        self.prompts = prompts or TonePromptSet()
        self.noise = noise
        self.provider_id = f"stub:seed={seed}" + (f":latent:noise={noise!r}" if self.latent is not None else "")

    def _hashed(self, query: LogitQuery, word: str) -> float:
        lo, hi = self.value_range
        return lo + (hi - lo) * _unit_hash(self.seed, query.item_id, query.frame_index, word)

    def fetch(self, query: LogitQuery) -> WordLogitRecord:
        q = None if self.latent is None else self.latent.get(query.item_id)
        logits: dict[str, float] = {}
        if q is None:
            for word in query.candidate_words:
                logits[word] = self._hashed(query, word)
        else:
            tones = latent_tone_logits(q, self.value_range[1])
            for word in query.candidate_words:
                tone = self.prompts.tone_of(word)
                if tone is None:
                    logits[word] = self._hashed(query, word)
                    continue
                value = tones[tone]
                if self.noise:
                    u = _unit_hash("noise", self.seed, query.item_id, query.frame_index, word)
                    value += self.noise * (2.0 * u - 1.0)
                logits[word] = value
        return WordLogitRecord(query.item_id, query.frame_index, logits, self.provider_id, query.digest)


def stub_logits(query: LogitQuery, seed: int = 0, **kwargs: Any) -> WordLogitRecord:
    return StubBackend(seed=seed, **kwargs).fetch(query)


# --- record / replay cache ---------------------------------------------------


class LogitCache:
    """Append-only JSONL store of word logits, keyed by (item, frame, digest).

    One line per word. Each record is written with a single ``write`` on an
    ``O_APPEND`` descriptor under a lock, so concurrent writers never
    interleave partial lines. Later lines win on load.
    """

    _locks: dict[str, threading.Lock] = {}
    _locks_guard = threading.Lock()

    def __init__(self, path: str | Path):
        self.path = Path(path)
        key = str(self.path.resolve())
        with LogitCache._locks_guard:
            self._lock = LogitCache._locks.setdefault(key, threading.Lock())
        self._entries: dict[tuple[str, int, str], dict[str, float]] | None = None
        self._providers: dict[tuple[str, int, str], str] = {}

    @staticmethod
    def encode(record: WordLogitRecord) -> str:
        lines = []
        for word, logit in record.word_logits.items():
            lines.append(
                json.dumps(
                    {
                        "item": record.item_id,
                        "frame": record.frame_index,
                        "word": word,
                        "logit": logit,
                        "provider": record.provider_id,
                        "prompt_sha256": record.prompt_digest,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                    allow_nan=False,
                )
            )
        return "".join(line + "\n" for line in lines)

    def append(self, record: WordLogitRecord) -> None:
        try:
            data = self.encode(record).encode("utf-8")
        except ValueError as exc:
            raise CacheWriteError(f"cache write failed: {exc}") from exc
        with self._lock:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
                try:
                    view = memoryview(data)
                    while view:
                        written = os.write(fd, view)
                        view = view[written:]
                finally:
                    os.close(fd)
            except OSError as exc:
                raise CacheWriteError(f"cache write failed: {exc}") from exc
            self._entries = None

    def _load(self) -> dict[tuple[str, int, str], dict[str, float]]:
        if self._entries is not None:
            return self._entries
        entries: dict[tuple[str, int, str], dict[str, float]] = {}
        providers: dict[tuple[str, int, str], str] = {}
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        row = json.loads(line)
                        key = (str(row["item"]), int(row["frame"]), str(row["prompt_sha256"]))
                        word, logit = str(row["word"]), float(row["logit"])
                    except (ValueError, KeyError, TypeError):
                        log.warning("skipping malformed cache line %d in %s", lineno, self.path)
                        continue
                    entries.setdefault(key, {})[word] = logit
                    providers[key] = str(row.get("provider", "unknown"))
        self._entries = entries
        self._providers = providers
        return entries

    def lookup(self, item_id: str, frame_index: int, digest: str) -> tuple[dict[str, float], str]:
        key = (item_id, frame_index, digest)
        entries = self._load()
        if key not in entries:
            raise CacheMiss(item_id, frame_index, digest)
        return dict(entries[key]), self._providers[key]


def record_logits(record: WordLogitRecord, cache_path: str | Path) -> None:
    LogitCache(cache_path).append(record)


class ReplayBackend:
    """Serves records from a :class:`LogitCache`.

    A cached key holding only some of the candidates yields a partial record;
    the scorer reports the missing word for whichever mode needs it.
    """

    def __init__(self, cache_path: str | Path):
        self.cache = LogitCache(cache_path)
        self.provider_id = "replay"

    def fetch(self, query: LogitQuery) -> WordLogitRecord:
        cached, provider = self.cache.lookup(query.item_id, query.frame_index, query.digest)
        logits = {w: cached[w] for w in query.candidate_words if w in cached}
        return WordLogitRecord(query.item_id, query.frame_index, logits, provider, query.digest)


class RecordingBackend:
    """Wraps a live provider and appends every successful record to a cache."""

    def __init__(self, inner: Any, cache_path: str | Path):
        self.inner = inner
        self.cache = LogitCache(cache_path)
        self.provider_id = inner.provider_id

    def fetch(self, query: LogitQuery) -> WordLogitRecord:
        record = self.inner.fetch(query)
        self.cache.append(record)
        return record


# --- HTTP --------------------------------------------------------------------


def _encode_media(media_ref: str | Path | bytes | None) -> str:
    if media_ref is None:
        return ""
    if isinstance(media_ref, bytes):
        return base64.b64encode(media_ref).decode("ascii")
    return base64.b64encode(Path(media_ref).read_bytes()).decode("ascii")


class HttpBackend:
    """Client for an inference server exposing ``POST /v1/logits``.

    5xx responses, timeouts and transport errors are retried up to
    ``max_retries`` times with jittered exponential backoff starting at
    ``backoff_base`` seconds. 4xx responses are terminal.
    """

    def __init__(
        self,
        config: BackendConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        if not config.endpoint:
            raise ConfigError("http backend requires an endpoint")
        self.config = config
        self.url = config.endpoint.rstrip("/") + "/v1/logits"
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self.provider_id = f"http:{config.endpoint}"

    def close(self) -> None:
        self._client.close()

    def backoff_delay(self, attempt: int) -> float:
        delay = self.config.backoff_base * 2.0**attempt
        return delay / 2 + self._rng.uniform(0, delay / 2)

    def _post(self, payload: dict[str, Any]) -> httpx.Response:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_token:
            headers["Authorization"] = f"Bearer {self.config.auth_token}"
        last_error = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_delay(attempt - 1))
            try:
                response = self._client.post(
                    self.url, json=payload, headers=headers, timeout=self.config.timeout
                )
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                log.info("attempt %d to %s failed: %s", attempt + 1, self.url, last_error)
                continue
            if response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                log.info("attempt %d to %s got %s", attempt + 1, self.url, last_error)
                continue
            if response.status_code >= 400:
                raise BackendRejected(response.status_code, response.text[:200])
            return response
        raise BackendUnreachable(
            f"backend unreachable: {self.url} after {self.config.max_retries + 1} attempts ({last_error})"
        )

    def fetch(self, query: LogitQuery) -> WordLogitRecord:
        payload = {
            "prompt": query.prompt_text,
            "image_b64": _encode_media(query.media_ref),
            "candidates": list(query.candidate_words),
        }
        response = self._post(payload)
        try:
            body = response.json()
            raw = body["logits"]
            if not isinstance(raw, dict):
                raise TypeError("logits is not an object")
        except (ValueError, KeyError, TypeError) as exc:
            raise IncompleteBackendResponse(f"incomplete backend response: malformed body ({exc})") from exc
        logits = _validated_logits(query, raw, self.url)
        model = body.get("model")
        provider = f"http:{model}" if model else self.provider_id
        return WordLogitRecord(query.item_id, query.frame_index, logits, provider, query.digest)


def http_fetch(query: LogitQuery, config: BackendConfig, **kwargs: Any) -> WordLogitRecord:
    backend = HttpBackend(config, **kwargs)
    try:
        return backend.fetch(query)
    finally:
        backend.close()


# --- factory and fan-out -----------------------------------------------------


def make_backend(
    config: BackendConfig,
    prompts: TonePromptSet | None = None,
    latent: Mapping[str, float] | None = None,
) -> Any:
    if config.kind == "stub":
        return StubBackend(
            seed=config.seed,
            value_range=config.stub_range,
            latent=latent if latent is not None else config.latent,
            prompts=prompts,
            noise=config.noise,
        )
    if config.kind == "replay":
        return ReplayBackend(config.cache_path)
    return HttpBackend(config)


def fetch_logits(query: LogitQuery, config: BackendConfig, prompts: TonePromptSet | None = None) -> WordLogitRecord:
    backend = make_backend(config, prompts)
    try:
        record = backend.fetch(query)
    finally:
        if hasattr(backend, "close"):
            backend.close()
    if config.kind != "replay":
        _validated_logits(query, record.word_logits, record.provider_id)
    return record


@dataclass
class FetchResult:
    query: LogitQuery
    record: WordLogitRecord | None = None
    error: Exception | None = field(default=None)


def fetch_many(backend: Any, queries: Iterable[LogitQuery], max_in_flight: int = 4) -> list[FetchResult]:
    """Fetch concurrently; results come back sorted by (item_id, frame_index)."""

    def one(query: LogitQuery) -> FetchResult:
        try:
            return FetchResult(query, record=backend.fetch(query))
        except Exception as exc:  # collected per query, reported by the caller
            return FetchResult(query, error=exc)

    queries = list(queries)
    if max_in_flight <= 1 or len(queries) <= 1:
        results = [one(q) for q in queries]
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            results = list(pool.map(one, queries))
    return sorted(results, key=lambda r: (r.query.item_id, r.query.frame_index))

