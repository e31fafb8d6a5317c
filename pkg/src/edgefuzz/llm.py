"""Completion gateway over interchangeable backends.

Three backends share one ``complete(dialogue, params)`` surface:

* ``HttpBackend``   a chat-completion endpoint (OpenAI-style JSON), rate limited
* ``ReplayBackend`` recorded responses keyed by :func:`canonical_hash`
* ``RuleBackend``   the deterministic rule engine in :mod:`edgefuzz.rules`

Every call goes through :class:`LlmGateway`, which owns the :class:`CallLedger`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

import httpx

log = logging.getLogger(__name__)

STAGES = ("analysis", "generation", "debug", "mutation")
ROLES = ("system", "user", "assistant")
API_KEY_ENV = "LLM_API_KEY"


class LlmError(RuntimeError):
    pass


class BackendUnavailable(LlmError):
    pass


class FixtureMiss(LlmError):
    def __init__(self, key: str, preview: str = ""):
        super().__init__(f"no replay fixture for dialogue {key}: {preview[:120]!r}")
        self.key = key


@dataclass
class LlmDialogue:
    stage_tag: str
    messages: list[tuple[str, str]] = field(default_factory=list)
    subject: str = ""  # API or function the dialogue is about, for per-API accounting

    def __post_init__(self) -> None:
        if self.stage_tag not in STAGES:
            raise ValueError(f"unknown stage {self.stage_tag!r}")
        existing, self.messages = list(self.messages), []
        for role, content in existing:
            self.append(role, content)

    def append(self, role: str, content: str) -> "LlmDialogue":
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        if role == "system":
            if self.messages:
                raise ValueError("system message must come first")
        else:
            prev = next((r for r, _ in reversed(self.messages) if r != "system"), None)
            expected = "user" if prev in (None, "assistant") else "assistant"
            if role != expected:
                raise ValueError(f"expected a {expected} message, got {role}")
        self.messages.append((role, content))
        return self

    def user(self, content: str) -> "LlmDialogue":
        return self.append("user", content)

    def assistant(self, content: str) -> "LlmDialogue":
        return self.append("assistant", content)

    @property
    def last_user(self) -> str:
        return next(c for r, c in reversed(self.messages) if r == "user")

    def to_wire(self) -> list[dict]:
        return [{"role": r, "content": c} for r, c in self.messages]


@dataclass(frozen=True)
class CompletionParams:
    temperature: float = 0.0
    max_tokens: int = 2048
    model_id: str = "gpt-3.5-turbo-1106"

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


class CallLedger:
    """Invocation counts per stage and per subject. Thread-safe."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.counters: dict[str, int] = {s: 0 for s in STAGES}
        self.per_api: dict[str, dict[str, int]] = defaultdict(lambda: {s: 0 for s in STAGES})

    def record(self, stage: str, subject: str = "") -> None:
        with self._lock:
            self.counters[stage] += 1
            self.per_api[subject][stage] += 1

    @property
    def total(self) -> int:
        return sum(self.counters.values())

    def for_api(self, subject: str) -> dict[str, int]:
        with self._lock:
            return dict(self.per_api.get(subject, {s: 0 for s in STAGES}))

    def merge(self, other: "CallLedger") -> None:
        for subject, stages in other.per_api.items():
            for stage, n in stages.items():
                for _ in range(n):
                    self.record(stage, subject)

    def to_dict(self) -> dict:
        return {"counters": dict(self.counters),
                "per_api": {k: dict(v) for k, v in sorted(self.per_api.items())}}


def _normalize(content: str) -> str:
    return " ".join(content.split())


def canonical_hash(dialogue: LlmDialogue) -> str:
    payload = json.dumps([[role, _normalize(content)] for role, content in dialogue.messages],
                         ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Backend(Protocol):
    def complete(self, dialogue: LlmDialogue, params: CompletionParams) -> str: ...


class TokenBucket:
    def __init__(self, rate_per_s: float, burst: int = 1, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate_per_s
        self.capacity = max(1, burst)
        self.tokens = float(self.capacity)
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rate <= 0:
            return
        with self._lock:
            while True:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                self._sleep((1 - self.tokens) / self.rate)


class HttpBackend:
    """POSTs ``{base_url}/chat/completions``; retries 429/5xx and transport errors."""

    def __init__(self, base_url: str, api_key: str | None = None, rate_limit_per_s: float = 1.0,
                 max_retries: int = 5, backoff_s: float = 1.0, timeout_s: float = 120.0,
                 client: httpx.Client | None = None, sleep=time.sleep):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.bucket = TokenBucket(rate_limit_per_s, sleep=sleep)
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout_s)

    def complete(self, dialogue: LlmDialogue, params: CompletionParams) -> str:
        body = {
            "model": params.model_id,
            "messages": dialogue.to_wire(),
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last: Exception | str = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_s * 2 ** (attempt - 1))
            self.bucket.acquire()
            try:
                resp = self._client.post(self.url, json=body, headers=headers)
            except httpx.TransportError as exc:
                last = exc
                log.warning("chat endpoint transport error (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                log.warning("chat endpoint returned %s (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise LlmError(f"chat endpoint rejected request: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise LlmError(f"malformed chat completion response: {resp.text[:200]}") from exc
        raise BackendUnavailable(f"chat endpoint unavailable after {self.max_retries + 1} attempts: {last}")


class ReplayBackend:
    """Serves recorded responses; with ``record_to`` set, passes misses through and records.

    A dialogue that repeats (same hash, same subject) is a fresh sample for a
    live model, so the n-th repeat is served the n-th recorded response. Past
    the end of the recording the last response is reused.
    """

    def __init__(self, fixtures: dict[str, str | list[str]] | None = None, inner: Backend | None = None,
                 record_to: str | Path | None = None):
        self.fixtures = {k: [v] if isinstance(v, str) else list(v) for k, v in (fixtures or {}).items()}
        self.inner = inner
        self.record_to = Path(record_to) if record_to else None
        self._seen: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "ReplayBackend":
        return cls(load_fixture_sequences(path), **kwargs)

    def complete(self, dialogue: LlmDialogue, params: CompletionParams) -> str:
        key = canonical_hash(dialogue)
        with self._lock:
            n = self._seen.get((key, dialogue.subject), 0)
            self._seen[(key, dialogue.subject)] = n + 1
            recorded = self.fixtures.get(key, [])
            if n < len(recorded) or (recorded and self.inner is None):
                return recorded[min(n, len(recorded) - 1)]
        if self.inner is None:
            raise FixtureMiss(key, dialogue.last_user)
        response = self.inner.complete(dialogue, params)
        with self._lock:
            self.fixtures.setdefault(key, []).append(response)
            if self.record_to is not None:
                self.record_to.parent.mkdir(parents=True, exist_ok=True)
                with self.record_to.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"hash": key, "response": response}, ensure_ascii=False) + "\n")
        return response


def load_fixture_sequences(path: str | Path) -> dict[str, list[str]]:
    """Recorded responses per dialogue hash, in recording order."""
    fixtures: dict[str, list[str]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                fixtures.setdefault(rec["hash"], []).append(rec["response"])
    return fixtures


def load_fixtures(path: str | Path) -> dict[str, str]:
    """First recorded response per dialogue hash."""
    return {k: v[0] for k, v in load_fixture_sequences(path).items()}


def write_fixtures(path: str | Path, pairs: Iterable[tuple[str, str]]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for key, response in pairs:
            fh.write(json.dumps({"hash": key, "response": response}, ensure_ascii=False) + "\n")


@dataclass
class LlmConfig:
    backend: str = "rule"
    base_url: str = "http://localhost:8000/v1"
    model_id: str = "gpt-3.5-turbo-1106"
    temperature_by_stage: dict[str, float] = field(
        default_factory=lambda: {"analysis": 0.0, "generation": 0.0, "debug": 0.0, "mutation": 0.0})
    max_tokens: int = 2048
    fixtures_path: str | None = None
    record: bool = False
    record_backend: str = "http"  # backend that answers fixture misses while recording
    rules_path: str | None = None
    rate_limit_per_s: float = 1.0
    max_retries: int = 5

    @classmethod
    def from_dict(cls, data: dict) -> "LlmConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown llm config keys: {sorted(unknown)}")
        cfg = cls(**known)
        if cfg.backend not in ("http", "replay", "rule"):
            raise ValueError(f"unknown llm backend {cfg.backend!r}")
        if cfg.record_backend not in ("http", "rule"):
            raise ValueError(f"unknown record backend {cfg.record_backend!r}")
        unknown_stages = set(cfg.temperature_by_stage) - set(STAGES)
        if unknown_stages:
            raise ValueError(f"unknown stages in temperature_by_stage: {sorted(unknown_stages)}")
        temps = {s: 0.0 for s in STAGES}
        temps.update(cfg.temperature_by_stage)
        cfg.temperature_by_stage = temps
        return cfg


def _rule_backend(cfg: LlmConfig, base: Path) -> Backend:
    from .rules import RuleBackend, RuleSet

    return RuleBackend(RuleSet.load(base / cfg.rules_path) if cfg.rules_path else RuleSet())


class LlmGateway:
    def __init__(self, backend: Backend, params_by_stage: dict[str, CompletionParams] | None = None,
                 ledger: CallLedger | None = None):
        self.backend = backend
        self.params_by_stage = params_by_stage or {s: CompletionParams() for s in STAGES}
        self.ledger = ledger or CallLedger()

    @classmethod
    def from_config(cls, cfg: LlmConfig, base_dir: str | Path = ".") -> "LlmGateway":
        base = Path(base_dir)
        params = {s: CompletionParams(cfg.temperature_by_stage[s], cfg.max_tokens, cfg.model_id) for s in STAGES}
        if cfg.backend == "http":
            backend: Backend = HttpBackend(cfg.base_url, rate_limit_per_s=cfg.rate_limit_per_s,
                                           max_retries=cfg.max_retries)
        elif cfg.backend == "rule":
            backend = _rule_backend(cfg, base)
        else:
            if not cfg.fixtures_path:
                raise ValueError("replay backend requires fixtures_path")
            path = base / cfg.fixtures_path
            if cfg.record:
                if cfg.record_backend == "rule":
                    inner: Backend = _rule_backend(cfg, base)
                else:
                    inner = HttpBackend(cfg.base_url, rate_limit_per_s=cfg.rate_limit_per_s,
                                        max_retries=cfg.max_retries)
                fixtures = load_fixture_sequences(path) if path.exists() else {}
                backend = ReplayBackend(fixtures, inner=inner, record_to=path)
            else:
                backend = ReplayBackend.from_file(path)
        return cls(backend, params)

    def complete(self, dialogue: LlmDialogue, params: CompletionParams | None = None) -> str:
        if not dialogue.messages or dialogue.messages[-1][0] != "user":
            raise ValueError("dialogue must end with a user message")
        params = params or self.params_by_stage[dialogue.stage_tag]
        response = self.backend.complete(dialogue, params)
        self.ledger.record(dialogue.stage_tag, dialogue.subject)
        return response


def extract_code(response: str) -> str:
    """First fenced code block of a response, else the whole response."""
    lines = response.splitlines()
    start = None
    for idx, line in enumerate(lines):
        if line.strip().startswith("```"):
            if start is None:
                start = idx
            else:
                return "\n".join(lines[start + 1:idx]).strip("\n") + "\n"
    return response.strip("\n") + "\n"
