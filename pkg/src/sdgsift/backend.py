"""Chat-completion clients: a live OpenAI-compatible HTTP client and a
deterministic replay backend for tests and offline reproduction.

The HTTP client retries transient failures (timeouts, 429, 5xx) with jittered
exponential backoff, never retries other 4xx, and bounds in-flight requests
per model with a semaphore. Credentials are resolved through an environment
variable named in the config; they are never stored in config files.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Callable, Mapping, Protocol, Sequence

import httpx

from .prompting import Decoding, Message

logger = logging.getLogger(__name__)

BACKOFF_BASE_SECONDS = 0.5
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER = 0.2


class BackendError(RuntimeError):
    """Base class for completion-backend failures."""


class CredentialError(BackendError):
    """Missing or rejected credentials; never retried."""


class BackendUnavailableError(BackendError):
    """Transient failures persisted past the retry budget."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class MalformedResponseError(BackendError):
    """The server answered 200 but the payload is not a usable completion."""


class ScriptMissError(KeyError):
    """Replay script has no entry for the requested (doc_key, model_id)."""


@dataclass(frozen=True)
class ModelConfig:
    model_id: str
    base_url: str | None = None
    credential_env: str | None = None
    context_window_tokens: int = 8192
    max_retries: int = 3
    timeout: float = 60.0
    max_concurrent: int = 4

    def __post_init__(self) -> None:
        if self.context_window_tokens <= 0:
            raise ValueError("context_window_tokens must be positive")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")


@dataclass(frozen=True)
class CompletionOutcome:
    text: str
    latency: float
    attempts: int


class CompletionBackend(Protocol):
    def complete(
        self, doc_key: str, messages: Sequence[Message], decoding: Decoding
    ) -> CompletionOutcome: ...


def backoff_delays(
    max_retries: int,
    base: float = BACKOFF_BASE_SECONDS,
    factor: float = BACKOFF_FACTOR,
    jitter: float = BACKOFF_JITTER,
    rng: random.Random | None = None,
) -> list[float]:
    """Jittered exponential delays, one per retry.

    Non-decreasing as long as factor * (1 - jitter) >= 1 + jitter, which holds
    for the defaults.
    """
    rng = rng or random.Random()
    return [
        base * factor**k * (1.0 + rng.uniform(-jitter, jitter))
        for k in range(max_retries)
    ]


_RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class HttpChatBackend:
    """Client for one OpenAI-compatible chat-completions endpoint.

    Shareable across threads; a per-instance semaphore caps concurrent
    requests at cfg.max_concurrent.
    """

    def __init__(
        self,
        cfg: ModelConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        if not cfg.base_url:
            raise CredentialError(
                f"model {cfg.model_id!r} has no base_url configured; "
                "a live endpoint or a replay script is required"
            )
        self.cfg = cfg
        self._sleep = sleep
        self._rng = rng
        self._semaphore = threading.Semaphore(cfg.max_concurrent)
        headers = {}
        if cfg.credential_env:
            token = os.environ.get(cfg.credential_env)
            if not token:
                raise CredentialError(
                    f"credential environment variable {cfg.credential_env} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            base_url=cfg.base_url.rstrip("/"),
            timeout=cfg.timeout,
            headers=headers,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def complete(
        self, doc_key: str, messages: Sequence[Message], decoding: Decoding
    ) -> CompletionOutcome:
        body = {
            "model": self.cfg.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_tokens,
        }
        delays = backoff_delays(self.cfg.max_retries, rng=self._rng)
        started = time.perf_counter()
        attempts = 0
        last_failure = "no attempt made"
        for attempt in range(self.cfg.max_retries + 1):
            attempts = attempt + 1
            try:
                with self._semaphore:
                    response = self._client.post("/v1/chat/completions", json=body)
            except httpx.TimeoutException as exc:
                last_failure = f"timeout: {exc}"
            except httpx.HTTPError as exc:
                last_failure = f"transport error: {exc}"
            else:
                if response.status_code == 200:
                    text = self._extract_text(response)
                    return CompletionOutcome(
                        text=text,
                        latency=time.perf_counter() - started,
                        attempts=attempts,
                    )
                if response.status_code in (401, 403):
                    raise CredentialError(
                        f"endpoint rejected credentials (HTTP {response.status_code})"
                    )
                if response.status_code not in _RETRYABLE_STATUS:
                    raise BackendError(
                        f"endpoint returned HTTP {response.status_code}"
                    )
                last_failure = f"HTTP {response.status_code}"
            if attempt < self.cfg.max_retries:
                logger.debug(
                    "model=%s attempt %d failed (%s); retrying in %.2fs",
                    self.cfg.model_id, attempts, last_failure, delays[attempt],
                )
                self._sleep(delays[attempt])
        raise BackendUnavailableError(
            f"backend unavailable after {attempts} attempts; last failure: {last_failure}",
            attempts=attempts,
        )

    @staticmethod
    def _extract_text(response: httpx.Response) -> str:
        try:
            payload = response.json()
            choices = payload["choices"]
            if not choices:
                raise MalformedResponseError("response has empty choices")
            content = choices[0]["message"]["content"]
        except MalformedResponseError:
            raise
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unparseable completion payload: {exc}") from exc
        if not isinstance(content, str):
            raise MalformedResponseError("completion content is not a string")
        return content


ReplayScript = Mapping[tuple[str, str], str]


def load_replay_script(source: str | Path | IO[str]) -> dict[tuple[str, str], str]:
    """Load a JSONL replay script of {doc_key, model_id, text} lines."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fp:
            return load_replay_script(fp)
    script: dict[tuple[str, str], str] = {}
    for line in source:
        if not line.strip():
            continue
        entry = json.loads(line)
        script[(str(entry["doc_key"]), str(entry["model_id"]))] = str(entry["text"])
    return script


def replay_complete(script: ReplayScript, key: tuple[str, str]) -> CompletionOutcome:
    try:
        text = script[key]
    except KeyError:
        raise ScriptMissError(
            f"replay script has no entry for doc_key={key[0]!r} model_id={key[1]!r}"
        ) from None
    return CompletionOutcome(text=text, latency=0.0, attempts=1)


class ReplayBackend:
    """Deterministic completion source for tests and offline reproduction."""

    def __init__(self, script: ReplayScript, model_id: str):
        self._script = script
        self.model_id = model_id

    def complete(
        self, doc_key: str, messages: Sequence[Message], decoding: Decoding
    ) -> CompletionOutcome:
        return replay_complete(self._script, (doc_key, self.model_id))
