"""Uniform text-generation backends.

Two implementations behind one `generate` contract: an HTTP client for
completion-style endpoints (POST {model, prompt, n, temperature,
max_tokens, stop, seed?} -> {choices: [{text, finish_reason}]}) and a
scripted oracle that replays completions from a JSONL table, giving
bit-reproducible offline runs.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import httpx

from .errors import (
    ConfigInvalid,
    MalformedBackendResponse,
    NetworkError,
    RateLimited,
    ScriptMiss,
)

_FINISH_REASONS = ("stop", "length", "end_of_sequence")
_WORD_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class GenerationRequest:
    context: str
    n: int = 1
    temperature: float = 0.0
    max_new_tokens: int = 512
    stop: tuple[str, ...] = ()
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.temperature == 0 and self.n != 1:
            raise ValueError("temperature 0 means greedy decoding; n must be 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")


@dataclass(frozen=True)
class Completion:
    text: str
    finish_reason: str = "end_of_sequence"

    def __post_init__(self) -> None:
        if self.finish_reason not in _FINISH_REASONS:
            raise ValueError(f"unknown finish_reason {self.finish_reason!r}")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class BackendConfig:
    kind: str
    endpoint_url: str | None = None
    model_name: str | None = None
    auth_token_env: str | None = None
    script_path: str | None = None
    max_parallel: int = 8
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    max_n_per_request: int | None = None
    timeout: float = 120.0

    def __post_init__(self) -> None:
        if self.kind not in ("http", "scripted"):
            raise ConfigInvalid(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and not (self.endpoint_url and self.model_name):
            raise ConfigInvalid("http backend requires endpoint_url and model_name")
        if self.kind == "scripted" and not self.script_path:
            raise ConfigInvalid("scripted backend requires script_path")
        if self.max_parallel < 1:
            raise ConfigInvalid("max_parallel must be >= 1")


def _truncate(text: str, stop: Sequence[str], max_new_tokens: int) -> Completion:
    """Apply stop strings and the token budget to raw completion text.

    Tokens are approximated as whitespace-delimited words; the earlier of
    the first stop match and the token budget wins.
    """
    stop_at = None
    for s in stop:
        idx = text.find(s)
        if idx >= 0 and (stop_at is None or idx < stop_at):
            stop_at = idx

    length_at = None
    words = list(_WORD_RE.finditer(text))
    if len(words) > max_new_tokens:
        length_at = words[max_new_tokens - 1].end()

    if stop_at is not None and (length_at is None or stop_at <= length_at):
        return Completion(text=text[:stop_at], finish_reason="stop")
    if length_at is not None:
        return Completion(text=text[:length_at], finish_reason="length")
    return Completion(text=text, finish_reason="end_of_sequence")


def stable_digest(*parts: object) -> str:
    """Hex digest of the given parts; stable across runs and processes."""
    joined = "\x1f".join(str(p) for p in parts)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def derive_seed(*parts: object) -> int:
    """Deterministic 32-bit seed derived from arbitrary labels."""
    return int(stable_digest(*parts)[:8], 16)


class ScriptedBackend:
    """Deterministic oracle replaying completions from a JSONL table.

    Each table row is {"context_key": str, "completions": [str, ...]}.
    A request context resolves to a row by exact match, then by the
    longest context_key that is a prefix of the context, then by the
    sha256 hex digest of the context. The j-th returned completion is a
    pure function of (context, seed, j): sampling rotates the row's
    completions by a seed-derived offset, greedy always returns the first.
    """

    def __init__(self, config: BackendConfig):
        self.config = config
        rows = []
        with open(config.script_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
        self._exact: dict[str, list[str]] = {}
        for row in rows:
            self._exact[row["context_key"]] = list(row["completions"])
        self._prefix_keys = sorted(self._exact, key=len, reverse=True)

    def _lookup(self, context: str) -> list[str]:
        hit = self._exact.get(context)
        if hit is not None:
            return hit
        for key in self._prefix_keys:
            if context.startswith(key):
                return self._exact[key]
        hit = self._exact.get(hashlib.sha256(context.encode("utf-8")).hexdigest())
        if hit is not None:
            return hit
        raise ScriptMiss(f"no scripted completions for context: {context[:120]!r}...")

    def generate(self, request: GenerationRequest) -> list[Completion]:
        pool = self._lookup(request.context)
        if not pool:
            raise ScriptMiss("scripted entry has no completions")
        if request.temperature == 0:
            offset = 0
        else:
            offset = derive_seed(request.seed, request.context) % len(pool)
        return [
            _truncate(pool[(offset + j) % len(pool)], request.stop, request.max_new_tokens)
            for j in range(request.n)
        ]


class HttpBackend:
    """Client for a completion endpoint, with retries and a parallelism cap.

    429 and 5xx responses and transport errors are retried with exponential
    backoff up to retry.max_attempts, then surfaced as RateLimited or
    NetworkError. Requests with n above max_n_per_request are split into
    batches; reassembly preserves completion order.
    """

    def __init__(
        self,
        config: BackendConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._sleep = sleep
        self._limiter = threading.Semaphore(config.max_parallel)
        headers = {}
        token = os.environ.get(config.auth_token_env) if config.auth_token_env else None
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            timeout=config.timeout, transport=transport, headers=headers
        )

    def close(self) -> None:
        self._client.close()

    def _post_once(self, payload: dict) -> httpx.Response:
        with self._limiter:
            return self._client.post(self.config.endpoint_url, json=payload)

    def _post_with_retries(self, payload: dict) -> dict:
        policy = self.config.retry
        last_error: Exception | None = None
        rate_limited = False
        for attempt in range(policy.max_attempts):
            try:
                resp = self._post_once(payload)
            except httpx.HTTPError as exc:
                last_error = exc
                rate_limited = False
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise MalformedBackendResponse(
                            f"endpoint returned non-JSON body: {exc}"
                        ) from exc
                if resp.status_code == 429:
                    last_error = None
                    rate_limited = True
                elif resp.status_code >= 500:
                    last_error = None
                    rate_limited = False
                else:
                    raise NetworkError(
                        f"endpoint answered {resp.status_code}: {resp.text[:200]}"
                    )
            if attempt + 1 < policy.max_attempts:
                self._sleep(policy.base_backoff * (2**attempt))
        if rate_limited:
            raise RateLimited(
                f"still rate-limited after {policy.max_attempts} attempts"
            )
        raise NetworkError(
            f"request failed after {policy.max_attempts} attempts: {last_error}"
        )

    def _parse_choices(self, body: dict, expect_n: int, request: GenerationRequest) -> list[Completion]:
        choices = body.get("choices")
        if not isinstance(choices, list) or len(choices) != expect_n:
            raise MalformedBackendResponse(
                f"expected {expect_n} choices, got {choices if choices is None else len(choices)}"
            )
        completions = []
        for choice in choices:
            if not isinstance(choice, dict) or "text" not in choice:
                raise MalformedBackendResponse(f"malformed choice: {choice!r}")
            text = str(choice["text"])
            reason = choice.get("finish_reason") or "end_of_sequence"
            if reason == "eos":
                reason = "end_of_sequence"
            if reason not in _FINISH_REASONS:
                reason = "end_of_sequence"
            # Defensive scrub: the contract is that text excludes stop strings.
            truncated = _truncate(text, request.stop, request.max_new_tokens)
            if truncated.text != text:
                completions.append(truncated)
            else:
                completions.append(Completion(text=text, finish_reason=reason))
        return completions

    def generate(self, request: GenerationRequest) -> list[Completion]:
        batch_cap = self.config.max_n_per_request or request.n
        completions: list[Completion] = []
        batch_idx = 0
        remaining = request.n
        while remaining > 0:
            batch_n = min(batch_cap, remaining)
            payload = {
                "model": self.config.model_name,
                "prompt": request.context,
                "n": batch_n,
                "temperature": request.temperature,
                "max_tokens": request.max_new_tokens,
                "stop": list(request.stop),
            }
            if request.seed is not None:
                payload["seed"] = request.seed + batch_idx
            body = self._post_with_retries(payload)
            completions.extend(self._parse_choices(body, batch_n, request))
            remaining -= batch_n
            batch_idx += 1
        return completions


Backend = ScriptedBackend | HttpBackend


def make_backend(
    config: BackendConfig, transport: httpx.BaseTransport | None = None
) -> Backend:
    if config.kind == "scripted":
        return ScriptedBackend(config)
    return HttpBackend(config, transport=transport)


def generate(backend: Backend, request: GenerationRequest) -> list[Completion]:
    """Run one generation request; returns exactly request.n completions."""
    completions = backend.generate(request)
    if len(completions) != request.n:
        raise MalformedBackendResponse(
            f"backend returned {len(completions)} completions for n={request.n}"
        )
    return completions


def write_script_table(path: str | Path, entries: dict[str, list[str]]) -> None:
    """Write a scripted-oracle table mapping context keys to completions."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(entries):
            fh.write(
                json.dumps(
                    {"context_key": key, "completions": entries[key]},
                    ensure_ascii=False,
                )
            )
            fh.write("\n")
