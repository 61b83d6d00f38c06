"""Client for OpenAI-compatible chat-completions scoring endpoints.

Requests are issued at temperature 0 with a fixed system preamble, so a
given (prompt, model) pair has a deterministic completion and can be cached
for the lifetime of the client.  Transient failures (connection errors and
429/5xx statuses) are retried with exponential backoff; anything else is a
protocol error.  Prompt batches run on a bounded thread pool, and duplicate
prompts within a batch are fetched once.

The endpoint base URL and API key default to the ``PLR_API_BASE`` and
``PLR_API_KEY`` environment variables.
"""

from __future__ import annotations

import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import requests

from .distributions import Permutation
from .scoring import (
    Demonstration,
    Example,
    Metric,
    PromptTemplate,
    ProtocolError,
    ScoringError,
    assemble_prompt,
)

API_BASE_ENV = "PLR_API_BASE"
API_KEY_ENV = "PLR_API_KEY"

DEFAULT_SYSTEM_PREAMBLE = "You are a careful assistant. Reply with the answer only."

_TRANSIENT_STATUS = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings for a chat-completions endpoint."""

    model: str
    base_url: str | None = None
    api_key: str | None = None
    max_tokens: int = 16
    parallelism: int = 16
    retries: int = 3
    backoff: float = 1.0
    timeout: float = 60.0
    system_preamble: str = DEFAULT_SYSTEM_PREAMBLE

    def __post_init__(self):
        if not self.model:
            raise ValueError("model name must be non-empty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.backoff < 0.0 or self.timeout <= 0.0:
            raise ValueError("backoff must be >= 0 and timeout positive")

    def resolved_base_url(self) -> str:
        base = self.base_url or os.environ.get(API_BASE_ENV)
        if not base:
            raise ScoringError(f"no endpoint base URL: set {API_BASE_ENV} or configure base_url")
        return base.rstrip("/")

    def resolved_api_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV)


class ChatCompletionsClient:
    """Minimal chat-completions client with retries, caching, and batching."""

    def __init__(self, config: EndpointConfig):
        self.config = config
        self._session = requests.Session()
        self._cache: dict[tuple[str, str], str] = {}
        self._lock = threading.Lock()
        self.request_count = 0  # completed network calls, cache hits excluded

    def complete(self, prompt: str) -> str:
        key = (prompt, self.config.model)
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        text = self._fetch(prompt)
        with self._lock:
            self._cache[key] = text
        return text

    def complete_many(self, prompts: Iterable[str]) -> dict[str, str]:
        """Fetch all distinct prompts, in parallel where the pool allows."""
        unique = list(dict.fromkeys(prompts))
        with self._lock:
            pending = [p for p in unique if (p, self.config.model) not in self._cache]
        if pending:
            workers = min(self.config.parallelism, len(pending))
            if workers <= 1:
                for prompt in pending:
                    self.complete(prompt)
            else:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    # list() drains the iterator so worker exceptions surface.
                    list(pool.map(self.complete, pending))
        return {p: self.complete(p) for p in unique}

    def _fetch(self, prompt: str) -> str:
        cfg = self.config
        url = cfg.resolved_base_url() + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        api_key = cfg.resolved_api_key()
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": cfg.model,
            "messages": [
                {"role": "system", "content": cfg.system_preamble},
                {"role": "user", "content": prompt},
            ],
            "temperature": 0,
            "max_tokens": cfg.max_tokens,
        }
        last_failure = "no attempt made"
        for attempt in range(cfg.retries + 1):
            if attempt:
                time.sleep(cfg.backoff * 2 ** (attempt - 1))
            try:
                response = self._session.post(url, json=payload, headers=headers, timeout=cfg.timeout)
            except requests.RequestException as err:
                last_failure = f"connection error: {err}"
                continue
            if response.status_code in _TRANSIENT_STATUS:
                last_failure = f"transient status {response.status_code}"
                continue
            if response.status_code != 200:
                raise ProtocolError(
                    f"endpoint returned status {response.status_code}: {response.text[:200]}"
                )
            content = _extract_content(response)
            with self._lock:
                self.request_count += 1
            return content
        raise ScoringError(
            f"chat completion failed after {cfg.retries + 1} attempts ({last_failure})"
        )


def _extract_content(response: requests.Response) -> str:
    try:
        data = response.json()
    except ValueError as err:
        raise ProtocolError(f"endpoint returned non-JSON body: {err}") from err
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as err:
        raise ProtocolError(f"malformed chat-completion response: missing {err}") from err
    if not isinstance(content, str):
        raise ProtocolError("completion content is not text")
    return content


@dataclass(frozen=True, eq=False)
class LLMAccuracyScorer:
    """Scores a permutation by mean metric over endpoint answers.

    Each evaluation renders one prompt per dataset example with the
    demonstrations in permutation order, fetches completions (deduplicated
    and cached), and averages the per-example metric.
    """

    template: PromptTemplate
    demonstrations: tuple[Demonstration, ...]
    client: ChatCompletionsClient
    metric: Metric

    def evaluate(self, pi: Permutation, dataset: Sequence[Example]) -> float:
        if not dataset:
            raise ValueError("cannot score on an empty dataset")
        prompts = [
            assemble_prompt(self.template, self.demonstrations, pi, example.input)
            for example in dataset
        ]
        completions = self.client.complete_many(prompts)
        hits = [self.metric(completions[p], e.label) for p, e in zip(prompts, dataset)]
        return sum(hits) / len(hits)


def llm_accuracy_scorer(
    template: PromptTemplate,
    demonstrations: Sequence[Demonstration],
    endpoint: EndpointConfig,
    metric: Metric,
) -> LLMAccuracyScorer:
    """Build an accuracy scorer over a fixed demonstration set."""
    demos = tuple(demonstrations)
    if not demos:
        raise ValueError("at least one demonstration is required")
    return LLMAccuracyScorer(template, demos, ChatCompletionsClient(endpoint), metric)
