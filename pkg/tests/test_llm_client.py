"""Chat-completions client: caching, retries, failure modes, accuracy scoring."""

from __future__ import annotations

import pytest

from plreorder.distributions import Permutation
from plreorder.llm_client import (
    API_BASE_ENV,
    API_KEY_ENV,
    ChatCompletionsClient,
    EndpointConfig,
    llm_accuracy_scorer,
)
from plreorder.scoring import (
    DEFAULT_TEMPLATE,
    Demonstration,
    Example,
    ProtocolError,
    ScoringError,
    exact_match_metric,
)
from tests.conftest import echo_gold_reply

DEMOS = (
    Demonstration("2+2", "4"),
    Demonstration("3+3", "6"),
    Demonstration("5+1", "6"),
)
DATASET = (Example("1+2", "3"), Example("4+4", "8"), Example("9+0", "9"), Example("6+1", "7"))
GOLD = {e.input: e.label for e in DATASET}


def make_config(endpoint, **overrides) -> EndpointConfig:
    settings = {
        "model": "test-model",
        "base_url": endpoint.base_url,
        "backoff": 0.01,
        "parallelism": 4,
    }
    settings.update(overrides)
    return EndpointConfig(**settings)


class TestEndpointConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            EndpointConfig(model="")
        with pytest.raises(ValueError):
            EndpointConfig(model="m", max_tokens=0)
        with pytest.raises(ValueError):
            EndpointConfig(model="m", parallelism=0)
        with pytest.raises(ValueError):
            EndpointConfig(model="m", retries=-1)
        with pytest.raises(ValueError):
            EndpointConfig(model="m", timeout=0.0)

    def test_missing_base_url_raises_scoring_error(self, monkeypatch):
        monkeypatch.delenv(API_BASE_ENV, raising=False)
        with pytest.raises(ScoringError, match=API_BASE_ENV):
            EndpointConfig(model="m").resolved_base_url()

    def test_env_fallback_and_explicit_priority(self, monkeypatch):
        monkeypatch.setenv(API_BASE_ENV, "http://env-host/v2/")
        monkeypatch.setenv(API_KEY_ENV, "env-key")
        config = EndpointConfig(model="m")
        assert config.resolved_base_url() == "http://env-host/v2"
        assert config.resolved_api_key() == "env-key"
        explicit = EndpointConfig(model="m", base_url="http://direct/v1", api_key="direct-key")
        assert explicit.resolved_base_url() == "http://direct/v1"
        assert explicit.resolved_api_key() == "direct-key"


class TestChatCompletionsClient:
    def test_complete_round_trip(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory(reply_fn=lambda prompt: prompt.upper())
        client = ChatCompletionsClient(make_config(endpoint))
        assert client.complete("hello") == "HELLO"
        assert client.request_count == 1

    def test_cache_prevents_repeat_requests(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory()
        client = ChatCompletionsClient(make_config(endpoint))
        for _ in range(5):
            client.complete("same prompt")
        assert endpoint.attempts == 1
        assert client.request_count == 1

    def test_complete_many_deduplicates(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory(reply_fn=lambda p: p[-1])
        client = ChatCompletionsClient(make_config(endpoint))
        answers = client.complete_many(["a", "b", "a", "c", "b"])
        assert answers == {"a": "a", "b": "b", "c": "c"}
        assert endpoint.attempts == 3

    def test_complete_many_serial_path(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory(reply_fn=lambda p: p)
        client = ChatCompletionsClient(make_config(endpoint, parallelism=1))
        answers = client.complete_many(["x", "y"])
        assert answers == {"x": "x", "y": "y"}

    def test_retries_recover_from_transient_failures(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory(transient_failures=2)
        client = ChatCompletionsClient(make_config(endpoint))
        assert client.complete("prompt") == "ok"
        assert endpoint.attempts == 3  # two 500s, then success
        assert client.request_count == 1

    def test_exhausted_retries_raise_scoring_error(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory(status_override=503)
        client = ChatCompletionsClient(make_config(endpoint, retries=2))
        with pytest.raises(ScoringError, match="3 attempts"):
            client.complete("prompt")
        assert endpoint.attempts == 3

    def test_connection_refused_is_retried_then_raised(self):
        config = EndpointConfig(
            model="m", base_url="http://127.0.0.1:9", retries=1, backoff=0.0, timeout=0.2
        )
        with pytest.raises(ScoringError, match="connection error"):
            ChatCompletionsClient(config).complete("prompt")

    def test_non_transient_status_raises_protocol_error(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory(status_override=404)
        client = ChatCompletionsClient(make_config(endpoint))
        with pytest.raises(ProtocolError, match="404"):
            client.complete("prompt")
        assert endpoint.attempts == 1  # no retry on hard failures

    def test_malformed_body_raises_protocol_error(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory(body_override=b'{"choices": []}')
        client = ChatCompletionsClient(make_config(endpoint))
        with pytest.raises(ProtocolError, match="malformed"):
            client.complete("prompt")

    def test_non_json_body_raises_protocol_error(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory(body_override=b"not json at all")
        client = ChatCompletionsClient(make_config(endpoint))
        with pytest.raises(ProtocolError, match="non-JSON"):
            client.complete("prompt")

    def test_request_payload_shape(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory()
        config = make_config(endpoint, api_key="secret-key", max_tokens=7)
        ChatCompletionsClient(config).complete("what is 2+2?")
        body = endpoint.bodies[0]
        assert body["model"] == "test-model"
        assert body["temperature"] == 0
        assert body["max_tokens"] == 7
        assert body["messages"][0]["role"] == "system"
        assert body["messages"][1] == {"role": "user", "content": "what is 2+2?"}
        assert endpoint.auth_headers[0] == "Bearer secret-key"

    def test_no_auth_header_without_key(self, mock_endpoint_factory, monkeypatch):
        monkeypatch.delenv(API_KEY_ENV, raising=False)
        endpoint = mock_endpoint_factory()
        ChatCompletionsClient(make_config(endpoint)).complete("prompt")
        assert endpoint.auth_headers[0] is None

    def test_parallel_batch_completes_all(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory(reply_fn=lambda p: p)
        client = ChatCompletionsClient(make_config(endpoint, parallelism=8))
        prompts = [f"prompt {i}" for i in range(32)]
        answers = client.complete_many(prompts)
        assert answers == {p: p for p in prompts}
        assert endpoint.attempts == 32


class TestLLMAccuracyScorer:
    def make_scorer(self, endpoint, **config_overrides):
        return llm_accuracy_scorer(
            DEFAULT_TEMPLATE,
            DEMOS,
            make_config(endpoint, **config_overrides),
            exact_match_metric,
        )

    def test_perfect_endpoint_scores_one(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory(reply_fn=echo_gold_reply(GOLD))
        scorer = self.make_scorer(endpoint)
        assert scorer.evaluate(Permutation((2, 0, 1)), DATASET) == 1.0

    def test_partial_accuracy(self, mock_endpoint_factory):
        wrong_on = "4+4"

        def reply(prompt):
            query = prompt.rsplit("Input: ", 1)[1].split("\nAnswer:", 1)[0]
            return "wrong" if query == wrong_on else GOLD[query]

        endpoint = mock_endpoint_factory(reply_fn=reply)
        scorer = self.make_scorer(endpoint)
        assert scorer.evaluate(Permutation((0, 1, 2)), DATASET) == pytest.approx(0.75)

    def test_reevaluation_hits_cache(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory(reply_fn=echo_gold_reply(GOLD))
        scorer = self.make_scorer(endpoint)
        pi = Permutation((1, 2, 0))
        scorer.evaluate(pi, DATASET)
        scorer.evaluate(pi, DATASET)
        assert endpoint.attempts == len(DATASET)  # second pass served from cache

    def test_different_orders_need_new_requests(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory(reply_fn=echo_gold_reply(GOLD))
        scorer = self.make_scorer(endpoint)
        scorer.evaluate(Permutation((0, 1, 2)), DATASET)
        scorer.evaluate(Permutation((2, 1, 0)), DATASET)
        assert endpoint.attempts == 2 * len(DATASET)
        assert len(endpoint.unique_prompts()) == 2 * len(DATASET)

    def test_empty_dataset_rejected(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory()
        scorer = self.make_scorer(endpoint)
        with pytest.raises(ValueError):
            scorer.evaluate(Permutation((0, 1, 2)), ())

    def test_factory_requires_demonstrations(self, mock_endpoint_factory):
        endpoint = mock_endpoint_factory()
        with pytest.raises(ValueError):
            llm_accuracy_scorer(DEFAULT_TEMPLATE, (), make_config(endpoint), exact_match_metric)
