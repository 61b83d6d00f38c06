"""Shared test helpers: a scripted chat-completions endpoint and factories."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class MockChatEndpoint:
    """In-process OpenAI-compatible chat endpoint with scripted replies.

    ``reply_fn`` maps the user-message content to the completion text.
    ``transient_failures`` injects that many 500 responses before serving
    normally.  ``status_override`` forces every response to a fixed status;
    ``body_override`` forces a fixed 200 body (for malformed-payload tests).
    Counters: ``attempts`` is every POST received, ``served`` only the
    successful completions; ``prompts`` records served user messages and
    ``auth_headers`` the Authorization header of each request.
    """

    def __init__(
        self,
        reply_fn=lambda prompt: "ok",
        transient_failures: int = 0,
        status_override: int | None = None,
        body_override: bytes | None = None,
    ):
        self.reply_fn = reply_fn
        self.attempts = 0
        self.served = 0
        self.prompts: list[str] = []
        self.bodies: list[dict] = []
        self.auth_headers: list[str | None] = []
        self._transient_remaining = transient_failures
        self._status_override = status_override
        self._body_override = body_override
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server naming)
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                prompt = body["messages"][-1]["content"]
                with outer._lock:
                    outer.attempts += 1
                    outer.bodies.append(body)
                    outer.auth_headers.append(self.headers.get("Authorization"))
                    fail_transiently = outer._transient_remaining > 0
                    if fail_transiently:
                        outer._transient_remaining -= 1
                if outer._status_override is not None:
                    self._respond(outer._status_override, b'{"error": "scripted status"}')
                    return
                if fail_transiently:
                    self._respond(500, b'{"error": "injected transient failure"}')
                    return
                if outer._body_override is not None:
                    self._respond(200, outer._body_override)
                    return
                reply = outer.reply_fn(prompt)
                with outer._lock:
                    outer.served += 1
                    outer.prompts.append(prompt)
                payload = json.dumps(
                    {"choices": [{"message": {"role": "assistant", "content": reply}}]}
                ).encode("utf-8")
                self._respond(200, payload)

            def _respond(self, status: int, payload: bytes):
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):  # keep test output clean
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        # Short poll interval keeps shutdown() from stalling each teardown.
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.02), daemon=True
        )

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self._server.server_port}/v1"

    def unique_prompts(self) -> set[str]:
        with self._lock:
            return set(self.prompts)

    def __enter__(self) -> "MockChatEndpoint":
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
        return False


def echo_gold_reply(answer_by_input: dict[str, str]):
    """Reply with the gold label of the query found in the prompt's last block."""

    def reply(prompt: str) -> str:
        tail = prompt.rsplit("Input: ", 1)[1]
        query = tail.split("\nAnswer:", 1)[0]
        return answer_by_input[query]

    return reply


@pytest.fixture
def mock_endpoint_factory():
    """Factory fixture that tears every started endpoint down."""
    started: list[MockChatEndpoint] = []

    def start(**kwargs) -> MockChatEndpoint:
        endpoint = MockChatEndpoint(**kwargs)
        endpoint.__enter__()
        started.append(endpoint)
        return endpoint

    yield start
    for endpoint in started:
        endpoint.__exit__(None, None, None)
