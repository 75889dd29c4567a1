"""Wire-format tests for the two optional HTTP backends, against a local
loopback server: the embedding service ({"texts": [...]} in,
{"vectors": [...]} out) and the chat-completion agent endpoint.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from sqlmend.orchestrator import AgentFailure, HttpAgent, build_context
from sqlmend.retriever import HttpEmbeddingBackend


class _Handler(BaseHTTPRequestHandler):
    requests: list[dict] = []
    fail_times = 0

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).requests.append({"path": self.path, "body": body,
                                    "auth": self.headers.get("Authorization")})
        if type(self).fail_times > 0:
            type(self).fail_times -= 1
            self.send_response(500)
            self.end_headers()
            return
        if self.path == "/embed":
            # toy embedding: [length, vowels] per text
            vectors = [[float(len(t)), float(sum(ch in "aeiou" for ch in t))]
                       for t in body["texts"]]
            payload = {"vectors": vectors}
        else:
            payload = {"choices": [{"message": {
                "content": "add_select(title)\nadd_from(episode)"}}]}
        data = json.dumps(payload).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture()
def http_server():
    _Handler.requests = []
    _Handler.fail_times = 0
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}"
    finally:
        server.shutdown()
        thread.join()


def test_embedding_backend_wire_format(http_server):
    backend = HttpEmbeddingBackend(endpoint=f"{http_server}/embed", api_key="secret")
    scores = backend.score("abc", ["abc", "abcabc", "xyz"])
    assert len(scores) == 3
    assert scores[0] == pytest.approx(1.0)  # identical toy vectors
    assert scores[1] == pytest.approx(1.0)  # parallel vectors (double length)
    assert all(0.0 <= s <= 1.0 for s in scores)
    request = _Handler.requests[0]
    assert request["body"] == {"texts": ["abc", "abc", "abcabc", "xyz"]}
    assert request["auth"] == "Bearer secret"


def test_embedding_backend_empty_candidates(http_server):
    backend = HttpEmbeddingBackend(endpoint=f"{http_server}/embed")
    assert backend.score("q", []) == []
    assert _Handler.requests == []  # no call for nothing to score


def test_http_agent_request_shape(http_server, episode_catalog):
    agent = HttpAgent(endpoint=f"{http_server}/chat", api_key="k", model="test-model")
    ctx = build_context(episode_catalog, "Who wrote the pilot?")
    reply = agent.generate(ctx)
    assert reply == "add_select(title)\nadd_from(episode)"
    body = _Handler.requests[0]["body"]
    assert body["temperature"] == 0
    assert body["max_tokens"] == 300
    assert body["model"] == "test-model"
    assert body["messages"][0]["role"] == "system"
    assert "Who wrote the pilot?" in body["messages"][1]["content"]
    assert "table episode" in body["messages"][1]["content"]


def test_http_agent_retries_transport_failures(http_server, episode_catalog):
    _Handler.fail_times = 2
    agent = HttpAgent(endpoint=f"{http_server}/chat", retries=2)
    ctx = build_context(episode_catalog, "q")
    assert agent.generate(ctx)  # third attempt succeeds
    assert len(_Handler.requests) == 3


def test_http_agent_persistent_failure_raises(http_server, episode_catalog):
    _Handler.fail_times = 10
    agent = HttpAgent(endpoint=f"{http_server}/chat", retries=2)
    with pytest.raises(AgentFailure):
        agent.generate(build_context(episode_catalog, "q"))


def test_http_agent_refine_carries_feedback(http_server, episode_catalog, episode_index):
    from sqlmend.actions import parse_actions
    from sqlmend.orchestrator import Feedback
    from sqlmend.retriever import inspect_sequence

    seq = parse_actions('add_select(title)\nadd_from(episode)\n'
                        'add_where(written_by, =, "todd casey")').sequence
    verdicts = inspect_sequence(seq, episode_catalog, episode_index)
    feedback = Feedback(iteration=0, verdicts=verdicts)
    agent = HttpAgent(endpoint=f"{http_server}/chat")
    ctx = build_context(episode_catalog, "q")
    agent.refine(ctx, seq, feedback)
    messages = _Handler.requests[0]["body"]["messages"]
    assert messages[2]["role"] == "assistant"
    assert "add_where(written_by" in messages[2]["content"]
    assert "Todd Casey" in messages[3]["content"]  # candidate surfaced to the agent
