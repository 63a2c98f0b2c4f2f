import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from reward_rag.embedding import EncoderSpec, clear_encoder_cache
from reward_rag.vecindex import Corpus, Document

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def _fresh_encoders():
    clear_encoder_cache()
    yield
    clear_encoder_cache()


@pytest.fixture
def hash_spec():
    return EncoderSpec("hash-ngram", 64, "last-position", "", "", {"ngram_max": 2})


@pytest.fixture
def small_corpus():
    return Corpus([
        Document("d1", "the world cup was first won by uruguay in 1930"),
        Document("d2", "germany won the world cup on home soil in 1974"),
        Document("d3", "mexico hosted the world cup twice"),
        Document("d4", "the rabbit hole leads to wonderland"),
        Document("d5", "alice follows the white rabbit"),
    ])


def random_texts(rng, n, vocab=200, length=(3, 12)):
    words = [f"w{i}" for i in range(vocab)]
    return [" ".join(rng.choice(words, size=int(rng.integers(*length)))) for _ in range(n)]


class StubServer:
    """Threaded HTTP stub for the embedding and chat-completion endpoints.

    ``chat`` maps a user message to a reply string or to a list of replies
    served in turn (the last one repeats); ``status`` codes given in the
    list as ints are returned as HTTP errors.
    """

    def __init__(self):
        self.chat = {}
        self.embed = None  # callable(list[str]) -> list[list[float]]
        self.requests = []
        self._lock = threading.Lock()
        self._calls = {}
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *a):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with stub._lock:
                    stub.requests.append({"path": self.path, "body": body,
                                          "auth": self.headers.get("Authorization")})
                if self.path.endswith("/embeddings"):
                    vecs = stub.embed(body["input"])
                    return self._send(200, {"data": [{"embedding": v} for v in vecs]})
                user = body["messages"][-1]["content"]
                reply = stub.chat.get(user, "")
                if isinstance(reply, list):
                    with stub._lock:
                        i = stub._calls.get(user, 0)
                        stub._calls[user] = i + 1
                    reply = reply[min(i, len(reply) - 1)]
                if isinstance(reply, int):
                    return self._send(reply, {"error": "stub failure"})
                self._send(200, {"choices": [{"message": {"role": "assistant", "content": reply}}]})

            def _send(self, code, payload):
                data = json.dumps(payload).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    with StubServer() as s:
        yield s


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def synthetic_run(tmp_path_factory):
    """One full pipeline run on the pinned synthetic config (about 45 s)."""
    from .pipeline import run_pipeline

    return run_pipeline(tmp_path_factory.mktemp("synthetic"))


# criterion number -> one-line verdict, filled by test_acceptance
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
