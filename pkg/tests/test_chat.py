import threading
import time

import pytest

from reward_rag.chat import ChatClient, map_bounded, with_retries
from reward_rag.errors import ParseFailure, TransportError


class TestRetries:
    def test_backoff_schedule(self):
        delays, calls = [], []

        def flaky():
            calls.append(1)
            if len(calls) < 4:
                raise TransportError("x")
            return "ok"

        assert with_retries(flaky, 3, base_delay=1.0, sleep=delays.append) == "ok"
        assert delays == [1.0, 2.0, 4.0]

    def test_gives_up(self):
        delays = []
        with pytest.raises(TransportError):
            with_retries(lambda: (_ for _ in ()).throw(TransportError("x")), 2, sleep=delays.append)
        assert delays == [1.0, 2.0]

    def test_other_errors_propagate_at_once(self):
        calls = []

        def bad():
            calls.append(1)
            raise ValueError("no")

        with pytest.raises(ValueError):
            with_retries(bad, 5, sleep=lambda s: None)
        assert len(calls) == 1

    def test_retry_on_filter(self):
        with pytest.raises(ParseFailure):
            with_retries(lambda: (_ for _ in ()).throw(ParseFailure("p")), 3, sleep=lambda s: None,
                         retry_on=(TransportError,))


class TestMapBounded:
    def test_order_preserved(self):
        def slow(x):
            time.sleep(0.01 * (5 - x % 5))
            return x * x

        assert map_bounded(slow, range(20), 4) == [x * x for x in range(20)]

    def test_concurrency_bound(self):
        live, peak, lock = [0], [0], threading.Lock()

        def job(x):
            with lock:
                live[0] += 1
                peak[0] = max(peak[0], live[0])
            time.sleep(0.01)
            with lock:
                live[0] -= 1
            return x

        map_bounded(job, range(30), 3)
        assert 1 <= peak[0] <= 3


class TestClient:
    def test_wire_format(self, stub_server, monkeypatch):
        monkeypatch.delenv("REWARD_RAG_API_KEY", raising=False)
        stub_server.chat["hi"] = "hello"
        c = ChatClient(stub_server.url + "/chat", "m1")
        assert c.complete("sys", "hi") == "hello"
        req = stub_server.requests[0]
        assert req["auth"] is None
        assert req["body"] == {"model": "m1", "temperature": 0.0,
                               "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "hi"}]}

    def test_http_error(self, stub_server):
        stub_server.chat["hi"] = 502
        with pytest.raises(TransportError, match="502"):
            ChatClient(stub_server.url, "m").complete("s", "hi")

    def test_unreachable(self):
        with pytest.raises(TransportError):
            ChatClient("http://127.0.0.1:9/none", "m", timeout=2).complete("s", "u")

    def test_malformed_payload(self):
        import httpx

        transport = httpx.MockTransport(lambda req: httpx.Response(200, json={"nope": []}))
        with pytest.raises(TransportError, match="malformed"):
            ChatClient("http://x", "m", transport=transport).complete("s", "u")
