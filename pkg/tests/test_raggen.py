import json

import pytest

from reward_rag.chat import ChatClient
from reward_rag.critic import QueryRecord
from reward_rag.embedding import EncoderSpec
from reward_rag.errors import ConfigError, InvalidInputError, ParseFailure, TransportError
from reward_rag.raggen import (
    EMPTY_PASSAGE,
    answer,
    answer_batch,
    build_qa_prompt,
    parse_short_answer,
    parse_true_false,
)
from reward_rag.vecindex import Corpus, Document, build_index, search

from .conftest import FIXTURES

SHORT_ANCHOR = "Answer the query directly with the shortest phrase without explanation."
TF_ANCHOR = "Answer directly the above query with True or False"
SYSTEM_ANCHOR = "The assistant is provided with 5 passages from Wikipedia."


class ScriptedClient:
    thread_safe = False

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []

    def complete(self, system, user):
        self.prompts.append((system, user))
        item = self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
        if isinstance(item, Exception):
            raise item
        return item


@pytest.fixture(scope="module")
def qa_fixture():
    with open(FIXTURES / "qa_stub.json") as f:
        data = json.load(f)
    corpus = Corpus([Document(d["id"], d["text"]) for d in data["corpus"]])
    return corpus, data["queries"]


@pytest.fixture
def qa_index(qa_fixture):
    return build_index(qa_fixture[0], EncoderSpec("hash-ngram", 256, options={"ngram_max": 1}))


class TestPrompt:
    def test_five_passages(self):
        p = build_qa_prompt("who won", [f"text {i}" for i in range(1, 6)])
        assert p.user.count("* Passage 5:") == 1
        assert p.user.splitlines()[:5] == [f"* Passage {i}: text {i}" for i in range(1, 6)]
        assert "\n\nQuery: who won\n" in p.user
        assert p.user.endswith(SHORT_ANCHOR + "\nIf there are many correct answers, only output one of them.")
        assert SYSTEM_ANCHOR in p.system

    def test_padding(self):
        p = build_qa_prompt("q", ["a", "b", "c"])
        assert p.passages[3:] == (EMPTY_PASSAGE, EMPTY_PASSAGE)
        assert f"* Passage 5: {EMPTY_PASSAGE}" in p.user

    def test_true_false(self):
        p = build_qa_prompt("q", ["a"], "true-false")
        assert p.user.endswith(TF_ANCHOR + ".")

    def test_deterministic(self):
        assert build_qa_prompt("q", ["a", "b"]) == build_qa_prompt("q", ["a", "b"])

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            build_qa_prompt("q", [])
        with pytest.raises(InvalidInputError):
            build_qa_prompt("q", ["a"] * 6)
        with pytest.raises(InvalidInputError):
            build_qa_prompt("q", ["a"], "essay")


class TestParsing:
    @pytest.mark.parametrize("raw,want", [
        ("Uruguay", "Uruguay"), ("  Canberra.\n", "Canberra"), ("Au.\nbecause", "Au"), ("", ""),
        ("Washington, D.C.", "Washington, D.C"),
    ])
    def test_short_answer(self, raw, want):
        assert parse_short_answer(raw) == want

    @pytest.mark.parametrize("raw,want", [("  True.\n", True), ("false", False), ("FALSE, because", False),
                                          ("**True**", True)])
    def test_true_false(self, raw, want):
        assert parse_true_false(raw) is want

    @pytest.mark.parametrize("raw", ["Maybe", "", "It is true", "42"])
    def test_true_false_failure(self, raw):
        with pytest.raises(ParseFailure):
            parse_true_false(raw)


class TestAnswer:
    def test_table_example(self, qa_fixture, qa_index):
        corpus, _ = qa_fixture
        q = QueryRecord("n01", "who won the first world cup", ("Uruguay",))
        client = ScriptedClient(["Uruguay"])
        rec = answer(q, qa_index, corpus, client)
        assert rec.prediction == "Uruguay"
        assert rec.to_dict()["em"] == 1
        assert rec.passages == [h.doc_id for h in search(qa_index, q.text, 5)]
        assert rec.passages[0] == "p01"
        system, user = client.prompts[0]
        assert user.startswith("* Passage 1: " + corpus.text("p01"))

    def test_true_false_answer(self, qa_fixture, qa_index):
        rec = answer(QueryRecord("f1", "water boils at 100 degrees"), qa_index, qa_fixture[0],
                     ScriptedClient(["  True.\n"]), "true-false")
        assert rec.prediction is True
        assert rec.to_dict()["prediction"] == "True"

    def test_parse_failure_is_recorded(self, qa_fixture, qa_index):
        rec = answer(QueryRecord("f1", "water boils"), qa_index, qa_fixture[0], ScriptedClient(["Perhaps"]),
                     "true-false")
        assert rec.prediction is None and rec.error.startswith("parse-failure")
        d = rec.to_dict()
        assert d["prediction"] is None and d["em"] == 0 and d["raw_response"] == "Perhaps"

    def test_transport_failure_raises(self, qa_fixture, qa_index):
        client = ScriptedClient([TransportError("down")])
        with pytest.raises(TransportError):
            answer(QueryRecord("x", "capital"), qa_index, qa_fixture[0], client, retries=2, sleep=lambda s: None)
        assert len(client.prompts) == 3

    def test_batch_records_transport_failures(self, qa_fixture, qa_index):
        recs = answer_batch([QueryRecord("x", "capital")], qa_index, qa_fixture[0],
                            ScriptedClient([TransportError("down")]), retries=0)
        assert recs[0].error.startswith("transport-failure")

    def test_k_needs_template_override(self, qa_fixture, qa_index):
        with pytest.raises(ConfigError):
            answer_batch([QueryRecord("x", "capital")], qa_index, qa_fixture[0], ScriptedClient(["a"]), k=3)
        recs = answer_batch([QueryRecord("x", "capital")], qa_index, qa_fixture[0], ScriptedClient(["a"]), k=3,
                            system="Three passages follow.")
        assert len(recs[0].passages) == 3

    def test_fixture_batch_via_stub(self, stub_server, qa_fixture, qa_index):
        corpus, rows = qa_fixture
        queries = [QueryRecord(r["query_id"], r["text"], tuple(r["gold"])) for r in rows]
        for q, r in zip(queries, rows):
            hits = [corpus.text(h.doc_id) for h in search(qa_index, q.text, 5)]
            stub_server.chat[build_qa_prompt(q.text, hits).user] = r["response"]
        client = ChatClient(stub_server.url + "/v1/chat/completions", "reader")
        recs = answer_batch(queries, qa_index, corpus, client, concurrency=3)
        assert [r.query_id for r in recs] == [r["query_id"] for r in rows]
        assert [r.prediction for r in recs] == [r["prediction"] for r in rows]
        assert [r.to_dict()["em"] for r in recs] == [r["em"] for r in rows]
        assert all(req["body"]["temperature"] == 0 for req in stub_server.requests)
