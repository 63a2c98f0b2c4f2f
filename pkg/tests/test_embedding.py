import hashlib
import json
import math
import re
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reward_rag.embedding import (
    CLS,
    EOS,
    EncodedText,
    Encoder,
    EncoderSpec,
    HashFeaturizer,
    TokenizedInput,
    composed_spec,
    cosine_sim,
    encode,
    encode_many,
    encode_pair,
    get_encoder,
    load_encoder_spec,
    register_encoder,
    save_encoder_spec,
)
from reward_rag.errors import DegenerateInputError, EncoderError, InvalidInputError


def oracle_featurize(text, dim, ngram_max=1, salt="", instruction="", pooling="last-position"):
    """Standalone reimplementation of the hashed bag-of-ngrams featurizer."""
    if instruction:
        text = instruction + " " + text
    words = re.findall(r"\w+", text.lower())
    vec = np.zeros(dim)
    count = 0
    for n in range(1, ngram_max + 1):
        for i in range(len(words) - n + 1):
            key = salt + "|t|" + " ".join(words[i:i + n])
            h = int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")
            vec[h % dim] += -1.0 if h >> 63 else 1.0
            count += 1
    if pooling == "mean" and count:
        vec /= count
    return vec


def oracle_pair(query, document, dim, ngram_max=1, salt=""):
    def keys(tag, words):
        out = []
        for n in range(1, ngram_max + 1):
            out += [f"{salt}|{tag}|" + " ".join(words[i:i + n]) for i in range(len(words) - n + 1)]
        return out

    def add(vec, ks):
        for k in ks:
            h = int.from_bytes(hashlib.blake2b(k.encode(), digest_size=8).digest(), "little")
            vec[h % dim] += -1.0 if h >> 63 else 1.0

    qw, dw = re.findall(r"\w+", query.lower()), re.findall(r"\w+", document.lower())
    eq = np.zeros(dim)
    add(eq, keys("q", qw))
    ep = eq.copy()
    add(ep, keys("d", dw))
    add(ep, [f"{salt}|x|{w}" for w in sorted(set(qw) & set(dw))])
    return eq, ep


class TestEncoderSpec:
    def test_rejects_bad_dim_and_pooling(self):
        with pytest.raises(InvalidInputError):
            EncoderSpec("hash-ngram", 0)
        with pytest.raises(InvalidInputError):
            EncoderSpec("hash-ngram", 8, pooling="cls")

    def test_roundtrip_and_fingerprint(self, tmp_path):
        spec = EncoderSpec("hash-ngram", 16, "mean", "query:", "passage:", {"ngram_max": 1})
        path = tmp_path / "spec.json"
        save_encoder_spec(spec, path)
        back = load_encoder_spec(path)
        assert back == spec
        assert back.fingerprint() == spec.fingerprint()
        assert EncoderSpec("hash-ngram", 17).fingerprint() != EncoderSpec("hash-ngram", 16).fingerprint()

    def test_composed_spec_file_shape(self, tmp_path):
        base = EncoderSpec("hash-ngram", 8)
        path = tmp_path / "composed.json"
        save_encoder_spec(composed_spec(base, "adapter.ckpt", dim=8), path)
        payload = json.loads(path.read_text())
        assert set(payload) == {"base_spec", "adapter_path"}
        assert payload["base_spec"] == base.to_dict()


class TestTokenizedInput:
    def test_markers_required(self):
        TokenizedInput((CLS, "a", EOS))
        with pytest.raises(InvalidInputError):
            TokenizedInput(("a", EOS))
        with pytest.raises(InvalidInputError):
            TokenizedInput((CLS, "a"))

    def test_separator_strictly_inside(self):
        TokenizedInput((CLS, "a", "[SEP]", "b", EOS), sep_index=2)
        for bad in (0, 4):
            with pytest.raises(InvalidInputError):
                TokenizedInput((CLS, "a", "[SEP]", "b", EOS), sep_index=bad)


class TestEncode:
    def test_deterministic(self):
        spec = EncoderSpec("hash-ngram", 4)
        a = encode(spec, "query", "abc")
        b = encode(spec, "query", "abc")
        np.testing.assert_array_equal(a.vector, b.vector)
        assert a.vector.shape == (4,)
        assert a.source_role == "query" and not a.normalized

    def test_empty_instructions_make_roles_agree(self):
        spec = EncoderSpec("hash-ngram", 32)
        np.testing.assert_array_equal(encode(spec, "query", "some text").vector,
                                      encode(spec, "document", "some text").vector)

    def test_instruction_is_prefixed_with_a_space(self):
        spec = EncoderSpec("hash-ngram", 64, query_instruction="find:", options={"ngram_max": 2})
        np.testing.assert_array_equal(encode(spec, "query", "red fox").vector,
                                      encode(EncoderSpec("hash-ngram", 64), "document", "find: red fox").vector)

    @pytest.mark.parametrize("pooling", ["first-position", "last-position", "mean"])
    def test_matches_independent_featurizer(self, pooling):
        spec = EncoderSpec("hash-ngram", 32, pooling, "", "passage:", {"ngram_max": 2, "salt": "s1"})
        got = encode(spec, "document", "world cup uruguay").vector
        want = oracle_featurize("world cup uruguay", 32, 2, "s1", "passage:", pooling)
        assert got.tobytes() == want.tobytes()

    def test_batch_equals_single(self, rng):
        from .conftest import random_texts

        spec = EncoderSpec("hash-ngram", 48)
        texts = random_texts(rng, 20)
        batch = encode_many(spec, "document", texts)
        for t, row in zip(texts, batch):
            np.testing.assert_array_equal(row, encode(spec, "document", t).vector)

    @pytest.mark.parametrize("text", ["", "   ", "\n\t"])
    def test_empty_text_rejected(self, text):
        with pytest.raises(InvalidInputError):
            encode(EncoderSpec("hash-ngram", 4), "query", text)

    def test_unknown_role_and_plugin(self):
        with pytest.raises(InvalidInputError):
            encode(EncoderSpec("hash-ngram", 4), "passage", "x")
        with pytest.raises(InvalidInputError):
            encode(EncoderSpec("no-such-plugin", 4), "query", "x")

    def test_plugin_failure_becomes_encoder_error(self):
        class Broken(Encoder):
            dim = 3

            def __init__(self, spec):
                pass

            def embed(self, texts):
                raise RuntimeError("backend exploded")

        register_encoder("broken-test", Broken)
        with pytest.raises(EncoderError, match="backend exploded"):
            encode(EncoderSpec("broken-test", 3), "query", "x")

    def test_wrong_output_dim_is_encoder_error(self):
        class Short(Encoder):
            dim = 3

            def __init__(self, spec):
                pass

            def embed(self, texts):
                return np.ones((len(texts), 2))

        register_encoder("short-test", Short)
        with pytest.raises(EncoderError, match="shape"):
            encode(EncoderSpec("short-test", 3), "query", "x")

    def test_non_thread_safe_plugin_is_serialized(self):
        active, peak = [0], [0]
        lock = threading.Lock()

        class Fragile(Encoder):
            dim = 2
            thread_safe = False

            def __init__(self, spec):
                pass

            def embed(self, texts):
                with lock:
                    active[0] += 1
                    peak[0] = max(peak[0], active[0])
                threading.Event().wait(0.002)
                with lock:
                    active[0] -= 1
                return np.ones((len(texts), 2))

        register_encoder("fragile-test", Fragile)
        spec = EncoderSpec("fragile-test", 2)
        threads = [threading.Thread(target=encode, args=(spec, "query", "x")) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert peak[0] == 1


class TestPairEmbedding:
    def test_matches_oracle(self):
        spec = EncoderSpec("hash-ngram", 32, options={"ngram_max": 2})
        eq, ep = encode_pair(spec, "who won the first world cup", "uruguay won the first world cup")
        oq, op = oracle_pair("who won the first world cup", "uruguay won the first world cup", 32, 2)
        assert eq.tobytes() == oq.tobytes()
        assert ep.tobytes() == op.tobytes()

    def test_order_sensitive(self):
        spec = EncoderSpec("hash-ngram", 64)
        _, p1 = encode_pair(spec, "alpha beta", "gamma delta")
        _, p2 = encode_pair(spec, "gamma delta", "alpha beta")
        assert not np.array_equal(p1, p2)

    def test_query_position_embedding_ignores_document(self):
        spec = EncoderSpec("hash-ngram", 64)
        q1, _ = encode_pair(spec, "alpha beta", "gamma")
        q2, _ = encode_pair(spec, "alpha beta", "delta epsilon")
        np.testing.assert_array_equal(q1, q2)

    def test_fallback_without_position_access(self):
        class Plain(Encoder):
            dim = 1

            def __init__(self, spec):
                pass

            def embed(self, texts):
                return np.array([[float(len(t))] for t in texts])

        enc = Plain(None)
        eq, ep = enc.embed_pair("ab", "cde")
        assert eq[0] == 2.0
        assert ep[0] == float(len("ab [SEP] cde"))


class TestHttpEmbedder:
    def test_wire_contract(self, stub_server, monkeypatch):
        monkeypatch.setenv("REWARD_RAG_API_KEY", "secret")
        stub_server.embed = lambda texts: [[float(len(t)), 1.0, 0.0] for t in texts]
        spec = EncoderSpec("http", 3, options={"url": stub_server.url + "/v1/embeddings", "model": "m",
                                                 "batch_size": 2})
        out = encode_many(spec, "document", ["a", "bbb", "cc"])
        np.testing.assert_array_equal(out[:, 0], [1, 3, 2])
        bodies = [r["body"] for r in stub_server.requests]
        assert bodies == [{"model": "m", "input": ["a", "bbb"]}, {"model": "m", "input": ["cc"]}]
        assert stub_server.requests[0]["auth"] == "Bearer secret"

    def test_dim_mismatch(self, stub_server):
        stub_server.embed = lambda texts: [[1.0, 2.0] for _ in texts]
        spec = EncoderSpec("http", 3, options={"url": stub_server.url + "/v1/embeddings", "model": "m"})
        with pytest.raises(EncoderError, match="dim"):
            encode(spec, "query", "x")

    def test_unreachable_endpoint(self):
        spec = EncoderSpec("http", 3, options={"url": "http://127.0.0.1:9/v1/embeddings", "model": "m",
                                                 "timeout": 0.5})
        with pytest.raises(EncoderError):
            encode(spec, "query", "x")


class TestCosine:
    def test_examples(self):
        assert cosine_sim([1, 0], [1, 0]) == 1.0
        assert cosine_sim([1, 0], [0, 1]) == 0.0
        assert cosine_sim([1, 2, 3], [4, 5, 6]) == pytest.approx(32 / (math.sqrt(14) * math.sqrt(77)), abs=1e-12)
        assert cosine_sim([1, 2, 3], [4, 5, 6]) == pytest.approx(0.974631846, abs=1e-9)

    def test_accepts_encoded_text(self):
        a = EncodedText(np.array([3.0, 4.0]), "query")
        assert cosine_sim(a, a.unit()) == pytest.approx(1.0)
        assert np.linalg.norm(a.unit().vector) == pytest.approx(1.0, abs=1e-12)

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            cosine_sim([1, 0], [1, 0, 0])
        with pytest.raises(DegenerateInputError):
            cosine_sim([0, 0], [1, 0])
        with pytest.raises(DegenerateInputError):
            EncodedText(np.zeros(3), "query").unit()

    vectors = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=3).filter(
        lambda v: np.linalg.norm(v) > 1e-3)

    @given(vectors)
    def test_self_similarity(self, v):
        assert abs(cosine_sim(v, v) - 1.0) < 1e-9

    @given(vectors, vectors)
    def test_symmetric_and_bounded(self, a, b):
        assert cosine_sim(a, b) == cosine_sim(b, a)
        assert abs(cosine_sim(a, b)) <= 1.0 + 1e-12

    @settings(max_examples=50)
    @given(vectors, vectors, st.floats(1e-3, 1e3))
    def test_scale_invariant(self, a, b, c):
        assert abs(cosine_sim(np.multiply(a, c), b) - cosine_sim(a, b)) < 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.text(alphabet="abc xyz", min_size=1, max_size=30).filter(lambda s: s.strip()))
    def test_encode_is_pure(self, text):
        spec = EncoderSpec("hash-ngram", 16)
        fresh = HashFeaturizer(spec).embed([text])[0]
        np.testing.assert_array_equal(encode(spec, "query", text).vector, fresh)
        np.testing.assert_array_equal(get_encoder(spec).embed([text])[0], fresh)
