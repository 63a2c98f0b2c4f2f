"""Text encoders, instruction prefixing and cosine similarity.

Encoders are plugins looked up by ``EncoderSpec.name``.  Two ship with the
package:

* ``hash-ngram`` -- a deterministic signed-hashing bag-of-ngrams featurizer,
  used for offline runs and tests;
* ``http`` -- a client for an embeddings endpoint speaking
  ``POST {model, input: [texts]} -> {data: [{embedding: [...]}]}``.

A third name, ``composed``, wraps a base encoder with a trained projection
adapter (see :mod:`reward_rag.finetune`).
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, EncoderError, InvalidInputError, RewardRagError

Role = Literal["query", "document"]
ROLES = ("query", "document")
POOLINGS = ("first-position", "last-position", "mean")

CLS, SEP, EOS = "[CLS]", "[SEP]", "[EOS]"


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    dim: int
    pooling: str = "last-position"
    query_instruction: str = ""
    document_instruction: str = ""
    options: dict = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim <= 0:
            raise InvalidInputError(f"encoder dim must be a positive integer, got {self.dim!r}")
        if self.pooling not in POOLINGS:
            raise InvalidInputError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")

    def instruction(self, role: str) -> str:
        if role == "query":
            return self.query_instruction
        if role == "document":
            return self.document_instruction
        raise InvalidInputError(f"role must be 'query' or 'document', got {role!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "pooling": self.pooling,
            "query_instruction": self.query_instruction,
            "document_instruction": self.document_instruction,
            "options": dict(self.options),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        if "base_spec" in d and "adapter_path" in d:
            return composed_spec(cls.from_dict(d["base_spec"]), d["adapter_path"], d.get("dim"))
        try:
            return cls(
                name=d["name"],
                dim=int(d["dim"]),
                pooling=d.get("pooling", "last-position"),
                query_instruction=d.get("query_instruction", ""),
                document_instruction=d.get("document_instruction", ""),
                options=dict(d.get("options", {})),
            )
        except KeyError as exc:
            raise InvalidInputError(f"encoder spec missing field {exc.args[0]!r}") from None

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def composed_spec(base: EncoderSpec, adapter_path: str, dim: Optional[int] = None) -> EncoderSpec:
    """Spec for ``base`` followed by the affine adapter stored at ``adapter_path``."""
    if dim is None:
        from .finetune import load_adapter

        dim = load_adapter(adapter_path).dim_out
    return EncoderSpec(
        name="composed",
        dim=int(dim),
        pooling=base.pooling,
        query_instruction=base.query_instruction,
        document_instruction=base.document_instruction,
        options={"base_spec": base.to_dict(), "adapter_path": str(adapter_path)},
    )


def load_encoder_spec(path) -> EncoderSpec:
    """Read a spec file; a relative ``adapter_path`` is taken relative to the file."""
    with open(path, encoding="utf-8") as f:
        d = json.load(f)
    if "adapter_path" in d and not os.path.isabs(d["adapter_path"]):
        d = {**d, "adapter_path": os.path.join(os.path.dirname(os.path.abspath(path)), d["adapter_path"])}
    return EncoderSpec.from_dict(d)


def save_encoder_spec(spec: EncoderSpec, path) -> None:
    if spec.name == "composed":
        payload = {"base_spec": spec.options["base_spec"], "adapter_path": spec.options["adapter_path"]}
    else:
        payload = spec.to_dict()
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


@dataclass(frozen=True)
class EncodedText:
    vector: np.ndarray
    source_role: str
    normalized: bool = False

    def unit(self) -> "EncodedText":
        n = float(np.linalg.norm(self.vector))
        if n == 0.0:
            raise DegenerateInputError("cannot normalize a zero vector")
        return EncodedText(self.vector / n, self.source_role, True)


@dataclass(frozen=True)
class TokenizedInput:
    """Token sequence contract: ``[CLS] ... [EOS]`` with an optional ``[SEP]``."""

    tokens: tuple
    sep_index: Optional[int] = None

    def __post_init__(self):
        if len(self.tokens) < 2 or self.tokens[0] != CLS or self.tokens[-1] != EOS:
            raise InvalidInputError("token sequence must start with [CLS] and end with [EOS]")
        if self.sep_index is not None and not 0 < self.sep_index < len(self.tokens) - 1:
            raise InvalidInputError("separator must lie strictly between the begin and end markers")


_WORD = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> list:
    return _WORD.findall(text.lower())


def with_instruction(instruction: str, text: str) -> str:
    return f"{instruction} {text}" if instruction else text


class Encoder:
    """Plugin interface.

    ``pair_position_access`` declares whether :meth:`embed_pair` pools at the
    separator position (True) or falls back to encoding the query alone.
    """

    dim: int
    thread_safe: bool = True
    pair_position_access: bool = False

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError

    def embed_pair(self, query: str, document: str):
        emb_q = self.embed([query])[0]
        emb_p = self.embed([f"{query} {SEP} {document}"])[0]
        return emb_q, emb_p


class HashFeaturizer(Encoder):
    """Signed feature hashing over word n-grams.

    Every hashed feature ``(segment, ngram)`` adds +1 or -1 to one bucket.  A
    bag model has no positional state, so first- and last-position pooling
    both return the raw bucket sums; ``mean`` divides by the feature count.

    For a ``[CLS] q [SEP] d [EOS]`` pair, the query-position embedding sees
    the query segment only, while the full-input embedding adds document
    features and one cross feature per word present in both segments.
    Segment tags make the pair embedding order-sensitive.
    """

    thread_safe = True
    pair_position_access = True

    def __init__(self, spec: EncoderSpec):
        self.dim = spec.dim
        self.pooling = spec.pooling
        self.ngram_max = int(spec.options.get("ngram_max", 2))
        self.salt = str(spec.options.get("salt", ""))
        self._buckets = {}
        if self.ngram_max < 1:
            raise InvalidInputError("ngram_max must be >= 1")

    _CACHE_MAX = 1 << 20

    def _bucket(self, key: str):
        hit = self._buckets.get(key)
        if hit is None:
            h = int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "little")
            hit = (h % self.dim, 1.0 if (h >> 63) == 0 else -1.0)
            if len(self._buckets) < self._CACHE_MAX:
                self._buckets[key] = hit
        return hit

    def _grams(self, words):
        for n in range(1, self.ngram_max + 1):
            for i in range(len(words) - n + 1):
                yield " ".join(words[i : i + n])

    def _accumulate(self, vec: np.ndarray, keys) -> int:
        count = 0
        for key in keys:
            idx, sign = self._bucket(key)
            vec[idx] += sign
            count += 1
        return count

    def _pool(self, vec: np.ndarray, count: int) -> np.ndarray:
        if self.pooling == "mean" and count:
            vec /= count
        return vec

    def featurize(self, tokenized: TokenizedInput) -> np.ndarray:
        words = list(tokenized.tokens[1:-1])
        vec = np.zeros(self.dim, dtype=np.float64)
        count = self._accumulate(vec, (f"{self.salt}|t|{g}" for g in self._grams(words)))
        return self._pool(vec, count)

    def embed(self, texts):
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            out[i] = self.featurize(TokenizedInput(tuple([CLS, *tokenize(text), EOS])))
        return out

    def embed_pair(self, query: str, document: str):
        qw, dw = tokenize(query), tokenize(document)
        # validates the [CLS] q [SEP] d [EOS] contract
        TokenizedInput(tuple([CLS, *qw, SEP, *dw, EOS]), sep_index=len(qw) + 1)
        q_keys = [f"{self.salt}|q|{g}" for g in self._grams(qw)]
        d_keys = [f"{self.salt}|d|{g}" for g in self._grams(dw)]
        x_keys = [f"{self.salt}|x|{w}" for w in sorted(set(qw) & set(dw))]
        emb_q = np.zeros(self.dim)
        nq = self._accumulate(emb_q, q_keys)
        emb_p = emb_q.copy()
        n_all = nq + self._accumulate(emb_p, d_keys) + self._accumulate(emb_p, x_keys)
        return self._pool(emb_q, nq), self._pool(emb_p, n_all)


class HttpEmbedder(Encoder):
    """Embedding endpoint client; bearer token read from the environment."""

    thread_safe = True
    pair_position_access = False

    def __init__(self, spec: EncoderSpec):
        import httpx

        opts = spec.options
        if "url" not in opts or "model" not in opts:
            raise InvalidInputError("http encoder needs options.url and options.model")
        self.dim = spec.dim
        self.url = opts["url"]
        self.model = opts["model"]
        self.batch_size = int(opts.get("batch_size", 64))
        token = os.environ.get(opts.get("api_key_env", "REWARD_RAG_API_KEY"), "")
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(headers=headers, timeout=float(opts.get("timeout", 60.0)))

    def embed(self, texts):
        rows = []
        for start in range(0, len(texts), self.batch_size):
            chunk = list(texts[start : start + self.batch_size])
            resp = self._client.post(self.url, json={"model": self.model, "input": chunk})
            if resp.status_code >= 400:
                raise EncoderError(f"embedding endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
            data = resp.json().get("data")
            if not isinstance(data, list) or len(data) != len(chunk):
                raise EncoderError("embedding response has wrong number of items")
            rows.extend(item["embedding"] for item in data)
        out = np.asarray(rows, dtype=np.float64).reshape(len(texts), -1)
        if out.shape[1] != self.dim:
            raise EncoderError(f"endpoint returned dim {out.shape[1]}, spec declares {self.dim}")
        return out


_REGISTRY: dict = {}
_CACHE: dict = {}
_LOCKS: dict = {}
_CACHE_LOCK = threading.RLock()


def register_encoder(name: str, factory: Callable[[EncoderSpec], Encoder]) -> None:
    _REGISTRY[name] = factory


register_encoder("hash-ngram", HashFeaturizer)
register_encoder("http", HttpEmbedder)


def _composed_factory(spec: EncoderSpec) -> Encoder:
    from .finetune import AdapterEncoder, load_adapter

    base = EncoderSpec.from_dict(spec.options["base_spec"])
    return AdapterEncoder(get_encoder(base), load_adapter(spec.options["adapter_path"]))


register_encoder("composed", _composed_factory)


def _cache_key(spec: EncoderSpec) -> str:
    key = spec.fingerprint()
    if spec.name == "composed":
        # adapter files can be retrained in place
        path = spec.options.get("adapter_path", "")
        try:
            st = os.stat(path)
            key += f":{st.st_mtime_ns}:{st.st_size}"
        except OSError:
            pass
    return key


def get_encoder(spec: EncoderSpec) -> Encoder:
    key = _cache_key(spec)
    with _CACHE_LOCK:
        enc = _CACHE.get(key)
        if enc is None:
            factory = _REGISTRY.get(spec.name)
            if factory is None:
                raise InvalidInputError(f"unknown encoder plugin {spec.name!r}; known: {sorted(_REGISTRY)}")
            try:
                enc = factory(spec)
            except RewardRagError:
                raise
            except Exception as exc:
                raise EncoderError(f"{spec.name}: {exc}") from exc
            _CACHE[key] = enc
            _LOCKS[key] = threading.Lock()
        return enc


def clear_encoder_cache() -> None:
    with _CACHE_LOCK:
        _CACHE.clear()
        _LOCKS.clear()


def _call_plugin(spec: EncoderSpec, fn, *args):
    enc = get_encoder(spec)
    lock = None if enc.thread_safe else _LOCKS[_cache_key(spec)]
    try:
        if lock is None:
            return fn(enc, *args)
        with lock:
            return fn(enc, *args)
    except RewardRagError:
        raise
    except Exception as exc:
        raise EncoderError(f"{spec.name}: {exc}") from exc


def encode_many(spec: EncoderSpec, role: str, texts: Sequence[str]) -> np.ndarray:
    """Encode a batch; returns an ``(n, spec.dim)`` float64 array."""
    instruction = spec.instruction(role)
    for t in texts:
        if not isinstance(t, str) or not t.strip():
            raise InvalidInputError("cannot encode empty text")
    prefixed = [with_instruction(instruction, t) for t in texts]
    out = np.asarray(_call_plugin(spec, lambda e, xs: e.embed(xs), prefixed), dtype=np.float64)
    if out.shape != (len(texts), spec.dim):
        raise EncoderError(f"{spec.name}: produced shape {out.shape}, expected {(len(texts), spec.dim)}")
    return out


def encode(spec: EncoderSpec, role: str, text: str) -> EncodedText:
    return EncodedText(encode_many(spec, role, [text])[0], role, False)


def encode_pair(spec: EncoderSpec, query: str, document: str):
    if not query.strip() or not document.strip():
        raise InvalidInputError("pair encoding needs non-empty query and document")
    emb_q, emb_p = _call_plugin(spec, lambda e, q, d: e.embed_pair(q, d), query, document)
    emb_q = np.asarray(emb_q, dtype=np.float64)
    emb_p = np.asarray(emb_p, dtype=np.float64)
    if emb_q.shape != emb_p.shape or emb_q.ndim != 1:
        raise EncoderError(f"{spec.name}: pair embeddings have shapes {emb_q.shape}, {emb_p.shape}")
    return emb_q, emb_p


def _as_vector(x) -> np.ndarray:
    return np.asarray(x.vector if isinstance(x, EncodedText) else x, dtype=np.float64)


def cosine_sim(a, b) -> float:
    u, v = _as_vector(a), _as_vector(b)
    if u.ndim != 1 or u.shape != v.shape:
        raise InvalidInputError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine similarity undefined for a zero-norm vector")
    return float(min(1.0, max(-1.0, float(np.dot(u, v)) / (nu * nv))))
