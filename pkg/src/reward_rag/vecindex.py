"""Exact cosine top-k retrieval over an embedded corpus, plus persistence.

Vectors are held as float32 (the on-disk precision) so a save/load round trip
is bit-exact; scores are computed in float64.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from .container import read_container, write_container
from .embedding import EncoderSpec, encode_many
from .errors import DegenerateInputError, EncoderError, IntegrityError, InvalidInputError

INDEX_MAGIC = b"RRAGIDX\x00"
INDEX_VERSION = 1
TIE_DECIMALS = 12


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: Optional[str] = None


class Corpus:
    def __init__(self, documents):
        self.documents = list(documents)
        if not self.documents:
            raise InvalidInputError("corpus is empty")
        self._by_id = {}
        for doc in self.documents:
            if not doc.text or not doc.text.strip():
                raise InvalidInputError(f"document {doc.doc_id!r} has empty text")
            if doc.doc_id in self._by_id:
                raise InvalidInputError(f"duplicate doc_id {doc.doc_id!r}")
            self._by_id[doc.doc_id] = doc

    def __len__(self):
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def __contains__(self, doc_id):
        return doc_id in self._by_id

    def get(self, doc_id: str) -> Document:
        try:
            return self._by_id[doc_id]
        except KeyError:
            raise InvalidInputError(f"unknown doc_id {doc_id!r}") from None

    def text(self, doc_id: str) -> str:
        return self.get(doc_id).text

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for d in self.documents:
            h.update(json.dumps([d.doc_id, d.title, d.text], ensure_ascii=False).encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


def read_corpus_jsonl(path, skip_bad: bool = False):
    """Parse a corpus file of ``{"id", "title", "text"}`` lines.

    Returns ``(corpus, problems)`` where ``problems`` lists ``(line_no, reason)``
    for rejected lines.  Without ``skip_bad`` any problem raises.
    """
    docs, problems, seen = [], [], set()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            reason = None
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                obj, reason = None, f"invalid JSON: {exc.msg}"
            if obj is not None:
                if not isinstance(obj, dict):
                    reason = "line is not a JSON object"
                elif not isinstance(obj.get("id"), str) or not obj["id"]:
                    reason = "'id' must be a non-empty string"
                elif not isinstance(obj.get("text"), str) or not obj["text"].strip():
                    reason = "'text' must be a non-empty string"
                elif obj.get("title") is not None and not isinstance(obj["title"], str):
                    reason = "'title' must be a string or null"
                elif obj["id"] in seen:
                    reason = f"duplicate id {obj['id']!r}"
            if reason:
                problems.append((line_no, reason))
                continue
            seen.add(obj["id"])
            docs.append(Document(obj["id"], obj["text"], obj.get("title")))
    if problems and not skip_bad:
        detail = "; ".join(f"line {n}: {r}" for n, r in problems[:10])
        raise InvalidInputError(f"{path}: {len(problems)} bad line(s): {detail}")
    return Corpus(docs), problems


def write_corpus_jsonl(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in corpus:
            f.write(json.dumps({"id": d.doc_id, "title": d.title, "text": d.text}, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class RankedHit:
    doc_id: str
    score: float
    rank: int


@dataclass
class RetrievalIndex:
    encoder_spec: EncoderSpec
    doc_ids: list
    vectors: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape != (len(self.doc_ids), self.encoder_spec.dim):
            raise InvalidInputError(
                f"index vectors shape {self.vectors.shape} inconsistent with "
                f"{len(self.doc_ids)} ids and dim {self.encoder_spec.dim}"
            )
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise InvalidInputError("index doc_ids are not unique")
        self._unit = None
        self._id_order = None

    def __len__(self):
        return len(self.doc_ids)

    def unit_vectors(self) -> np.ndarray:
        if self._unit is None:
            v = self.vectors.astype(np.float64)
            norms = np.linalg.norm(v, axis=1)
            if np.any(norms == 0):
                bad = [self.doc_ids[i] for i in np.flatnonzero(norms == 0)[:5]]
                raise DegenerateInputError(f"zero-norm document vectors: {bad}")
            self._unit = v / norms[:, None]
        return self._unit

    def id_order(self) -> np.ndarray:
        """Position of each doc_id in ascending doc_id order (tie-break key)."""
        if self._id_order is None:
            order = np.empty(len(self.doc_ids), dtype=np.int64)
            order[sorted(range(len(self.doc_ids)), key=self.doc_ids.__getitem__)] = np.arange(len(self.doc_ids))
            self._id_order = order
        return self._id_order


def build_index(corpus: Corpus, spec: EncoderSpec, batch_size: int = 256) -> RetrievalIndex:
    if len(corpus) == 0:
        raise InvalidInputError("cannot index an empty corpus")
    chunks, ids = [], []
    docs = corpus.documents
    for start in range(0, len(docs), batch_size):
        batch = docs[start : start + batch_size]
        try:
            chunks.append(encode_many(spec, "document", [d.text for d in batch]))
        except EncoderError as exc:
            raise EncoderError(
                f"while encoding documents {batch[0].doc_id!r}..{batch[-1].doc_id!r}: {exc}"
            ) from exc
        ids.extend(d.doc_id for d in batch)
    meta = {
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "corpus_hash": corpus.content_hash(),
        "version": INDEX_VERSION,
        "query_instruction": spec.query_instruction,
        "document_instruction": spec.document_instruction,
    }
    return RetrievalIndex(spec, ids, np.vstack(chunks), meta)


def _rank(index: RetrievalIndex, scores: np.ndarray, k: int):
    # score desc, then doc_id asc; lexsort's last key is primary.  Rounding
    # makes mathematically equal cosines tie despite last-bit float noise.
    order = np.lexsort((index.id_order(), -np.round(scores, TIE_DECIMALS)))
    ids = index.doc_ids
    return [RankedHit(ids[i], float(scores[i]), r) for r, i in enumerate(order[:k], 1)]


def search_vector(index: RetrievalIndex, query_vec: np.ndarray, k: int):
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise InvalidInputError("index is empty")
    q = np.asarray(query_vec, dtype=np.float64)
    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise DegenerateInputError("query encodes to a zero vector")
    scores = np.clip(index.unit_vectors() @ (q / qn), -1.0, 1.0)
    return _rank(index, scores, min(k, len(index)))


def search(index: RetrievalIndex, query: str, k: int):
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    return search_vector(index, encode_many(index.encoder_spec, "query", [query])[0], k)


def search_many(index: RetrievalIndex, queries, k: int):
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    qv = encode_many(index.encoder_spec, "query", list(queries))
    return [search_vector(index, v, k) for v in qv]


def save_index(index: RetrievalIndex, path) -> None:
    # created_at stays out of the file so identical inputs give identical bytes
    meta = {
        "encoder_spec": index.encoder_spec.to_dict(),
        "doc_ids": list(index.doc_ids),
        "metadata": {k: v for k, v in index.metadata.items() if k != "created_at"},
    }
    write_container(
        path, INDEX_MAGIC, INDEX_VERSION, [index.encoder_spec.dim, len(index)], meta, [index.vectors], "float32"
    )


def load_index(path) -> RetrievalIndex:
    _, (dim, count), meta, (vectors,) = read_container(
        path, INDEX_MAGIC, {INDEX_VERSION}, "float32", lambda f: [(f[1], f[0])]
    )
    spec = EncoderSpec.from_dict(meta["encoder_spec"])
    if spec.dim != dim or len(meta["doc_ids"]) != count:
        raise IntegrityError(f"{path}: header disagrees with metadata")
    return RetrievalIndex(spec, meta["doc_ids"], vectors, meta["metadata"])
