"""Topic-clustered synthetic retrieval data with planted relevance.

Each topic owns a few *core* terms, some *peripheral* terms and one answer
term.  Answer-bearing documents (grade 2) are dense in core terms and
mention the answer; related documents (grade 1) lean on peripheral terms.
Queries use core terms only.  ``noise`` is the fraction of every text drawn
from a shared Zipf-distributed background vocabulary, which is what makes
raw lexical similarity unreliable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .critic import QueryRecord
from .evalkit import Qrels
from .vecindex import Corpus, Document

_ONSETS = list("bcdfghjklmnprstvz") + ["ch", "sh", "th", "br", "tr", "st", "pl", "gr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "ea"]


@dataclass
class SyntheticConfig:
    n_topics: int = 50
    docs_per_topic: int = 40
    answer_docs_per_topic: int = 8
    queries_per_topic: int = 32
    test_queries_per_topic: int = 2
    core_terms: int = 6
    peripheral_terms: int = 8
    common_terms: int = 300
    doc_len: int = 40
    query_core: int = 3
    noise: float = 0.7
    query_noise: Optional[float] = 0.3  # background share of queries; None means ``noise``
    seed: int = 1


@dataclass
class SyntheticDataset:
    corpus: Corpus
    queries: list       # training split
    test_queries: list  # held-out split, same topics
    qrels: Qrels        # covers both splits
    topic_of: dict      # doc_id / query_id -> topic index


def _words(rng, n, taken):
    out = []
    while len(out) < n:
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(int(rng.integers(2, 4))))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def make_synthetic_dataset(config: SyntheticConfig = SyntheticConfig()) -> SyntheticDataset:
    c = config
    if not 0.0 <= c.noise < 1.0:
        raise ValueError("noise must lie in [0, 1)")
    if c.answer_docs_per_topic > c.docs_per_topic or c.query_core > c.core_terms:
        raise ValueError("inconsistent synthetic sizes")
    rng = np.random.default_rng(c.seed)
    taken = set()
    common = _words(rng, c.common_terms, taken)
    zipf = 1.0 / np.arange(1, c.common_terms + 1)
    zipf /= zipf.sum()
    topics = []
    for _ in range(c.n_topics):
        topics.append({
            "core": _words(rng, c.core_terms, taken),
            "peripheral": _words(rng, c.peripheral_terms, taken),
        })
    # answers are matched by substring, so none may occur inside another word
    for t in topics:
        while True:
            cand = _words(rng, 1, taken)[0]
            if not any(cand in w or w in cand for w in taken if w != cand):
                t["answer"] = cand
                break

    def background(n):
        return [common[i] for i in rng.choice(c.common_terms, size=n, p=zipf)]

    def topical(t, n, core_share):
        n_core = int(round(n * core_share))
        return ([t["core"][i] for i in rng.integers(0, c.core_terms, n_core)]
                + [t["peripheral"][i] for i in rng.integers(0, c.peripheral_terms, n - n_core)])

    raw_docs = []  # (topic, grade, text)
    n_topic_tokens = max(2, int(round(c.doc_len * (1.0 - c.noise))))
    for ti, t in enumerate(topics):
        for j in range(c.docs_per_topic):
            if j < c.answer_docs_per_topic:
                toks = [t["answer"]] + topical(t, n_topic_tokens - 1, 0.7)
                grade = 2
            else:
                toks = topical(t, n_topic_tokens, 0.25)
                grade = 1
            toks += background(c.doc_len - len(toks))
            rng.shuffle(toks)
            raw_docs.append((ti, grade, " ".join(toks)))

    ids = rng.permutation(len(raw_docs))
    docs, grades_by_topic, topic_of = [], [dict() for _ in topics], {}
    for (ti, grade, text), n in zip(raw_docs, ids):
        doc_id = f"doc{n:05d}"
        docs.append(Document(doc_id, text))
        grades_by_topic[ti][doc_id] = grade
        topic_of[doc_id] = ti
    docs.sort(key=lambda d: d.doc_id)

    qn = c.noise if c.query_noise is None else c.query_noise
    if not 0.0 <= qn < 1.0:
        raise ValueError("query_noise must lie in [0, 1)")
    n_common_q = int(round(c.query_core * qn / (1.0 - qn)))

    def make_queries(prefix, per_topic):
        raw = []
        for ti, t in enumerate(topics):
            for _ in range(per_topic):
                core = [t["core"][i] for i in rng.choice(c.core_terms, size=c.query_core, replace=False)]
                toks = core + background(n_common_q)
                rng.shuffle(toks)
                raw.append((ti, " ".join(toks), t["answer"]))
        perm = rng.permutation(len(raw))
        out = []
        for (ti, text, ans), n in zip(raw, perm):
            out.append((ti, QueryRecord(f"{prefix}{n:05d}", text, (ans,))))
        out.sort(key=lambda x: x[1].query_id)
        return out

    train = make_queries("q", c.queries_per_topic)
    test = make_queries("t", c.test_queries_per_topic)
    qrels = Qrels()
    for ti, q in train + test:
        topic_of[q.query_id] = ti
        for doc_id, g in grades_by_topic[ti].items():
            qrels.add(q.query_id, doc_id, g)
    return SyntheticDataset(Corpus(docs), [q for _, q in train], [q for _, q in test], qrels, topic_of)
