"""Retrieval and QA metrics: NDCG@k, Recall@k, Exact Match, accuracy."""

from __future__ import annotations

import math
import re
import string
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import InvalidInputError


class Qrels:
    """Graded judgments ``(query_id, doc_id) -> grade``."""

    def __init__(self, grades=None):
        self._rows = defaultdict(dict)
        for (qid, did), g in (grades or {}).items():
            self.add(qid, did, g)

    def add(self, query_id: str, doc_id: str, grade) -> None:
        g = int(grade)
        if g < 0:
            raise InvalidInputError(f"negative grade {grade!r} for ({query_id}, {doc_id})")
        self._rows[query_id][doc_id] = g

    def row(self, query_id: str) -> dict:
        return dict(self._rows.get(query_id, {}))

    def query_ids(self):
        return sorted(self._rows)

    def items(self):
        for qid in sorted(self._rows):
            for did in sorted(self._rows[qid]):
                yield qid, did, self._rows[qid][did]

    def __len__(self):
        return sum(len(r) for r in self._rows.values())

    def validate(self, doc_ids=None, query_ids=None) -> None:
        for qid, did, _ in self.items():
            if query_ids is not None and qid not in query_ids:
                raise InvalidInputError(f"qrels reference unknown query {qid!r}")
            if doc_ids is not None and did not in doc_ids:
                raise InvalidInputError(f"qrels reference unknown document {did!r}")


def read_qrels(path) -> Qrels:
    q = Qrels()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise InvalidInputError(f"{path}:{line_no}: expected 3 tab-separated fields")
            try:
                q.add(parts[0], parts[1], int(parts[2]))
            except ValueError:
                raise InvalidInputError(f"{path}:{line_no}: grade {parts[2]!r} is not an integer") from None
    return q


def write_qrels(qrels: Qrels, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid, did, g in qrels.items():
            f.write(f"{qid}\t{did}\t{g}\n")


def _dcg(gains) -> float:
    return sum((2.0 ** g - 1.0) / math.log2(i + 2) for i, g in enumerate(gains))


def ndcg_at_k(ranking, qrels_row: dict, k: int = 10) -> float:
    """Exponential-gain NDCG; 0 when the row has no positive grade."""
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    dcg = _dcg([qrels_row.get(d, 0) for d in list(ranking)[:k]])
    idcg = _dcg(sorted(qrels_row.values(), reverse=True)[:k])
    return dcg / idcg if idcg > 0 else 0.0


def recall_at_k(ranking, qrels_row: dict, k: int) -> float:
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    relevant = {d for d, g in qrels_row.items() if g >= 1}
    if not relevant:
        return 0.0
    return len(relevant & set(list(ranking)[:k])) / len(relevant)


_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    text = text.lower().translate(_PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(prediction: str, gold_answers) -> int:
    p = normalize_answer(prediction)
    return int(any(p == normalize_answer(g) for g in gold_answers))


def lenient_match(prediction: str, gold_answers) -> int:
    """Normalized gold answer contained in the normalized prediction."""
    p = normalize_answer(prediction)
    return int(any((g := normalize_answer(a)) and g in p for a in gold_answers))


def accuracy(predictions, golds) -> float:
    predictions, golds = list(predictions), list(golds)
    if len(predictions) != len(golds):
        raise InvalidInputError(f"length mismatch: {len(predictions)} predictions vs {len(golds)} golds")
    if not predictions:
        raise InvalidInputError("accuracy of an empty list is undefined")
    return sum(p == g for p, g in zip(predictions, golds)) / len(predictions)


METRICS = {"ndcg": ndcg_at_k, "recall": recall_at_k}


@dataclass
class EvalReport:
    per_query: dict
    metric: str
    k: int
    encoder_id: str = ""
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_query.values()))) if self.per_query else 0.0

    def to_dict(self, with_timestamp: bool = True) -> dict:
        d = {
            "metric": self.metric,
            "k": self.k,
            "encoder_id": self.encoder_id,
            "aggregate": self.mean,
            "per_query": [{"query_id": q, "value": v} for q, v in sorted(self.per_query.items())],
            **self.extra,
        }
        if with_timestamp:
            d["timestamp"] = self.timestamp
        return d


def evaluate_rankings(rankings: dict, qrels: Qrels, metric: str = "ndcg", k: int = 10, encoder_id: str = "") -> EvalReport:
    if metric not in METRICS:
        raise InvalidInputError(f"metric must be one of {sorted(METRICS)}, got {metric!r}")
    fn = METRICS[metric]
    per = {qid: fn(ranking, qrels.row(qid), k) for qid, ranking in rankings.items()}
    return EvalReport(per, metric, k, encoder_id)


def evaluate_retrieval(index, queries, qrels: Qrels, metric: str = "ndcg", k: int = 10) -> EvalReport:
    from .vecindex import search_many

    queries = list(queries)
    hits = search_many(index, [q.text for q in queries], k)
    rankings = {q.query_id: [h.doc_id for h in hs] for q, hs in zip(queries, hits)}
    return evaluate_rankings(rankings, qrels, metric, k, index.encoder_spec.fingerprint())
