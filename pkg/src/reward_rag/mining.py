"""Reward-thresholded mining of (query, positive, hard negatives) triples."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError
from .reward import check_head, score_pairs
from .util import read_jsonl, write_jsonl
from .vecindex import search_many


@dataclass
class MinedTriple:
    query_id: str
    positive_doc_id: str
    negative_doc_ids: list
    positive_reward: float
    negative_rewards: list

    def violations(self, pos_threshold: float) -> list:
        out = []
        if self.positive_reward < pos_threshold:
            out.append("positive reward below threshold")
        if any(r >= pos_threshold for r in self.negative_rewards):
            out.append("negative reward at or above threshold")
        if self.positive_doc_id in self.negative_doc_ids:
            out.append("positive listed among negatives")
        if len(set(self.negative_doc_ids)) != len(self.negative_doc_ids):
            out.append("duplicate negatives")
        if len(self.negative_doc_ids) != len(self.negative_rewards):
            out.append("negative ids and rewards differ in length")
        return out


@dataclass
class MiningConfig:
    top_n: int = 50
    pos_threshold: float = 0.75
    n_hard_neg: int = 5
    seed: int = 0


@dataclass
class MiningResult:
    triples: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # [{"query_id", "reason"}]


def select_triple(query_id: str, ranked, pos_threshold: float, n_hard_neg: int):
    """Pick positive and hard negatives from ``[(doc_id, similarity, reward), ...]``.

    ``ranked`` is in retrieval order.  Returns a triple or a skip reason.
    """
    above = [(doc_id, r) for doc_id, _, r in ranked if r >= pos_threshold]
    if not above:
        return None, "no-positive"
    # highest reward; ties by doc_id ascending
    pos_id, pos_r = min(above, key=lambda x: (-x[1], x[0]))
    negs = [(doc_id, r) for doc_id, _, r in ranked if r < pos_threshold][:n_hard_neg]
    if not negs:
        return None, "no-hard-negative"
    return MinedTriple(query_id, pos_id, [d for d, _ in negs], float(pos_r), [float(r) for _, r in negs]), None


def mine_triples(queries, index, reward_params, spec, config: MiningConfig, corpus) -> MiningResult:
    """Retrieve ``top_n`` per query, score with the reward head, threshold.

    Output is sorted by query_id; the skipped list accounts for every query
    that produced no triple.
    """
    if config.top_n < 1 + config.n_hard_neg:
        raise InvalidInputError(f"top_n ({config.top_n}) must be >= 1 + n_hard_neg ({1 + config.n_hard_neg})")
    check_head(reward_params, spec)
    queries = sorted(queries, key=lambda q: q.query_id)
    result = MiningResult()
    if not queries:
        return result
    all_hits = search_many(index, [q.text for q in queries], config.top_n)
    for q, hits in zip(queries, all_hits):
        scored = score_pairs([(q, h.doc_id, corpus.text(h.doc_id)) for h in hits], reward_params, spec)
        ranked = [(h.doc_id, h.score, r) for h, (_, _, r) in zip(hits, scored)]
        triple, reason = select_triple(q.query_id, ranked, config.pos_threshold, config.n_hard_neg)
        if triple is None:
            result.skipped.append({"query_id": q.query_id, "reason": reason})
        else:
            result.triples.append(triple)
    return result


def mean_topk_reward(queries, index, reward_params, spec, corpus, k: int = 5) -> float:
    """Mean head reward of each query's top-``k`` retrieved documents."""
    queries = list(queries)
    hits = search_many(index, [q.text for q in queries], k)
    rewards = []
    for q, hs in zip(queries, hits):
        rewards.extend(r for _, _, r in score_pairs([(q, h.doc_id, corpus.text(h.doc_id)) for h in hs],
                                                     reward_params, spec))
    return float(np.mean(rewards))


def write_triples(triples, path) -> None:
    write_jsonl(path, (asdict(t) for t in triples))


def read_triples(path) -> list:
    return [MinedTriple(**row) for row in read_jsonl(path)]
