"""Contrastive fine-tuning of an affine retrieval adapter with InfoNCE.

The base encoder stays frozen.  Its unit-normalized outputs pass through one
shared affine map ``y = A x + b`` for both queries and documents; similarity
is cosine on ``y``.  For query ``i`` the candidate set is every distinct
document in the batch (its own positive and hard negatives, plus the
positives and hard negatives of the other queries), with temperature-scaled
logits ``sim / tau``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .container import read_container, write_container
from .embedding import Encoder, EncoderSpec, encode_many
from .errors import DegenerateInputError, EncoderError, InvalidInputError, NumericError

ADAPTER_MAGIC = b"RRAGADP\x00"
ADAPTER_VERSION = 1


@dataclass
class AdapterParams:
    A: np.ndarray
    b: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.A.ndim != 2 or self.b.shape != (self.A.shape[0],):
            raise InvalidInputError(f"adapter shapes inconsistent: A {self.A.shape}, b {self.b.shape}")

    @property
    def dim_in(self) -> int:
        return self.A.shape[1]

    @property
    def dim_out(self) -> int:
        return self.A.shape[0]

    def copy(self) -> "AdapterParams":
        return AdapterParams(self.A.copy(), self.b.copy(), dict(self.meta))

    def project(self, x: np.ndarray) -> np.ndarray:
        return x @ self.A.T + self.b


def identity_adapter(dim_in: int, dim_out: Optional[int] = None) -> AdapterParams:
    dim_out = dim_in if dim_out is None else dim_out
    return AdapterParams(np.eye(dim_out, dim_in), np.zeros(dim_out))


def unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(n == 0):
        raise DegenerateInputError("zero-norm embedding cannot be normalized")
    return x / n


class AdapterEncoder(Encoder):
    """Base encoder followed by row normalization and the affine adapter."""

    pair_position_access = False

    def __init__(self, base: Encoder, adapter: AdapterParams):
        if adapter.dim_in != base.dim:
            raise EncoderError(f"adapter expects dim {adapter.dim_in}, base encoder has {base.dim}")
        self.base = base
        self.adapter = adapter
        self.dim = adapter.dim_out
        self.thread_safe = base.thread_safe

    def embed(self, texts):
        return self.adapter.project(unit_rows(self.base.embed(texts)))


@dataclass
class ContrastiveBatch:
    """Base embeddings for a batch of triples.

    ``doc_vecs`` holds each distinct doc_id once (first-appearance order);
    ``pos_index[i]`` is the row of query ``i``'s positive.
    """

    q_vecs: np.ndarray
    doc_vecs: np.ndarray
    pos_index: np.ndarray
    doc_ids: list = field(default_factory=list)

    @classmethod
    def from_triples(cls, triples, q_lookup, d_lookup) -> "ContrastiveBatch":
        triples = list(triples)
        if not triples:
            raise InvalidInputError("contrastive batch is empty")
        doc_ids, slot = [], {}
        for t in triples:
            for d in [t.positive_doc_id, *t.negative_doc_ids]:
                if d not in slot:
                    slot[d] = len(doc_ids)
                    doc_ids.append(d)
        q = np.stack([q_lookup[t.query_id] for t in triples])
        docs = np.stack([d_lookup[d] for d in doc_ids])
        pos = np.array([slot[t.positive_doc_id] for t in triples], dtype=np.int64)
        return cls(q, docs, pos, doc_ids)


def info_nce_from_similarities(sim_pos, sim_negs, tau: float = 0.01) -> float:
    """Single-query InfoNCE from raw similarities, log-sum-exp stabilized."""
    if tau <= 0:
        raise InvalidInputError(f"tau must be > 0, got {tau}")
    logits = np.concatenate([[sim_pos], np.asarray(sim_negs, dtype=np.float64)]) / tau
    return float(_nce_rows(logits[None, :], np.array([0]))[0])


def _nce_rows(s, pos_index):
    """Per-row ``logsumexp(s) - s[pos]``, written as ``m + log(e^-m + sum e^(d-m))``
    over the gaps ``d = s_neg - s_pos`` with ``m = max(0, d)``.  When the positive
    leads (``m = 0``) this is ``log1p(sum e^d)``, which stays strictly positive
    even when the sum underflows ``1 + x``."""
    rows = np.arange(len(pos_index))
    d = s - s[rows, pos_index][:, None]
    d[rows, pos_index] = -np.inf
    m = np.maximum(d.max(axis=1), 0.0)
    rest = np.exp(d - m[:, None]).sum(axis=1)
    return np.where(m > 0, m + np.log(np.exp(-m) + rest), np.log1p(rest))


def _logits(batch: ContrastiveBatch, params: AdapterParams, tau: float):
    if tau <= 0:
        raise InvalidInputError(f"tau must be > 0, got {tau}")
    yq = params.project(batch.q_vecs)
    yd = params.project(batch.doc_vecs)
    nq = np.linalg.norm(yq, axis=1, keepdims=True)
    nd = np.linalg.norm(yd, axis=1, keepdims=True)
    if np.any(nq == 0) or np.any(nd == 0):
        raise NumericError("adapter mapped an embedding to the zero vector")
    qh, dh = yq / nq, yd / nd
    s = (qh @ dh.T) / tau
    return s, qh, dh, nq, nd


def _softmax_rows(s):
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    z = e.sum(axis=1, keepdims=True)
    return e / z, (m + np.log(z))[:, 0]


def info_nce_loss(batch: ContrastiveBatch, params: AdapterParams, tau: float = 0.01) -> float:
    s, *_ = _logits(batch, params, tau)
    loss = float(np.mean(_nce_rows(s, batch.pos_index)))
    if not np.isfinite(loss):
        raise NumericError("non-finite InfoNCE loss")
    return loss


def info_nce_grad(batch: ContrastiveBatch, params: AdapterParams, tau: float = 0.01) -> AdapterParams:
    """Gradient of :func:`info_nce_loss` over ``A`` and ``b``.

    ``dL/ds = (softmax(s) - onehot(pos)) / B``; back through ``s = qh dh^T / tau``
    and through row normalization ``yh = y/|y|``, whose Jacobian-vector
    product is ``(g - yh (yh . g)) / |y|``.
    """
    s, qh, dh, nq, nd = _logits(batch, params, tau)
    p, _ = _softmax_rows(s)
    rows = np.arange(len(batch.pos_index))
    p[rows, batch.pos_index] -= 1.0
    g = p / len(rows)
    g_qh = (g @ dh) / tau
    g_dh = (g.T @ qh) / tau
    g_yq = (g_qh - qh * np.sum(qh * g_qh, axis=1, keepdims=True)) / nq
    g_yd = (g_dh - dh * np.sum(dh * g_dh, axis=1, keepdims=True)) / nd
    dA = g_yq.T @ batch.q_vecs + g_yd.T @ batch.doc_vecs
    db = g_yq.sum(axis=0) + g_yd.sum(axis=0)
    return AdapterParams(dA, db)


@dataclass
class AdapterTrainConfig:
    lr: float = 0.05
    epochs: int = 10
    batch_size: int = 16
    tau: float = 0.01
    seed: int = 0
    momentum: float = 0.0
    dim_out: Optional[int] = None


@dataclass
class AdapterTrainResult:
    params: AdapterParams
    history: list  # [(epoch, mean batch loss)]


def base_lookups(triples, queries, corpus, base_spec: EncoderSpec):
    """Unit-normalized frozen base embeddings for every id the triples mention."""
    qids = sorted({t.query_id for t in triples})
    dids = sorted({d for t in triples for d in [t.positive_doc_id, *t.negative_doc_ids]})
    qv = unit_rows(encode_many(base_spec, "query", [queries[q].text for q in qids]))
    dv = unit_rows(encode_many(base_spec, "document", [corpus.text(d) for d in dids]))
    return dict(zip(qids, qv)), dict(zip(dids, dv))


def fit_adapter(triples, q_lookup, d_lookup, config: AdapterTrainConfig,
                init: Optional[AdapterParams] = None) -> AdapterTrainResult:
    triples = list(triples)
    if not triples:
        raise InvalidInputError("no triples to train on")
    dim_in = len(next(iter(q_lookup.values())))
    params = init.copy() if init is not None else identity_adapter(dim_in, config.dim_out)
    rng = np.random.default_rng(config.seed)
    vel_A, vel_b = np.zeros_like(params.A), np.zeros_like(params.b)
    history = []
    last_good = params.copy()
    bs = max(1, int(config.batch_size))
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(triples))
        losses = []
        for start in range(0, len(triples), bs):
            batch = ContrastiveBatch.from_triples([triples[i] for i in order[start : start + bs]], q_lookup, d_lookup)
            try:
                losses.append(info_nce_loss(batch, params, config.tau))
                g = info_nce_grad(batch, params, config.tau)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}: {exc}", checkpoint=last_good) from exc
            vel_A = config.momentum * vel_A + g.A
            vel_b = config.momentum * vel_b + g.b
            params.A = params.A - config.lr * vel_A
            params.b = params.b - config.lr * vel_b
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss) or not (np.all(np.isfinite(params.A)) and np.all(np.isfinite(params.b))):
            raise NumericError(f"non-finite adapter loss at epoch {epoch}", checkpoint=last_good)
        history.append((epoch, mean_loss))
        last_good = params.copy()
    return AdapterTrainResult(params, history)


def train_adapter(triples, queries, corpus, base_spec: EncoderSpec, config: AdapterTrainConfig) -> AdapterTrainResult:
    """Train on mined triples; ``queries`` maps query_id to QueryRecord."""
    triples = list(triples)
    if not triples:
        raise InvalidInputError("no triples to train on")
    q_lookup, d_lookup = base_lookups(triples, queries, corpus, base_spec)
    result = fit_adapter(triples, q_lookup, d_lookup, config)
    result.params.meta = {"base_fingerprint": base_spec.fingerprint(), "tau": config.tau,
                          "epochs": config.epochs, "n_triples": len(triples)}
    return result


def save_adapter(params: AdapterParams, path) -> None:
    write_container(path, ADAPTER_MAGIC, ADAPTER_VERSION, [params.dim_in, params.dim_out], params.meta,
                    [params.A, params.b], "float64")


def load_adapter(path) -> AdapterParams:
    _, _, meta, (A, b) = read_container(path, ADAPTER_MAGIC, {ADAPTER_VERSION}, "float64",
                                        lambda f: [(f[1], f[0]), (f[1],)])
    return AdapterParams(A, b, meta)
