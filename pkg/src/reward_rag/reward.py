"""Softmax-gated reward head trained with pointwise MSE on critic grades.

For a pair with query-position embedding ``eq`` and full-input embedding
``ep``::

    v     = W_v @ ep + b_v                            (k reward components)
    coeff = softmax(W_2 @ relu(W_1 @ eq + b_1) + b_2) (gate on the k-simplex)
    r     = coeff . v

Gradients are derived by hand; see :func:`reward_grad`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .container import read_container, write_container
from .embedding import EncoderSpec, encode_pair
from .errors import InvalidInputError, InvalidStateError, NumericError

log = logging.getLogger(__name__)

CKPT_MAGIC = b"RRAGRWD\x00"
CKPT_VERSION = 1
DEFAULT_LABEL_MAP = {0: 0.0, 1: 0.5, 2: 1.0}
_FIELDS = ("W_v", "b_v", "W_1", "b_1", "W_2", "b_2")


@dataclass
class PairEmbedding:
    emb_q: np.ndarray
    emb_p: np.ndarray

    def __post_init__(self):
        self.emb_q = np.asarray(self.emb_q, dtype=np.float64)
        self.emb_p = np.asarray(self.emb_p, dtype=np.float64)
        if self.emb_q.ndim != 1 or self.emb_q.shape != self.emb_p.shape:
            raise InvalidInputError(f"pair embedding shapes differ: {self.emb_q.shape} vs {self.emb_p.shape}")


@dataclass
class RewardExample:
    pair: PairEmbedding
    target: float


@dataclass
class RewardHeadParams:
    W_v: np.ndarray
    b_v: np.ndarray
    W_1: np.ndarray
    b_1: np.ndarray
    W_2: np.ndarray
    b_2: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        k, d = self.W_v.shape
        h = self.W_1.shape[0]
        expected = {"b_v": (k,), "W_1": (h, d), "b_1": (h,), "W_2": (k, h), "b_2": (k,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InvalidInputError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def d_model(self) -> int:
        return self.W_v.shape[1]

    @property
    def k(self) -> int:
        return self.W_v.shape[0]

    @property
    def h(self) -> int:
        return self.W_1.shape[0]

    def arrays(self):
        return [getattr(self, n) for n in _FIELDS]

    def copy(self) -> "RewardHeadParams":
        return RewardHeadParams(*(a.copy() for a in self.arrays()), meta=dict(self.meta))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(d_model: int, k: int = 4, h: Optional[int] = None, seed: int = 0) -> RewardHeadParams:
    """Xavier-uniform matrices, zero biases."""
    h = d_model if h is None else h
    if min(d_model, k, h) < 1:
        raise InvalidInputError("d_model, k and h must all be >= 1")
    rng = np.random.default_rng(seed)

    def xavier(rows, cols):
        a = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-a, a, size=(rows, cols))

    return RewardHeadParams(
        W_v=xavier(k, d_model), b_v=np.zeros(k),
        W_1=xavier(h, d_model), b_1=np.zeros(h),
        W_2=xavier(k, h), b_2=np.zeros(k),
    )


def _stack(batch):
    if isinstance(batch, tuple) and len(batch) == 3:
        eq, ep, w = batch
        return np.atleast_2d(np.asarray(eq, float)), np.atleast_2d(np.asarray(ep, float)), np.asarray(w, float)
    batch = list(batch)
    if not batch:
        raise InvalidInputError("batch is empty")
    eq = np.stack([ex.pair.emb_q for ex in batch])
    ep = np.stack([ex.pair.emb_p for ex in batch])
    return eq, ep, np.array([ex.target for ex in batch], dtype=np.float64)


def _forward(eq, ep, p: RewardHeadParams):
    if eq.shape[1] != p.d_model or ep.shape[1] != p.d_model:
        raise InvalidInputError(f"embedding dim {eq.shape[1]} does not match head d_model {p.d_model}")
    v = ep @ p.W_v.T + p.b_v
    u = eq @ p.W_1.T + p.b_1
    a = np.maximum(u, 0.0)
    z = a @ p.W_2.T + p.b_2
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    coeff = e / e.sum(axis=1, keepdims=True)
    r = np.einsum("nk,nk->n", coeff, v)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(coeff)) and np.all(np.isfinite(r))):
        raise NumericError("non-finite value in reward forward pass")
    return r, coeff, v, u, a


def reward_forward(pair: PairEmbedding, params: RewardHeadParams):
    """Return ``(r, coeff, v_reward)`` for one pair."""
    r, coeff, v, _, _ = _forward(pair.emb_q[None, :], pair.emb_p[None, :], params)
    return float(r[0]), coeff[0], v[0]


def forward_batch(eq, ep, params: RewardHeadParams):
    r, coeff, v, _, _ = _forward(np.atleast_2d(eq), np.atleast_2d(ep), params)
    return r, coeff, v


def mse_loss(batch, params: RewardHeadParams) -> float:
    eq, ep, w = _stack(batch)
    if len(w) == 0:
        raise InvalidInputError("batch is empty")
    r = _forward(eq, ep, params)[0]
    return float(np.mean((r - w) ** 2))


def reward_grad(batch, params: RewardHeadParams) -> RewardHeadParams:
    """Analytic gradient of :func:`mse_loss` with respect to every head parameter.

    With residual ``e = r - w`` over a batch of N, ``dL/dr = 2e/N``.  The
    reward layer gets ``dv = dL/dr * coeff``; the gate gets the softmax
    Jacobian applied to ``dL/dcoeff = dL/dr * v``, which simplifies to
    ``dz = dL/dr * coeff * (v - r)``, then back through the rectifier.
    """
    eq, ep, w = _stack(batch)
    n = len(w)
    if n == 0:
        raise InvalidInputError("batch is empty")
    r, coeff, v, u, a = _forward(eq, ep, params)
    dr = 2.0 * (r - w) / n
    dv = dr[:, None] * coeff
    dz = dr[:, None] * coeff * (v - r[:, None])
    du = (dz @ params.W_2) * (u > 0)
    return RewardHeadParams(
        W_v=dv.T @ ep, b_v=dv.sum(axis=0),
        W_1=du.T @ eq, b_1=du.sum(axis=0),
        W_2=dz.T @ a, b_2=dz.sum(axis=0),
    )


@dataclass
class RewardTrainConfig:
    lr: float = 0.05
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    k: int = 4
    h: Optional[int] = None
    momentum: float = 0.0
    label_map: dict = field(default_factory=lambda: dict(DEFAULT_LABEL_MAP))


@dataclass
class TrainResult:
    params: object
    history: list  # [(epoch, mean_loss)], epoch 0 is before any update


def fit_reward_head(eq, ep, targets, config: RewardTrainConfig,
                    init: Optional[RewardHeadParams] = None) -> TrainResult:
    """Mini-batch gradient descent on MSE with seeded shuffling."""
    eq = np.asarray(eq, dtype=np.float64)
    ep = np.asarray(ep, dtype=np.float64)
    w = np.asarray(targets, dtype=np.float64)
    n = len(w)
    if n == 0:
        raise InvalidInputError("training set is empty")
    if not np.all(np.isfinite(w)):
        raise InvalidInputError("targets must be finite")
    params = init.copy() if init is not None else init_params(eq.shape[1], config.k, config.h, config.seed)
    rng = np.random.default_rng(config.seed)
    velocity = [np.zeros_like(x) for x in params.arrays()]
    history = [(0, mse_loss((eq, ep, w), params))]
    last_good = params.copy()
    bs = max(1, int(config.batch_size))
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            try:
                g = reward_grad((eq[idx], ep[idx], w[idx]), params)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}: {exc}", checkpoint=last_good) from exc
            for name, vel, grad in zip(_FIELDS, velocity, g.arrays()):
                vel *= config.momentum
                vel += grad
                setattr(params, name, getattr(params, name) - config.lr * vel)
        try:
            loss = mse_loss((eq, ep, w), params)
        except NumericError:
            loss = float("nan")
        if not np.isfinite(loss) or not params.is_finite():
            raise NumericError(f"non-finite training loss at epoch {epoch}", checkpoint=last_good)
        history.append((epoch, loss))
        last_good = params.copy()
    return TrainResult(params, history)


def embed_pair(query: str, document: str, spec: EncoderSpec) -> PairEmbedding:
    emb_q, emb_p = encode_pair(spec, query, document)
    return PairEmbedding(emb_q, emb_p)


def embed_pairs(pairs, spec: EncoderSpec):
    """Stack pair embeddings for ``[(query_text, doc_text), ...]``."""
    eqs, eps = [], []
    for q, d in pairs:
        pe = embed_pair(q, d, spec)
        eqs.append(pe.emb_q)
        eps.append(pe.emb_p)
    return np.array(eqs), np.array(eps)


def train_reward(records, corpus, queries, spec: EncoderSpec, config: RewardTrainConfig) -> TrainResult:
    """Fit the head on critic feedback; ``queries`` maps query_id to QueryRecord."""
    records = list(records)
    if not records:
        raise InvalidInputError("feedback dataset is empty")
    missing = [g for g in (0, 1, 2) if g not in config.label_map]
    if missing:
        raise InvalidInputError(f"label_map has no entry for grades {missing}")
    pairs = [(queries[r.query_id].text, corpus.text(r.doc_id)) for r in records]
    targets = [float(config.label_map[r.finalscore]) for r in records]
    eq, ep = embed_pairs(pairs, spec)
    result = fit_reward_head(eq, ep, targets, config)
    result.params.meta = {"encoder_fingerprint": spec.fingerprint(), "trained": True,
                          "n_examples": len(records)}
    return result


def check_head(params: RewardHeadParams, spec: EncoderSpec) -> None:
    if not params.meta.get("trained"):
        raise InvalidStateError("reward head has not been trained")
    fp = params.meta.get("encoder_fingerprint")
    if fp != spec.fingerprint():
        raise InvalidStateError(f"reward head was trained with encoder {fp}, not {spec.fingerprint()}")
    if params.d_model != spec.dim:
        raise InvalidStateError(f"reward head d_model {params.d_model} != encoder dim {spec.dim}")


def score_pairs(pairs, params: RewardHeadParams, spec: EncoderSpec, batch_size: int = 512):
    """Rewards for ``[(QueryRecord, doc_id, doc_text), ...]`` in input order."""
    pairs = list(pairs)
    out = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        eq, ep = embed_pairs([(q.text, text) for q, _, text in chunk], spec)
        r = forward_batch(eq, ep, params)[0]
        out.extend((q.query_id, doc_id, float(x)) for (q, doc_id, _), x in zip(chunk, r))
    return out


def save_reward_head(params: RewardHeadParams, path) -> None:
    write_container(path, CKPT_MAGIC, CKPT_VERSION, [params.d_model, params.k, params.h],
                    params.meta, params.arrays(), "float64")


def load_reward_head(path) -> RewardHeadParams:
    def shapes(f):
        d, k, h = f
        return [(k, d), (k,), (h, d), (h,), (k, h), (k,)]

    _, _, meta, arrays = read_container(path, CKPT_MAGIC, {CKPT_VERSION}, "float64", shapes)
    return RewardHeadParams(*arrays, meta=meta)
