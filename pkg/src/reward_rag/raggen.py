"""Retrieval-augmented answering: five-passage QA prompts, chat calls, answer parsing."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Optional

from .chat import map_bounded, with_retries
from .errors import ConfigError, InvalidInputError, ParseFailure, TransportError
from .evalkit import exact_match
from .util import template
from .vecindex import search_many

log = logging.getLogger(__name__)

N_SLOTS = 5
EMPTY_PASSAGE = "(no passage)"
QA_STYLES = {"short-answer": "qa_short_answer.txt", "true-false": "qa_true_false.txt"}


@dataclass(frozen=True)
class QaPrompt:
    system: str
    user: str
    passages: tuple
    style: str


def build_qa_prompt(query: str, hits, style: str = "short-answer", n_slots: int = N_SLOTS,
                    system: Optional[str] = None) -> QaPrompt:
    """``hits`` are passage texts in rank order; missing slots get the sentinel."""
    if style not in QA_STYLES:
        raise InvalidInputError(f"style must be one of {sorted(QA_STYLES)}, got {style!r}")
    passages = [str(p) for p in hits]
    if not passages:
        raise InvalidInputError("answer generation needs at least one retrieved passage")
    if len(passages) > n_slots:
        raise InvalidInputError(f"{len(passages)} passages for a {n_slots}-slot template")
    passages += [EMPTY_PASSAGE] * (n_slots - len(passages))
    if system is None:
        system = template("qa_system.txt").rstrip("\n")
    lines = [f"* Passage {i}: {p}" for i, p in enumerate(passages, 1)]
    user = "\n".join(lines) + f"\n\nQuery: {query}\n" + template(QA_STYLES[style]).rstrip("\n")
    return QaPrompt(system, user, tuple(passages), style)


def parse_short_answer(raw: str) -> str:
    text = (raw or "").strip()
    first = text.splitlines()[0].strip() if text else ""
    return first[:-1].rstrip() if first.endswith(".") else first


_WORD = re.compile(r"[A-Za-z]+")


def parse_true_false(raw: str) -> bool:
    m = _WORD.search(raw or "")
    token = m.group(0).lower() if m else ""
    if token == "true":
        return True
    if token == "false":
        return False
    raise ParseFailure(f"expected True or False, got {(raw or '')[:80]!r}")


@dataclass
class AnswerRecord:
    query_id: str
    prediction: object        # str, bool, or None on failure
    passages: list            # doc_ids in rank order
    raw_response: str = ""
    error: Optional[str] = None
    gold: list = field(default_factory=list)

    @property
    def prediction_text(self) -> str:
        if isinstance(self.prediction, bool):
            return "True" if self.prediction else "False"
        return "" if self.prediction is None else str(self.prediction)

    def to_dict(self) -> dict:
        ok = self.error is None
        return {
            "query_id": self.query_id,
            "prediction": self.prediction_text if ok else None,
            "gold": list(self.gold),
            "em": exact_match(self.prediction_text, self.gold) if ok and self.gold else 0,
            "passages": list(self.passages),
            "raw_response": self.raw_response,
            "error": self.error,
        }


def _check_k(k: int, system: Optional[str]) -> None:
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    # the bundled system text announces five passages
    if k != N_SLOTS and system is None:
        raise ConfigError(f"k={k} requires a system template override; the bundled one has {N_SLOTS} slots")


def _answer_one(query, doc_ids, corpus, client, style, k, system, retries, retry_kwargs) -> AnswerRecord:
    prompt = build_qa_prompt(query.text, [corpus.text(d) for d in doc_ids], style, k, system)
    rec = AnswerRecord(query.query_id, None, list(doc_ids), gold=list(query.expert_answers))
    try:
        rec.raw_response = with_retries(lambda: client.complete(prompt.system, prompt.user), retries,
                                        retry_on=(TransportError,), **retry_kwargs)
    except TransportError as exc:
        rec.error = f"transport-failure: {exc}"
        return rec
    try:
        rec.prediction = (parse_true_false(rec.raw_response) if style == "true-false"
                          else parse_short_answer(rec.raw_response))
    except ParseFailure as exc:
        rec.error = f"parse-failure: {exc}"
    return rec


def answer(query, index, corpus, client, style: str = "short-answer", k: int = N_SLOTS,
           system: Optional[str] = None, retries: int = 3, base_delay: float = 1.0, sleep=None) -> AnswerRecord:
    """Retrieve top-``k``, prompt the client, parse the reply.

    Transport failures after retries raise; unparseable replies come back
    as a record with ``error`` set and no prediction.
    """
    rec = answer_batch([query], index, corpus, client, style, k, system, 1, retries, base_delay, sleep)[0]
    if rec.error and rec.error.startswith("transport-failure"):
        raise TransportError(rec.error)
    return rec


def answer_batch(queries, index, corpus, client, style: str = "short-answer", k: int = N_SLOTS,
                 system: Optional[str] = None, concurrency: int = 4, retries: int = 3,
                 base_delay: float = 1.0, sleep=None) -> list:
    """Order-preserving batch of :func:`answer`; failures are per-query records."""
    _check_k(k, system)
    if style not in QA_STYLES:
        raise InvalidInputError(f"style must be one of {sorted(QA_STYLES)}, got {style!r}")
    queries = list(queries)
    if not queries:
        return []
    hits = search_many(index, [q.text for q in queries], k)
    retry_kwargs = {"base_delay": base_delay}
    if sleep is not None:
        retry_kwargs["sleep"] = sleep
    if not getattr(client, "thread_safe", False):
        concurrency = 1

    def job(item):
        q, hs = item
        return _answer_one(q, [h.doc_id for h in hs], corpus, client, style, k, system, retries, retry_kwargs)

    return map_bounded(job, list(zip(queries, hits)), concurrency)
