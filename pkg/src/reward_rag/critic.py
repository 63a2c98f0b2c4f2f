"""Critic relevance feedback: candidate sampling, rating prompts, collection, agreement."""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .chat import map_bounded, with_retries
from .embedding import tokenize
from .errors import ConfigError, InvalidInputError, InvalidStateError, ParseFailure, TransportError
from .util import read_jsonl, template, write_jsonl
from .vecindex import search

log = logging.getLogger(__name__)

LABELS = (0, 1, 2)
STYLES = ("step-by-step", "in-context")


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    text: str
    expert_answers: tuple = ()

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise InvalidInputError(f"query {self.query_id!r} has empty text")
        object.__setattr__(self, "expert_answers", tuple(self.expert_answers or ()))

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "text": self.text, "expert_answers": list(self.expert_answers)}


def read_queries(path) -> list:
    out, seen = [], set()
    for row in read_jsonl(path):
        qid = row.get("query_id", row.get("id"))
        if qid in seen:
            raise InvalidInputError(f"{path}: duplicate query_id {qid!r}")
        seen.add(qid)
        out.append(QueryRecord(str(qid), row["text"], tuple(row.get("expert_answers", row.get("answers", [])))))
    return out


def write_queries(queries, path) -> None:
    write_jsonl(path, (q.to_dict() for q in queries))


@dataclass
class FeedbackRecord:
    query_id: str
    doc_id: str
    analyze: str
    match: int
    gt: int
    diff: int
    finalscore: int
    critic_name: str
    raw_response: str
    warning: Optional[str] = None

    def __post_init__(self):
        if self.finalscore not in LABELS:
            raise InvalidInputError(f"finalscore must be 0, 1 or 2, got {self.finalscore!r}")
        for name in ("match", "gt", "diff"):
            if getattr(self, name) not in (0, 1):
                raise InvalidInputError(f"{name} must be 0 or 1, got {getattr(self, name)!r}")

    @property
    def key(self):
        return (self.query_id, self.doc_id)


def read_feedback(path) -> list:
    return [FeedbackRecord(**row) for row in read_jsonl(path)]


def write_feedback(records, path) -> None:
    write_jsonl(path, (asdict(r) for r in records))


# -- candidate sampling -------------------------------------------------------


def sample_candidates(query: QueryRecord, index, pool_k: int = 25, extra_n: int = 4,
                      near_dup_ratio: float = 0.95, seed: int = 0) -> list:
    """Top-1 hit plus up to ``extra_n`` pool members drawn without replacement.

    Only members scoring at most ``near_dup_ratio`` times the top score are
    eligible, which keeps near-clones of the top hit out of the sample.
    """
    if pool_k < 1 + extra_n:
        raise InvalidInputError(f"pool_k ({pool_k}) must be >= 1 + extra_n ({1 + extra_n})")
    hits = search(index, query.text, pool_k)
    if not hits:
        raise InvalidStateError(f"retrieval pool for query {query.query_id!r} is empty")
    return select_candidates([(h.doc_id, h.score) for h in hits], extra_n, near_dup_ratio, seed)


def select_candidates(pool, extra_n: int, near_dup_ratio: float, seed: int) -> list:
    """Filter-and-draw over a ranked ``[(doc_id, score), ...]`` pool."""
    if not pool:
        raise InvalidStateError("retrieval pool is empty")
    top_id, top_score = pool[0]
    cutoff = near_dup_ratio * top_score
    eligible = [doc_id for doc_id, score in pool[1:] if score <= cutoff]
    # partial Fisher-Yates: position i takes a uniform pick from [i, n)
    rng = np.random.default_rng(seed)
    n, m = len(eligible), min(extra_n, len(eligible))
    for i in range(m):
        j = int(rng.integers(i, n))
        eligible[i], eligible[j] = eligible[j], eligible[i]
    return [top_id, *eligible[:m]]


# -- prompts ------------------------------------------------------------------


@dataclass(frozen=True)
class PromptPair:
    system: str
    user: str


def load_exemplars(path=None) -> list:
    if path is None:
        text = template("in_context_exemplars.json")
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"in-context exemplar file not found: {path}")
        text = p.read_text(encoding="utf-8")
    try:
        exemplars = json.loads(text)["exemplars"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed exemplar file {path or '<bundled>'}: {exc}") from None
    if len(exemplars) != 10:
        raise ConfigError(f"exemplar file must hold exactly 10 pairs, found {len(exemplars)}")
    return exemplars


def _in_context_system(exemplars) -> str:
    parts = [template("feedback_in_context_header.txt").rstrip("\n")]
    for i, ex in enumerate(exemplars, 1):
        parts.append(
            f"Example {i}:\n* Passage: {ex.get('passage', '')}\n* Query: {ex.get('query', '')}\n"
            f"* Correct answer: {ex.get('answer', '')}\n* finalscore: {ex.get('finalscore', '')}"
        )
    parts.append(template("feedback_in_context_footer.txt").rstrip("\n"))
    return "\n\n".join(parts)


def build_feedback_prompt(query: QueryRecord, passage: str, style: str = "step-by-step",
                          exemplar_path=None) -> PromptPair:
    if not passage or not passage.strip():
        raise InvalidInputError("passage is empty")
    if style == "step-by-step":
        system = template("feedback_step_by_step.txt").rstrip("\n")
    elif style == "in-context":
        system = _in_context_system(load_exemplars(exemplar_path))
    else:
        raise InvalidInputError(f"style must be one of {STYLES}, got {style!r}")
    user = template("feedback_user.txt").rstrip("\n").format(
        passage=passage, query=query.text, answer=", ".join(query.expert_answers)
    )
    return PromptPair(system, user)


# -- response parsing ---------------------------------------------------------


class InvalidScore(ParseFailure):
    """Response parsed, but finalscore lies outside {0, 1, 2}."""


class _RetryableParse(ParseFailure):
    pass


def _balanced_blocks(text: str):
    depth, start, in_str, esc = 0, None, False, False
    for i, ch in enumerate(text):
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"' and depth > 0:
            in_str = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0:
                yield text[start : i + 1]


def extract_json_object(text: str) -> dict:
    for block in _balanced_blocks(text):
        try:
            obj = json.loads(block)
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    raise ParseFailure("no JSON object found in response")


def _as_int(value, name):
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value.strip())
    raise ParseFailure(f"field {name!r} is not an integer: {value!r}")


def parse_feedback(raw: str) -> dict:
    """Parse a critic reply into the five output fields.

    Raises :class:`ParseFailure` when keys are missing or malformed and
    :class:`InvalidScore` when ``finalscore`` is outside 0-2 (never clamped).
    """
    obj = extract_json_object(raw)
    missing = [k for k in ("match", "gt", "diff", "finalscore") if k not in obj]
    if missing:
        raise ParseFailure(f"response missing keys {missing}")
    out = {k: _as_int(obj[k], k) for k in ("match", "gt", "diff", "finalscore")}
    for k in ("match", "gt", "diff"):
        if out[k] not in (0, 1):
            raise ParseFailure(f"{k} must be 0/1, got {out[k]}")
    if out["finalscore"] not in LABELS:
        raise InvalidScore(f"finalscore {out['finalscore']} outside 0-2")
    analyze = obj.get("analyze", "")
    out["analyze"] = analyze if isinstance(analyze, str) else json.dumps(analyze)
    return out


# -- critics ------------------------------------------------------------------


class MockCritic:
    """Lexical oracle critic for offline runs.

    Grades 2 when an expert answer occurs in the passage (case-insensitive
    substring), 1 when at least ``overlap_threshold`` of the distinct query
    terms occur in the passage, else 0.  Replies with the same JSON shape an
    LLM critic is asked for, so the normal parser is exercised.
    """

    name = "mock-lexical"
    thread_safe = False

    def __init__(self, overlap_threshold: float = 0.30):
        self.overlap_threshold = overlap_threshold

    def grade(self, query: QueryRecord, passage: str) -> dict:
        low = passage.lower()
        gt = int(any(a.strip() and a.strip().lower() in low for a in query.expert_answers))
        qterms = set(tokenize(query.text))
        overlap = len(qterms & set(tokenize(passage))) / len(qterms) if qterms else 0.0
        match = int(gt or overlap >= self.overlap_threshold)
        score = 2 if gt else (1 if match else 0)
        return {
            "analyze": f"Query-term overlap {overlap:.2f}; expert answer {'present' if gt else 'absent'}.",
            "match": match,
            "gt": gt,
            "diff": 0,
            "finalscore": score,
        }

    def rate(self, query: QueryRecord, passage: str) -> str:
        return json.dumps(self.grade(query, passage), sort_keys=True)


class LLMCritic:
    """Critic backed by a chat-completion endpoint."""

    thread_safe = True

    def __init__(self, client, style: str = "step-by-step", exemplar_path=None, name: Optional[str] = None):
        self.client = client
        self.style = style
        self.exemplar_path = exemplar_path
        self.name = name or getattr(client, "model", "llm")
        if style == "in-context":
            load_exemplars(exemplar_path)

    def rate(self, query: QueryRecord, passage: str) -> str:
        prompt = build_feedback_prompt(query, passage, self.style, self.exemplar_path)
        return self.client.complete(prompt.system, prompt.user)


@dataclass
class CollectionResult:
    records: list = field(default_factory=list)
    rejects: list = field(default_factory=list)


def collect_feedback(pairs, corpus, client, concurrency: int = 4, retries: int = 3,
                     base_delay: float = 1.0, sleep=None) -> CollectionResult:
    """Rate each ``(QueryRecord, doc_id)`` pair; failures become reject rows.

    Output order follows input order.  Critics that are not thread-safe
    (the mock) are driven sequentially.
    """
    pairs = list(pairs)
    for q, doc_id in pairs:
        corpus.get(doc_id)
    if not getattr(client, "thread_safe", False):
        concurrency = 1
    critic_name = getattr(client, "name", type(client).__name__)
    retry_kwargs = {"base_delay": base_delay}
    if sleep is not None:
        retry_kwargs["sleep"] = sleep

    def job(pair):
        query, doc_id = pair
        passage = corpus.text(doc_id)
        last_raw = [""]

        def attempt():
            raw = client.rate(query, passage)
            last_raw[0] = raw
            try:
                return raw, parse_feedback(raw)
            except InvalidScore:
                raise
            except ParseFailure as exc:
                raise _RetryableParse(str(exc)) from exc

        try:
            raw, fields = with_retries(attempt, retries, retry_on=(TransportError, _RetryableParse), **retry_kwargs)
        except InvalidScore as exc:
            return None, _reject(query, doc_id, "invalid-finalscore", last_raw[0], exc)
        except ParseFailure as exc:
            return None, _reject(query, doc_id, "parse-failure", last_raw[0], exc)
        except TransportError as exc:
            return None, _reject(query, doc_id, "transport-failure", last_raw[0], exc)
        warning = None
        if fields["gt"] == 1 and fields["finalscore"] == 0:
            warning = "inconsistent: gt=1 but finalscore=0"
            log.warning("query %s doc %s: %s", query.query_id, doc_id, warning)
        rec = FeedbackRecord(query.query_id, doc_id, fields["analyze"], fields["match"], fields["gt"],
                             fields["diff"], fields["finalscore"], critic_name, raw, warning)
        return rec, None

    result = CollectionResult()
    for rec, rej in map_bounded(job, pairs, concurrency):
        if rec is not None:
            result.records.append(rec)
        else:
            result.rejects.append(rej)
    return result


def _reject(query, doc_id, reason, raw, exc):
    return {"query_id": query.query_id, "doc_id": doc_id, "reason": reason, "raw_response": raw,
            "detail": str(exc)}


# -- agreement ----------------------------------------------------------------


@dataclass
class AgreementMatrix:
    counts: np.ndarray
    total: int

    @property
    def agreement_percent(self) -> float:
        return 100.0 * float(np.trace(self.counts)) / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "total": self.total, "agreement_percent": self.agreement_percent}


def agreement(a, b) -> AgreementMatrix:
    """Confusion matrix of grades; rows index ``a``'s label, columns ``b``'s."""
    ca, cb = Counter(r.key for r in a), Counter(r.key for r in b)
    if ca != cb:
        only_a = sorted((ca - cb).elements())
        only_b = sorted((cb - ca).elements())
        raise InvalidInputError(f"feedback key sets differ; only in a: {only_a[:10]}, only in b: {only_b[:10]}")
    by_key = defaultdict(list)
    for r in b:
        by_key[r.key].append(r.finalscore)
    taken = Counter()
    counts = np.zeros((3, 3), dtype=np.int64)
    for r in a:
        j = by_key[r.key][taken[r.key]]
        taken[r.key] += 1
        counts[r.finalscore, j] += 1
    return AgreementMatrix(counts, int(counts.sum()))
