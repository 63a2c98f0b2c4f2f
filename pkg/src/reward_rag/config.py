"""Pipeline configuration: TOML file plus ``section.key=value`` overrides.

Resolution merges built-in defaults, the file, then overrides (last wins),
checks every key against the schema, and fills derived defaults, so the
resolved dict names every setting a stage will use.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

DEFAULTS = {
    "paths": {
        "workdir": "work",
        "corpus": "corpus.jsonl",
        "queries": "queries.jsonl",
        "eval_queries": "test_queries.jsonl",
        "qrels": "qrels.tsv",
    },
    "encoder": {
        "name": "hash-ngram",
        "dim": 1024,
        "pooling": "last-position",
        "query_instruction": "",
        "document_instruction": "",
        "options": {"ngram_max": 1},
    },
    "critic": {
        "kind": "mock",
        "style": "step-by-step",
        "url": "",
        "model": "",
        "exemplar_path": "",
        "concurrency": 4,
        "retries": 3,
        "base_delay": 1.0,
        "overlap_threshold": 0.30,
        "pool_k": 25,
        "extra_n": 4,
        "near_dup_ratio": 0.95,
        "seed": 0,
    },
    "reward": {
        "k": 4,
        "h": None,  # resolved to encoder.dim
        "lr": 0.05,
        "epochs": 100,
        "batch_size": 32,
        "seed": 0,
        "momentum": 0.0,
        "label_map": {"0": 0.0, "1": 0.5, "2": 1.0},
    },
    "mining": {"top_n": 50, "pos_threshold": 0.75, "n_hard_neg": 5, "seed": 0},
    "finetune": {"tau": 0.01, "lr": 0.05, "epochs": 10, "batch_size": 16, "seed": 0, "momentum": 0.0},
    "eval": {"metric": "ndcg", "k": 10},
    "qa": {
        "style": "short-answer",
        "url": "",
        "model": "",
        "k": 5,
        "concurrency": 4,
        "retries": 3,
        "base_delay": 1.0,
        "system_template": "",
    },
    "synth": {
        "n_topics": 50,
        "docs_per_topic": 40,
        "answer_docs_per_topic": 8,
        "queries_per_topic": 32,
        "test_queries_per_topic": 2,
        "noise": 0.7,
        "query_noise": 0.3,
        "seed": 1,
    },
}

# keys whose value is an open-ended table
_FREE_TABLES = {("encoder", "options"), ("reward", "label_map")}
# keys whose default is None and which accept this type
_NULLABLE = {("reward", "h"): int}


def parse_value(text: str):
    """Read an override value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    path, value = item.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) < 2:
        raise ConfigError(f"override {item!r} must name a section and key")
    return parts, parse_value(value.strip())


def _set_path(tree: dict, parts, value) -> None:
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{'.'.join(parts)}: {p} is not a table")
    node[parts[-1]] = value


def _merge(base: dict, update: dict, prefix=()) -> None:
    for key, value in update.items():
        path = prefix + (key,)
        if path in _FREE_TABLES:
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(path)}: expected a table")
            base[key] = dict(value)
        elif isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value, path)
        else:
            base[key] = value


def _check(tree: dict, schema: dict, prefix=()) -> None:
    for key, value in tree.items():
        path = prefix + (key,)
        name = ".".join(path)
        if key not in schema:
            raise ConfigError(f"{name}: unknown setting")
        default = schema[key]
        if path in _FREE_TABLES:
            continue
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{name}: expected a table")
            _check(value, default, path)
            continue
        if default is None:
            want = _NULLABLE[path]
            if value is not None and (not isinstance(value, want) or isinstance(value, bool)):
                raise ConfigError(f"{name}: expected {want.__name__}, got {value!r}")
            continue
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(default, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        else:
            ok = isinstance(value, type(default))
        if not ok:
            raise ConfigError(f"{name}: expected {type(default).__name__}, got {value!r}")
        if isinstance(default, float):
            tree[key] = float(value)


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve_config(file_values=None, overrides=()) -> dict:
    """Defaults, then file values, then ``(path_parts, value)`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if file_values:
        _merge(cfg, copy.deepcopy(file_values))
    for parts, value in overrides:
        patch: dict = {}
        _set_path(patch, parts, value)
        _merge(cfg, patch)
    _check(cfg, DEFAULTS)
    if cfg["reward"]["h"] is None:
        cfg["reward"]["h"] = cfg["encoder"]["dim"]
    lm = cfg["reward"]["label_map"]
    try:
        cfg["reward"]["label_map"] = {str(int(k)): float(v) for k, v in lm.items()}
    except (TypeError, ValueError):
        raise ConfigError(f"reward.label_map: keys must be grades and values numbers, got {lm!r}") from None
    for g in ("0", "1", "2"):
        if g not in cfg["reward"]["label_map"]:
            raise ConfigError(f"reward.label_map: no entry for grade {g}")
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: dict) -> None:
    positive = [("encoder", "dim"), ("reward", "k"), ("reward", "h"), ("reward", "batch_size"),
                ("finetune", "batch_size"), ("mining", "top_n"), ("mining", "n_hard_neg"), ("eval", "k"),
                ("qa", "k"), ("critic", "pool_k")]
    for sec, key in positive:
        if cfg[sec][key] < 1:
            raise ConfigError(f"{sec}.{key}: must be >= 1, got {cfg[sec][key]}")
    if cfg["finetune"]["tau"] <= 0:
        raise ConfigError(f"finetune.tau: must be > 0, got {cfg['finetune']['tau']}")
    if cfg["critic"]["kind"] not in ("mock", "llm"):
        raise ConfigError(f"critic.kind: must be 'mock' or 'llm', got {cfg['critic']['kind']!r}")
    if cfg["eval"]["metric"] not in ("ndcg", "recall"):
        raise ConfigError(f"eval.metric: must be 'ndcg' or 'recall', got {cfg['eval']['metric']!r}")


def section_hash(cfg: dict, sections) -> str:
    blob = json.dumps({s: cfg[s] for s in sections}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
