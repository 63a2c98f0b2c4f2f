"""Small shared helpers: JSONL I/O, hashing, seed derivation, templates."""

from __future__ import annotations

import csv
import hashlib
import json
from importlib import resources


def derive_seed(seed: int, *parts) -> int:
    """Stable 63-bit seed from a base seed and identifying parts."""
    key = "\x1f".join([str(seed), *map(str, parts)]).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little") >> 1


def read_jsonl(path):
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def template(name: str) -> str:
    return resources.files("reward_rag").joinpath("templates", name).read_text(encoding="utf-8")


def write_loss_history(history, path) -> None:
    """CSV of ``(epoch, mean_loss)`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in history:
            writer.writerow([epoch, repr(float(loss))])
