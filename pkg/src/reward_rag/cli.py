"""``reward-rag`` command line: one subcommand per pipeline stage.

Every stage reads and writes files under the workdir and records a manifest
entry keyed on the content hashes of its inputs and the config sections it
uses.  Rerunning a stage whose hashes are unchanged (and whose outputs are
intact) prints ``up-to-date`` and does nothing unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from filelock import FileLock, Timeout

from . import __version__
from .config import load_toml, parse_override, resolve_config, section_hash
from .errors import ConfigError, MissingArtifactError, NumericError, RewardRagError
from .util import derive_seed, read_jsonl, sha256_file, write_jsonl, write_loss_history

log = logging.getLogger("reward_rag")

MANIFEST = "manifest.json"

# workdir artifact -> subcommand that writes it
PRODUCERS = {
    "corpus.clean.jsonl": "ingest",
    "index.bin": "index",
    "index_finetuned.bin": "index --finetuned",
    "candidates.jsonl": "sample",
    "feedback.jsonl": "collect",
    "reward.ckpt": "train-reward",
    "triples.jsonl": "mine",
    "adapter.ckpt": "train-encoder",
    "composed_spec.json": "train-encoder",
    "predictions.jsonl": "answer",
}
# data inputs that synth can generate, keyed by paths.* name
DATA_PRODUCER = "synth (or point paths.{key} at your own file)"


class Context:
    def __init__(self, cfg: dict, force: bool = False):
        self.cfg = cfg
        self.force = force
        self.workdir = Path(cfg["paths"]["workdir"]).resolve()

    # -- paths ----------------------------------------------------------------

    def art(self, name: str) -> Path:
        return self.workdir / name

    def data(self, key: str) -> Path:
        p = Path(self.cfg["paths"][key])
        return p if p.is_absolute() else self.workdir / p

    def require(self, path: Path, producer: str) -> Path:
        if not path.is_file():
            raise MissingArtifactError(f"missing {path}; run `reward-rag {producer}` first")
        return path

    def need(self, name: str) -> Path:
        return self.require(self.art(name), PRODUCERS[name])

    def need_data(self, key: str) -> Path:
        return self.require(self.data(key), DATA_PRODUCER.format(key=key))

    # -- manifest -------------------------------------------------------------

    def manifest(self) -> dict:
        p = self.art(MANIFEST)
        if not p.is_file():
            return {"entries": {}}
        with open(p, encoding="utf-8") as f:
            return json.load(f)

    def save_manifest(self, m: dict) -> None:
        tmp = self.art(MANIFEST + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(m, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, self.art(MANIFEST))

    def run(self, stage: str, inputs, sections, outputs, fn, extra=None) -> bool:
        """Run ``fn`` unless the manifest says the stage is current.  Returns True if it ran."""
        inputs = {str(p): sha256_file(p) for p in inputs}
        inputs_hash = hashlib.sha256(json.dumps(sorted(inputs.items())).encode()).hexdigest()
        config_hash = hashlib.sha256(
            (section_hash(self.cfg, sections) + json.dumps(extra or {}, sort_keys=True)).encode()
        ).hexdigest()
        m = self.manifest()
        prev = m["entries"].get(stage)
        if prev and not self.force and prev["inputs_hash"] == inputs_hash and prev["config_hash"] == config_hash:
            if all(Path(p).is_file() and sha256_file(p) == h for p, h in prev["outputs"].items()):
                print(f"{stage}: up-to-date")
                return False
        t0 = time.perf_counter()
        fn()
        duration = time.perf_counter() - t0
        producers = {}
        for e in m["entries"].values():
            for p in e["outputs"]:
                producers[p] = e["stage"]
        m = self.manifest()
        m["entries"][stage] = {
            "stage": stage,
            "inputs": inputs,
            "inputs_hash": inputs_hash,
            "config_hash": config_hash,
            "depends_on": sorted({producers[p] for p in inputs if p in producers and producers[p] != stage}),
            "outputs": {str(p): sha256_file(p) for p in outputs},
            "duration": round(duration, 3),
            "finished_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        self.save_manifest(m)
        log.info("%s finished in %.2fs", stage, duration)
        return True

    # -- shared loaders -------------------------------------------------------

    def encoder_spec(self):
        from .embedding import EncoderSpec

        return EncoderSpec.from_dict(self.cfg["encoder"])

    def corpus(self):
        from .vecindex import read_corpus_jsonl

        corpus, _ = read_corpus_jsonl(self.need("corpus.clean.jsonl"))
        return corpus

    def queries(self, key: str = "queries"):
        from .critic import read_queries

        return read_queries(self.need_data(key))

    def composed(self):
        """Fine-tuned spec; the adapter path is resolved inside the workdir."""
        from .embedding import load_encoder_spec

        return load_encoder_spec(self.need("composed_spec.json"))

    def portable(self, spec):
        """``spec`` with the workdir-relative adapter path, for files and fingerprints."""
        return _with_adapter_path(spec, Path(spec.options["adapter_path"]).name)

    def load_index(self, finetuned: bool):
        from .vecindex import load_index

        index = load_index(self.need("index_finetuned.bin" if finetuned else "index.bin"))
        if finetuned:
            index = dataclasses.replace(index, encoder_spec=self.composed())
        return index


def _with_adapter_path(spec, path: str):
    from .embedding import EncoderSpec

    opts = dict(spec.options)
    opts["adapter_path"] = path
    return EncoderSpec(spec.name, spec.dim, spec.pooling, spec.query_instruction, spec.document_instruction, opts)


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# -- subcommands ----------------------------------------------------------------


def cmd_synth(ctx: Context, args) -> None:
    from .critic import write_queries
    from .evalkit import write_qrels
    from .synthetic import SyntheticConfig, make_synthetic_dataset
    from .vecindex import write_corpus_jsonl

    outs = [ctx.data(k) for k in ("corpus", "queries", "eval_queries", "qrels")]

    def go():
        ds = make_synthetic_dataset(SyntheticConfig(**ctx.cfg["synth"]))
        for p in outs:
            p.parent.mkdir(parents=True, exist_ok=True)
        write_corpus_jsonl(ds.corpus, outs[0])
        write_queries(ds.queries, outs[1])
        write_queries(ds.test_queries, outs[2])
        write_qrels(ds.qrels, outs[3])
        print(f"synth: {len(ds.corpus)} docs, {len(ds.queries)} train / {len(ds.test_queries)} eval queries")

    ctx.run("synth", [], ["synth"], outs, go)


def cmd_ingest(ctx: Context, args) -> None:
    from .vecindex import read_corpus_jsonl, write_corpus_jsonl

    src = ctx.need_data("corpus")
    out, report = ctx.art("corpus.clean.jsonl"), ctx.art("ingest_report.json")

    def go():
        corpus, problems = read_corpus_jsonl(src, skip_bad=args.skip_bad)
        write_corpus_jsonl(corpus, out)
        _write_json(report, {"documents": len(corpus), "skipped": [{"line": n, "error": e} for n, e in problems],
                             "corpus_hash": corpus.content_hash()})
        print(f"ingest: {len(corpus)} documents, {len(problems)} skipped lines")

    ctx.run("ingest", [src], [], [out, report], go, {"skip_bad": args.skip_bad})


def cmd_index(ctx: Context, args) -> None:
    from .vecindex import build_index, save_index

    corpus_path = ctx.need("corpus.clean.jsonl")
    if args.finetuned:
        inputs = [corpus_path, ctx.need("composed_spec.json"), ctx.need("adapter.ckpt")]
        out, stage = ctx.art("index_finetuned.bin"), "index-finetuned"
    else:
        inputs, out, stage = [corpus_path], ctx.art("index.bin"), "index"

    def go():
        spec = ctx.composed() if args.finetuned else ctx.encoder_spec()
        index = build_index(ctx.corpus(), spec)
        if args.finetuned:
            # the stored spec keeps the relative adapter path so the file does not depend on the workdir
            index = dataclasses.replace(index, encoder_spec=ctx.portable(spec))
        save_index(index, out)
        print(f"{stage}: {len(index)} vectors of dim {spec.dim}")

    ctx.run(stage, inputs, ["encoder"], [out], go)


def cmd_sample(ctx: Context, args) -> None:
    from .critic import sample_candidates

    inputs = [ctx.need("index.bin"), ctx.need_data("queries")]
    out = ctx.art("candidates.jsonl")
    c = ctx.cfg["critic"]

    def go():
        index = ctx.load_index(False)
        rows = []
        for q in sorted(ctx.queries(), key=lambda q: q.query_id):
            ids = sample_candidates(q, index, c["pool_k"], c["extra_n"], c["near_dup_ratio"],
                                    derive_seed(c["seed"], q.query_id))
            rows.append({"query_id": q.query_id, "doc_ids": ids})
        write_jsonl(out, rows)
        print(f"sample: {sum(len(r['doc_ids']) for r in rows)} pairs for {len(rows)} queries")

    ctx.run("sample", inputs, ["encoder"], [out], go,
            {k: c[k] for k in ("pool_k", "extra_n", "near_dup_ratio", "seed")})


def _critic(cfg: dict):
    from .chat import ChatClient
    from .critic import LLMCritic, MockCritic

    c = cfg["critic"]
    if c["kind"] == "mock":
        return MockCritic(c["overlap_threshold"])
    if not c["url"] or not c["model"]:
        raise ConfigError("critic.url and critic.model are required when critic.kind = 'llm'")
    return LLMCritic(ChatClient(c["url"], c["model"]), c["style"], c["exemplar_path"] or None)


def cmd_collect(ctx: Context, args) -> None:
    from .critic import collect_feedback, write_feedback

    inputs = [ctx.need("candidates.jsonl"), ctx.need("corpus.clean.jsonl"), ctx.need_data("queries")]
    out, rejects = ctx.art("feedback.jsonl"), ctx.art("rejects.jsonl")
    c = ctx.cfg["critic"]

    def go():
        critic = _critic(ctx.cfg)
        qmap = {q.query_id: q for q in ctx.queries()}
        pairs = []
        for row in read_jsonl(inputs[0]):
            if row["query_id"] not in qmap:
                raise MissingArtifactError(f"candidate query {row['query_id']!r} is not in the queries file")
            pairs.extend((qmap[row["query_id"]], d) for d in row["doc_ids"])
        res = collect_feedback(pairs, ctx.corpus(), critic, c["concurrency"], c["retries"], c["base_delay"])
        write_feedback(res.records, out)
        write_jsonl(rejects, res.rejects)
        print(f"collect: {len(res.records)} records, {len(res.rejects)} rejects")

    ctx.run("collect", inputs, ["critic"], [out, rejects], go)


def cmd_train_reward(ctx: Context, args) -> None:
    from .critic import read_feedback
    from .reward import RewardTrainConfig, save_reward_head, train_reward

    inputs = [ctx.need("feedback.jsonl"), ctx.need("corpus.clean.jsonl"), ctx.need_data("queries")]
    ckpt, hist = ctx.art("reward.ckpt"), ctx.art("reward_loss.csv")
    r = ctx.cfg["reward"]

    def go():
        records = read_feedback(inputs[0])
        cfg = RewardTrainConfig(lr=r["lr"], epochs=r["epochs"], batch_size=r["batch_size"], seed=r["seed"],
                                k=r["k"], h=r["h"], momentum=r["momentum"],
                                label_map={int(g): w for g, w in r["label_map"].items()})
        qmap = {q.query_id: q for q in ctx.queries()}
        try:
            result = train_reward(records, ctx.corpus(), qmap, ctx.encoder_spec(), cfg)
        except NumericError as exc:
            if exc.checkpoint is not None:
                save_reward_head(exc.checkpoint, ctx.art("reward.last_good.ckpt"))
            raise
        save_reward_head(result.params, ckpt)
        write_loss_history(result.history, hist)
        print(f"train-reward: loss {result.history[0][1]:.4f} -> {result.history[-1][1]:.4f}")

    ctx.run("train-reward", inputs, ["encoder", "reward"], [ckpt, hist], go)


def _reward_head(ctx: Context):
    from .reward import check_head, load_reward_head

    params = load_reward_head(ctx.need("reward.ckpt"))
    check_head(params, ctx.encoder_spec())
    return params


def cmd_score(ctx: Context, args) -> None:
    from .reward import score_pairs

    inputs = [ctx.need("reward.ckpt"), ctx.need("candidates.jsonl"), ctx.need("corpus.clean.jsonl"),
              ctx.need_data("queries")]
    out = ctx.art("scores.jsonl")

    def go():
        params, corpus = _reward_head(ctx), ctx.corpus()
        qmap = {q.query_id: q for q in ctx.queries()}
        pairs = [(qmap[row["query_id"]], d, corpus.text(d)) for row in read_jsonl(inputs[1]) for d in row["doc_ids"]]
        scored = score_pairs(pairs, params, ctx.encoder_spec())
        write_jsonl(out, ({"query_id": q, "doc_id": d, "reward": r} for q, d, r in scored))
        print(f"score: {len(scored)} pairs")

    ctx.run("score", inputs, ["encoder"], [out], go)


def cmd_mine(ctx: Context, args) -> None:
    from .mining import MiningConfig, mine_triples, write_triples

    inputs = [ctx.need("index.bin"), ctx.need("reward.ckpt"), ctx.need("corpus.clean.jsonl"),
              ctx.need_data("queries")]
    out, skipped = ctx.art("triples.jsonl"), ctx.art("skipped.jsonl")

    def go():
        res = mine_triples(ctx.queries(), ctx.load_index(False), _reward_head(ctx), ctx.encoder_spec(),
                           MiningConfig(**ctx.cfg["mining"]), ctx.corpus())
        write_triples(res.triples, out)
        write_jsonl(skipped, res.skipped)
        print(f"mine: {len(res.triples)} triples, {len(res.skipped)} skipped queries")

    ctx.run("mine", inputs, ["encoder", "mining"], [out, skipped], go)


def cmd_train_encoder(ctx: Context, args) -> None:
    from .embedding import composed_spec, save_encoder_spec
    from .finetune import AdapterTrainConfig, save_adapter, train_adapter
    from .mining import read_triples

    inputs = [ctx.need("triples.jsonl"), ctx.need("corpus.clean.jsonl"), ctx.need_data("queries")]
    ckpt, hist, spec_path = ctx.art("adapter.ckpt"), ctx.art("adapter_loss.csv"), ctx.art("composed_spec.json")

    def go():
        triples = read_triples(inputs[0])
        if not triples:
            raise MissingArtifactError("triples.jsonl is empty; rerun `reward-rag mine` with a lower threshold")
        cfg = AdapterTrainConfig(**ctx.cfg["finetune"])
        qmap = {q.query_id: q for q in ctx.queries()}
        base = ctx.encoder_spec()
        try:
            result = train_adapter(triples, qmap, ctx.corpus(), base, cfg)
        except NumericError as exc:
            if exc.checkpoint is not None:
                save_adapter(exc.checkpoint, ctx.art("adapter.last_good.ckpt"))
            raise
        save_adapter(result.params, ckpt)
        write_loss_history(result.history, hist)
        save_encoder_spec(composed_spec(base, ckpt.name, result.params.dim_out), spec_path)
        print(f"train-encoder: loss {result.history[0][1]:.4f} -> {result.history[-1][1]:.4f}")

    ctx.run("train-encoder", inputs, ["encoder", "finetune"], [ckpt, hist, spec_path], go)


def cmd_eval_retrieval(ctx: Context, args) -> None:
    from .evalkit import evaluate_retrieval, read_qrels
    from .mining import mean_topk_reward

    name = "index_finetuned.bin" if args.finetuned else "index.bin"
    inputs = [ctx.need(name), ctx.need_data("eval_queries"), ctx.need_data("qrels")]
    has_reward = ctx.art("reward.ckpt").is_file()
    if has_reward:
        inputs += [ctx.art("reward.ckpt"), ctx.need("corpus.clean.jsonl")]
    if args.finetuned:
        inputs += [ctx.need("adapter.ckpt")]
    tag = "finetuned" if args.finetuned else "base"
    out = ctx.art(f"eval_{tag}.json")
    e = ctx.cfg["eval"]

    def go():
        index = ctx.load_index(args.finetuned)
        queries = ctx.queries("eval_queries")
        report = evaluate_retrieval(index, queries, read_qrels(inputs[2]), e["metric"], e["k"])
        # fingerprint of the stored, path-independent spec
        report.encoder_id = (ctx.portable(index.encoder_spec) if args.finetuned else index.encoder_spec).fingerprint()
        if has_reward:
            report.extra["mean_top5_reward"] = mean_topk_reward(queries, index, _reward_head(ctx),
                                                                ctx.encoder_spec(), ctx.corpus(), 5)
        _write_json(out, report.to_dict(with_timestamp=False))
        print(json.dumps({"aggregate": report.mean, "metric": e["metric"], "k": e["k"], **report.extra}))

    ctx.run(f"eval-retrieval-{tag}", inputs, ["encoder", "eval"], [out], go)


def _qa_client(cfg: dict):
    from .chat import ChatClient

    q = cfg["qa"]
    if not q["url"] or not q["model"]:
        raise ConfigError("qa.url and qa.model are required for answer generation")
    return ChatClient(q["url"], q["model"])


def cmd_answer(ctx: Context, args) -> None:
    from .raggen import answer_batch

    name = "index_finetuned.bin" if args.finetuned else "index.bin"
    inputs = [ctx.need(name), ctx.need("corpus.clean.jsonl"), ctx.need_data("eval_queries")]
    q = ctx.cfg["qa"]
    system = None
    if q["system_template"]:
        inputs.append(ctx.require(Path(q["system_template"]), "answer (qa.system_template points nowhere)"))
        system = Path(q["system_template"]).read_text(encoding="utf-8").rstrip("\n")
    out = ctx.art("predictions.jsonl")

    def go():
        records = answer_batch(ctx.queries("eval_queries"), ctx.load_index(args.finetuned), ctx.corpus(),
                               _qa_client(ctx.cfg), q["style"], q["k"], system, q["concurrency"],
                               q["retries"], q["base_delay"])
        write_jsonl(out, (r.to_dict() for r in records))
        failed = sum(r.error is not None for r in records)
        print(f"answer: {len(records)} predictions, {failed} failures")

    ctx.run("answer", inputs, ["qa"], [out], go, {"finetuned": args.finetuned})


def cmd_eval_qa(ctx: Context, args) -> None:
    from .evalkit import lenient_match

    inputs = [ctx.need("predictions.jsonl")]
    out = ctx.art("qa_report.json")

    def go():
        rows = read_jsonl(inputs[0])
        if not rows:
            raise MissingArtifactError("predictions.jsonl is empty; rerun `reward-rag answer`")
        ok = [r for r in rows if r["prediction"] is not None]
        report = {
            "n": len(rows),
            "failures": len(rows) - len(ok),
            "em": sum(r["em"] for r in rows) / len(rows),
            "acc-lenient": sum(lenient_match(r["prediction"], r["gold"]) for r in ok) / len(rows),
            "per_query": [{"query_id": r["query_id"], "em": r["em"]} for r in rows],
        }
        _write_json(out, report)
        print(json.dumps({k: report[k] for k in ("n", "failures", "em", "acc-lenient")}))

    ctx.run("eval-qa", inputs, [], [out], go)


def cmd_agreement(ctx: Context, args) -> None:
    from .critic import agreement, read_feedback

    a = ctx.require(Path(args.a), "collect")
    b = ctx.require(Path(args.b), "collect")
    out = Path(args.out) if args.out else ctx.art("agreement.json")

    def go():
        m = agreement(read_feedback(a), read_feedback(b))
        _write_json(out, m.to_dict())
        print(f"agreement: {m.agreement_percent:.1f}% over {m.total} pairs")

    ctx.run("agreement", [a, b], [], [out], go)


COMMANDS = {
    "synth": (cmd_synth, "generate the planted-topic synthetic dataset"),
    "ingest": (cmd_ingest, "validate and normalize the corpus JSONL"),
    "index": (cmd_index, "embed the corpus into an exact retrieval index"),
    "sample": (cmd_sample, "pick critic candidates per query"),
    "collect": (cmd_collect, "grade candidate pairs with the critic"),
    "train-reward": (cmd_train_reward, "fit the reward head on critic grades"),
    "score": (cmd_score, "score candidate pairs with the reward head"),
    "mine": (cmd_mine, "mine positive / hard-negative triples"),
    "train-encoder": (cmd_train_encoder, "fine-tune the retrieval adapter"),
    "eval-retrieval": (cmd_eval_retrieval, "NDCG@k or Recall@k of an index"),
    "answer": (cmd_answer, "generate answers from retrieved passages"),
    "eval-qa": (cmd_eval_qa, "exact match over predictions"),
    "agreement": (cmd_agreement, "confusion matrix between two feedback files"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--workdir", help="overrides paths.workdir")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--force", action="store_true", help="rerun even if the manifest says up-to-date")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="reward-rag", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {name: sub.add_parser(name, parents=[common], help=h) for name, (_, h) in COMMANDS.items()}
    subs["synth"].add_argument("--seed", type=int, help="overrides synth.seed")
    subs["synth"].add_argument("--noise", type=float, help="overrides synth.noise")
    subs["ingest"].add_argument("--corpus", help="overrides paths.corpus")
    subs["ingest"].add_argument("--skip-bad", action="store_true", help="skip malformed lines instead of aborting")
    for name in ("index", "eval-retrieval", "answer"):
        subs[name].add_argument("--finetuned", action="store_true", help="use the fine-tuned composed encoder")
    subs["train-reward"].add_argument("--epochs", type=int, help="overrides reward.epochs")
    subs["mine"].add_argument("--threshold", type=float, help="overrides mining.pos_threshold")
    subs["train-encoder"].add_argument("--epochs", type=int, help="overrides finetune.epochs")
    subs["eval-retrieval"].add_argument("--metric", choices=["ndcg", "recall"], help="overrides eval.metric")
    subs["eval-retrieval"].add_argument("--k", type=int, help="overrides eval.k")
    subs["answer"].add_argument("--style", choices=["short-answer", "true-false"], help="overrides qa.style")
    subs["agreement"].add_argument("--a", required=True, help="first feedback JSONL")
    subs["agreement"].add_argument("--b", required=True, help="second feedback JSONL")
    subs["agreement"].add_argument("--out", help="output JSON (default: workdir/agreement.json)")
    return parser


_FLAG_KEYS = {
    ("synth", "seed"): "synth.seed",
    ("synth", "noise"): "synth.noise",
    ("ingest", "corpus"): "paths.corpus",
    ("train-reward", "epochs"): "reward.epochs",
    ("mine", "threshold"): "mining.pos_threshold",
    ("train-encoder", "epochs"): "finetune.epochs",
    ("eval-retrieval", "metric"): "eval.metric",
    ("eval-retrieval", "k"): "eval.k",
    ("answer", "style"): "qa.style",
}


def resolve_from_args(args) -> dict:
    file_values = load_toml(args.config) if args.config else None
    overrides = [parse_override(o) for o in args.overrides]
    for (cmd, attr), key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if cmd == args.command and value is not None:
            overrides.append((key.split("."), value))
    if args.workdir:
        overrides.append((["paths", "workdir"], args.workdir))
    return resolve_config(file_values, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_from_args(args)
        ctx = Context(cfg, args.force)
        ctx.workdir.mkdir(parents=True, exist_ok=True)
        try:
            with FileLock(str(ctx.art(".lock")), timeout=0):
                _write_json(ctx.art("config.resolved.json"), cfg)
                COMMANDS[args.command][0](ctx, args)
        except Timeout:
            print(f"error: workdir {ctx.workdir} is locked by another run", file=sys.stderr)
            return 1
    except RewardRagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
