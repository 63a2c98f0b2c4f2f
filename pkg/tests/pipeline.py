"""Full synthetic pipeline through the CLI, shared by several test modules."""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from reward_rag.cli import main

ROOT = Path(__file__).resolve().parent.parent
SYNTH_CONFIG = ROOT / "configs" / "synthetic.toml"

STAGES = [
    ["synth"], ["ingest"], ["index"], ["sample"], ["collect"], ["train-reward"], ["mine"],
    ["train-encoder"], ["index", "--finetuned"], ["eval-retrieval"], ["eval-retrieval", "--finetuned"],
]


@dataclass
class PipelineRun:
    workdir: Path
    seconds: float
    stage_seconds: dict = field(default_factory=dict)

    def json(self, name):
        with open(self.workdir / name, encoding="utf-8") as f:
            return json.load(f)

    def jsonl(self, name):
        with open(self.workdir / name, encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]


def cli(workdir, *argv, config=SYNTH_CONFIG):
    args = [argv[0], "--config", str(config), "--workdir", str(workdir), *argv[1:]]
    return main(args)


def run_pipeline(workdir, stages=STAGES) -> PipelineRun:
    run = PipelineRun(Path(workdir), 0.0)
    t0 = time.perf_counter()
    for stage in stages:
        t = time.perf_counter()
        code = cli(workdir, *stage)
        if code != 0:
            raise RuntimeError(f"stage {' '.join(stage)} exited with {code}")
        run.stage_seconds[" ".join(stage)] = time.perf_counter() - t
    run.seconds = time.perf_counter() - t0
    return run
