#!/usr/bin/env python3
"""Run the whole pipeline against in-process mock models.

Generates a small corpus, ingests it, produces teacher records, mixes in
nothing external, evaluates the mock candidate with mock judges, and
renders the report, all inside one workspace directory. Handy as a smoke
test and as a template for wiring real endpoints.

Usage:
    python scripts/run_mock_pipeline.py --workspace demo_workspace
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from summforge.cli import main as summforge_main

sys.path.insert(0, str(Path(__file__).parent))
from make_demo_corpus import make_call  # noqa: E402

CONFIG_TEMPLATE = """
[endpoints.teacher]
url = "mock:teacher"
model = "mock-teacher"

[endpoints.candidate]
url = "mock:candidate"
model = "mock-candidate"

[endpoints.judge_finesure]
url = "mock:judge"
model = "mock-judge"

[endpoints.judge_rubric]
url = "mock:judge"
model = "mock-judge"

[seeds]
sampling = 4
shuffle = 4

[generation]
k_prompts_per_call = 5
created_at = "2025-01-01T00:00:00Z"

[paths]
workspace = {workspace}
"""

PLAN = """
include_default = true
include_general = true
include_length = true
shuffle_seed = 4
"""


def run(argv: list[str]) -> None:
    code = summforge_main(argv)
    if code != 0:
        raise SystemExit(f"step failed ({code}): {' '.join(argv)}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workspace", default="demo_workspace")
    parser.add_argument("--calls", type=int, default=10)
    args = parser.parse_args()

    workspace = Path(args.workspace)
    workspace.mkdir(parents=True, exist_ok=True)

    corpus_path = workspace / "raw_corpus.jsonl"
    rng = random.Random(4)
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for i in range(args.calls):
            fh.write(json.dumps(make_call(rng, i), ensure_ascii=False) + "\n")

    config_path = workspace / "pipeline.toml"
    config_path.write_text(
        CONFIG_TEMPLATE.format(workspace=json.dumps(str(workspace))), encoding="utf-8"
    )
    plan_path = workspace / "plan.toml"
    plan_path.write_text(PLAN, encoding="utf-8")

    base = ["--config", str(config_path)]
    run(base + ["ingest", "--corpus", str(corpus_path)])
    run(base + ["synth", "generate", "--corpus", str(workspace / "corpus.jsonl")])
    run(base + ["synth", "mix", "--plan", str(plan_path),
                "--out", str(workspace / "train.jsonl")])
    run(base + ["emit", "--records", str(workspace / "train.jsonl"),
                "--out", str(workspace / "train.chatml"), "--format", "chatml_text"])
    run(base + ["eval", "run", "--corpus", str(workspace / "corpus.jsonl"),
                "--mixture", "none"])
    run(base + ["eval", "length", "--corpus", str(workspace / "corpus.jsonl"),
                "--target", "50", "--out-dir", str(workspace / "eval" / "length-50")])
    run(base + ["report", "--in", str(workspace / "eval"),
                "--out", str(workspace / "report.md")])

    print()
    print((workspace / "report.md").read_text(encoding="utf-8"))


if __name__ == "__main__":
    main()
