"""Single entry point wiring the pipeline into subcommands.

Commands never mutate their inputs; all artifacts land under the
configured workspace. Every command ends with one machine-readable JSON
summary line on stdout and a manifest next to its outputs. Exit codes:
0 success, 1 operational error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import mocks, prompts, synthesis
from .config import ConfigError, EndpointSettings, PipelineConfig, load_config
from .context import make_token_counter
from .evaluation import (
    JudgeSuite,
    builtin_rubric,
    evaluate_model,
)
from .gateway import (
    GatewayError,
    GenerationProfile,
    Gateway,
    HttpTransport,
    ModelClient,
)
from .prompts import LengthUnit
from .reporting import aggregate, render_report

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_ENV_VAR = "SUMMFORGE_CONFIG"

JUDGE_PROFILE = GenerationProfile(temperature=0.0, max_tokens=1024)


class OperationalError(RuntimeError):
    pass


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _summary_line(command: str, **fields) -> None:
    print(json.dumps({"command": command, **fields}, ensure_ascii=False))


def _load_pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    path = args.config or os.environ.get(CONFIG_ENV_VAR)
    config = load_config(path) if path else PipelineConfig()
    if args.workspace:
        config = dataclasses.replace(config, workspace=Path(args.workspace))
    return config


def _build_client(
    config: PipelineConfig,
    role: str,
    profile: GenerationProfile,
    url_override: str | None = None,
) -> ModelClient:
    if url_override and role not in config.endpoints:
        settings = EndpointSettings(url=url_override, model=role)
    else:
        settings = config.endpoint(role)
        if url_override:
            settings = EndpointSettings(
                url=url_override, model=settings.model, auth_env=settings.auth_env
            )
    if settings.url.startswith("mock:"):
        transport = mocks.deterministic_transport()
        gateway = Gateway(transport, policy=config.retry, sleep=lambda _s: None)
    else:
        gateway = Gateway(
            HttpTransport(),
            policy=config.retry,
            auth_env=settings.auth_env,
            concurrency=config.concurrency,
        )
    return ModelClient(gateway, endpoint=settings.url, model=settings.model, profile=profile)


# --- subcommand implementations ---------------------------------------------


def _cmd_ingest(args: argparse.Namespace, config: PipelineConfig) -> int:
    transcripts = corpus_mod.load_corpus(args.corpus)
    out_path = Path(args.out) if args.out else config.workspace / "corpus.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    corpus_mod.write_corpus(transcripts, out_path)
    stats = corpus_mod.corpus_stats(transcripts)
    stats_path = out_path.with_name(out_path.stem + ".stats.json")
    stats_path.write_text(
        json.dumps(stats.to_json_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    _write_manifest(out_path.with_name(out_path.stem + ".manifest.json"), {
        "command": "ingest",
        "input": str(args.corpus),
        "output": str(out_path),
        "num_calls": stats.num_calls,
        "content_sha256": _sha256_file(out_path),
    })
    _summary_line("ingest", output=str(out_path), num_calls=stats.num_calls,
                  content_sha256=_sha256_file(out_path))
    return 0


def _cmd_stats(args: argparse.Namespace, config: PipelineConfig) -> int:
    transcripts = corpus_mod.load_corpus(args.corpus)
    stats = corpus_mod.corpus_stats(transcripts)
    payload = stats.to_json_dict()
    if args.out:
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        _write_manifest(out_path.with_suffix(out_path.suffix + ".manifest.json"), {
            "command": "stats",
            "input": str(args.corpus),
            "output": str(out_path),
            "content_sha256": _sha256_file(out_path),
        })
    print(json.dumps(payload, ensure_ascii=False))
    return 0


def _cmd_prompts_export(args: argparse.Namespace, config: PipelineConfig) -> int:
    payload = prompts.catalog_to_json()
    text = json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
    if args.out:
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text, encoding="utf-8")
        _write_manifest(out_path.with_suffix(out_path.suffix + ".manifest.json"), {
            "command": "prompts-export",
            "output": str(out_path),
            "count": len(payload),
            "content_sha256": _sha256_file(out_path),
        })
        _summary_line("prompts-export", output=str(out_path), count=len(payload))
    else:
        print(text, end="")
    return 0


def _cmd_synth_generate(args: argparse.Namespace, config: PipelineConfig) -> int:
    transcripts = corpus_mod.load_corpus(args.corpus)
    counter = make_token_counter(config.generation.counter)
    teacher = _build_client(
        config, "teacher",
        GenerationProfile(temperature=0.0, max_tokens=config.generation.teacher_max_tokens),
        url_override=args.teacher,
    )
    k = args.k if args.k is not None else config.generation.k_prompts_per_call
    seed = args.seed if args.seed is not None else config.seeds.sampling
    created_at = args.created_at or config.generation.created_at or ""
    out_dir = Path(args.out_dir) if args.out_dir else config.workspace / "synth"
    out_dir.mkdir(parents=True, exist_ok=True)

    outcome = synthesis.generate_summ_dataset(
        transcripts,
        teacher,
        k=k,
        seed=seed,
        budget=config.budget,
        counter=counter,
        created_at=created_at,
        failure_threshold=config.generation.failure_threshold,
        max_workers=config.concurrency,
    )
    records_path = out_dir / "records.jsonl"
    manifest = synthesis.emit_training_file(outcome.records, records_path, "jsonl", seed=seed)
    synthesis.write_rejects(outcome.rejects, out_dir / "rejects.jsonl")
    _write_manifest(out_dir / "manifest.json", {
        "command": "synth-generate",
        "input": str(args.corpus),
        "k": k,
        "seed": seed,
        "counter": counter.name,
        "records": manifest.to_json_dict(),
        "rejects": len(outcome.rejects),
    })
    _summary_line("synth-generate", records=manifest.total, rejects=len(outcome.rejects),
                  output=str(records_path), content_sha256=manifest.content_sha256)
    return 0


def _load_mixture_plan(path: Path, default_shuffle_seed: int) -> synthesis.MixturePlan:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise OperationalError(f"cannot read mixture plan {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    allowed = {"include_default", "include_general", "include_length", "shuffle_seed", "external"}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{path}: {key}: unknown mixture plan key")
    externals = []
    for i, entry in enumerate(data.get("external", [])):
        if not isinstance(entry, dict) or "name" not in entry or "path" not in entry:
            raise ConfigError(f"{path}: external[{i}]: need name and path")
        ext_path = Path(entry["path"])
        if not ext_path.is_absolute():
            ext_path = path.parent / ext_path
        externals.append((entry["name"], str(ext_path)))
    return synthesis.MixturePlan(
        include_default=data.get("include_default", True),
        include_general=data.get("include_general", True),
        include_length=data.get("include_length", True),
        external_files=tuple(externals),
        shuffle_seed=data.get("shuffle_seed", default_shuffle_seed),
    )


def _cmd_synth_mix(args: argparse.Namespace, config: PipelineConfig) -> int:
    records_path = Path(args.records) if args.records else config.workspace / "synth" / "records.jsonl"
    summ = synthesis.read_ift_jsonl(records_path)
    plan = _load_mixture_plan(Path(args.plan), config.seeds.shuffle)
    mixed = synthesis.mix_datasets(plan, summ)
    fmt = "chatml_text" if args.format == "chatml" else args.format
    manifest = synthesis.emit_training_file(mixed, args.out, fmt, seed=plan.shuffle_seed)
    _write_manifest(Path(args.out).with_suffix(Path(args.out).suffix + ".manifest.json"), {
        "command": "synth-mix",
        "plan": str(args.plan),
        "records": str(records_path),
        **manifest.to_json_dict(),
    })
    _summary_line("synth-mix", total=manifest.total, output=str(args.out),
                  counts_by_source=manifest.counts_by_source,
                  content_sha256=manifest.content_sha256)
    return 0


def _cmd_emit(args: argparse.Namespace, config: PipelineConfig) -> int:
    records = synthesis.read_ift_jsonl(args.records)
    fmt = "chatml_text" if args.format == "chatml" else args.format
    manifest = synthesis.emit_training_file(records, args.out, fmt)
    _write_manifest(Path(args.out).with_suffix(Path(args.out).suffix + ".manifest.json"), {
        "command": "emit",
        **manifest.to_json_dict(),
    })
    _summary_line("emit", total=manifest.total, output=str(args.out),
                  content_sha256=manifest.content_sha256)
    return 0


def _read_existing_call_ids(results_path: Path) -> set[str]:
    if not results_path.exists():
        return set()
    ids = set()
    with open(results_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                ids.add(json.loads(line)["call_id"])
    return ids


def _parse_mixture_arg(raw: str | None) -> tuple[bool, bool, bool] | None:
    if raw is None:
        return None
    if raw == "none":
        return None
    chosen = {part.strip() for part in raw.split(",") if part.strip()}
    unknown = chosen - {"default", "general", "length"}
    if unknown:
        raise ConfigError(f"--mixture: unknown categories {sorted(unknown)}")
    return ("default" in chosen, "general" in chosen, "length" in chosen)


def _run_evaluation(
    args: argparse.Namespace,
    config: PipelineConfig,
    *,
    prompt_spec,
    metrics: set[str],
    command: str,
) -> int:
    transcripts = corpus_mod.load_corpus(args.corpus)
    if args.limit:
        transcripts = transcripts[: args.limit]
    counter = make_token_counter(config.generation.counter)
    candidate = _build_client(
        config, "candidate",
        GenerationProfile(temperature=0.0, max_tokens=config.generation.candidate_max_tokens),
    )
    judges = JudgeSuite(
        finesure=_build_client(config, "judge_finesure", JUDGE_PROFILE)
        if "finesure" in metrics else None,
        rubric=_build_client(config, "judge_rubric", JUDGE_PROFILE)
        if "rubrics" in metrics else None,
        rubrics=tuple(builtin_rubric(name) for name in args.rubrics.split(","))
        if "rubrics" in metrics else (),
    )
    model_name = args.model_name or config.endpoint("candidate").model
    out_dir = Path(args.out_dir) if args.out_dir else config.workspace / "eval" / model_name
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.jsonl"
    if args.fresh and args.resume:
        raise ConfigError("--fresh and --resume are mutually exclusive")
    if args.fresh and results_path.exists():
        results_path.unlink()
    skip = _read_existing_call_ids(results_path)

    results = evaluate_model(
        transcripts,
        candidate,
        judges,
        metrics,
        prompt=prompt_spec,
        budget=config.budget,
        counter=counter,
        policy=config.adherence,
        system=prompts.system_prompt(),
        out_path=results_path,
        skip_call_ids=skip,
        max_workers=config.concurrency,
    )
    mixture_flags = _parse_mixture_arg(args.mixture)
    run_meta = {
        "model_name": model_name,
        "mixture_flags": list(mixture_flags) if mixture_flags else None,
        "prompt_id": prompt_spec.id,
        "metrics": sorted(metrics),
        "adherence_policy": config.adherence.describe(),
    }
    (out_dir / "run.json").write_text(
        json.dumps(run_meta, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    _write_manifest(out_dir / "manifest.json", {
        "command": command,
        "input": str(args.corpus),
        "items_total": len(skip) + len(results),
        "items_new": len(results),
        "items_skipped": len(skip),
        "results_sha256": _sha256_file(results_path),
        **run_meta,
    })
    _summary_line(command, model=model_name, items_new=len(results),
                  items_skipped=len(skip), results=str(results_path),
                  results_sha256=_sha256_file(results_path))
    return 0


def _cmd_eval_run(args: argparse.Namespace, config: PipelineConfig) -> int:
    metrics = {m.strip() for m in args.metrics.split(",") if m.strip()}
    unknown = metrics - {"finesure", "rubrics", "length"}
    if unknown:
        raise ConfigError(f"--metrics: unknown metrics {sorted(unknown)}")
    return _run_evaluation(
        args, config,
        prompt_spec=prompts.default_prompt(),
        metrics=metrics,
        command="eval-run",
    )


def _cmd_eval_length(args: argparse.Namespace, config: PipelineConfig) -> int:
    unit = LengthUnit(args.unit)
    prompt_spec = prompts.find_length_prompt(unit, args.target)
    return _run_evaluation(
        args, config,
        prompt_spec=prompt_spec,
        metrics={"length"},
        command="eval-length",
    )


def _cmd_report(args: argparse.Namespace, config: PipelineConfig) -> int:
    in_dir = Path(args.results_dir)
    run_dirs = sorted(p.parent for p in in_dir.glob("*/run.json"))
    if (in_dir / "run.json").exists():
        run_dirs.insert(0, in_dir)
    if not run_dirs:
        raise OperationalError(f"no run.json found under {in_dir}")
    reports = []
    for run_dir in run_dirs:
        meta = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
        rows = []
        with open(run_dir / "results.jsonl", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rows.append(json.loads(line))
        flags = meta.get("mixture_flags")
        reports.append(aggregate(rows, meta["model_name"],
                                 tuple(flags) if flags else None))
    text = render_report(reports, args.format)
    if args.out:
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text, encoding="utf-8")
        _write_manifest(out_path.with_suffix(out_path.suffix + ".manifest.json"), {
            "command": "report",
            "inputs": [str(d) for d in run_dirs],
            "output": str(out_path),
            "format": args.format,
            "content_sha256": _sha256_file(out_path),
        })
        _summary_line("report", models=len(reports), output=str(out_path),
                      content_sha256=_sha256_file(out_path))
    else:
        print(text, end="")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="summforge",
        description="Build and judge length-controllable call summarization corpora.",
    )
    parser.add_argument("--config", help=f"TOML config path (or ${CONFIG_ENV_VAR})")
    parser.add_argument("--workspace", help="override the workspace directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus and write normalized JSONL plus stats")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("stats", help="print corpus statistics as JSON")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_stats)

    p_prompts = sub.add_parser("prompts", help="prompt catalog utilities")
    prompts_sub = p_prompts.add_subparsers(dest="prompts_command", required=True)
    p = prompts_sub.add_parser("export", help="export the prompt catalog as JSON")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_prompts_export)

    p_synth = sub.add_parser("synth", help="synthetic dataset generation")
    synth_sub = p_synth.add_subparsers(dest="synth_command", required=True)
    p = synth_sub.add_parser("generate", help="generate teacher summaries for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--teacher", help="teacher endpoint URL override")
    p.add_argument("--out-dir", "--out", dest="out_dir")
    p.add_argument("--created-at", help="pin the provenance timestamp")
    p.set_defaults(fn=_cmd_synth_generate)
    p = synth_sub.add_parser("mix", help="mix category subsets with external IFT files")
    p.add_argument("--plan", required=True, help="mixture plan TOML")
    p.add_argument("--records", help="summarization records JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("chatml", "chatml_text", "jsonl"), default="jsonl")
    p.set_defaults(fn=_cmd_synth_mix)

    p = sub.add_parser("emit", help="re-emit a records file in another format")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("chatml", "chatml_text", "jsonl"), required=True)
    p.set_defaults(fn=_cmd_emit)

    p_eval = sub.add_parser("eval", help="evaluate a served model")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)
    p = eval_sub.add_parser("run", help="judge-based evaluation with the default prompt")
    p.add_argument("--corpus", required=True)
    p.add_argument("--metrics", default="finesure,rubrics")
    p.add_argument("--rubrics", default="FACTUAL_VALIDITY,HONESTY,COMPLETENESS")
    p.add_argument("--model-name")
    p.add_argument("--mixture", help='e.g. "default,length" or "none"')
    p.add_argument("--out-dir")
    p.add_argument("--limit", type=int)
    p.add_argument("--resume", action="store_true",
                   help="skip items with existing results (the default)")
    p.add_argument("--fresh", action="store_true",
                   help="recompute everything (default resumes)")
    p.set_defaults(fn=_cmd_eval_run)
    p = eval_sub.add_parser("length", help="length-adherence evaluation with a length prompt")
    p.add_argument("--corpus", required=True)
    p.add_argument("--unit", choices=[u.value for u in LengthUnit], default="words")
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--model-name")
    p.add_argument("--mixture")
    p.add_argument("--out-dir")
    p.add_argument("--limit", type=int)
    p.add_argument("--resume", action="store_true",
                   help="skip items with existing results (the default)")
    p.add_argument("--fresh", action="store_true")
    p.set_defaults(fn=_cmd_eval_length)

    p = sub.add_parser("report", help="aggregate evaluation results into a table")
    p.add_argument("--in", dest="results_dir", required=True)
    p.add_argument("--format", choices=("markdown", "csv", "json"), default="markdown")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_pipeline_config(args)
        return args.fn(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (corpus_mod.CorpusError, synthesis.SynthesisError, synthesis.MixtureError,
            GatewayError, OperationalError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted; partial results were flushed", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
