"""Teacher-driven dataset generation, category mixing, and corpus emission.

For every transcript, k prompts are drawn from the catalog, a budget-safe
user message is built, and the teacher model's summary becomes the
assistant turn of one training record. Records are tagged by the prompt
category that produced them so category subsets can be ablated at mix
time. Failed teacher calls land in a rejects list, never silently
disappear, and the whole job fails when the reject fraction passes a
threshold.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .context import ChatMlExample, TokenBudget, TokenCounter, build_user_message, render_chatml
from .corpus import CallTranscript
from .gateway import GatewayError, ModelClient
from .prompts import PromptCategory, PromptSpec, sample_prompts, system_prompt

SOURCE_DEFAULT = "summ_default"
SOURCE_GENERAL = "summ_general"
SOURCE_LENGTH = "summ_length"

_CATEGORY_SOURCE = {
    PromptCategory.DEFAULT: SOURCE_DEFAULT,
    PromptCategory.GENERAL: SOURCE_GENERAL,
    PromptCategory.LENGTH: SOURCE_LENGTH,
}


def external_source(name: str) -> str:
    return f"external:{name}"


class SynthesisError(RuntimeError):
    pass


class MixtureError(ValueError):
    pass


@dataclass(frozen=True)
class Provenance:
    counter_name: str
    created_at: str
    call_id: str | None = None
    prompt_id: int | None = None
    teacher_model: str | None = None

    def to_json_dict(self) -> dict:
        out: dict = {"counter_name": self.counter_name, "created_at": self.created_at}
        if self.call_id is not None:
            out["call_id"] = self.call_id
        if self.prompt_id is not None:
            out["prompt_id"] = self.prompt_id
        if self.teacher_model is not None:
            out["teacher_model"] = self.teacher_model
        return out


@dataclass(frozen=True)
class IftRecord:
    source: str
    example: ChatMlExample
    provenance: Provenance

    def __post_init__(self) -> None:
        if self.example.assistant is None:
            raise ValueError("training records need an assistant completion")
        if self.source in (SOURCE_DEFAULT, SOURCE_GENERAL, SOURCE_LENGTH):
            p = self.provenance
            if p.call_id is None or p.prompt_id is None or p.teacher_model is None:
                raise ValueError(
                    f"{self.source} records must carry call_id, prompt_id, and teacher_model"
                )

    def to_json_dict(self) -> dict:
        return {
            "source": self.source,
            "system": self.example.system,
            "user": self.example.user,
            "assistant": self.example.assistant,
            "provenance": self.provenance.to_json_dict(),
        }


def record_from_json(obj: dict, *, default_source: str = "external:unknown") -> IftRecord:
    prov_raw = obj.get("provenance") or {}
    provenance = Provenance(
        counter_name=prov_raw.get("counter_name", "external"),
        created_at=prov_raw.get("created_at", ""),
        call_id=prov_raw.get("call_id"),
        prompt_id=prov_raw.get("prompt_id"),
        teacher_model=prov_raw.get("teacher_model"),
    )
    return IftRecord(
        source=obj.get("source", default_source),
        example=ChatMlExample(
            system=obj.get("system", ""),
            user=obj["user"],
            assistant=obj["assistant"],
        ),
        provenance=provenance,
    )


@dataclass(frozen=True)
class Reject:
    call_id: str
    prompt_id: int
    error: str

    def to_json_dict(self) -> dict:
        return {"call_id": self.call_id, "prompt_id": self.prompt_id, "error": self.error}


@dataclass(frozen=True)
class MixturePlan:
    include_default: bool = True
    include_general: bool = True
    include_length: bool = True
    external_files: tuple[tuple[str, str], ...] = ()
    shuffle_seed: int = 0

    def __post_init__(self) -> None:
        if not (self.include_default or self.include_general or self.include_length
                or self.external_files):
            raise MixtureError("mixture plan selects no sources")

    def selected_sources(self) -> set[str]:
        out = set()
        if self.include_default:
            out.add(SOURCE_DEFAULT)
        if self.include_general:
            out.add(SOURCE_GENERAL)
        if self.include_length:
            out.add(SOURCE_LENGTH)
        return out


@dataclass
class SynthesisOutcome:
    records: list[IftRecord]
    rejects: list[Reject]


def generate_summ_dataset(
    corpus: Sequence[CallTranscript],
    teacher: ModelClient,
    *,
    k: int = 5,
    seed: int = 0,
    budget: TokenBudget = TokenBudget(),
    counter: TokenCounter,
    created_at: str,
    failure_threshold: float = 0.05,
    system: str | None = None,
    max_workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> SynthesisOutcome:
    """Generate one training record per (transcript, sampled prompt).

    Record order is corpus order crossed with sample order, so a fixed
    (corpus, k, seed, teacher) is fully reproducible. Raises
    SynthesisError when the reject fraction exceeds failure_threshold.
    """
    if not corpus:
        raise SynthesisError("corpus is empty")
    sys_text = system_prompt() if system is None else system

    jobs = [
        (t, p)
        for t in corpus
        for p in sample_prompts(t.call_id, k, seed)
    ]

    def work(job: tuple[CallTranscript, PromptSpec]) -> IftRecord | Reject:
        transcript, prompt = job
        try:
            user = build_user_message(transcript, prompt, budget, counter, system=sys_text)
            completion = teacher.complete(user, system=sys_text)
            example = ChatMlExample(system=sys_text, user=user, assistant=completion.text)
        except (GatewayError, ValueError) as exc:
            return Reject(call_id=transcript.call_id, prompt_id=prompt.id, error=str(exc))
        return IftRecord(
            source=_CATEGORY_SOURCE[prompt.category],
            example=example,
            provenance=Provenance(
                counter_name=counter.name,
                created_at=created_at,
                call_id=transcript.call_id,
                prompt_id=prompt.id,
                teacher_model=completion.model,
            ),
        )

    outcomes: list[IftRecord | Reject]
    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(work, jobs))
    else:
        outcomes = []
        for i, job in enumerate(jobs):
            outcomes.append(work(job))
            if progress is not None:
                progress(i + 1, len(jobs))

    records = [o for o in outcomes if isinstance(o, IftRecord)]
    rejects = [o for o in outcomes if isinstance(o, Reject)]
    if jobs and len(rejects) / len(jobs) > failure_threshold:
        raise SynthesisError(
            f"{len(rejects)} of {len(jobs)} teacher calls failed "
            f"({len(rejects) / len(jobs):.1%} > threshold {failure_threshold:.1%})"
        )
    return SynthesisOutcome(records=records, rejects=rejects)


def read_ift_jsonl(path: str | Path, *, source_override: str | None = None) -> list[IftRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                record = record_from_json(
                    obj,
                    default_source=source_override or "external:unknown",
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise MixtureError(f"{path}:{lineno}: bad record: {exc}") from exc
            if source_override is not None:
                record = IftRecord(
                    source=source_override, example=record.example, provenance=record.provenance
                )
            records.append(record)
    return records


def mix_datasets(plan: MixturePlan, summ: Sequence[IftRecord]) -> list[IftRecord]:
    """Concatenate the selected category subsets with external files and
    apply one seeded shuffle. Every selected record appears exactly once."""
    selected_sources = plan.selected_sources()
    combined = [r for r in summ if r.source in selected_sources]
    for name, path in plan.external_files:
        try:
            combined.extend(read_ift_jsonl(path, source_override=external_source(name)))
        except OSError as exc:
            raise MixtureError(f"cannot read external file {path}: {exc}") from exc
    if not combined:
        raise MixtureError("mixture selected zero records")
    random.Random(plan.shuffle_seed).shuffle(combined)
    return combined


@dataclass(frozen=True)
class EmitManifest:
    path: str
    format: str
    total: int
    counts_by_source: dict[str, int]
    counter_names: tuple[str, ...]
    seed: int | None
    content_sha256: str

    def to_json_dict(self) -> dict:
        return {
            "path": self.path,
            "format": self.format,
            "total": self.total,
            "counts_by_source": dict(self.counts_by_source),
            "counter_names": list(self.counter_names),
            "seed": self.seed,
            "content_sha256": self.content_sha256,
        }


def emit_training_file(
    records: Sequence[IftRecord],
    path: str | Path,
    format: str = "jsonl",
    *,
    seed: int | None = None,
) -> EmitManifest:
    """Write records as ChatML text (blank-line separated) or JSONL and
    return a manifest with per-source counts and a content hash."""
    if format not in ("chatml_text", "jsonl"):
        raise ValueError(f"unknown emit format {format!r}")
    if format == "chatml_text":
        content = "\n".join(render_chatml(r.example) for r in records)
    else:
        content = "".join(
            json.dumps(r.to_json_dict(), ensure_ascii=False) + "\n" for r in records
        )
    data = content.encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)

    counts: dict[str, int] = {}
    for r in records:
        counts[r.source] = counts.get(r.source, 0) + 1
    counter_names = tuple(sorted({r.provenance.counter_name for r in records}))
    return EmitManifest(
        path=str(path),
        format=format,
        total=len(records),
        counts_by_source=counts,
        counter_names=counter_names,
        seed=seed,
        content_sha256=hashlib.sha256(data).hexdigest(),
    )


def write_rejects(rejects: Iterable[Reject], path: str | Path) -> int:
    n = 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in rejects:
            fh.write(json.dumps(r.to_json_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n
