"""Judge-based and deterministic metrics for candidate summaries.

Fact metrics follow the fine-grained scheme: a judge extracts at most 16
key facts from the transcript, a second structured call labels summary
sentences and fact coverage, and the three scores are plain ratios over
those boolean vectors. Rubric grading asks an absolute 1-5 judgment
against a five-level rubric. Length adherence is purely deterministic
counting.

Judge prompts live as text assets next to this module; judge output goes
through a bounded JSON-repair path (strip code fences, trim to the
outermost braces, one reminder retry) and anything still unparseable is a
per-item error, never a fabricated score.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .context import TokenBudget, TokenCounter, build_user_message
from .corpus import CallTranscript
from .gateway import GatewayError, ModelClient
from .prompts import LengthConstraint, LengthUnit, PromptSpec, default_prompt

logger = logging.getLogger(__name__)

_ASSETS = Path(__file__).parent / "assets"

MAX_KEY_FACTS = 16


class JudgeOutputError(ValueError):
    """Judge returned something we refuse to coerce into a verdict."""


class ScoreExtractionError(JudgeOutputError):
    """No valid 1-5 score could be extracted from a grading reply."""


@dataclass(frozen=True)
class KeyFactSet:
    facts: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "facts", tuple(self.facts))
        if not 1 <= len(self.facts) <= MAX_KEY_FACTS:
            raise ValueError(f"key fact count must be 1..{MAX_KEY_FACTS}, got {len(self.facts)}")
        if any(not f.strip() for f in self.facts):
            raise ValueError("key facts must be non-empty")


@dataclass(frozen=True)
class FactAlignment:
    sentence_factual: tuple[bool, ...]
    fact_covered: tuple[bool, ...]
    sentence_has_keyfact: tuple[bool, ...]

    def __post_init__(self) -> None:
        for name in ("sentence_factual", "fact_covered", "sentence_has_keyfact"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.sentence_factual) != len(self.sentence_has_keyfact):
            raise ValueError("sentence label vectors must have equal length")


@dataclass(frozen=True)
class FineSureScores:
    faithfulness: float
    completeness: float
    conciseness: float


@dataclass(frozen=True)
class Rubric:
    name: str
    criteria: str
    score_descriptions: tuple[str, str, str, str, str]

    def render(self) -> str:
        lines = [f"[{self.criteria}]"]
        lines += [f"Score {i + 1}: {d}" for i, d in enumerate(self.score_descriptions)]
        return "\n".join(lines)


@dataclass(frozen=True)
class LikertResult:
    score: int
    feedback: str
    judge_model: str

    def __post_init__(self) -> None:
        if not 1 <= self.score <= 5:
            raise ValueError(f"Likert score must be in [1, 5], got {self.score}")


@dataclass(frozen=True)
class AdherencePolicy:
    """Word targets allow a relative tolerance (bounds rounded outward);
    sentence and paragraph targets are exact."""

    words_tolerance: float = 0.10

    def describe(self) -> str:
        pct = round(self.words_tolerance * 100)
        return f"words within ±{pct}% (rounded outward); sentences and paragraphs exact"

    def word_bounds(self, target: int) -> tuple[int, int]:
        # Exact rational arithmetic: 50 * 1.1 must bound at 55, not
        # ceil(55.000000000000004) == 56.
        tol = Fraction(str(self.words_tolerance))
        return (
            math.floor(target * (1 - tol)),
            math.ceil(target * (1 + tol)),
        )


@dataclass(frozen=True)
class LengthAdherenceResult:
    constraint: LengthConstraint
    measured: int
    adherent: bool
    policy: str


def _load_asset(name: str) -> str:
    return (_ASSETS / name).read_text(encoding="utf-8")


_KEYFACT_TEMPLATE = _load_asset("keyfact_prompt.txt")
_ALIGNMENT_TEMPLATE = _load_asset("alignment_prompt.txt")
_GRADING_TEMPLATE = _load_asset("rubric_grading_prompt.txt")

BUILTIN_RUBRIC_NAMES = ("FACTUAL_VALIDITY", "HONESTY", "COMPLETENESS")


def load_rubric(path: str | Path, name: str | None = None) -> Rubric:
    """Read a rubric JSON file: criteria plus score1..score5 descriptions."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    try:
        descriptions = tuple(data[f"score{i}_description"] for i in range(1, 6))
        criteria = data["criteria"]
    except KeyError as exc:
        raise ValueError(f"rubric file {path} is missing key {exc}") from exc
    return Rubric(
        name=name or path.stem.upper(),
        criteria=criteria,
        score_descriptions=descriptions,  # type: ignore[arg-type]
    )


def builtin_rubric(name: str) -> Rubric:
    if name not in BUILTIN_RUBRIC_NAMES:
        raise ValueError(f"unknown builtin rubric {name!r}; have {BUILTIN_RUBRIC_NAMES}")
    return load_rubric(_ASSETS / "rubrics" / f"{name.lower()}.json", name=name)


# --- judge-output JSON handling -------------------------------------------

_FENCE_RE = re.compile(r"^```[a-zA-Z]*\n?|\n?```$")


def _parse_judge_json(text: str) -> dict:
    candidate = text.strip()
    if candidate.startswith("```"):
        candidate = _FENCE_RE.sub("", candidate).strip()
    try:
        obj = json.loads(candidate)
    except json.JSONDecodeError:
        start, end = candidate.find("{"), candidate.rfind("}")
        if start == -1 or end <= start:
            raise JudgeOutputError("judge output contains no JSON object")
        try:
            obj = json.loads(candidate[start:end + 1])
        except json.JSONDecodeError as exc:
            raise JudgeOutputError(f"judge output is not parseable JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise JudgeOutputError("judge output is JSON but not an object")
    return obj


def _ask_judge_json(judge: ModelClient, prompt: str) -> dict:
    """One judge call with a single explicit-JSON reminder retry."""
    reply = judge.complete(prompt)
    try:
        return _parse_judge_json(reply.text)
    except JudgeOutputError:
        reminder = prompt + "\n\nAnswer in JSON."
        retry = judge.complete(reminder)
        return _parse_judge_json(retry.text)


# --- key facts -------------------------------------------------------------


def extract_key_facts(transcript_text: str, judge: ModelClient) -> KeyFactSet:
    """Ask the judge to decompose the transcript into at most 16 key facts."""
    prompt = _KEYFACT_TEMPLATE.replace("{transcript}", transcript_text)
    obj = _ask_judge_json(judge, prompt)
    facts = obj.get("key_facts")
    if not isinstance(facts, list) or not facts:
        raise JudgeOutputError('judge output lacks a non-empty "key_facts" list')
    if not all(isinstance(f, str) and f.strip() for f in facts):
        raise JudgeOutputError("key facts must be non-empty strings")
    if len(facts) > MAX_KEY_FACTS:
        logger.warning(
            "judge returned %d key facts; truncating to %d", len(facts), MAX_KEY_FACTS
        )
        facts = facts[:MAX_KEY_FACTS]
    return KeyFactSet(facts=tuple(facts))


# --- sentence segmentation -------------------------------------------------

_TERMINATOR_RE = re.compile(r"[.!?]+(?=\s|$)")

# Common abbreviations that end with '.' but do not end a sentence.
_ABBREVIATIONS = frozenset({
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.",
    "e.g.", "i.e.", "etc.", "vs.", "cf.", "u.s.", "u.k.", "no.",
    "inc.", "co.", "approx.",
})


def split_sentences(text: str) -> list[str]:
    """Split on ., !, ? followed by whitespace or end, guarding common
    abbreviations. Pieces are stripped and never empty; joining them
    reproduces the input up to inter-sentence whitespace."""
    sentences: list[str] = []
    start = 0
    for m in _TERMINATOR_RE.finditer(text):
        end = m.end()
        head = text[:end].split()
        token = head[-1] if head else ""
        if token.casefold() in _ABBREVIATIONS:
            continue
        piece = text[start:end].strip()
        if piece:
            sentences.append(piece)
        start = end
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


# --- fact alignment --------------------------------------------------------


def judge_fact_alignment(
    summary_sentences: Sequence[str],
    key_facts: KeyFactSet,
    transcript_text: str,
    judge: ModelClient,
) -> FactAlignment:
    """One structured judge call labeling sentences and fact coverage."""
    if not summary_sentences:
        raise ValueError("summary has no sentences to label")
    payload = json.dumps(
        {"summary_sentences": list(summary_sentences), "key_facts": list(key_facts.facts)},
        ensure_ascii=False,
    )
    prompt = (
        _ALIGNMENT_TEMPLATE
        .replace("{transcript}", transcript_text)
        .replace("{payload}", payload)
    )
    obj = _ask_judge_json(judge, prompt)

    def labels(key: str, expected: int) -> tuple[bool, ...]:
        value = obj.get(key)
        if not isinstance(value, list) or not all(isinstance(v, bool) for v in value):
            raise JudgeOutputError(f'"{key}" must be a list of booleans')
        if len(value) != expected:
            raise JudgeOutputError(
                f'label count mismatch for "{key}": got {len(value)}, expected {expected}'
            )
        return tuple(value)

    return FactAlignment(
        sentence_factual=labels("sentence_factual", len(summary_sentences)),
        fact_covered=labels("fact_covered", len(key_facts.facts)),
        sentence_has_keyfact=labels("sentence_has_keyfact", len(summary_sentences)),
    )


def finesure_scores(a: FactAlignment) -> FineSureScores:
    """Three ratios: factual sentences / sentences, covered facts / facts,
    key-fact-bearing sentences / sentences."""
    if not a.sentence_factual or not a.fact_covered:
        raise ValueError("alignment has no sentences or no key facts")
    return FineSureScores(
        faithfulness=sum(a.sentence_factual) / len(a.sentence_factual),
        completeness=sum(a.fact_covered) / len(a.fact_covered),
        conciseness=sum(a.sentence_has_keyfact) / len(a.sentence_has_keyfact),
    )


# --- rubric grading --------------------------------------------------------


@dataclass(frozen=True)
class ScoreExtraction:
    """How to pull the 1-5 score out of a grading reply: the last
    standalone integer in [1, 5] after the final result delimiter."""

    delimiter: str = "[RESULT]"
    score_pattern: str = r"(?<!\d)([1-5])(?!\d)"

    def extract(self, text: str) -> tuple[int, str]:
        before, sep, after = text.rpartition(self.delimiter)
        if not sep:
            raise ScoreExtractionError(
                f"no result delimiter {self.delimiter!r} in judge reply"
            )
        matches = re.findall(self.score_pattern, after)
        if not matches:
            raise ScoreExtractionError("no standalone integer in [1, 5] after delimiter")
        return int(matches[-1]), before.strip()


DEFAULT_EXTRACTION = ScoreExtraction()


def rubric_score(
    transcript_text: str,
    summary: str,
    rubric: Rubric,
    judge: ModelClient,
    extraction: ScoreExtraction = DEFAULT_EXTRACTION,
) -> LikertResult:
    """Absolute-grading judge call; returns the 1-5 score plus feedback."""
    instruction = f"{transcript_text}\n{default_prompt().text}"
    prompt = (
        _GRADING_TEMPLATE
        .replace("{instruction}", instruction)
        .replace("{response}", summary)
        .replace("{rubric}", rubric.render())
    )
    reply = judge.complete(prompt)
    score, feedback = extraction.extract(reply.text)
    return LikertResult(score=score, feedback=feedback, judge_model=judge.model)


# --- deterministic length metrics -----------------------------------------


def count_units(text: str, unit: LengthUnit) -> int:
    if unit is LengthUnit.WORDS:
        return len(text.split())
    if unit is LengthUnit.SENTENCES:
        return len(split_sentences(text))
    blocks = re.split(r"\n\s*\n", text)
    return sum(1 for b in blocks if b.strip())


def check_length_adherence(
    summary: str,
    constraint: LengthConstraint,
    policy: AdherencePolicy = AdherencePolicy(),
) -> LengthAdherenceResult:
    measured = count_units(summary, constraint.unit)
    if constraint.unit is LengthUnit.WORDS:
        lo, hi = policy.word_bounds(constraint.target)
        adherent = lo <= measured <= hi
    else:
        adherent = measured == constraint.target
    return LengthAdherenceResult(
        constraint=constraint,
        measured=measured,
        adherent=adherent,
        policy=policy.describe(),
    )


# --- per-item orchestration -------------------------------------------------


@dataclass(frozen=True)
class JudgeSuite:
    """The judge endpoints plus the rubrics to grade with."""

    finesure: ModelClient | None = None
    rubric: ModelClient | None = None
    rubrics: tuple[Rubric, ...] = ()


@dataclass
class ItemResult:
    call_id: str
    prompt_id: int
    summary: str
    finesure: FineSureScores | None = None
    alignment: FactAlignment | None = None
    key_facts: KeyFactSet | None = None
    rubrics: dict[str, LikertResult] = field(default_factory=dict)
    length: LengthAdherenceResult | None = None
    errors: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        row: dict = {
            "call_id": self.call_id,
            "prompt_id": self.prompt_id,
            "summary": self.summary,
        }
        if self.finesure is not None:
            fs: dict = {
                "faithfulness": self.finesure.faithfulness,
                "completeness": self.finesure.completeness,
                "conciseness": self.finesure.conciseness,
            }
            if self.alignment is not None:
                fs["sentence_factual"] = list(self.alignment.sentence_factual)
                fs["fact_covered"] = list(self.alignment.fact_covered)
                fs["sentence_has_keyfact"] = list(self.alignment.sentence_has_keyfact)
            if self.key_facts is not None:
                fs["key_facts"] = list(self.key_facts.facts)
            row["finesure"] = fs
        if self.rubrics:
            row["rubrics"] = {
                name: {"score": r.score, "feedback": r.feedback, "judge_model": r.judge_model}
                for name, r in self.rubrics.items()
            }
        if self.length is not None:
            row["length"] = {
                "unit": self.length.constraint.unit.value,
                "target": self.length.constraint.target,
                "measured": self.length.measured,
                "adherent": self.length.adherent,
                "policy": self.length.policy,
            }
        row["errors"] = list(self.errors)
        if self.provenance:
            row["provenance"] = dict(self.provenance)
        return row


def _strip_prompt(user_message: str, prompt_text: str) -> str:
    """Recover the (possibly truncated) transcript part of a user message."""
    suffix = "\n" + prompt_text
    if user_message.endswith(suffix):
        return user_message[: -len(suffix)]
    return "" if user_message == prompt_text else user_message


def evaluate_item(
    transcript: CallTranscript,
    prompt: PromptSpec,
    candidate: ModelClient,
    judges: JudgeSuite,
    metrics: set[str],
    budget: TokenBudget,
    counter: TokenCounter,
    policy: AdherencePolicy,
    system: str,
) -> ItemResult:
    """Generate one candidate summary and run the selected metrics.

    Judge failures are recorded per metric in `errors` and leave that
    metric unset; they never abort the item.
    """
    user = build_user_message(transcript, prompt, budget, counter, system=system)
    transcript_text = _strip_prompt(user, prompt.text)
    completion = candidate.complete(user, system=system)
    result = ItemResult(
        call_id=transcript.call_id,
        prompt_id=prompt.id,
        summary=completion.text,
        provenance={
            "prompt_text": prompt.text,
            "candidate_model": completion.model,
            "finish_reason": completion.finish_reason.value,
            "counter": counter.name,
            "warnings": list(completion.warnings),
        },
    )

    if "finesure" in metrics:
        if judges.finesure is None:
            result.errors.append("finesure: no judge endpoint configured")
        else:
            try:
                result.key_facts = extract_key_facts(transcript_text, judges.finesure)
                sentences = split_sentences(completion.text)
                result.alignment = judge_fact_alignment(
                    sentences, result.key_facts, transcript_text, judges.finesure
                )
                result.finesure = finesure_scores(result.alignment)
            except (ValueError, GatewayError) as exc:
                result.errors.append(f"finesure: {exc}")
                result.finesure = None

    if "rubrics" in metrics:
        if judges.rubric is None:
            result.errors.append("rubrics: no judge endpoint configured")
        else:
            for rubric in judges.rubrics:
                try:
                    result.rubrics[rubric.name] = rubric_score(
                        transcript_text, completion.text, rubric, judges.rubric
                    )
                except (ValueError, GatewayError) as exc:
                    result.errors.append(f"rubric:{rubric.name}: {exc}")

    if "length" in metrics and prompt.constraint is not None:
        result.length = check_length_adherence(completion.text, prompt.constraint, policy)

    return result


def evaluate_model(
    corpus_split: Iterable[CallTranscript],
    candidate: ModelClient,
    judges: JudgeSuite,
    metrics: set[str],
    *,
    prompt: PromptSpec | None = None,
    budget: TokenBudget = TokenBudget(),
    counter: TokenCounter,
    policy: AdherencePolicy = AdherencePolicy(),
    system: str,
    out_path: str | Path | None = None,
    skip_call_ids: set[str] = frozenset(),
    max_workers: int = 1,
) -> list[ItemResult]:
    """Evaluate every transcript in the split with one prompt.

    Results stream to `out_path` (JSONL, one row per item, appended and
    flushed as each item completes) so interrupted runs can resume by
    passing the already-present call ids in `skip_call_ids`.
    """
    prompt = prompt or default_prompt()
    items = [t for t in corpus_split if t.call_id not in skip_call_ids]

    def work(t: CallTranscript) -> ItemResult:
        try:
            return evaluate_item(
                t, prompt, candidate, judges, metrics, budget, counter, policy, system
            )
        except GatewayError as exc:
            # Candidate generation failed; keep an error row so the run
            # stays resumable and the exclusion tally reconciles.
            return ItemResult(
                call_id=t.call_id,
                prompt_id=prompt.id,
                summary="",
                errors=[f"candidate: {exc}"],
            )

    sink = open(out_path, "a", encoding="utf-8") if out_path is not None else None
    results: list[ItemResult] = []
    try:
        if max_workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                iterator = pool.map(work, items)
                for result in iterator:
                    results.append(result)
                    if sink:
                        sink.write(json.dumps(result.to_json_dict(), ensure_ascii=False) + "\n")
                        sink.flush()
        else:
            for t in items:
                result = work(t)
                results.append(result)
                if sink:
                    sink.write(json.dumps(result.to_json_dict(), ensure_ascii=False) + "\n")
                    sink.flush()
    finally:
        if sink:
            sink.close()
    return results
