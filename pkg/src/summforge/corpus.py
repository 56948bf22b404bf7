"""Ingestion, validation, splitting, and statistics for call-transcript corpora.

The input format is line-delimited JSON, one call per line:

    {"call_id": str, "turns": [{"speaker": str|int, "text": str}],
     "accent": str?, "topic": str?, "split": str?}

Raw speaker labels (channel names, agent ids, ...) are anonymized onto
indices 0/1 in order of first appearance within each call, so diarized
single-channel input behaves the same as two-channel input.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable


class CorpusError(ValueError):
    """Raised for malformed corpus records or invalid split requests."""


class Accent(Enum):
    AFRICAN_AMERICAN = "AfricanAmerican"
    CHINESE = "Chinese"
    HISPANIC = "Hispanic"
    SOUTHERN = "Southern"
    UNKNOWN = "Unknown"


class Split(Enum):
    TRAIN = "Train"
    VALIDATION = "Validation"
    TEST = "Test"
    UNASSIGNED = "Unassigned"


# Accent labels arrive in a few spellings ("African American", "AfricanAmerican",
# "african_american"); normalize by dropping separators and case.
_ACCENT_LOOKUP = {
    a.value.replace(" ", "").casefold(): a for a in Accent
} | {"africanamerican": Accent.AFRICAN_AMERICAN}

_SPLIT_LOOKUP = {s.value.casefold(): s for s in Split} | {"val": Split.VALIDATION, "dev": Split.VALIDATION}


@dataclass(frozen=True)
class Turn:
    """One speaker turn; speaker is the anonymized index 0 or 1."""

    speaker: int
    text: str

    def __post_init__(self) -> None:
        if self.speaker not in (0, 1):
            raise CorpusError(f"turn speaker must be 0 or 1, got {self.speaker!r}")
        if not self.text.strip():
            raise CorpusError("turn text must contain at least one non-whitespace character")


@dataclass(frozen=True)
class CallTranscript:
    call_id: str
    turns: tuple[Turn, ...]
    accent: Accent = Accent.UNKNOWN
    topic: str | None = None
    split: Split = Split.UNASSIGNED

    def __post_init__(self) -> None:
        if not self.call_id:
            raise CorpusError("call_id must be non-empty")
        if not self.turns:
            raise CorpusError(f"call {self.call_id}: empty turn list")
        object.__setattr__(self, "turns", tuple(self.turns))


@dataclass(frozen=True)
class CorpusStats:
    num_calls: int
    avg_turns_per_call: float
    avg_words_per_turn: float
    unique_words: int
    accent_counts: dict[str, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "num_calls": self.num_calls,
            "avg_turns_per_call": self.avg_turns_per_call,
            "avg_words_per_turn": self.avg_words_per_turn,
            "unique_words": self.unique_words,
            "accent_counts": dict(self.accent_counts),
        }


def _parse_accent(raw: object, where: str) -> Accent:
    if raw is None or raw == "":
        return Accent.UNKNOWN
    if not isinstance(raw, str):
        raise CorpusError(f"{where}: accent must be a string, got {type(raw).__name__}")
    key = raw.replace(" ", "").replace("_", "").casefold()
    if key not in _ACCENT_LOOKUP:
        raise CorpusError(f"{where}: unrecognized accent {raw!r}")
    return _ACCENT_LOOKUP[key]


def _parse_split(raw: object, where: str) -> Split:
    if raw is None or raw == "":
        return Split.UNASSIGNED
    if not isinstance(raw, str):
        raise CorpusError(f"{where}: split must be a string, got {type(raw).__name__}")
    key = raw.casefold()
    if key not in _SPLIT_LOOKUP:
        raise CorpusError(f"{where}: unrecognized split {raw!r}")
    return _SPLIT_LOOKUP[key]


def _transcript_from_record(record: dict, where: str) -> CallTranscript:
    if not isinstance(record, dict):
        raise CorpusError(f"{where}: record must be a JSON object")
    call_id = record.get("call_id")
    if not isinstance(call_id, str) or not call_id:
        raise CorpusError(f"{where}: missing or invalid call_id")
    raw_turns = record.get("turns")
    if not isinstance(raw_turns, list) or not raw_turns:
        raise CorpusError(f"call {call_id}: empty turn list ({where})")

    # Anonymize: first distinct raw label -> 0, second -> 1.
    label_to_index: dict[object, int] = {}
    turns: list[Turn] = []
    for i, raw_turn in enumerate(raw_turns):
        if not isinstance(raw_turn, dict):
            raise CorpusError(f"call {call_id}: turn {i} is not an object ({where})")
        label = raw_turn.get("speaker")
        if label is None or isinstance(label, (dict, list)):
            raise CorpusError(f"call {call_id}: turn {i} has invalid speaker label ({where})")
        if label not in label_to_index:
            if len(label_to_index) == 2:
                raise CorpusError(f"call {call_id}: more than two speakers")
            label_to_index[label] = len(label_to_index)
        text = raw_turn.get("text")
        if not isinstance(text, str) or not text.strip():
            raise CorpusError(f"call {call_id}: turn {i} has empty text ({where})")
        turns.append(Turn(speaker=label_to_index[label], text=text))

    return CallTranscript(
        call_id=call_id,
        turns=tuple(turns),
        accent=_parse_accent(record.get("accent"), f"call {call_id}"),
        topic=record.get("topic") if isinstance(record.get("topic"), str) else None,
        split=_parse_split(record.get("split"), f"call {call_id}"),
    )


def parse_corpus(source: Iterable[str] | IO[str]) -> list[CallTranscript]:
    """Parse a line-delimited JSON record stream into validated transcripts.

    Preserves record order and turn order. Raises CorpusError naming the
    line number for malformed records, and the call id for semantic
    problems (more than two speakers, empty turns, duplicates).
    """
    transcripts: list[CallTranscript] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: malformed JSON record ({exc.msg})") from exc
        transcript = _transcript_from_record(record, f"line {lineno}")
        if transcript.call_id in seen_ids:
            raise CorpusError(f"line {lineno}: duplicate call_id {transcript.call_id!r}")
        seen_ids.add(transcript.call_id)
        transcripts.append(transcript)
    return transcripts


def load_corpus(path: str | Path) -> list[CallTranscript]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh)


def transcript_to_record(t: CallTranscript) -> dict:
    """Serialize back to the ingestion record schema (normalized speakers)."""
    record: dict = {
        "call_id": t.call_id,
        "turns": [{"speaker": turn.speaker, "text": turn.text} for turn in t.turns],
        "accent": t.accent.value,
    }
    if t.topic is not None:
        record["topic"] = t.topic
    if t.split is not Split.UNASSIGNED:
        record["split"] = t.split.value
    return record


def write_corpus(transcripts: Iterable[CallTranscript], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            fh.write(json.dumps(transcript_to_record(t), ensure_ascii=False) + "\n")
            n += 1
    return n


def _words(text: str) -> list[str]:
    # Word = maximal run of non-whitespace; punctuation stays attached.
    return text.split()


def corpus_stats(corpus: list[CallTranscript]) -> CorpusStats:
    """Compute corpus-level statistics.

    Totals are accumulated as integers and divided once, so
    avg_turns_per_call * num_calls reproduces the integer turn count.
    Unique words are case-folded but keep punctuation.
    """
    num_calls = len(corpus)
    total_turns = 0
    total_words = 0
    vocabulary: set[str] = set()
    accent_counts: Counter[str] = Counter()
    for t in corpus:
        total_turns += len(t.turns)
        accent_counts[t.accent.value] += 1
        for turn in t.turns:
            ws = _words(turn.text)
            total_words += len(ws)
            vocabulary.update(w.casefold() for w in ws)
    return CorpusStats(
        num_calls=num_calls,
        avg_turns_per_call=total_turns / num_calls if num_calls else 0.0,
        avg_words_per_turn=total_words / total_turns if total_turns else 0.0,
        unique_words=len(vocabulary),
        accent_counts=dict(accent_counts) if num_calls else {},
    )


def split_corpus(
    corpus: list[CallTranscript],
    sizes: tuple[int, int, int],
    seed: int,
) -> tuple[list[CallTranscript], list[CallTranscript], list[CallTranscript]]:
    """Partition a corpus into (train, validation, test) lists.

    Transcripts with a pre-assigned split keep it; the remainder is
    assigned by a seeded shuffle. Deterministic for a fixed seed.
    Raises CorpusError if the requested sizes cannot be satisfied.
    """
    train_n, val_n, test_n = sizes
    if min(sizes) < 0:
        raise CorpusError(f"split sizes must be non-negative, got {sizes}")
    if train_n + val_n + test_n > len(corpus):
        raise CorpusError(
            f"split sizes {sizes} exceed corpus size {len(corpus)}"
        )

    buckets: dict[Split, list[CallTranscript]] = {
        Split.TRAIN: [],
        Split.VALIDATION: [],
        Split.TEST: [],
    }
    unassigned: list[CallTranscript] = []
    for t in corpus:
        if t.split in buckets:
            buckets[t.split].append(t)
        else:
            unassigned.append(t)

    wanted = {Split.TRAIN: train_n, Split.VALIDATION: val_n, Split.TEST: test_n}
    for split, want in wanted.items():
        if len(buckets[split]) > want:
            raise CorpusError(
                f"{len(buckets[split])} transcripts pre-assigned to {split.value} "
                f"exceed requested size {want}"
            )

    pool = list(unassigned)
    random.Random(seed).shuffle(pool)
    for split in (Split.TRAIN, Split.VALIDATION, Split.TEST):
        need = wanted[split] - len(buckets[split])
        if need > len(pool):
            raise CorpusError(
                f"not enough unassigned transcripts to fill {split.value} "
                f"(need {need}, have {len(pool)})"
            )
        buckets[split].extend(pool[:need])
        del pool[:need]

    return buckets[Split.TRAIN], buckets[Split.VALIDATION], buckets[Split.TEST]
