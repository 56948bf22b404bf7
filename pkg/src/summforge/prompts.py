"""The frozen catalog of 20 summarization prompts, sampling, and length parsing.

The catalog has one default prompt, thirteen general prompts covering
different aspects of a call (intent, next steps, sentiment, ...), and six
length-oriented prompts constraining sentence, word, or paragraph count.
Ids are positional and frozen; texts are byte-frozen, including the mixed
apostrophe characters, so downstream datasets stay traceable to the
catalog entry that produced them.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass
from enum import Enum


class PromptCategory(Enum):
    DEFAULT = "default"
    GENERAL = "general"
    LENGTH = "length"


class LengthUnit(Enum):
    WORDS = "words"
    SENTENCES = "sentences"
    PARAGRAPHS = "paragraphs"


@dataclass(frozen=True)
class LengthConstraint:
    unit: LengthUnit
    target: int

    def __post_init__(self) -> None:
        if self.target < 1:
            raise ValueError(f"length target must be >= 1, got {self.target}")


@dataclass(frozen=True)
class PromptSpec:
    id: int
    category: PromptCategory
    text: str
    constraint: LengthConstraint | None = None

    def __post_init__(self) -> None:
        if (self.constraint is not None) != (self.category is PromptCategory.LENGTH):
            raise ValueError("constraint must be present exactly for length prompts")


_DEFAULT_TEXT = "Summarize the call transcript above."

_GENERAL_TEXTS = (
    "From the call transcript above, extract and summarize important points about 1. call intent, 2. next steps, 3. outcome.",
    "Summarize the key issues and resolutions discussed in this call center transcript.",
    "Provide a brief summary of the customer’s issue and the call center agent’s response from the transcript.",
    "Extract and summarize the main points of discussion, including any action items, from this call transcript.",
    "Generate a brief overview of the call, highlighting any commitments or follow-ups mentioned in the transcript.",
    "Analyze this call transcript and summarize the outcome of the customer service interaction.",
    "Summarize the steps taken by the agent to address the customer's issue in this call transcript.",
    "Briefly summarize the key facts of the customer’s inquiry and the agent’s assistance from this transcript.",
    "From the transcript, summarize the customer's feedback and how the call center agent handled it.",
    "Summarize the customer’s issue and the steps discussed in the call transcript.",
    "From the transcript, create a summary of any technical issues reported and the solutions provided.",
    "Create a summary of the call transcript, focusing on the customer satisfaction level by the end.",
    "Summarize the emotional tone of the customer and the empathy expressed by the agent in the call transcript.",
)

_LENGTH_TEXTS = (
    "Summarize the call transcript above in one sentence.",
    "Summarize the call transcript above in two sentences.",
    "Summarize the call transcript above in 50 words.",
    "Summarize the call transcript above in 100 words.",
    "Summarize the call transcript above in one paragraph.",
    "Summarize the call transcript above in two paragraphs.",
)

_SYSTEM_PROMPT = "You are good at summarizing call transcripts."

_NUMBER_WORDS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
}

_UNIT_LOOKUP = {
    "word": LengthUnit.WORDS,
    "sentence": LengthUnit.SENTENCES,
    "paragraph": LengthUnit.PARAGRAPHS,
}

_CONSTRAINT_RE = re.compile(
    r"\bin\s+(?P<number>\d+|" + "|".join(_NUMBER_WORDS) + r")\s+"
    r"(?P<unit>words?|sentences?|paragraphs?)\b",
    re.IGNORECASE,
)


def parse_length_constraint(prompt_text: str) -> LengthConstraint | None:
    """Recognize "in N words/sentences/paragraphs" (digits or one..ten).

    Returns None for unconstrained prompts; never raises.
    """
    m = _CONSTRAINT_RE.search(prompt_text)
    if m is None:
        return None
    number = m.group("number").lower()
    target = int(number) if number.isdigit() else _NUMBER_WORDS[number]
    if target < 1:
        return None
    unit = _UNIT_LOOKUP[m.group("unit").lower().rstrip("s")]
    return LengthConstraint(unit=unit, target=target)


def _build_catalog() -> tuple[PromptSpec, ...]:
    specs = [PromptSpec(0, PromptCategory.DEFAULT, _DEFAULT_TEXT)]
    for text in _GENERAL_TEXTS:
        specs.append(PromptSpec(len(specs), PromptCategory.GENERAL, text))
    for text in _LENGTH_TEXTS:
        constraint = parse_length_constraint(text)
        assert constraint is not None, text
        specs.append(PromptSpec(len(specs), PromptCategory.LENGTH, text, constraint))
    return tuple(specs)


_CATALOG = _build_catalog()

CATALOG_SIZE = len(_CATALOG)


def catalog() -> list[PromptSpec]:
    """The full 20-entry prompt catalog in frozen id order."""
    return list(_CATALOG)


def system_prompt() -> str:
    return _SYSTEM_PROMPT


def prompt_by_id(prompt_id: int) -> PromptSpec:
    if not 0 <= prompt_id < CATALOG_SIZE:
        raise ValueError(f"prompt id out of range: {prompt_id}")
    return _CATALOG[prompt_id]


def default_prompt() -> PromptSpec:
    return _CATALOG[0]


def find_length_prompt(unit: LengthUnit, target: int) -> PromptSpec:
    """The catalog entry carrying the given length constraint."""
    want = LengthConstraint(unit=unit, target=target)
    for spec in _CATALOG:
        if spec.constraint == want:
            return spec
    raise ValueError(f"no catalog prompt with constraint {target} {unit.value}")


def sample_prompts(transcript_id: str, k: int, seed: int) -> list[PromptSpec]:
    """Draw k distinct prompts, uniformly without replacement.

    The draw is keyed by (transcript_id, seed) through a hash, so dataset
    generation is reproducible per transcript without a shared RNG stream,
    and different transcripts are decorrelated.
    """
    if not 1 <= k <= CATALOG_SIZE:
        raise ValueError(f"k must be between 1 and {CATALOG_SIZE}, got {k}")
    digest = hashlib.sha256(f"{seed}:{transcript_id}".encode("utf-8")).digest()
    rng = random.Random(int.from_bytes(digest[:8], "big"))
    return [_CATALOG[i] for i in rng.sample(range(CATALOG_SIZE), k)]


def catalog_to_json() -> list[dict]:
    """Catalog export for audits: id, category, text, optional constraint."""
    out = []
    for spec in _CATALOG:
        entry: dict = {"id": spec.id, "category": spec.category.value, "text": spec.text}
        if spec.constraint is not None:
            entry["constraint"] = {
                "unit": spec.constraint.unit.value,
                "target": spec.constraint.target,
            }
        out.append(entry)
    return out
