"""Transcript rendering, token budgets with left truncation, and ChatML text.

The ChatML wire form is byte-exact:

    <|im_start|>system\\n{system}<|im_end|>\\n
    <|im_start|>user\\n{user}<|im_end|>\\n
    <|im_start|>assistant\\n[{assistant}<|im_end|>\\n]

The assistant block is present only for training examples; inference
examples end right after the assistant header line. Field contents may
never contain the markers themselves; that is an error, not something we
silently escape, because silent rewriting would corrupt training data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .corpus import CallTranscript
from .prompts import PromptSpec, system_prompt

MARKER_START = "<|im_start|>"
MARKER_END = "<|im_end|>"

HEURISTIC_COUNTER_NAME = "heuristic-bytes-div-4"


class MarkerError(ValueError):
    """A ChatML marker appeared inside a field."""


class ChatMlParseError(ValueError):
    """ChatML text does not follow the render grammar."""


class BudgetError(ValueError):
    """The prompt alone cannot fit the configured token budget."""


class CounterSpecError(ValueError):
    """Unknown or unusable token-counter specification."""


@dataclass(frozen=True)
class TokenBudget:
    """Token budget for one full rendered example.

    context_window is the target model's window; completion_reserve is
    held back for the generated summary; overhead_reserve is optional
    extra slack for counter inaccuracy (markers are already counted as
    part of the rendered example).
    """

    context_window: int = 4096
    completion_reserve: int = 256
    overhead_reserve: int = 0

    def __post_init__(self) -> None:
        if self.context_window <= self.completion_reserve + self.overhead_reserve:
            raise ValueError(
                f"context_window {self.context_window} must exceed reserves "
                f"{self.completion_reserve} + {self.overhead_reserve}"
            )

    @property
    def prompt_allowance(self) -> int:
        return self.context_window - self.completion_reserve - self.overhead_reserve


@dataclass(frozen=True)
class TokenCounter:
    """Named token-count capability; count("") == 0 and counting is
    monotone under concatenation for the built-in heuristic."""

    name: str
    fn: Callable[[str], int]

    def count(self, text: str) -> int:
        return self.fn(text)


def _heuristic_count(text: str) -> int:
    return math.ceil(len(text.encode("utf-8")) / 4)


class _VocabCounter:
    """Greedy longest-match tokenizer over a newline-delimited vocabulary.

    Unmatched characters count as one token each.
    """

    def __init__(self, tokens: list[str]):
        # Buckets keep length-descending order so the first prefix hit is
        # the longest match.
        ordered = sorted(set(t for t in tokens if t), key=len, reverse=True)
        self._by_first: dict[str, list[str]] = {}
        for tok in ordered:
            self._by_first.setdefault(tok[0], []).append(tok)

    def __call__(self, text: str) -> int:
        count = 0
        pos = 0
        n = len(text)
        while pos < n:
            matched = 1
            for tok in self._by_first.get(text[pos], ()):
                if text.startswith(tok, pos):
                    matched = len(tok)
                    break
            pos += matched
            count += 1
        return count


def make_token_counter(spec: str) -> TokenCounter:
    """Build a counter from "heuristic" or "vocab:<path>"."""
    if spec == "heuristic":
        return TokenCounter(name=HEURISTIC_COUNTER_NAME, fn=_heuristic_count)
    if spec.startswith("vocab:"):
        path = Path(spec[len("vocab:"):])
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise CounterSpecError(f"cannot read vocabulary file {path}: {exc}") from exc
        tokens = [ln for ln in lines if ln]
        if not tokens:
            raise CounterSpecError(f"vocabulary file {path} is empty")
        return TokenCounter(name=f"vocab:{path.name}", fn=_VocabCounter(tokens))
    raise CounterSpecError(f"unknown token counter spec {spec!r}")


@dataclass(frozen=True)
class ChatMlExample:
    system: str
    user: str
    assistant: str | None = None

    def __post_init__(self) -> None:
        for name, value in (("system", self.system), ("user", self.user), ("assistant", self.assistant)):
            if value is None:
                continue
            if MARKER_START in value or MARKER_END in value:
                raise MarkerError(f"ChatML marker inside {name} field")


def render_transcript(t: CallTranscript) -> str:
    """One "speaker {i}: {text}" line per turn, newline-joined, no trailing newline."""
    return "\n".join(f"speaker {turn.speaker}: {turn.text}" for turn in t.turns)


def render_chatml(e: ChatMlExample) -> str:
    out = (
        f"{MARKER_START}system\n{e.system}{MARKER_END}\n"
        f"{MARKER_START}user\n{e.user}{MARKER_END}\n"
        f"{MARKER_START}assistant\n"
    )
    if e.assistant is not None:
        out += f"{e.assistant}{MARKER_END}\n"
    return out


def _byte_offset(s: str, pos: int) -> int:
    return len(s[:pos].encode("utf-8"))


def parse_chatml(s: str) -> ChatMlExample:
    """Invert render_chatml; raises ChatMlParseError with a byte offset."""
    pos = 0

    def fail(msg: str, at: int) -> None:
        raise ChatMlParseError(f"{msg} at byte offset {_byte_offset(s, at)}")

    def expect(token: str) -> None:
        nonlocal pos
        if not s.startswith(token, pos):
            fail(f"expected {token!r}", pos)
        pos += len(token)

    def read_field(name: str) -> str:
        nonlocal pos
        end = s.find(f"{MARKER_END}\n", pos)
        if end == -1:
            fail(f"missing {MARKER_END!r} closing the {name} field", pos)
        content = s[pos:end]
        if MARKER_START in content:
            fail(f"misordered marker inside {name} field", pos + content.index(MARKER_START))
        pos = end + len(MARKER_END) + 1
        return content

    expect(f"{MARKER_START}system\n")
    system = read_field("system")
    expect(f"{MARKER_START}user\n")
    user = read_field("user")
    expect(f"{MARKER_START}assistant\n")
    if pos == len(s):
        return ChatMlExample(system=system, user=user, assistant=None)
    assistant = read_field("assistant")
    if pos != len(s):
        fail("trailing data after assistant block", pos)
    return ChatMlExample(system=system, user=user, assistant=assistant)


def example_token_count(e: ChatMlExample, counter: TokenCounter) -> int:
    """Token count of the inference-form rendering (assistant stripped)."""
    probe = ChatMlExample(system=e.system, user=e.user, assistant=None)
    return counter.count(render_chatml(probe))


def fits_budget(e: ChatMlExample, budget: TokenBudget, counter: TokenCounter) -> bool:
    """Budget safety check: rendered inference form plus the completion
    reserve must fit the context window."""
    return example_token_count(e, counter) + budget.completion_reserve <= budget.context_window


def build_user_message(
    t: CallTranscript,
    p: PromptSpec,
    budget: TokenBudget,
    counter: TokenCounter,
    *,
    system: str | None = None,
) -> str:
    """Render "{transcript}\\n{prompt}" within the budget, truncating left.

    Whole turns are dropped from the front until the full rendered example
    (system, user, markers, empty assistant) fits the prompt allowance.
    If even the final turn alone overflows, that turn loses words from its
    front. Raises BudgetError when the prompt by itself cannot fit.
    """
    sys_text = system_prompt() if system is None else system

    def fits(user: str) -> bool:
        rendered = render_chatml(ChatMlExample(system=sys_text, user=user, assistant=None))
        return counter.count(rendered) <= budget.prompt_allowance

    if not fits(p.text):
        raise BudgetError(
            f"prompt {p.id} alone exceeds the budget "
            f"(allowance {budget.prompt_allowance} tokens)"
        )

    lines = [f"speaker {turn.speaker}: {turn.text}" for turn in t.turns]

    def user_for(keep: int) -> str:
        if keep == 0:
            return p.text
        return "\n".join(lines[-keep:]) + "\n" + p.text

    n = len(lines)
    if fits(user_for(n)):
        return user_for(n)

    # Largest suffix of whole turns that fits; fits() is monotone for
    # counters that are monotone under concatenation, so binary search
    # matches the brute-force maximal suffix.
    lo, hi = 0, n  # fits(user_for(lo)) holds, fits(user_for(hi)) does not
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fits(user_for(mid)):
            lo = mid
        else:
            hi = mid
    if lo >= 1:
        return user_for(lo)

    # Not even the final turn fits whole: drop words from its front.
    last = t.turns[-1]
    words = last.text.split()

    def user_words(keep: int) -> str:
        if keep == 0:
            return p.text
        return f"speaker {last.speaker}: {' '.join(words[-keep:])}\n{p.text}"

    total = len(words)
    if fits(user_words(total)):
        # Whitespace runs in the raw turn collapsed under split/join.
        return user_words(total)
    lo, hi = 0, total
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fits(user_words(mid)):
            lo = mid
        else:
            hi = mid
    return user_words(lo)
