#!/usr/bin/env python3
"""Generate a synthetic two-speaker call corpus for pipeline dry runs.

The calls are template-stitched small talk, useful only for exercising
ingestion, budgeting, and the mock pipeline at arbitrary scale.

Usage:
    python scripts/make_demo_corpus.py --calls 50 --seed 7 --out demo_corpus.jsonl
"""

from __future__ import annotations

import argparse
import json
import random

ACCENTS = ["African American", "Chinese", "Hispanic", "Southern"]
TOPICS = ["travel", "insurance", "movies", "banking", "groceries", "phone plan"]

AGENT_LINES = [
    "Thank you for calling, how can I help you today?",
    "Let me pull up your account details.",
    "I can see the issue on my end now.",
    "Could you confirm the booking reference for me?",
    "That change is processed and you will get a confirmation email.",
    "Is there anything else I can help you with today?",
    "I understand, that must be frustrating.",
    "The upgrade includes priority boarding and checked bags.",
    "Your refund should arrive within five business days.",
]

CUSTOMER_LINES = [
    "Hi, I am calling about my recent order.",
    "I need to change the date on my reservation.",
    "The charge on my statement looks wrong to me.",
    "Sure, the reference number is on my screen somewhere.",
    "That would be great, thank you so much.",
    "Can you also send me the details in writing?",
    "I was on hold for quite a while yesterday.",
    "Yes, one more question about the loyalty points.",
    "No, that covers everything I needed today.",
]


def make_call(rng: random.Random, index: int) -> dict:
    n_turns = rng.randint(6, 40)
    turns = []
    for j in range(n_turns):
        pool = AGENT_LINES if j % 2 == 0 else CUSTOMER_LINES
        text = rng.choice(pool)
        if rng.random() < 0.3:
            text += " " + rng.choice(pool)
        turns.append({"speaker": "agent" if j % 2 == 0 else "customer", "text": text})
    return {
        "call_id": f"demo-{index:05d}",
        "turns": turns,
        "accent": rng.choice(ACCENTS),
        "topic": rng.choice(TOPICS),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--calls", type=int, default=50)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", default="demo_corpus.jsonl")
    args = parser.parse_args()

    rng = random.Random(args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        for i in range(args.calls):
            fh.write(json.dumps(make_call(rng, i), ensure_ascii=False) + "\n")
    print(f"wrote {args.calls} calls to {args.out}")


if __name__ == "__main__":
    main()
