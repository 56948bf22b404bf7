from __future__ import annotations

from pathlib import Path

import pytest

from summforge import corpus as corpus_mod
from summforge.context import make_token_counter

DATA_DIR = Path(__file__).parent / "data"

FIXTURE_CORPUS = DATA_DIR / "fixture_corpus.jsonl"
EXTERNAL_IFT = DATA_DIR / "external_ift.jsonl"


@pytest.fixture(scope="session")
def fixture_corpus():
    return corpus_mod.load_corpus(FIXTURE_CORPUS)


@pytest.fixture(scope="session")
def heuristic_counter():
    return make_token_counter("heuristic")
