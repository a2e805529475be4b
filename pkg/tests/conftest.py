from __future__ import annotations

import json
from pathlib import Path

import pytest

from sdgsift.corpus import Document
from sdgsift.prompting import PromptSpec, default_prompt_spec
from sdgsift.registry import Registry, default_registry


@pytest.fixture(scope="session")
def reg() -> Registry:
    return default_registry()


@pytest.fixture(scope="session")
def sdg1_spec() -> PromptSpec:
    return default_prompt_spec()


def make_doc(i: int, labels: set[int] = frozenset({1}), abstract: str | None = None) -> Document:
    return Document(
        doc_key=f"10.9999/test.{i:05d}",
        doi=f"10.9999/test.{i:05d}",
        title=f"Study {i:05d} on poverty interventions",
        abstract=abstract
        or (
            f"This study number {i} evaluates a cash transfer program. "
            "Household income rose and fewer families fell below the poverty line."
        ),
        year=2023,
        sdg_labels=frozenset(labels),
    )


def relevant_text(detail: str = "cites concrete reductions in poverty") -> str:
    return f"CLASSIFICATION: Relevant\nREASONING: The abstract {detail}."


def nonrelevant_text(detail: str = "mentions poverty only in passing") -> str:
    return f"CLASSIFICATION: Non-Relevant\nREASONING: The abstract {detail}."


def write_replay_script(
    path: Path, entries: dict[tuple[str, str], str]
) -> Path:
    with open(path, "w", encoding="utf-8") as fp:
        for (doc_key, model_id), text in entries.items():
            fp.write(
                json.dumps({"doc_key": doc_key, "model_id": model_id, "text": text})
                + "\n"
            )
    return path


class CountingBackend:
    """Wraps a backend and counts completion calls; for cache-contract tests."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def complete(self, doc_key, messages, decoding):
        self.calls += 1
        return self.inner.complete(doc_key, messages, decoding)
