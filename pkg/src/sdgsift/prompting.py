"""Assembly of the five-part evaluation prompt and its identifying digest.

A PromptSpec is declarative: role text, goal targets to quote, guidelines,
few-shot examples, and output instructions. Assembly resolves goal and target
text from the registry and produces a deterministic two-message sequence
(system + user). The digest identifies the fully resolved template plus
decoding parameters and is the cache-invalidation handle: it changes when any
component changes and never depends on the judged document.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import IO, Literal

from .corpus import Document
from .registry import Registry

TRUNCATION_MARKER = "[TRUNCATED]"

# Tokenizer-free budget: reserve headroom for the fixed prompt, then assume
# ~3 characters per token for the abstract itself.
PROMPT_OVERHEAD_TOKENS = 2048
CHARS_PER_TOKEN = 3


class PromptSpecError(ValueError):
    """A prompt spec is incomplete or references unknown registry entries."""


@dataclass(frozen=True)
class FewShotExample:
    label: Literal["Relevant", "NonRelevant"]
    synopsis: str
    rationale: str


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.0
    max_tokens: int = 512

    def fingerprint(self) -> str:
        return f"t={self.temperature:.6f},n={self.max_tokens}"


@dataclass(frozen=True)
class Message:
    role: Literal["system", "user"]
    content: str


MessageSequence = list[Message]


@dataclass(frozen=True)
class PromptSpec:
    goal_number: int
    system_role_text: str
    guidelines_text: str
    target_ids: tuple[str, ...]
    examples: tuple[FewShotExample, ...]
    output_instructions_text: str
    decoding: Decoding = Decoding()

    def validate(self, registry: Registry) -> None:
        if not self.system_role_text.strip():
            raise PromptSpecError("system role text is empty")
        if not self.guidelines_text.strip():
            raise PromptSpecError("guidelines text is empty")
        if not self.output_instructions_text.strip():
            raise PromptSpecError("output instructions text is empty")
        if not self.target_ids:
            raise PromptSpecError("target_ids is empty")
        labels = {ex.label for ex in self.examples}
        if "Relevant" not in labels or "NonRelevant" not in labels:
            raise PromptSpecError("need at least one example of each label")
        for ex in self.examples:
            if not ex.synopsis.strip() or not ex.rationale.strip():
                raise PromptSpecError("example synopsis and rationale must be non-empty")
        goal = registry.get_goal(self.goal_number)
        known = set(goal.target_ids())
        for tid in self.target_ids:
            if tid not in known:
                raise PromptSpecError(
                    f"target {tid!r} not defined for goal {self.goal_number} in registry"
                )
        if self.decoding.temperature < 0:
            raise PromptSpecError("temperature must be >= 0")
        if self.decoding.max_tokens <= 0:
            raise PromptSpecError("max_tokens must be positive")


_EXAMPLE_LABEL_TEXT = {"Relevant": "Relevant", "NonRelevant": "Non-Relevant"}


def _system_message(spec: PromptSpec, registry: Registry) -> str:
    spec.validate(registry)
    goal = registry.get_goal(spec.goal_number)
    lines = [spec.system_role_text.strip(), ""]
    lines += ["SDG DEFINITION:", f"SDG {goal.number}: {goal.definition}", ""]
    lines.append("TARGETS:")
    for tid in spec.target_ids:
        target = registry.get_target(tid)
        lines.append(f"Target {target.id}: {target.description}")
    lines += ["", "CLASSIFICATION GUIDELINES:", spec.guidelines_text.strip(), ""]
    lines.append("EXAMPLES:")
    for ex in spec.examples:
        lines.append(f"Example ({_EXAMPLE_LABEL_TEXT[ex.label]}): {ex.synopsis.strip()}")
        lines.append(f"Rationale: {ex.rationale.strip()}")
    lines += ["", "OUTPUT REQUIREMENTS:", spec.output_instructions_text.strip()]
    return "\n".join(lines)


_SENTENCE_END_RE = re.compile(r"[.!?](?=\s|$)")


def _truncate_abstract(abstract: str, limit: int) -> str:
    """Largest sentence-bounded prefix that fits in limit characters."""
    if limit <= 0:
        return ""
    cut = 0
    for match in _SENTENCE_END_RE.finditer(abstract):
        end = match.end()
        if end > limit:
            break
        cut = end
    if cut == 0:
        # No sentence boundary fits; fall back to a hard cut.
        cut = limit
    return abstract[:cut].rstrip()


def abstract_char_budget(
    context_window_tokens: int,
    overhead_tokens: int = PROMPT_OVERHEAD_TOKENS,
    chars_per_token: int = CHARS_PER_TOKEN,
) -> int:
    return max(context_window_tokens - overhead_tokens, 256) * chars_per_token


def assemble_prompt(
    spec: PromptSpec,
    registry: Registry,
    doc: Document,
    char_budget: int | None = None,
) -> MessageSequence:
    """Build the (system, user) message pair for one document.

    Byte-identical for identical inputs. When the user message would exceed
    char_budget, the abstract is truncated at a sentence boundary and suffixed
    with the truncation marker so downstream audits can see the cut.
    """
    system = _system_message(spec, registry)
    user = f"TITLE: {doc.title}\nABSTRACT: {doc.abstract}"
    if char_budget is not None and len(user) > char_budget:
        overhead = len("TITLE: \nABSTRACT: ") + len(doc.title) + len(TRUNCATION_MARKER)
        truncated = _truncate_abstract(doc.abstract, char_budget - overhead)
        user = f"TITLE: {doc.title}\nABSTRACT: {truncated}{TRUNCATION_MARKER}"
    return [Message("system", system), Message("user", user)]


def prompt_digest(spec: PromptSpec, registry: Registry) -> str:
    """sha256 over the resolved template, decoding included, document symbolic.

    Computed from the parsed spec in a fixed field order, so reordering keys in
    a spec file does not change the digest, while any change to a resolved
    component (including registry text) does.
    """
    canonical = "\x1f".join(
        [
            _system_message(spec, registry),
            "TITLE: {TITLE}\nABSTRACT: {ABSTRACT}",
            spec.decoding.fingerprint(),
        ]
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def prompt_spec_to_dict(spec: PromptSpec) -> dict:
    return {
        "goal_number": spec.goal_number,
        "system_role": spec.system_role_text,
        "guidelines": spec.guidelines_text,
        "target_ids": list(spec.target_ids),
        "examples": [
            {"label": ex.label, "synopsis": ex.synopsis, "rationale": ex.rationale}
            for ex in spec.examples
        ],
        "output_instructions": spec.output_instructions_text,
        "decoding": {
            "temperature": spec.decoding.temperature,
            "max_tokens": spec.decoding.max_tokens,
        },
    }


_LABEL_ALIASES = {
    "relevant": "Relevant",
    "nonrelevant": "NonRelevant",
    "non-relevant": "NonRelevant",
    "non relevant": "NonRelevant",
}


def prompt_spec_from_dict(raw: dict) -> PromptSpec:
    try:
        examples = []
        for ex in raw.get("examples", []):
            label = _LABEL_ALIASES.get(str(ex["label"]).strip().lower())
            if label is None:
                raise PromptSpecError(f"unknown example label {ex['label']!r}")
            examples.append(
                FewShotExample(
                    label=label,
                    synopsis=str(ex["synopsis"]),
                    rationale=str(ex["rationale"]),
                )
            )
        decoding_raw = raw.get("decoding", {})
        return PromptSpec(
            goal_number=int(raw["goal_number"]),
            system_role_text=str(raw["system_role"]),
            guidelines_text=str(raw["guidelines"]),
            target_ids=tuple(str(t) for t in raw["target_ids"]),
            examples=tuple(examples),
            output_instructions_text=str(raw["output_instructions"]),
            decoding=Decoding(
                temperature=float(decoding_raw.get("temperature", 0.0)),
                max_tokens=int(decoding_raw.get("max_tokens", 512)),
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PromptSpecError):
            raise
        raise PromptSpecError(f"malformed prompt spec: {exc}") from exc


def load_prompt_spec(source: str | Path | IO[str]) -> PromptSpec:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fp:
            payload = json.load(fp)
    else:
        payload = json.load(source)
    return prompt_spec_from_dict(payload)


def default_prompt_spec() -> PromptSpec:
    """Packaged default spec for SDG 1; a starting point, not a tuned prompt."""
    data = resources.files("sdgsift.data").joinpath("prompt_sdg1.json")
    with data.open("r", encoding="utf-8") as fp:
        return load_prompt_spec(fp)
