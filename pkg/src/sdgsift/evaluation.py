"""The evaluation agent: judge documents against an SDG with one model.

parse_verdict turns raw model output into a structured verdict and is total
(never raises). judge_document wires prompt assembly, the completion backend,
parsing, and the cache together; judge_corpus fans that out over a corpus with
bounded parallelism while keeping record order equal to input order.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Callable, Literal, Protocol, Sequence

from .backend import (
    BackendError,
    CompletionBackend,
    CredentialError,
    HttpChatBackend,
    ModelConfig,
)
from .corpus import Document
from .prompting import PromptSpec, abstract_char_budget, assemble_prompt, prompt_digest
from .registry import Registry

logger = logging.getLogger(__name__)

RELEVANT = "Relevant"
NONRELEVANT = "NonRelevant"
Label = Literal["Relevant", "NonRelevant"]

# One fresh completion is requested when a response cannot be parsed; after
# that the failure is recorded.
REASK_LIMIT = 1

FALLBACK_SCAN_CHARS = 200


@dataclass(frozen=True)
class Verdict:
    label: Label
    reasoning: str
    raw_text: str


@dataclass(frozen=True)
class ParseFailure:
    raw_text: str


@dataclass(frozen=True)
class BackendFailure:
    error: str


Outcome = Verdict | ParseFailure | BackendFailure


@dataclass(frozen=True)
class CacheKey:
    """Identity of one judgment: document, goal, model, prompt, decoding."""

    doc_key: str
    goal_number: int
    model_id: str
    prompt_digest: str
    decoding_fingerprint: str

    def __post_init__(self) -> None:
        for name in ("doc_key", "model_id", "prompt_digest", "decoding_fingerprint"):
            if not getattr(self, name):
                raise ValueError(f"cache key component {name} is empty")

    def canonical(self) -> str:
        return "|".join(
            [
                f"doc={self.doc_key}",
                f"goal={self.goal_number}",
                f"model={self.model_id}",
                f"prompt={self.prompt_digest}",
                f"decoding={self.decoding_fingerprint}",
            ]
        )


@dataclass(frozen=True)
class JudgedRecord:
    doc_key: str
    goal_number: int
    model_id: str
    prompt_digest: str
    outcome: Outcome
    attempts: int
    from_cache: bool = False


@dataclass(frozen=True)
class RunResult:
    run_id: str
    goal_number: int
    model_id: str
    prompt_digest: str
    records: tuple[JudgedRecord, ...]
    n_skipped: int
    started: str
    finished: str

    def counts(self) -> dict[str, int]:
        c = {"relevant": 0, "nonrelevant": 0, "parse_failures": 0, "backend_failures": 0}
        for record in self.records:
            if isinstance(record.outcome, Verdict):
                if record.outcome.label == RELEVANT:
                    c["relevant"] += 1
                else:
                    c["nonrelevant"] += 1
            elif isinstance(record.outcome, ParseFailure):
                c["parse_failures"] += 1
            else:
                c["backend_failures"] += 1
        c["cache_hits"] = sum(1 for r in self.records if r.from_cache)
        c["skipped"] = self.n_skipped
        return c


class SupportsCache(Protocol):
    def get(self, key: CacheKey) -> JudgedRecord | None: ...
    def put(self, key: CacheKey, record: JudgedRecord) -> None: ...


_LABEL_VARIANTS = r"non[\s\-]?relevant|not\s+relevant|relevant"
_STRICT_LABEL_RE = re.compile(
    rf"^\s*classification\s*:\s*['\"]?(?P<label>{_LABEL_VARIANTS})\b",
    re.IGNORECASE | re.MULTILINE,
)
_REASONING_RE = re.compile(r"reasoning\s*:\s*(?P<reasoning>.+)\Z", re.IGNORECASE | re.DOTALL)
_NONREL_TOKEN_RE = re.compile(r"\b(?:non[\s\-]?relevant|not\s+relevant)\b", re.IGNORECASE)
_REL_TOKEN_RE = re.compile(r"\brelevant\b", re.IGNORECASE)


def _normalize_label(raw: str) -> Label:
    collapsed = re.sub(r"[\s\-]+", "", raw.lower())
    return NONRELEVANT if collapsed in ("nonrelevant", "notrelevant") else RELEVANT


def parse_verdict(text: str) -> Verdict | ParseFailure:
    """Parse model output into a verdict; total over all strings.

    Strict pass: a CLASSIFICATION line plus a REASONING section. Fallback
    pass: exactly one label kind in the first 200 characters, with the text
    after the label kept as reasoning (or the full output when nothing
    follows). Both label kinds in scope, or none, is a parse failure.
    """
    strict = _STRICT_LABEL_RE.search(text)
    if strict is not None:
        reasoning_match = _REASONING_RE.search(text)
        if reasoning_match is not None:
            reasoning = reasoning_match.group("reasoning").strip()
            if reasoning:
                return Verdict(
                    label=_normalize_label(strict.group("label")),
                    reasoning=reasoning,
                    raw_text=text,
                )

    scope = text[:FALLBACK_SCAN_CHARS]
    nonrel_spans = [m.span() for m in _NONREL_TOKEN_RE.finditer(scope)]
    rel_matches = [
        m
        for m in _REL_TOKEN_RE.finditer(scope)
        if not any(start <= m.start() < end for start, end in nonrel_spans)
    ]
    has_nonrel = bool(nonrel_spans)
    has_rel = bool(rel_matches)
    if has_nonrel == has_rel:
        return ParseFailure(raw_text=text)
    if has_nonrel:
        label: Label = NONRELEVANT
        first_end = nonrel_spans[0][1]
    else:
        label = RELEVANT
        first_end = rel_matches[0].end()
    reasoning = text[first_end:].strip() or text.strip()
    return Verdict(label=label, reasoning=reasoning, raw_text=text)


def judge_document(
    doc: Document,
    goal: int,
    spec: PromptSpec,
    cfg: ModelConfig,
    cache: SupportsCache | None,
    registry: Registry,
    backend: CompletionBackend | None = None,
    *,
    reask_limit: int = REASK_LIMIT,
    digest: str | None = None,
) -> JudgedRecord:
    """Judge one document; returns a record for every non-fatal outcome.

    Verdicts and parse failures are cached (they are deterministic facts about
    the model output for this prompt); backend failures are not, so transient
    outages stay retryable. Credential problems raise: they are fatal
    configuration errors, not per-record outcomes.
    """
    if goal not in doc.sdg_labels:
        logger.warning(
            "document %s is not labeled for goal %d; judging anyway", doc.doc_key, goal
        )
    digest = digest or prompt_digest(spec, registry)
    key = CacheKey(
        doc_key=doc.doc_key,
        goal_number=goal,
        model_id=cfg.model_id,
        prompt_digest=digest,
        decoding_fingerprint=spec.decoding.fingerprint(),
    )
    if cache is not None:
        cached = cache.get(key)
        if cached is not None:
            return replace(cached, from_cache=True)

    if backend is None:
        backend = HttpChatBackend(cfg)
    messages = assemble_prompt(
        spec, registry, doc, char_budget=abstract_char_budget(cfg.context_window_tokens)
    )
    attempts = 0
    outcome: Outcome = ParseFailure(raw_text="")
    for _ in range(reask_limit + 1):
        attempts += 1
        # Re-asks pin temperature to 0: one deterministic retry of the same
        # prompt, not another sample.
        decoding = (
            spec.decoding
            if attempts == 1
            else replace(spec.decoding, temperature=0.0)
        )
        try:
            completion = backend.complete(doc.doc_key, messages, decoding)
        except CredentialError:
            raise
        except BackendError as exc:
            record = JudgedRecord(
                doc_key=doc.doc_key,
                goal_number=goal,
                model_id=cfg.model_id,
                prompt_digest=digest,
                outcome=BackendFailure(error=str(exc)),
                attempts=attempts,
            )
            return record
        outcome = parse_verdict(completion.text)
        if isinstance(outcome, Verdict):
            break
    record = JudgedRecord(
        doc_key=doc.doc_key,
        goal_number=goal,
        model_id=cfg.model_id,
        prompt_digest=digest,
        outcome=outcome,
        attempts=attempts,
    )
    if cache is not None:
        cache.put(key, record)
    return record


def judge_corpus(
    docs: Sequence[Document],
    goal: int,
    spec: PromptSpec,
    cfg: ModelConfig,
    cache: SupportsCache | None,
    registry: Registry,
    workers: int = 1,
    backend: CompletionBackend | None = None,
    *,
    run_id: str | None = None,
    reask_limit: int = REASK_LIMIT,
    progress: Callable[[int, int], None] | None = None,
) -> RunResult:
    """Judge every document labeled for the goal; others are skipped.

    Records are ordered by input order regardless of completion order, so runs
    with any worker count produce identical content against a deterministic
    backend.
    """
    keys = [d.doc_key for d in docs]
    if len(set(keys)) != len(keys):
        raise ValueError("corpus contains duplicate doc_keys; merge duplicates first")
    spec.validate(registry)
    if spec.goal_number != goal:
        raise ValueError(
            f"prompt spec is for goal {spec.goal_number}, classify requested goal {goal}"
        )
    digest = prompt_digest(spec, registry)
    eligible = [d for d in docs if goal in d.sdg_labels]
    n_skipped = len(docs) - len(eligible)
    if backend is None and cfg.base_url is not None:
        backend = HttpChatBackend(cfg)

    started = datetime.now(timezone.utc).isoformat()

    def judge_one(doc: Document) -> JudgedRecord:
        return judge_document(
            doc, goal, spec, cfg, cache, registry, backend,
            reask_limit=reask_limit, digest=digest,
        )

    total = len(eligible)
    records: list[JudgedRecord] = []
    pool_size = max(1, min(workers, cfg.max_concurrent))
    with ThreadPoolExecutor(max_workers=pool_size) as pool:
        for done, record in enumerate(pool.map(judge_one, eligible), start=1):
            records.append(record)
            if progress is not None:
                progress(done, total)

    finished = datetime.now(timezone.utc).isoformat()
    return RunResult(
        run_id=run_id or f"{cfg.model_id}-goal{goal}-{digest[:12]}",
        goal_number=goal,
        model_id=cfg.model_id,
        prompt_digest=digest,
        records=tuple(records),
        n_skipped=n_skipped,
        started=started,
        finished=finished,
    )


def outcome_to_dict(outcome: Outcome) -> dict:
    if isinstance(outcome, Verdict):
        return {
            "kind": "verdict",
            "label": outcome.label,
            "reasoning": outcome.reasoning,
            "raw_text": outcome.raw_text,
        }
    if isinstance(outcome, ParseFailure):
        return {"kind": "parse_failure", "raw_text": outcome.raw_text}
    return {"kind": "backend_failure", "error": outcome.error}


def outcome_from_dict(raw: dict) -> Outcome:
    kind = raw.get("kind")
    if kind == "verdict":
        return Verdict(
            label=str(raw["label"]),
            reasoning=str(raw["reasoning"]),
            raw_text=str(raw["raw_text"]),
        )
    if kind == "parse_failure":
        return ParseFailure(raw_text=str(raw["raw_text"]))
    if kind == "backend_failure":
        return BackendFailure(error=str(raw["error"]))
    raise ValueError(f"unknown outcome kind {kind!r}")


def record_to_dict(record: JudgedRecord) -> dict:
    # from_cache is runtime provenance, deliberately not serialized: cached and
    # freshly computed runs must produce byte-identical verdict files.
    return {
        "doc_key": record.doc_key,
        "goal_number": record.goal_number,
        "model_id": record.model_id,
        "prompt_digest": record.prompt_digest,
        "outcome": outcome_to_dict(record.outcome),
        "attempts": record.attempts,
    }


def record_from_dict(raw: dict) -> JudgedRecord:
    return JudgedRecord(
        doc_key=str(raw["doc_key"]),
        goal_number=int(raw["goal_number"]),
        model_id=str(raw["model_id"]),
        prompt_digest=str(raw["prompt_digest"]),
        outcome=outcome_from_dict(raw["outcome"]),
        attempts=int(raw["attempts"]),
    )
