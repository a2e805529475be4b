"""Combine per-model verdicts into one label: majority, unanimity, or a
broad-to-strict cascade where the first Non-Relevant stage short-circuits.

Members whose verdict failed to parse (or whose backend failed) are dropped
from the vote; a document with no usable member label lands in the undecided
bucket rather than receiving an invented label. Ties break to Non-Relevant:
keyword retrieval over-claims, so the combiner prefers precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Callable, Iterable, Sequence

from .corpus import Document
from .evaluation import NONRELEVANT, RELEVANT, Label, RunResult, Verdict

Rule = str  # "majority" | "unanimous" | "cascade"
RULES = ("majority", "unanimous", "cascade")

# A stage consults one model for one document; None means the member verdict
# is missing (parse or backend failure).
StageFn = Callable[[Document, int], Label | None]
Stage = tuple[str, StageFn]


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class PanelResult:
    doc_key: str
    goal_number: int
    member_labels: tuple[tuple[str, Label], ...]
    combined: Label | None
    rule: Rule
    tie_flag: bool = False
    stage_trace: tuple[tuple[str, Label | None], ...] = ()


def majority_vote(labels: Sequence[Label]) -> tuple[Label, bool]:
    """Strict majority; an exact tie resolves to NonRelevant with the flag set."""
    if not labels:
        raise EnsembleError("majority_vote needs at least one label")
    relevant = sum(1 for l in labels if l == RELEVANT)
    nonrelevant = len(labels) - relevant
    if relevant > nonrelevant:
        return RELEVANT, False
    if nonrelevant > relevant:
        return NONRELEVANT, False
    return NONRELEVANT, True


def unanimous(labels: Sequence[Label]) -> Label:
    if not labels:
        raise EnsembleError("unanimous needs at least one label")
    return RELEVANT if all(l == RELEVANT for l in labels) else NONRELEVANT


def cascade(stages: Sequence[Stage], doc: Document, goal: int) -> PanelResult:
    """Run stages in order; stop at the first NonRelevant.

    Stages returning None (missing member) are recorded in the trace and
    dropped. Combined is Relevant only if every consulted stage with a usable
    label said Relevant; with no usable label at all the result is undecided.
    """
    if not stages:
        raise EnsembleError("cascade needs at least one stage")
    trace: list[tuple[str, Label | None]] = []
    usable: list[tuple[str, Label]] = []
    combined: Label | None = None
    for model_id, fn in stages:
        label = fn(doc, goal)
        trace.append((model_id, label))
        if label is None:
            continue
        usable.append((model_id, label))
        if label == NONRELEVANT:
            combined = NONRELEVANT
            break
    else:
        if usable:
            combined = RELEVANT
    return PanelResult(
        doc_key=doc.doc_key,
        goal_number=goal,
        member_labels=tuple(usable),
        combined=combined,
        rule="cascade",
        stage_trace=tuple(trace),
    )


def _label_maps(runs: Sequence[RunResult]) -> list[dict[str, Label]]:
    maps = []
    for run in runs:
        maps.append(
            {
                r.doc_key: r.outcome.label
                for r in run.records
                if isinstance(r.outcome, Verdict)
            }
        )
    return maps


def order_broad_to_strict(runs: Sequence[RunResult]) -> list[str]:
    """Default cascade order: standalone Relevant-rate descending."""
    rates = []
    for run, labels in zip(runs, _label_maps(runs)):
        n = len(labels)
        rate = sum(1 for l in labels.values() if l == RELEVANT) / n if n else 0.0
        rates.append((run.model_id, rate))
    return [m for m, _ in sorted(rates, key=lambda item: (-item[1], item[0]))]


def combine_runs(
    runs: Sequence[RunResult],
    rule: Rule,
    stage_order: Sequence[str] | None = None,
) -> list[PanelResult]:
    """Panel every document all members attempted, in first-run record order.

    Raises EnsembleError when the member runs have no documents in common:
    combining runs over disjoint corpora is undefined.
    """
    if rule not in RULES:
        raise EnsembleError(f"unknown ensemble rule {rule!r}")
    if not runs:
        raise EnsembleError("no member runs given")
    goals = {run.goal_number for run in runs}
    if len(goals) != 1:
        raise EnsembleError(f"member runs disagree on goal: {sorted(goals)}")
    goal = goals.pop()
    model_ids = [run.model_id for run in runs]
    if len(set(model_ids)) != len(model_ids):
        raise EnsembleError("member runs must come from distinct models")

    attempted = [set(r.doc_key for r in run.records) for run in runs]
    universe = set.intersection(*attempted)
    if not universe:
        raise EnsembleError(
            "undefined comparison: member runs share no documents"
        )
    ordered_keys = [r.doc_key for r in runs[0].records if r.doc_key in universe]
    label_maps = dict(zip(model_ids, _label_maps(runs)))

    if rule == "cascade":
        order = list(stage_order) if stage_order else order_broad_to_strict(runs)
        unknown = [m for m in order if m not in label_maps]
        if unknown:
            raise EnsembleError(f"stage order names unknown models: {unknown}")
        stages: list[Stage] = [
            (m, lambda d, g, _m=m: label_maps[_m].get(d.doc_key)) for m in order
        ]

    results: list[PanelResult] = []
    for doc_key in ordered_keys:
        members = [
            (m, label_maps[m][doc_key]) for m in model_ids if doc_key in label_maps[m]
        ]
        if rule == "cascade":
            # Reuse the per-document cascade on a minimal document stand-in.
            stub = Document(
                doc_key=doc_key, title="-", abstract="-", sdg_labels=frozenset({goal})
            )
            results.append(cascade(stages, stub, goal))
        elif not members:
            results.append(
                PanelResult(
                    doc_key=doc_key,
                    goal_number=goal,
                    member_labels=(),
                    combined=None,
                    rule=rule,
                )
            )
        elif rule == "majority":
            combined, tie = majority_vote([l for _, l in members])
            results.append(
                PanelResult(
                    doc_key=doc_key,
                    goal_number=goal,
                    member_labels=tuple(members),
                    combined=combined,
                    rule=rule,
                    tie_flag=tie,
                )
            )
        else:
            results.append(
                PanelResult(
                    doc_key=doc_key,
                    goal_number=goal,
                    member_labels=tuple(members),
                    combined=unanimous([l for _, l in members]),
                    rule=rule,
                )
            )
    return results


def panel_to_dict(panel: PanelResult) -> dict:
    return {
        "doc_key": panel.doc_key,
        "goal_number": panel.goal_number,
        "rule": panel.rule,
        "combined": panel.combined,
        "tie_flag": panel.tie_flag,
        "member_labels": [[m, l] for m, l in panel.member_labels],
        "stage_trace": [[m, l] for m, l in panel.stage_trace],
    }


def panel_from_dict(raw: dict) -> PanelResult:
    return PanelResult(
        doc_key=str(raw["doc_key"]),
        goal_number=int(raw["goal_number"]),
        member_labels=tuple((str(m), str(l)) for m, l in raw["member_labels"]),
        combined=raw["combined"],
        rule=str(raw["rule"]),
        tie_flag=bool(raw["tie_flag"]),
        stage_trace=tuple((str(m), l) for m, l in raw["stage_trace"]),
    )


def write_panel(results: Iterable[PanelResult], fp: IO[str]) -> int:
    n = 0
    for panel in results:
        fp.write(json.dumps(panel_to_dict(panel), ensure_ascii=False) + "\n")
        n += 1
    return n


def read_panel(fp: IO[str]) -> list[PanelResult]:
    return [panel_from_dict(json.loads(line)) for line in fp if line.strip()]
