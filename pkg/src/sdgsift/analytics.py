"""Agreement statistics over runs: label proportions, pairwise agreement,
Cohen's kappa, and three-set Venn partitions, packaged into a report.

All statistics are computed over parseable verdicts only; parse and backend
failures never enter a denominator but are always reported as counts.
Internally the math uses exact rationals over integer counts, converted to
float at the boundary, so round numbers come out exact (52% is 52.0, a kappa
of 3/5 is 0.6).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .evaluation import RELEVANT, Label, RunResult, Verdict
from .render import render_proportions_svg, render_venn_svg

# Returned instead of a number when both raters are constant (chance agreement
# is 1 and kappa is undefined); any numeric stand-in would be a hidden
# convention, a marker forces callers to handle the case.
KAPPA_DEGENERATE = "degenerate"

VENN_REGIONS = (
    "exactly_a",
    "exactly_b",
    "exactly_c",
    "ab_only",
    "ac_only",
    "bc_only",
    "abc",
    "none",
)


class EmptyRunError(ValueError):
    """A run has no parseable verdicts to compute proportions over."""


class UndefinedComparisonError(ValueError):
    """Runs share no commonly judged documents; comparison is undefined."""


def labels_of(run: RunResult) -> dict[str, Label]:
    """doc_key -> label for the parseable verdicts of a run."""
    return {
        r.doc_key: r.outcome.label
        for r in run.records
        if isinstance(r.outcome, Verdict)
    }


def label_proportions(run: RunResult) -> tuple[float, float, int, int]:
    """(pct_relevant, pct_nonrelevant, n_judged, n_failures) for one run."""
    labels = labels_of(run)
    n_judged = len(labels)
    n_failures = len(run.records) - n_judged
    if n_judged == 0:
        raise EmptyRunError(f"run {run.run_id} has no parseable verdicts")
    n_relevant = sum(1 for l in labels.values() if l == RELEVANT)
    pct_relevant = Fraction(100 * n_relevant, n_judged)
    return (
        float(pct_relevant),
        float(100 - pct_relevant),
        n_judged,
        n_failures,
    )


def _common_labels(
    run_a: RunResult, run_b: RunResult
) -> tuple[dict[str, Label], dict[str, Label], list[str]]:
    if run_a.goal_number != run_b.goal_number:
        raise UndefinedComparisonError(
            f"runs judge different goals: {run_a.goal_number} vs {run_b.goal_number}"
        )
    labels_a = labels_of(run_a)
    labels_b = labels_of(run_b)
    common = sorted(set(labels_a) & set(labels_b))
    if not common:
        raise UndefinedComparisonError(
            f"runs {run_a.run_id} and {run_b.run_id} share no parseable documents"
        )
    return labels_a, labels_b, common


def pairwise_agreement(run_a: RunResult, run_b: RunResult) -> float:
    """Fraction of commonly judged documents with equal labels; symmetric."""
    labels_a, labels_b, common = _common_labels(run_a, run_b)
    agree = sum(1 for d in common if labels_a[d] == labels_b[d])
    return float(Fraction(agree, len(common)))


def cohen_kappa(run_a: RunResult, run_b: RunResult) -> float | str:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e).

    Returns KAPPA_DEGENERATE when both raters are constant (p_e = 1).
    """
    labels_a, labels_b, common = _common_labels(run_a, run_b)
    n = len(common)
    agree = sum(1 for d in common if labels_a[d] == labels_b[d])
    rel_a = sum(1 for d in common if labels_a[d] == RELEVANT)
    rel_b = sum(1 for d in common if labels_b[d] == RELEVANT)
    p_o = Fraction(agree, n)
    p_rel = Fraction(rel_a, n) * Fraction(rel_b, n)
    p_non = Fraction(n - rel_a, n) * Fraction(n - rel_b, n)
    p_e = p_rel + p_non
    if p_e == 1:
        return KAPPA_DEGENERATE
    return float((p_o - p_e) / (1 - p_e))


@dataclass(frozen=True)
class VennPartition:
    model_ids: tuple[str, str, str]
    exactly_a: int
    exactly_b: int
    exactly_c: int
    ab_only: int
    ac_only: int
    bc_only: int
    abc: int
    none: int
    universe_size: int

    def __post_init__(self) -> None:
        total = sum(self.region_counts().values())
        if total != self.universe_size:
            raise ValueError(
                f"venn regions sum to {total}, expected universe {self.universe_size}"
            )

    def region_counts(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in VENN_REGIONS}

    def marginal(self, model_id: str) -> int:
        """Size of one model's set: the four regions containing it."""
        index = self.model_ids.index(model_id)
        members = {
            0: ("exactly_a", "ab_only", "ac_only", "abc"),
            1: ("exactly_b", "ab_only", "bc_only", "abc"),
            2: ("exactly_c", "ac_only", "bc_only", "abc"),
        }[index]
        return sum(getattr(self, name) for name in members)


def venn_partition(
    run_a: RunResult, run_b: RunResult, run_c: RunResult, label: Label
) -> VennPartition:
    """Partition the commonly judged documents by which models assigned label."""
    goals = {run_a.goal_number, run_b.goal_number, run_c.goal_number}
    if len(goals) != 1:
        raise UndefinedComparisonError(f"runs judge different goals: {sorted(goals)}")
    maps = [labels_of(run_a), labels_of(run_b), labels_of(run_c)]
    universe = set(maps[0]) & set(maps[1]) & set(maps[2])
    if not universe:
        raise UndefinedComparisonError("no document was parseably judged by all three runs")
    sets = [
        {d for d in universe if m[d] == label}
        for m in maps
    ]
    a, b, c = sets
    return VennPartition(
        model_ids=(run_a.model_id, run_b.model_id, run_c.model_id),
        exactly_a=len(a - b - c),
        exactly_b=len(b - a - c),
        exactly_c=len(c - a - b),
        ab_only=len((a & b) - c),
        ac_only=len((a & c) - b),
        bc_only=len((b & c) - a),
        abc=len(a & b & c),
        none=len(universe - a - b - c),
        universe_size=len(universe),
    )


@dataclass(frozen=True)
class RunStats:
    model_id: str
    n_judged: int
    n_failures: int
    pct_relevant: float
    pct_nonrelevant: float


@dataclass(frozen=True)
class PairStats:
    model_a: str
    model_b: str
    agreement_rate: float
    kappa: float | str


@dataclass(frozen=True)
class AgreementReport:
    goal_number: int
    runs: tuple[RunStats, ...]
    pairwise: tuple[PairStats, ...]
    venn_relevant: VennPartition
    venn_nonrelevant: VennPartition

    def pair_for(self, model_a: str, model_b: str) -> PairStats:
        wanted = {model_a, model_b}
        for pair in self.pairwise:
            if {pair.model_a, pair.model_b} == wanted:
                return pair
        raise KeyError(f"no pairwise entry for {model_a!r}, {model_b!r}")


def build_report(runs: Sequence[RunResult], goal: int) -> AgreementReport:
    """Aggregate proportions, pairwise agreement, kappa, and Venn partitions."""
    if len(runs) != 3:
        raise ValueError(f"report needs exactly 3 runs, got {len(runs)}")
    model_ids = [run.model_id for run in runs]
    if len(set(model_ids)) != 3:
        raise ValueError(f"runs must come from distinct models, got {model_ids}")
    for run in runs:
        if run.goal_number != goal:
            raise UndefinedComparisonError(
                f"run {run.run_id} judges goal {run.goal_number}, report is for goal {goal}"
            )
    stats = []
    for run in runs:
        pct_rel, pct_non, n_judged, n_failures = label_proportions(run)
        stats.append(
            RunStats(
                model_id=run.model_id,
                n_judged=n_judged,
                n_failures=n_failures,
                pct_relevant=pct_rel,
                pct_nonrelevant=pct_non,
            )
        )
    pairs = []
    for i, j in ((0, 1), (0, 2), (1, 2)):
        pairs.append(
            PairStats(
                model_a=runs[i].model_id,
                model_b=runs[j].model_id,
                agreement_rate=pairwise_agreement(runs[i], runs[j]),
                kappa=cohen_kappa(runs[i], runs[j]),
            )
        )
    return AgreementReport(
        goal_number=goal,
        runs=tuple(stats),
        pairwise=tuple(pairs),
        venn_relevant=venn_partition(runs[0], runs[1], runs[2], RELEVANT),
        venn_nonrelevant=venn_partition(runs[0], runs[1], runs[2], "NonRelevant"),
    )


def _venn_to_dict(venn: VennPartition) -> dict:
    return {
        "model_ids": list(venn.model_ids),
        "universe_size": venn.universe_size,
        "regions": venn.region_counts(),
    }


def _venn_from_dict(raw: dict) -> VennPartition:
    regions = raw["regions"]
    return VennPartition(
        model_ids=tuple(str(m) for m in raw["model_ids"]),
        universe_size=int(raw["universe_size"]),
        **{name: int(regions[name]) for name in VENN_REGIONS},
    )


def report_to_dict(report: AgreementReport) -> dict:
    return {
        "goal_number": report.goal_number,
        "runs": [
            {
                "model_id": s.model_id,
                "n_judged": s.n_judged,
                "n_failures": s.n_failures,
                "pct_relevant": s.pct_relevant,
                "pct_nonrelevant": s.pct_nonrelevant,
            }
            for s in report.runs
        ],
        "pairwise": [
            {
                "model_a": p.model_a,
                "model_b": p.model_b,
                "agreement_rate": p.agreement_rate,
                "kappa": p.kappa,
            }
            for p in report.pairwise
        ],
        "venn_relevant": _venn_to_dict(report.venn_relevant),
        "venn_nonrelevant": _venn_to_dict(report.venn_nonrelevant),
    }


def report_from_dict(raw: dict) -> AgreementReport:
    return AgreementReport(
        goal_number=int(raw["goal_number"]),
        runs=tuple(
            RunStats(
                model_id=str(s["model_id"]),
                n_judged=int(s["n_judged"]),
                n_failures=int(s["n_failures"]),
                pct_relevant=float(s["pct_relevant"]),
                pct_nonrelevant=float(s["pct_nonrelevant"]),
            )
            for s in raw["runs"]
        ),
        pairwise=tuple(
            PairStats(
                model_a=str(p["model_a"]),
                model_b=str(p["model_b"]),
                agreement_rate=float(p["agreement_rate"]),
                kappa=p["kappa"] if isinstance(p["kappa"], str) else float(p["kappa"]),
            )
            for p in raw["pairwise"]
        ),
        venn_relevant=_venn_from_dict(raw["venn_relevant"]),
        venn_nonrelevant=_venn_from_dict(raw["venn_nonrelevant"]),
    )


def emit_report(report: AgreementReport, out_dir: str | Path) -> list[Path]:
    """Write the six report files; returns their paths.

    report.json keeps full precision; the CSVs round percentages to one
    decimal. The two Venn panels share one SVG.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    json_path = out_dir / "report.json"
    with open(json_path, "w", encoding="utf-8") as fp:
        json.dump(report_to_dict(report), fp, ensure_ascii=False, indent=2)
        fp.write("\n")
    paths.append(json_path)

    csv_path = out_dir / "proportions.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(
            ["model_id", "n_judged", "n_failures", "pct_relevant", "pct_nonrelevant"]
        )
        for s in report.runs:
            writer.writerow(
                [s.model_id, s.n_judged, s.n_failures,
                 f"{s.pct_relevant:.1f}", f"{s.pct_nonrelevant:.1f}"]
            )
    paths.append(csv_path)

    for name, venn in (
        ("venn_relevant.csv", report.venn_relevant),
        ("venn_nonrelevant.csv", report.venn_nonrelevant),
    ):
        path = out_dir / name
        with open(path, "w", encoding="utf-8", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(["region", "count"])
            for region, count in venn.region_counts().items():
                writer.writerow([region, count])
        paths.append(path)

    bars_path = out_dir / "proportions.svg"
    bars_path.write_text(render_proportions_svg(report.runs), encoding="utf-8")
    paths.append(bars_path)

    venn_path = out_dir / "venn.svg"
    venn_path.write_text(
        render_venn_svg(report.venn_relevant, report.venn_nonrelevant), encoding="utf-8"
    )
    paths.append(venn_path)
    return paths
