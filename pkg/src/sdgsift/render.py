"""Self-contained SVG rendering with fixed canvas geometry.

Everything is laid out at hard-coded coordinates and floats are formatted at
fixed precision, so identical inputs produce byte-identical files that can be
golden-tested.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Sequence

if TYPE_CHECKING:
    from .analytics import RunStats, VennPartition

_BAR_FILL = {"relevant": "#2b6cb0", "nonrelevant": "#dd6b20"}

_CANVAS_W = 640
_CANVAS_H = 400
_PLOT_LEFT = 70.0
_PLOT_RIGHT = 610.0
_PLOT_TOP = 50.0
_PLOT_BOTTOM = 330.0
_PLOT_H = _PLOT_BOTTOM - _PLOT_TOP


def _esc(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def render_proportions_svg(stats: Sequence["RunStats"]) -> str:
    """Grouped bar chart: one Relevant and one Non-Relevant bar per model."""
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_CANVAS_W}" height="{_CANVAS_H}" '
        f'viewBox="0 0 {_CANVAS_W} {_CANVAS_H}" font-family="sans-serif" font-size="12">',
        f'<text x="{_CANVAS_W / 2:.1f}" y="24" text-anchor="middle" font-size="15">'
        "Share of abstracts per label</text>",
    ]
    for tick in (0, 25, 50, 75, 100):
        y = _PLOT_BOTTOM - tick / 100.0 * _PLOT_H
        parts.append(
            f'<line x1="{_PLOT_LEFT:.1f}" y1="{y:.1f}" x2="{_PLOT_RIGHT:.1f}" y2="{y:.1f}" '
            'stroke="#cccccc" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_PLOT_LEFT - 8:.1f}" y="{y + 4:.1f}" text-anchor="end">{tick}</text>'
        )

    n_groups = max(len(stats), 1)
    group_w = (_PLOT_RIGHT - _PLOT_LEFT) / n_groups
    bar_w = min(60.0, group_w / 3.0)
    for i, s in enumerate(stats):
        group_x = _PLOT_LEFT + i * group_w + group_w / 2.0
        for offset, (series, pct) in enumerate(
            (("relevant", s.pct_relevant), ("nonrelevant", s.pct_nonrelevant))
        ):
            height = pct / 100.0 * _PLOT_H
            x = group_x - bar_w + offset * bar_w
            y = _PLOT_BOTTOM - height
            parts.append(
                f'<rect class="bar" data-model="{_esc(s.model_id)}" data-series="{series}" '
                f'x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" height="{height:.1f}" '
                f'fill="{_BAR_FILL[series]}"/>'
            )
            parts.append(
                f'<text x="{x + bar_w / 2.0:.1f}" y="{y - 4:.1f}" text-anchor="middle">'
                f"{pct:.1f}</text>"
            )
        parts.append(
            f'<text x="{group_x:.1f}" y="{_PLOT_BOTTOM + 18:.1f}" text-anchor="middle">'
            f"{_esc(s.model_id)}</text>"
        )

    legend_x = _PLOT_LEFT
    legend_y = _PLOT_BOTTOM + 40.0
    for offset, (series, label) in enumerate(
        (("relevant", "Relevant"), ("nonrelevant", "Non-Relevant"))
    ):
        x = legend_x + offset * 140.0
        parts.append(
            f'<rect x="{x:.1f}" y="{legend_y - 10:.1f}" width="12" height="12" '
            f'fill="{_BAR_FILL[series]}"/>'
        )
        parts.append(f'<text x="{x + 18:.1f}" y="{legend_y:.1f}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


_PANEL_W = 430
_PANEL_H = 360
_CIRCLES = ((165.0, 150.0), (265.0, 150.0), (215.0, 235.0))
_CIRCLE_R = 95.0
_CIRCLE_FILLS = ("#2b6cb0", "#dd6b20", "#38a169")
# One anchor per region, chosen for the fixed circle geometry above.
_REGION_XY = {
    "exactly_a": (125.0, 135.0),
    "exactly_b": (305.0, 135.0),
    "exactly_c": (215.0, 285.0),
    "ab_only": (215.0, 125.0),
    "ac_only": (160.0, 210.0),
    "bc_only": (270.0, 210.0),
    "abc": (215.0, 180.0),
}
_SET_LABEL_XY = ((100.0, 60.0), (330.0, 60.0), (215.0, 348.0))


def _venn_panel(venn: "VennPartition", title: str, y_offset: float) -> list[str]:
    parts = [f'<g transform="translate(0 {y_offset:.1f})">']
    parts.append(
        f'<text x="{_PANEL_W / 2:.1f}" y="28" text-anchor="middle" font-size="15">'
        f"{_esc(title)}</text>"
    )
    for (cx, cy), fill in zip(_CIRCLES, _CIRCLE_FILLS):
        parts.append(
            f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="{_CIRCLE_R:.1f}" fill="{fill}" '
            'fill-opacity="0.25" stroke="#333333" stroke-width="1"/>'
        )
    for model_id, (x, y) in zip(venn.model_ids, _SET_LABEL_XY):
        parts.append(
            f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="middle" font-size="13">'
            f"{_esc(model_id)}</text>"
        )
    counts = venn.region_counts()
    for region, (x, y) in _REGION_XY.items():
        parts.append(
            f'<text class="region" data-region="{region}" x="{x:.1f}" y="{y:.1f}" '
            f'text-anchor="middle">{counts[region]}</text>'
        )
    parts.append(
        f'<text class="region" data-region="none" x="30" y="{_PANEL_H - 14:.1f}">'
        f'none: {counts["none"]}</text>'
    )
    parts.append("</g>")
    return parts


def render_venn_svg(relevant: "VennPartition", nonrelevant: "VennPartition") -> str:
    """Two stacked 3-set Venn panels, Relevant above Non-Relevant."""
    total_h = 2 * _PANEL_H + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_PANEL_W}" height="{total_h}" '
        f'viewBox="0 0 {_PANEL_W} {total_h}" font-family="sans-serif" font-size="12">'
    ]
    parts += _venn_panel(relevant, "Relevant", 0.0)
    parts += _venn_panel(nonrelevant, "Non-Relevant", _PANEL_H + 20.0)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
