"""Static SVG charts for report output.

Hand-assembled SVG rather than a plotting library: report emission must be
byte-identical across reruns, and plotting toolkits embed volatile ids and
timestamps. Three chart types mirror the analysis surfaces: token
histograms, per-bucket accuracy curves, and ablation bars.
"""

from __future__ import annotations

from typing import Mapping, Sequence

_W, _H = 640, 360
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 52, 16, 28, 44

_SERIES_COLORS = {
    "correct": "#2e8b57",
    "incorrect": "#c0392b",
    "unfinished": "#e67e22",
}
_FALLBACK_COLORS = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377")


def _fmt(value: float) -> str:
    return f"{value:.2f}".rstrip("0").rstrip(".")


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
        f'<text x="{_W // 2}" y="16" text-anchor="middle" font-size="13">{_escape(title)}</text>',
    ]


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _axes(x_labels: Sequence[str], y_max: float, y_label: str) -> list[str]:
    plot_w = _W - _MARGIN_L - _MARGIN_R
    plot_h = _H - _MARGIN_T - _MARGIN_B
    parts = [
        f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" x2="{_MARGIN_L}" '
        f'y2="{_MARGIN_T + plot_h}" stroke="#333"/>',
        f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T + plot_h}" x2="{_MARGIN_L + plot_w}" '
        f'y2="{_MARGIN_T + plot_h}" stroke="#333"/>',
        f'<text x="14" y="{_MARGIN_T + plot_h // 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {_MARGIN_T + plot_h // 2})">{_escape(y_label)}</text>',
    ]
    for tick in range(5):
        frac = tick / 4
        y = _MARGIN_T + plot_h * (1 - frac)
        parts.append(
            f'<text x="{_MARGIN_L - 6}" y="{_fmt(y + 3)}" text-anchor="end">'
            f"{_fmt(y_max * frac)}</text>"
        )
    n = max(len(x_labels), 1)
    step = max(1, n // 8)
    for i, label in enumerate(x_labels):
        if i % step:
            continue
        x = _MARGIN_L + plot_w * (i + 0.5) / n
        parts.append(
            f'<text x="{_fmt(x)}" y="{_H - _MARGIN_B + 16}" text-anchor="middle">'
            f"{_escape(label)}</text>"
        )
    return parts


def histogram_svg(
    series: Mapping[str, Sequence[tuple[int, int]]], title: str, x_label: str = "tokens"
) -> str:
    """Grouped bars per token bucket, one group per series."""
    names = list(series)
    los = sorted({lo for points in series.values() for lo, _ in points})
    counts = {name: dict(points) for name, points in series.items()}
    y_max = max(
        (count for points in series.values() for _, count in points), default=0
    ) or 1
    plot_w = _W - _MARGIN_L - _MARGIN_R
    plot_h = _H - _MARGIN_T - _MARGIN_B
    parts = _header(title) + _axes([str(lo) for lo in los], y_max, "cases")
    n_groups = max(len(los), 1)
    group_w = plot_w / n_groups
    bar_w = group_w * 0.8 / max(len(names), 1)
    for series_i, name in enumerate(names):
        color = _SERIES_COLORS.get(name, _FALLBACK_COLORS[series_i % len(_FALLBACK_COLORS)])
        for group_i, lo in enumerate(los):
            count = counts[name].get(lo, 0)
            height = plot_h * count / y_max
            x = _MARGIN_L + group_w * group_i + group_w * 0.1 + bar_w * series_i
            y = _MARGIN_T + plot_h - height
            parts.append(
                f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(bar_w)}" '
                f'height="{_fmt(height)}" fill="{color}"/>'
            )
        legend_x = _MARGIN_L + plot_w - 110
        legend_y = _MARGIN_T + 14 * series_i
        parts.append(
            f'<rect x="{legend_x}" y="{legend_y}" width="10" height="10" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{legend_x + 14}" y="{legend_y + 9}">{_escape(name)}</text>'
        )
    parts.append(f'<text x="{_W // 2}" y="{_H - 8}" text-anchor="middle">{_escape(x_label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def accuracy_curve_svg(buckets: Sequence[dict], title: str) -> str:
    """Case counts as bars with the accuracy ratio overlaid as a green line.

    ``buckets`` rows are report dicts: lo/hi/n_correct/n_incorrect/
    n_unfinished/accuracy_ratio; empty buckets leave gaps in the line.
    """
    los = [b["lo"] for b in buckets]
    totals = [b["n_correct"] + b["n_incorrect"] + b["n_unfinished"] for b in buckets]
    y_max = max(totals, default=0) or 1
    plot_w = _W - _MARGIN_L - _MARGIN_R
    plot_h = _H - _MARGIN_T - _MARGIN_B
    parts = _header(title) + _axes([str(lo) for lo in los], y_max, "cases")
    n = max(len(buckets), 1)
    group_w = plot_w / n
    for i, total in enumerate(totals):
        height = plot_h * total / y_max
        x = _MARGIN_L + group_w * i + group_w * 0.15
        y = _MARGIN_T + plot_h - height
        parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(group_w * 0.7)}" '
            f'height="{_fmt(height)}" fill="#9ab6d4"/>'
        )
    segment: list[str] = []
    segments: list[list[str]] = []
    for i, bucket in enumerate(buckets):
        ratio = bucket["accuracy_ratio"]
        if ratio is None:
            if segment:
                segments.append(segment)
                segment = []
            continue
        x = _MARGIN_L + group_w * (i + 0.5)
        y = _MARGIN_T + plot_h * (1 - ratio)
        segment.append(f"{_fmt(x)},{_fmt(y)}")
    if segment:
        segments.append(segment)
    for points in segments:
        parts.append(
            f'<polyline points="{" ".join(points)}" fill="none" stroke="#2e8b57" stroke-width="2"/>'
        )
    parts.append(
        f'<text x="{_MARGIN_L + plot_w - 110}" y="{_MARGIN_T + 9}" fill="#2e8b57">accuracy ratio</text>'
    )
    parts.append(f'<text x="{_W // 2}" y="{_H - 8}" text-anchor="middle">tokens</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def ablation_bars_svg(
    labels: Sequence[str], values_by_dataset: Mapping[str, Sequence[float]], title: str
) -> str:
    """Accuracy bars per ablation condition, grouped by dataset."""
    datasets = list(values_by_dataset)
    y_max = 100.0
    plot_w = _W - _MARGIN_L - _MARGIN_R
    plot_h = _H - _MARGIN_T - _MARGIN_B
    parts = _header(title) + _axes(list(labels), y_max, "accuracy (%)")
    n_groups = max(len(labels), 1)
    group_w = plot_w / n_groups
    bar_w = group_w * 0.8 / max(len(datasets), 1)
    for dataset_i, dataset in enumerate(datasets):
        color = _FALLBACK_COLORS[dataset_i % len(_FALLBACK_COLORS)]
        for group_i, value in enumerate(values_by_dataset[dataset]):
            height = plot_h * (100.0 * value) / y_max
            x = _MARGIN_L + group_w * group_i + group_w * 0.1 + bar_w * dataset_i
            y = _MARGIN_T + plot_h - height
            parts.append(
                f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(bar_w)}" '
                f'height="{_fmt(height)}" fill="{color}"/>'
            )
        legend_x = _MARGIN_L + plot_w - 110
        legend_y = _MARGIN_T + 14 * dataset_i
        parts.append(
            f'<rect x="{legend_x}" y="{legend_y}" width="10" height="10" fill="{color}"/>'
        )
        parts.append(f'<text x="{legend_x + 14}" y="{legend_y + 9}">{_escape(dataset)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
