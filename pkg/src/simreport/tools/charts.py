"""Declarative chart specs rendered to deterministic SVG.

The emitter writes a fixed 800x480 canvas with a fixed palette and no
timestamps, so identical specs produce byte-identical files.  Next to each
``<figure_id>.svg`` a ``<figure_id>.json`` manifest holds the canonical
JSON of the originating spec (sorted keys, LF), which round-trips to the
spec exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any
from xml.sax.saxutils import escape

from ..errors import ChartError, IoError

CANVAS_W = 800
CANVAS_H = 480
PALETTE = ("#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400", "#16a085")

_MARGIN_LEFT = 70
_MARGIN_RIGHT = 24
_MARGIN_TOP = 48
_MARGIN_BOTTOM = 56


class ChartKind(str, Enum):
    LINE = "line"
    BAR = "bar"
    GROUPED_BAR = "grouped_bar"


@dataclass(frozen=True)
class Series:
    name: str
    points: tuple[tuple[Any, float], ...]


@dataclass(frozen=True)
class ChartSpec:
    kind: ChartKind
    title: str
    x_label: str
    y_label: str
    series: tuple[Series, ...]


@dataclass(frozen=True)
class FigureArtifact:
    """Rendered figure; paths are as written by the creating call."""

    figure_id: str
    svg_path: str
    manifest_path: str


def chart_from_dict(obj: Any) -> ChartSpec:
    """Validate a JSON-shaped chart object into a ChartSpec."""
    if not isinstance(obj, dict):
        raise ChartError("chart must be an object")
    for key in ("kind", "title", "x_label", "y_label", "series"):
        if key not in obj:
            raise ChartError(f"chart is missing key {key!r}")
    unknown = sorted(set(obj) - {"kind", "title", "x_label", "y_label", "series"})
    if unknown:
        raise ChartError("chart has unknown key(s): " + ", ".join(unknown))
    try:
        kind = ChartKind(obj["kind"])
    except ValueError:
        raise ChartError(f"unknown chart kind {obj['kind']!r}") from None
    for key in ("title", "x_label", "y_label"):
        if not isinstance(obj[key], str):
            raise ChartError(f"chart {key} must be a string")
    raw_series = obj["series"]
    if not isinstance(raw_series, list) or not raw_series:
        raise ChartError("no series")
    series = []
    for raw in raw_series:
        if not isinstance(raw, dict) or set(raw) != {"name", "points"}:
            raise ChartError("each series needs exactly the keys name, points")
        if not isinstance(raw["name"], str) or not raw["name"]:
            raise ChartError("series name must be a non-empty string")
        points = raw["points"]
        if not isinstance(points, list) or not points:
            raise ChartError(f"series {raw['name']!r} has no points")
        parsed = []
        for point in points:
            if not isinstance(point, (list, tuple)) or len(point) != 2:
                raise ChartError(f"series {raw['name']!r}: each point is a [x, y] pair")
            x, y = point
            if isinstance(x, bool) or not isinstance(x, (str, int, float)):
                raise ChartError(f"series {raw['name']!r}: x must be a number or category")
            if isinstance(y, bool) or not isinstance(y, (int, float)) or not math.isfinite(y):
                raise ChartError(f"series {raw['name']!r}: y must be a finite number")
            parsed.append((x, y))
        series.append(Series(name=raw["name"], points=tuple(parsed)))
    spec = ChartSpec(kind=kind, title=obj["title"], x_label=obj["x_label"],
                     y_label=obj["y_label"], series=tuple(series))
    _check_domains(spec)
    return spec


def _check_domains(spec: ChartSpec) -> None:
    domains = {tuple(x for x, _ in s.points) for s in spec.series}
    if len(domains) > 1:
        raise ChartError("all series in one chart must share the same x domain")
    xs = next(iter(domains))
    kinds = {isinstance(x, str) for x in xs}
    if len(kinds) > 1:
        raise ChartError("x values must be all numeric or all categories")


def chart_to_dict(spec: ChartSpec) -> dict:
    return {
        "kind": spec.kind.value,
        "title": spec.title,
        "x_label": spec.x_label,
        "y_label": spec.y_label,
        "series": [
            {"name": s.name, "points": [[x, y] for x, y in s.points]}
            for s in spec.series
        ],
    }


def canonical_chart_json(spec: ChartSpec) -> str:
    return json.dumps(chart_to_dict(spec), indent=2, sort_keys=True,
                      ensure_ascii=False) + "\n"


def plot_series(spec: ChartSpec, out_dir: str | Path,
                figure_id: str | None = None) -> FigureArtifact:
    """Render the spec to ``<figure_id>.svg`` + manifest under out_dir.

    When ``figure_id`` is omitted the next free ``fig-NNN`` in out_dir is
    used.  Rendering is deterministic: same spec, same bytes.
    """
    _check_domains(spec)
    if not spec.series:
        raise ChartError("no series")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    if figure_id is None:
        taken = {p.stem for p in out_dir.glob("fig-*.svg")}
        n = 1
        while f"fig-{n:03d}" in taken:
            n += 1
        figure_id = f"fig-{n:03d}"

    svg = render_svg(spec)
    svg_path = out_dir / f"{figure_id}.svg"
    manifest_path = out_dir / f"{figure_id}.json"
    try:
        svg_path.write_text(svg, encoding="utf-8")
        manifest_path.write_text(canonical_chart_json(spec), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write figure {figure_id}: {exc}") from exc
    return FigureArtifact(figure_id=figure_id, svg_path=str(svg_path),
                          manifest_path=str(manifest_path))


def load_manifest(path: str | Path) -> ChartSpec:
    return chart_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# SVG emission


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:.4g}"


def render_svg(spec: ChartSpec) -> str:
    xs = [x for x, _ in spec.series[0].points]
    categorical = any(isinstance(x, str) for x in xs) or spec.kind is not ChartKind.LINE
    ys = [y for s in spec.series for _, y in s.points]
    y_lo = min(0.0, min(ys))
    y_hi = max(ys)
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    x0, x1 = float(_MARGIN_LEFT), float(CANVAS_W - _MARGIN_RIGHT)
    y0, y1 = float(_MARGIN_TOP), float(CANVAS_H - _MARGIN_BOTTOM)

    def sy(v: float) -> float:
        return y1 - (v - y_lo) / (y_hi - y_lo) * (y1 - y0)

    if categorical:
        slots = len(xs)

        def sx_slot(i: float) -> float:
            return x0 + (i + 0.5) / slots * (x1 - x0)
    else:
        num_xs = [float(x) for x in xs]
        x_lo, x_hi = min(num_xs), max(num_xs)
        if x_hi == x_lo:
            x_hi = x_lo + 1.0

        def sx_val(v: float) -> float:
            return x0 + (v - x_lo) / (x_hi - x_lo) * (x1 - x0)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS_W}" '
        f'height="{CANVAS_H}" viewBox="0 0 {CANVAS_W} {CANVAS_H}">',
        f'<rect x="0" y="0" width="{CANVAS_W}" height="{CANVAS_H}" fill="#ffffff"/>',
        f'<text x="{CANVAS_W / 2:.0f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16" fill="#222222">'
        f'{escape(spec.title)}</text>',
    ]

    # gridlines and y ticks
    for i in range(5):
        v = y_lo + (y_hi - y_lo) * i / 4
        y = sy(v)
        parts.append(f'<line x1="{_fmt(x0)}" y1="{_fmt(y)}" x2="{_fmt(x1)}" '
                     f'y2="{_fmt(y)}" stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{_fmt(x0 - 8)}" y="{_fmt(y + 4)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11" fill="#444444">'
                     f'{escape(_tick_label(v))}</text>')

    # axes
    parts.append(f'<line x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x0)}" '
                 f'y2="{_fmt(y1)}" stroke="#333333" stroke-width="1.5"/>')
    parts.append(f'<line x1="{_fmt(x0)}" y1="{_fmt(y1)}" x2="{_fmt(x1)}" '
                 f'y2="{_fmt(y1)}" stroke="#333333" stroke-width="1.5"/>')

    # x tick labels
    if categorical:
        for i, x in enumerate(xs):
            parts.append(f'<text x="{_fmt(sx_slot(i))}" y="{_fmt(y1 + 18)}" '
                         f'text-anchor="middle" font-family="sans-serif" '
                         f'font-size="11" fill="#444444">{escape(str(x))}</text>')
    else:
        for i in range(5):
            v = x_lo + (x_hi - x_lo) * i / 4
            parts.append(f'<text x="{_fmt(sx_val(v))}" y="{_fmt(y1 + 18)}" '
                         f'text-anchor="middle" font-family="sans-serif" '
                         f'font-size="11" fill="#444444">'
                         f'{escape(_tick_label(v))}</text>')

    # axis labels
    parts.append(f'<text x="{(x0 + x1) / 2:.2f}" y="{CANVAS_H - 14}" '
                 f'text-anchor="middle" font-family="sans-serif" font-size="13" '
                 f'fill="#222222">{escape(spec.x_label)}</text>')
    parts.append(f'<text x="18" y="{(y0 + y1) / 2:.2f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13" fill="#222222" '
                 f'transform="rotate(-90 18 {(y0 + y1) / 2:.2f})">'
                 f'{escape(spec.y_label)}</text>')

    if spec.kind is ChartKind.LINE and not categorical:
        for si, series in enumerate(spec.series):
            color = PALETTE[si % len(PALETTE)]
            coords = [(sx_val(float(x)), sy(y)) for x, y in series.points]
            if len(coords) >= 2:
                points_attr = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in coords)
                parts.append(f'<polyline fill="none" stroke="{color}" '
                             f'stroke-width="2" points="{points_attr}"/>')
            for px, py in coords:
                parts.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="3" '
                             f'fill="{color}"/>')
    elif spec.kind is ChartKind.LINE:
        for si, series in enumerate(spec.series):
            color = PALETTE[si % len(PALETTE)]
            coords = [(sx_slot(i), sy(y)) for i, (_, y) in enumerate(series.points)]
            if len(coords) >= 2:
                points_attr = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in coords)
                parts.append(f'<polyline fill="none" stroke="{color}" '
                             f'stroke-width="2" points="{points_attr}"/>')
            for px, py in coords:
                parts.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="3" '
                             f'fill="{color}"/>')
    else:
        # bar and grouped_bar share the renderer: one bar per series per slot
        n_series = len(spec.series)
        slot_w = (x1 - x0) / len(xs)
        group_w = slot_w * 0.72
        bar_w = group_w / n_series
        for si, series in enumerate(spec.series):
            color = PALETTE[si % len(PALETTE)]
            for i, (_, y) in enumerate(series.points):
                left = x0 + (i + 0.5) * slot_w - group_w / 2 + si * bar_w
                top = min(sy(y), sy(0.0))
                height = abs(sy(0.0) - sy(y))
                parts.append(f'<rect x="{_fmt(left)}" y="{_fmt(top)}" '
                             f'width="{_fmt(bar_w)}" height="{_fmt(height)}" '
                             f'fill="{color}"/>')

    # legend, top-right
    legend_x = x1 - 150
    for si, series in enumerate(spec.series):
        color = PALETTE[si % len(PALETTE)]
        ly = y0 + 6 + si * 18
        parts.append(f'<rect x="{_fmt(legend_x)}" y="{_fmt(ly - 9)}" width="12" '
                     f'height="12" fill="{color}"/>')
        parts.append(f'<text x="{_fmt(legend_x + 18)}" y="{_fmt(ly + 1)}" '
                     f'font-family="sans-serif" font-size="12" fill="#222222">'
                     f'{escape(series.name)}</text>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


#: JSON schema for one chart object (shared by the extraction schema).
CHART_SCHEMA: dict = {
    "type": "object",
    "required": ["kind", "title", "x_label", "y_label", "series"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": [k.value for k in ChartKind]},
        "title": {"type": "string"},
        "x_label": {"type": "string"},
        "y_label": {"type": "string"},
        "series": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "points"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "points": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "array",
                            "prefixItems": [
                                {"type": ["number", "string"]},
                                {"type": "number"},
                            ],
                            "minItems": 2,
                            "maxItems": 2,
                        },
                    },
                },
            },
        },
    },
}
