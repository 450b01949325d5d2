"""Deterministic assembly of stage outputs into the final report artifacts.

A :class:`ReportBundle` is validated against its report type's mandated
section headings and written as ``report.md`` (ATX headings, pipe tables),
``report.html`` (SVG figures inlined so the file is self-contained) and
``report.json`` (the canonical machine-readable mirror, which parses back
into the bundle).  Artifacts contain no timestamps and only relative
paths, so identical bundles produce identical bytes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from html import escape
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import RenderError
from .tools import FigureArtifact

#: Bumped whenever the mandated heading sets change.
HEADINGS_VERSION = 1

REPORT_TITLES: dict[str, str] = {
    "A": "Effectiveness Evaluation and Optimization Suggestions",
    "B": "Comparative Analysis and Configuration Suggestions of Multi-Factor Experiments",
    "C": "Event-Driven Analysis of the Operational Process and Capability Assessment",
    "D": "Comprehensive Analysis of Operational Processes in Multiple Trials",
    "E": "Comprehensive Comparative Analysis and Configuration Suggestions of "
         "Multi-Factor Experiments",
}

_MANDATED: dict[str, tuple[str, ...]] = {
    "A": ("Overview", "Metrics Visualization", "Effectiveness Evaluation",
          "Optimization Suggestions"),
    "B": ("Overview", "Metrics Visualization", "Factor Influence Analysis",
          "Comprehensive Analysis", "Configuration Suggestions"),
    "C": ("Overview", "Process Visualization", "Operational Process Reconstruction",
          "Process Summary", "Hit Rate Results", "Capability Assessment"),
    "D": ("Overview", "Per-Trial Metrics Visualization", "Per-Trial Table",
          "Overall Assessment"),
    "E": ("Overview", "Cross-Case Metrics Visualization",
          "Comprehensive Comparative Analysis", "Configuration Recommendations"),
}

_FIGURE_REF_RE = re.compile(r"figures/([A-Za-z0-9_-]+)\.svg")


def mandated_sections(report_type: str) -> tuple[str, ...]:
    """Ordered mandated headings for a report type ('A'..'E')."""
    key = getattr(report_type, "value", report_type)
    try:
        return _MANDATED[key]
    except KeyError:
        raise RenderError(f"unknown report type {report_type!r}") from None


def report_title(report_type: str) -> str:
    key = getattr(report_type, "value", report_type)
    return f"Report {key}: {REPORT_TITLES[key]}"


@dataclass(frozen=True)
class Section:
    heading: str
    body: str


@dataclass(frozen=True)
class Table:
    headers: tuple[str, ...]
    rows: tuple[tuple[Any, ...], ...]


@dataclass(frozen=True)
class ReportBundle:
    report_type: str
    title: str
    sections: tuple[Section, ...]
    figures: tuple[FigureArtifact, ...] = ()
    tables: tuple[Table, ...] = ()
    trace_path: str = "trace.json"
    meta: Mapping[str, Any] = field(default_factory=dict)


def fmt_number(value: Any) -> str:
    """Exact textual form of a numeric cell (so provenance audits can match
    it back to tool results); None renders as n/a."""
    if value is None:
        return "n/a"
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return json.dumps(value)
    return str(value)


def table_to_markdown(table: Table) -> str:
    def cell(v: Any) -> str:
        return fmt_number(v).replace("|", "\\|")

    lines = ["| " + " | ".join(table.headers) + " |",
             "| " + " | ".join("---" for _ in table.headers) + " |"]
    for row in table.rows:
        lines.append("| " + " | ".join(cell(v) for v in row) + " |")
    return "\n".join(lines)


def split_sections(text: str, headings: Sequence[str]) -> dict[str, str]:
    """Split Markdown text on the given '## heading' lines.

    Returns heading -> body for each heading found; headings absent from
    the text are simply missing from the result (the caller decides whether
    that is an error).
    """
    wanted = {h.strip() for h in headings}
    found: dict[str, list[str]] = {}
    current: str | None = None
    for line in text.splitlines():
        match = re.match(r"^##\s+(.+?)\s*$", line)
        if match:
            heading = match.group(1)
            if heading in wanted:
                current = heading
                found[current] = []
            else:
                current = None  # an unknown heading ends the open section
            continue
        if current is not None:
            found[current].append(line)
    return {heading: "\n".join(lines).strip() for heading, lines in found.items()}


def validate_bundle(bundle: ReportBundle, out_dir: str | Path) -> None:
    """Raise RenderError naming the first violated bundle invariant."""
    out_dir = Path(out_dir)
    mandated = mandated_sections(bundle.report_type)
    headings = [s.heading for s in bundle.sections]
    cursor = 0
    for heading in mandated:
        try:
            cursor = headings.index(heading, cursor) + 1
        except ValueError:
            if heading in headings:
                raise RenderError(f"section out of order: {heading}") from None
            raise RenderError(f"missing section: {heading}") from None

    known = {f.figure_id for f in bundle.figures}
    for section in bundle.sections:
        for figure_id in _FIGURE_REF_RE.findall(section.body):
            if figure_id not in known:
                raise RenderError(f"dangling figure: {figure_id}")
    for figure in bundle.figures:
        if not (out_dir / figure.svg_path).is_file():
            raise RenderError(f"figure file missing: {figure.svg_path}")
        if not (out_dir / figure.manifest_path).is_file():
            raise RenderError(f"figure manifest missing: {figure.manifest_path}")

    for i, table in enumerate(bundle.tables):
        for row in table.rows:
            if len(row) != len(table.headers):
                raise RenderError(f"table {i} has ragged rows")


def render_markdown(bundle: ReportBundle) -> str:
    parts = [f"# {bundle.title}"]
    for section in bundle.sections:
        parts.append(f"## {section.heading}")
        if section.body:
            parts.append(section.body)
    return "\n\n".join(parts) + "\n"


def _body_to_html(body: str, out_dir: Path) -> str:
    chunks = []
    for block in re.split(r"\n\s*\n", body):
        block = block.strip()
        if not block:
            continue
        image = re.fullmatch(r"!\[([^\]]*)\]\(([^)]+\.svg)\)", block)
        if image:
            alt, rel = image.groups()
            svg_file = out_dir / rel
            svg = svg_file.read_text(encoding="utf-8")
            svg = svg.split("?>", 1)[-1].strip()
            chunks.append(f'<figure>{svg}<figcaption>{escape(alt)}'
                          f"</figcaption></figure>")
        elif all(line.startswith("|") for line in block.splitlines()):
            rows = [[c.strip() for c in line.strip().strip("|").split("|")]
                    for line in block.splitlines()]
            html_rows = ["<tr>" + "".join(f"<th>{escape(c)}</th>" for c in rows[0])
                         + "</tr>"]
            for row in rows[2:]:
                html_rows.append("<tr>" + "".join(f"<td>{escape(c)}</td>" for c in row)
                                 + "</tr>")
            chunks.append("<table>" + "".join(html_rows) + "</table>")
        else:
            chunks.append("<p>" + escape(block).replace("\n", "<br/>") + "</p>")
    return "\n".join(chunks)


def render_html(bundle: ReportBundle, out_dir: Path) -> str:
    parts = [
        "<!DOCTYPE html>",
        '<html><head><meta charset="utf-8"/>',
        f"<title>{escape(bundle.title)}</title>",
        "<style>",
        "body{font-family:sans-serif;max-width:900px;margin:2em auto;color:#222;}",
        "table{border-collapse:collapse;margin:1em 0;}",
        "th,td{border:1px solid #999;padding:4px 10px;text-align:left;}",
        "figure{margin:1em 0;}figcaption{font-size:0.9em;color:#555;}",
        "</style></head><body>",
        f"<h1>{escape(bundle.title)}</h1>",
    ]
    for section in bundle.sections:
        parts.append(f"<h2>{escape(section.heading)}</h2>")
        parts.append(_body_to_html(section.body, out_dir))
    parts.append("</body></html>")
    return "\n".join(parts) + "\n"


def bundle_to_dict(bundle: ReportBundle) -> dict:
    return {
        "headings_version": HEADINGS_VERSION,
        "report_type": bundle.report_type,
        "title": bundle.title,
        "headings": [s.heading for s in bundle.sections],
        "sections": [{"heading": s.heading, "body": s.body} for s in bundle.sections],
        "figures": [
            {"figure_id": f.figure_id, "svg_path": f.svg_path,
             "manifest_path": f.manifest_path}
            for f in bundle.figures
        ],
        "tables": [
            {"headers": list(t.headers), "rows": [list(r) for r in t.rows]}
            for t in bundle.tables
        ],
        "trace_path": bundle.trace_path,
        "meta": dict(bundle.meta),
    }


def bundle_from_dict(obj: dict) -> ReportBundle:
    try:
        return ReportBundle(
            report_type=obj["report_type"],
            title=obj["title"],
            sections=tuple(Section(s["heading"], s["body"]) for s in obj["sections"]),
            figures=tuple(
                FigureArtifact(f["figure_id"], f["svg_path"], f["manifest_path"])
                for f in obj["figures"]
            ),
            tables=tuple(
                Table(tuple(t["headers"]), tuple(tuple(r) for r in t["rows"]))
                for t in obj["tables"]
            ),
            trace_path=obj["trace_path"],
            meta=obj.get("meta", {}),
        )
    except (KeyError, TypeError) as exc:
        raise RenderError(f"malformed report.json: {exc}") from exc


def read_report(path: str | Path) -> ReportBundle:
    return bundle_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def assemble(bundle: ReportBundle, out_dir: str | Path) -> dict[str, Path]:
    """Validate the bundle and write report.md / report.html / report.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    validate_bundle(bundle, out_dir)
    paths = {
        "md": out_dir / "report.md",
        "html": out_dir / "report.html",
        "json": out_dir / "report.json",
    }
    paths["md"].write_text(render_markdown(bundle), encoding="utf-8")
    paths["html"].write_text(render_html(bundle, out_dir), encoding="utf-8")
    paths["json"].write_text(
        json.dumps(bundle_to_dict(bundle), indent=2, sort_keys=True,
                   ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return paths
