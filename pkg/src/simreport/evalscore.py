"""Weighted report scoring and the ours-vs-baseline comparison harness.

Reports are scored on four aspects (data analysis accuracy, content
completeness, practicality, layout aesthetics) with fixed weights
0.3/0.2/0.3/0.2, each on a 1-10 scale, so the weighted overall is also in
[1, 10].  LLM judges return aspect scores only; the overall is always
computed locally so no model ever does the arithmetic.  Human scores enter
through ``scores_human.csv``.  Scores across judge kinds are never pooled:
the comparison grid keeps separate human and llm columns per report type.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import llm, prompts
from .errors import JudgeParseError, ScoreError

ASPECTS = ("accuracy", "completeness", "practicality", "aesthetics")
WEIGHTS: Mapping[str, float] = {
    "accuracy": 0.3,
    "completeness": 0.2,
    "practicality": 0.3,
    "aesthetics": 0.2,
}
assert math.fsum(WEIGHTS.values()) == 1.0

SCORE_MIN = 1.0
SCORE_MAX = 10.0

#: Display precision for scores (three decimals).
DISPLAY_DECIMALS = 3


class JudgeKind(str, Enum):
    HUMAN = "human"
    LLM = "llm"


def _check_aspect(name: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScoreError(f"aspect {name} must be a number, got {value!r}")
    if not SCORE_MIN <= value <= SCORE_MAX:
        raise ScoreError(f"aspect {name} = {value} is outside [1, 10]")
    return float(value)


def overall_score(accuracy: float, completeness: float, practicality: float,
                  aesthetics: float) -> float:
    """Weighted sum of the four aspect scores (weights 0.3/0.2/0.3/0.2)."""
    values = {"accuracy": accuracy, "completeness": completeness,
              "practicality": practicality, "aesthetics": aesthetics}
    total = 0.0
    for name in ASPECTS:
        total += WEIGHTS[name] * _check_aspect(name, values[name])
    return total


@dataclass(frozen=True)
class ScoreCard:
    judge_id: str
    judge_kind: JudgeKind
    accuracy: float
    completeness: float
    practicality: float
    aesthetics: float
    overall: float

    def __post_init__(self) -> None:
        expected = overall_score(self.accuracy, self.completeness,
                                 self.practicality, self.aesthetics)
        if abs(self.overall - expected) > 1e-9:
            raise ScoreError(
                f"overall {self.overall} does not match the weighted sum {expected}"
            )

    @classmethod
    def make(cls, judge_id: str, judge_kind: JudgeKind | str,
             aspects: Mapping[str, Any]) -> "ScoreCard":
        missing = sorted(set(ASPECTS) - set(aspects))
        if missing:
            raise ScoreError("missing aspect score(s): " + ", ".join(missing))
        values = {name: _check_aspect(name, aspects[name]) for name in ASPECTS}
        return cls(judge_id=judge_id, judge_kind=JudgeKind(judge_kind),
                   overall=overall_score(**values), **values)

    def to_dict(self) -> dict:
        return {
            "judge_id": self.judge_id,
            "judge_kind": self.judge_kind.value,
            "accuracy": self.accuracy,
            "completeness": self.completeness,
            "practicality": self.practicality,
            "aesthetics": self.aesthetics,
            "overall": self.overall,
        }


def aggregate_judges(cards: Sequence[ScoreCard]) -> float:
    """Arithmetic mean of overall scores; rounding happens only at display."""
    if not cards:
        raise ScoreError("aggregate_judges needs at least one score card")
    return sum(card.overall for card in cards) / len(cards)


def display_score(value: float) -> str:
    return f"{value:.{DISPLAY_DECIMALS}f}"


# ---------------------------------------------------------------------------
# LLM-as-judge


def judge_with_llm(report_md: str, backend, *, judge_id: str | None = None,
                   registry: prompts.PromptRegistry | None = None) -> ScoreCard:
    """Score a report with a model judge.

    The judge prompt presents the four aspects, their weights and the 1-10
    scale; the model must answer with fenced JSON of the four aspect scores.
    The overall is computed locally and never trusted from the model.  One
    malformed reply earns one reflection retry, then JudgeParseError.
    """
    if not report_md.strip():
        raise ScoreError("report text is empty")
    if judge_id is None:
        judge_id = getattr(backend, "model_name", "llm-judge")
    rendered = prompts.render_prompt("judge_report", {"report": report_md}, registry)
    messages = [llm.system(rendered.system), llm.user(rendered.user)]
    completion = llm.chat(backend, messages, temperature=0.0)
    aspects, problem = _parse_judge_reply(completion.text)
    if aspects is None:
        reflection = (
            f"Your previous reply was not valid: {problem}. Reply with only a "
            "fenced JSON object containing the numeric keys accuracy, "
            "completeness, practicality, aesthetics."
        )
        messages = messages + [llm.assistant(completion.text or "(empty reply)"),
                               llm.user(reflection)]
        completion = llm.chat(backend, messages, temperature=0.0)
        aspects, problem = _parse_judge_reply(completion.text)
        if aspects is None:
            raise JudgeParseError(f"judge reply unparseable after retry: {problem}")
    return ScoreCard.make(judge_id, JudgeKind.LLM, aspects)


def _parse_judge_reply(text: str) -> tuple[dict | None, str]:
    try:
        payload = llm.first_json_payload(text)
    except ValueError as exc:
        return None, str(exc)
    if not isinstance(payload, dict):
        return None, "reply is not a JSON object"
    missing = sorted(set(ASPECTS) - set(payload))
    if missing:
        return None, "missing aspect key(s): " + ", ".join(missing)
    for name in ASPECTS:
        value = payload[name]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return None, f"aspect {name} is not a number"
    return {name: payload[name] for name in ASPECTS}, ""


# ---------------------------------------------------------------------------
# human scores

HUMAN_CSV_HEADER = ("judge_id", "accuracy", "completeness", "practicality",
                    "aesthetics")


def read_human_scores(csv_path: str | Path) -> list[ScoreCard]:
    """Read scores_human.csv (header: judge_id,accuracy,completeness,
    practicality,aesthetics) into human score cards."""
    csv_path = Path(csv_path)
    with csv_path.open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or tuple(reader.fieldnames) != HUMAN_CSV_HEADER:
            raise ScoreError(
                f"{csv_path.name}: header must be exactly "
                + ",".join(HUMAN_CSV_HEADER)
            )
        cards = []
        for row_number, row in enumerate(reader, start=2):
            try:
                aspects = {name: float(row[name]) for name in ASPECTS}
            except (TypeError, ValueError):
                raise ScoreError(
                    f"{csv_path.name} line {row_number}: aspect scores must be numbers"
                ) from None
            if not row["judge_id"]:
                raise ScoreError(f"{csv_path.name} line {row_number}: empty judge_id")
            cards.append(ScoreCard.make(row["judge_id"], JudgeKind.HUMAN, aspects))
    if not cards:
        raise ScoreError(f"{csv_path.name} contains no score rows")
    return cards


# ---------------------------------------------------------------------------
# comparison grid (methods x models vs. report types x judge kinds)


@dataclass(frozen=True)
class ScoreRow:
    method: str
    model: str
    report_type: str
    judge_kind: JudgeKind
    score: float


@dataclass(frozen=True)
class ComparisonTable:
    columns: tuple[tuple[str, str], ...]   # (report_type, judge_kind)
    row_keys: tuple[tuple[str, str], ...]  # (method, model)
    cells: tuple[tuple[float | None, ...], ...]
    warnings: tuple[str, ...]

    def to_markdown(self) -> str:
        headers = ["Method", "Model"] + [f"{rt} ({kind})" for rt, kind in self.columns]
        lines = ["| " + " | ".join(headers) + " |",
                 "| " + " | ".join("---" for _ in headers) + " |"]
        for (method, model), row in zip(self.row_keys, self.cells):
            cells = [method, model] + [
                display_score(v) if v is not None else "-" for v in row
            ]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "columns": [{"report_type": rt, "judge_kind": kind}
                        for rt, kind in self.columns],
            "rows": [
                {"method": method, "model": model, "scores": list(row)}
                for (method, model), row in zip(self.row_keys, self.cells)
            ],
            "warnings": list(self.warnings),
        }


def _method_order(method: str) -> tuple[int, str]:
    return ({"ours": 0, "baseline": 1}.get(method, 2), method)


def comparison_table(rows: Sequence[ScoreRow | Mapping[str, Any]]) -> ComparisonTable:
    """Pivot score rows into the methods-x-models vs types-x-kinds grid.

    Ordering is deterministic: ours before baseline, models alphabetical,
    report types A..E, human before llm.  Duplicate keys are last-write-wins
    with a warning recorded in the table metadata.
    """
    if not rows:
        raise ScoreError("comparison_table needs at least one row")
    parsed: list[ScoreRow] = []
    for row in rows:
        if isinstance(row, ScoreRow):
            parsed.append(row)
        else:
            parsed.append(ScoreRow(
                method=row["method"], model=row["model"],
                report_type=row["report_type"],
                judge_kind=JudgeKind(row["judge_kind"]), score=float(row["score"]),
            ))

    cells: dict[tuple[str, str, str, str], float] = {}
    warnings = []
    for row in parsed:
        key = (row.method, row.model, row.report_type, row.judge_kind.value)
        if key in cells:
            warnings.append(
                f"duplicate score for method={row.method} model={row.model} "
                f"report_type={row.report_type} judge_kind={row.judge_kind.value}; "
                "keeping the last value"
            )
        cells[key] = row.score

    row_keys = sorted({(r.method, r.model) for r in parsed},
                      key=lambda mk: (_method_order(mk[0]), mk[1]))
    report_types = sorted({r.report_type for r in parsed})
    kinds = [k.value for k in (JudgeKind.HUMAN, JudgeKind.LLM)
             if any(r.judge_kind is k for r in parsed)]
    columns = tuple((rt, kind) for rt in report_types for kind in kinds)
    grid = tuple(
        tuple(cells.get((method, model, rt, kind)) for rt, kind in columns)
        for method, model in row_keys
    )
    return ComparisonTable(columns=columns, row_keys=tuple(row_keys), cells=grid,
                           warnings=tuple(warnings))


def write_comparison(table: ComparisonTable, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"md": out_dir / "comparison.md", "json": out_dir / "comparison.json"}
    paths["md"].write_text(table.to_markdown(), encoding="utf-8")
    paths["json"].write_text(
        json.dumps(table.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return paths
