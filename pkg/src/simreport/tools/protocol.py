"""In-band tool-call protocol: parse, validate, format and dispatch.

The wire convention is a fenced code block labeled ``tool`` containing
``{"tool": <name>, "arguments": {...}}``.  The registry is closed at
compile time: plot_series, hit_rate, aggregate, goal_count, build_table.
All tools are pure functions of their arguments plus the run context, so
re-running a call (e.g. a model-initiated duplicate) is harmless.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import jsonschema

from ..corpus import ProcessEvent, Side
from ..errors import ChartError, IoError, MetricError, ToolError, ToolParseError
from ..simgen import GoalSpec
from . import charts, metrics

_SIDE_SCHEMA = {"enum": [s.value for s in Side]}

TOOL_ARG_SCHEMAS: dict[str, dict] = {
    "plot_series": {
        "type": "object",
        "required": ["chart"],
        "additionalProperties": False,
        "properties": {"chart": charts.CHART_SCHEMA},
    },
    "hit_rate": {
        "type": "object",
        "required": ["side"],
        "additionalProperties": False,
        "properties": {"side": _SIDE_SCHEMA, "trial_id": {"type": "string"}},
    },
    "aggregate": {
        "type": "object",
        "required": ["values"],
        "additionalProperties": False,
        "properties": {
            "label": {"type": "string"},
            "values": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "array",
                    "prefixItems": [{"type": "string"},
                                    {"type": ["number", "null"]}],
                    "minItems": 2,
                    "maxItems": 2,
                },
            },
        },
    },
    "goal_count": {"type": "object", "additionalProperties": False, "properties": {}},
    "build_table": {
        "type": "object",
        "required": ["headers", "rows"],
        "additionalProperties": False,
        "properties": {
            "headers": {"type": "array", "minItems": 1,
                        "items": {"type": "string"}},
            "rows": {
                "type": "array",
                "items": {"type": "array",
                          "items": {"type": ["string", "number", "null"]}},
            },
        },
    },
}

TOOL_NAMES = tuple(sorted(TOOL_ARG_SCHEMAS))

_TOOL_FENCE_RE = re.compile(r"^```tool[ \t]*\n(.*?)^```[ \t]*$", re.M | re.S)


@dataclass(frozen=True)
class ToolCall:
    tool: str
    arguments: dict


def make_tool_call(tool: str, arguments: dict) -> ToolCall:
    """Validate name and argument schema; the only way to build a ToolCall."""
    block = json.dumps({"tool": tool, "arguments": arguments}, indent=2)
    if tool not in TOOL_ARG_SCHEMAS:
        raise ToolParseError(f"unregistered tool {tool!r}", block=block)
    validator = jsonschema.Draft202012Validator(TOOL_ARG_SCHEMAS[tool])
    errors = sorted(validator.iter_errors(arguments), key=lambda e: str(e.json_path))
    if errors:
        detail = "; ".join(f"{e.json_path}: {e.message}" for e in errors)
        raise ToolParseError(f"invalid arguments for {tool}: {detail}", block=block)
    return ToolCall(tool=tool, arguments=arguments)


def parse_tool_calls(assistant_text: str) -> list[ToolCall]:
    """Every ```tool fence in the text becomes a ToolCall, in document order."""
    calls = []
    for match in _TOOL_FENCE_RE.finditer(assistant_text):
        block = match.group(1)
        try:
            obj = json.loads(block)
        except json.JSONDecodeError as exc:
            raise ToolParseError(f"malformed JSON in tool fence: {exc.msg}",
                                 block=block) from exc
        if not isinstance(obj, dict) or set(obj) != {"tool", "arguments"}:
            raise ToolParseError(
                "tool fence must be an object with exactly the keys tool, arguments",
                block=block,
            )
        if not isinstance(obj["tool"], str):
            raise ToolParseError("tool name must be a string", block=block)
        if obj["tool"] not in TOOL_ARG_SCHEMAS:
            raise ToolParseError(f"unregistered tool {obj['tool']!r}", block=block)
        if not isinstance(obj["arguments"], dict):
            raise ToolParseError("tool arguments must be an object", block=block)
        calls.append(make_tool_call(obj["tool"], obj["arguments"]))
    return calls


def format_tool_call(call: ToolCall) -> str:
    body = json.dumps({"tool": call.tool, "arguments": call.arguments}, indent=2,
                      ensure_ascii=False)
    return f"```tool\n{body}\n```"


def strip_tool_fences(text: str) -> str:
    """Remove tool fences from assistant text (for report bodies)."""
    return _TOOL_FENCE_RE.sub("", text).strip()


@dataclass
class ToolContext:
    """Loaded run data the tools draw on.

    ``trials`` holds (trial_id, merged time-sorted events) pairs; figure ids
    are allocated through a serialized counter so concurrent plot calls
    cannot collide.
    """

    out_dir: Path
    trials: list[tuple[str, Sequence[ProcessEvent]]] = field(default_factory=list)
    goal: GoalSpec | None = None
    _fig_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _fig_counter: int = 0

    @property
    def figures_dir(self) -> Path:
        return self.out_dir / "figures"

    def allocate_figure_id(self) -> str:
        with self._fig_lock:
            self._fig_counter += 1
            return f"fig-{self._fig_counter:03d}"

    def events_for(self, trial_id: str | None) -> Sequence[ProcessEvent]:
        if trial_id is None:
            if len(self.trials) != 1:
                raise ToolError(
                    f"hit_rate without trial_id needs exactly one loaded trial, "
                    f"got {len(self.trials)}"
                )
            return self.trials[0][1]
        for tid, events in self.trials:
            if tid == trial_id:
                return events
        raise ToolError(f"unknown trial_id {trial_id!r}")


def execute(call: ToolCall, ctx: ToolContext) -> dict:
    """Run one validated call; the result echoes tool name and arguments."""
    try:
        output = _dispatch(call, ctx)
    except ToolError:
        raise
    except (ChartError, MetricError, IoError) as exc:
        raise ToolError(f"{call.tool} failed: {exc}") from exc
    return {"tool": call.tool, "arguments": call.arguments, "output": output}


def _dispatch(call: ToolCall, ctx: ToolContext) -> Any:
    args = call.arguments
    if call.tool == "plot_series":
        spec = charts.chart_from_dict(args["chart"])
        artifact = charts.plot_series(spec, ctx.figures_dir,
                                      figure_id=ctx.allocate_figure_id())
        return {
            "figure_id": artifact.figure_id,
            "svg_path": _ctx_relative(artifact.svg_path, ctx),
            "manifest_path": _ctx_relative(artifact.manifest_path, ctx),
        }
    if call.tool == "hit_rate":
        events = ctx.events_for(args.get("trial_id"))
        return {"value": metrics.hit_rate(events, Side(args["side"]))}
    if call.tool == "aggregate":
        pairs = [(trial_id, value) for trial_id, value in args["values"]]
        return metrics.aggregate(pairs)
    if call.tool == "goal_count":
        if ctx.goal is None:
            raise ToolError("goal_count needs a goal in the run context")
        return {"count": metrics.goal_count(ctx.trials, ctx.goal),
                "n_trials": len(ctx.trials)}
    if call.tool == "build_table":
        headers, rows = args["headers"], args["rows"]
        for i, row in enumerate(rows):
            if len(row) != len(headers):
                raise ToolError(
                    f"row {i} has {len(row)} cells but the table has "
                    f"{len(headers)} columns"
                )
        return {"headers": headers, "rows": rows}
    raise ToolError(f"unregistered tool {call.tool!r}")


def _ctx_relative(path: str, ctx: ToolContext) -> str:
    try:
        return Path(path).relative_to(ctx.out_dir).as_posix()
    except ValueError:
        return path
