"""Callable tool layer: plotting, metric calculators, table building, and
the in-band tool-call parse/dispatch protocol."""

from .charts import (
    CANVAS_H,
    CANVAS_W,
    CHART_SCHEMA,
    PALETTE,
    ChartKind,
    ChartSpec,
    FigureArtifact,
    Series,
    canonical_chart_json,
    chart_from_dict,
    chart_to_dict,
    load_manifest,
    plot_series,
)
from .metrics import aggregate, goal_count, hit_rate
from .protocol import (
    TOOL_ARG_SCHEMAS,
    TOOL_NAMES,
    ToolCall,
    ToolContext,
    execute,
    format_tool_call,
    make_tool_call,
    parse_tool_calls,
    strip_tool_fences,
)

__all__ = [
    "CANVAS_H",
    "CANVAS_W",
    "CHART_SCHEMA",
    "PALETTE",
    "ChartKind",
    "ChartSpec",
    "FigureArtifact",
    "Series",
    "TOOL_ARG_SCHEMAS",
    "TOOL_NAMES",
    "ToolCall",
    "ToolContext",
    "aggregate",
    "canonical_chart_json",
    "chart_from_dict",
    "chart_to_dict",
    "execute",
    "format_tool_call",
    "goal_count",
    "hit_rate",
    "load_manifest",
    "make_tool_call",
    "parse_tool_calls",
    "plot_series",
    "strip_tool_fences",
]
