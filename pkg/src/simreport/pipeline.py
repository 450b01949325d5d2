"""Report orchestrator: stage plans, the extract/validate/reflect loop,
tool dispatch between rounds, the single-shot baseline mode, and the
audited run trace.

Each report type runs a fixed ordered stage plan.  Extraction stages ask
the model for fenced JSON, validate it against a registered schema and
re-prompt with the validator's errors until it passes or the retry budget
is spent.  Tool stages never involve the model: every numeral that lands
in a report table comes from a tool result recorded in the trace, so a
report's numbers can be audited against ``trace.json``.  With a mock
backend the whole bundle is a pure function of (inputs, script, seed).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Sequence

import jsonschema

from . import corpus, llm, prompts, render, tools
from .corpus import MetricRecord, ProcessEvent
from .errors import (
    ConfigError,
    ExtractionFailed,
    IngestError,
    IoError,
    SimReportError,
    ToolParseError,
)
from .simgen import GoalSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_EXTRACTION = 4
EXIT_TOOL = 5
EXIT_TRANSPORT = 6


class ReportType(str, Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"


#: Input roles each report type requires, per its data-input contract.
REQUIRED_ROLES: dict[ReportType, tuple[str, ...]] = {
    ReportType.A: ("scenario", "metrics"),
    ReportType.B: ("scenario", "metrics"),
    ReportType.C: ("scenario", "trial"),
    ReportType.D: ("scenario", "case"),
    ReportType.E: ("scenario", "summaries"),
}

DEFAULT_VISUALIZE = [{"metric": "hit_rate", "sides": ["red", "blue"]}]


class StageKind(str, Enum):
    EXTRACT = "extract"
    ANALYZE = "analyze"
    TOOL = "tool"
    PER_TRIAL_LOOP = "per_trial_loop"
    ASSEMBLE = "assemble"


@dataclass(frozen=True)
class Stage:
    name: str
    kind: StageKind
    template_id: str | None = None
    schema_id: str | None = None
    tool: str | None = None


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[Stage, ...]

    def __post_init__(self) -> None:
        if not self.stages:
            raise ConfigError("a stage plan needs at least one stage")
        for stage in self.stages:
            if stage.kind is StageKind.EXTRACT and not stage.schema_id:
                raise ConfigError(f"extract stage {stage.name!r} needs a schema_id")
            if stage.kind is StageKind.ANALYZE and not stage.template_id:
                raise ConfigError(f"analyze stage {stage.name!r} needs a template_id")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.stages)


def plan_stages(report_type: ReportType | str) -> StagePlan:
    """The fixed stage plan for one report type."""
    rt = ReportType(report_type)
    extract = Stage("extract_series", StageKind.EXTRACT,
                    template_id="extract_series", schema_id="chart_series")
    plot = Stage("plot_figures", StageKind.TOOL, tool="plot_series")
    final = Stage("assemble", StageKind.ASSEMBLE)
    if rt is ReportType.A:
        middle = (Stage("effectiveness_analysis", StageKind.ANALYZE,
                        template_id="effectiveness_a"),)
        return StagePlan((extract, plot) + middle + (final,))
    if rt is ReportType.B:
        middle = (Stage("comparative_analysis", StageKind.ANALYZE,
                        template_id="compare_b"),)
        return StagePlan((extract, plot) + middle + (final,))
    if rt is ReportType.C:
        return StagePlan((
            extract,
            plot,
            Stage("process_reconstruction", StageKind.ANALYZE,
                  template_id="reconstruct_c"),
            Stage("hit_rate_tools", StageKind.TOOL, tool="hit_rate"),
            Stage("capability_assessment", StageKind.ANALYZE,
                  template_id="capability_c"),
            final,
        ))
    if rt is ReportType.D:
        return StagePlan((
            Stage("per_trial_analysis", StageKind.PER_TRIAL_LOOP,
                  template_id="per_trial_d"),
            plot,
            Stage("table_rows", StageKind.ANALYZE, template_id="table_d",
                  schema_id="trial_table_rows"),
            Stage("build_table", StageKind.TOOL, tool="build_table"),
            Stage("overall_assessment", StageKind.ANALYZE, template_id="overall_d"),
            final,
        ))
    return StagePlan((
        extract,
        plot,
        Stage("cross_case_analysis", StageKind.ANALYZE, template_id="cross_case_e"),
        final,
    ))


def baseline_plan() -> StagePlan:
    return StagePlan((
        Stage("single_shot", StageKind.ANALYZE, template_id="baseline_single_shot"),
        Stage("assemble", StageKind.ASSEMBLE),
    ))


# ---------------------------------------------------------------------------
# extraction schemas

SCHEMAS: dict[str, dict] = {
    "chart_series": {
        "type": "object",
        "required": ["charts"],
        "additionalProperties": False,
        "properties": {
            "charts": {"type": "array", "minItems": 1,
                       "items": tools.CHART_SCHEMA},
        },
    },
    "trial_table_rows": {
        "type": "object",
        "required": ["rows"],
        "additionalProperties": False,
        "properties": {
            "rows": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "required": ["trial_id", "red_summary", "blue_summary"],
                    "additionalProperties": False,
                    "properties": {
                        "trial_id": {"type": "string"},
                        "red_summary": {"type": "string"},
                        "blue_summary": {"type": "string"},
                    },
                },
            },
        },
    },
}


@dataclass(frozen=True)
class StructuredSeries:
    """Validated chart specs extracted from a data blob."""

    charts: tuple[tools.ChartSpec, ...]


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    report_type: ReportType
    input_paths: dict[str, Path]
    out_dir: Path
    backend: llm.BackendConfig | llm.MockScript
    visualize: list[dict] = field(default_factory=list)
    extra_user_prompt: str | None = None
    max_extraction_retries: int = 3
    seed: int = 0
    chunk_token_budget: int = 6000
    prompts_dir: Path | None = None


_CONFIG_KEYS = {
    "report_type", "input_paths", "out_dir", "backend", "visualize",
    "extra_user_prompt", "max_extraction_retries", "seed",
    "chunk_token_budget", "prompts_dir",
}

_BACKEND_KEYS = {
    "endpoint_url", "model_name", "api_key_env", "temperature", "timeout",
    "max_attempts", "backoff_base",
}


def load_run_config(path: str | Path, *, seed_override: int | None = None,
                    mock_script: str | Path | None = None) -> RunConfig:
    """Parse a config.json; relative paths resolve against the config's dir."""
    path = Path(path)
    base = path.parent
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path.name}: malformed JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(obj) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError("config has unknown key(s): " + ", ".join(unknown))
    for key in ("report_type", "input_paths", "out_dir"):
        if key not in obj:
            raise ConfigError(f"config is missing key {key!r}")
    try:
        report_type = ReportType(obj["report_type"])
    except ValueError:
        raise ConfigError(f"unknown report_type {obj['report_type']!r}") from None
    raw_paths = obj["input_paths"]
    if not isinstance(raw_paths, dict):
        raise ConfigError("input_paths must be an object of role -> path")
    input_paths = {role: (base / p) for role, p in raw_paths.items()}

    if mock_script is not None:
        backend: llm.BackendConfig | llm.MockScript = llm.load_mock_script(mock_script)
    else:
        backend = _build_backend(obj.get("backend"), base)

    visualize = obj.get("visualize", [])
    if not isinstance(visualize, list):
        raise ConfigError("visualize must be a list of series selectors")
    extra = obj.get("extra_user_prompt")
    if extra is not None and not isinstance(extra, str):
        raise ConfigError("extra_user_prompt must be a string")
    retries = obj.get("max_extraction_retries", 3)
    if not isinstance(retries, int) or isinstance(retries, bool) or retries < 0:
        raise ConfigError("max_extraction_retries must be a non-negative integer")
    seed = obj.get("seed", 0) if seed_override is None else seed_override
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    budget = obj.get("chunk_token_budget", 6000)
    if not isinstance(budget, int) or isinstance(budget, bool) or budget < 1:
        raise ConfigError("chunk_token_budget must be a positive integer")
    prompts_dir = obj.get("prompts_dir")
    return RunConfig(
        report_type=report_type,
        input_paths=input_paths,
        out_dir=base / obj["out_dir"],
        backend=backend,
        visualize=visualize,
        extra_user_prompt=extra,
        max_extraction_retries=retries,
        seed=seed,
        chunk_token_budget=budget,
        prompts_dir=(base / prompts_dir) if prompts_dir else None,
    )


def _build_backend(raw: Any, base: Path) -> llm.BackendConfig | llm.MockScript:
    if not isinstance(raw, dict):
        raise ConfigError("config needs a backend object (or pass --mock-script)")
    if "mock_script" in raw:
        unknown = sorted(set(raw) - {"mock_script", "model_name"})
        if unknown:
            raise ConfigError("mock backend has unknown key(s): " + ", ".join(unknown))
        script = llm.load_mock_script(base / raw["mock_script"])
        script.model_name = raw.get("model_name", "mock")
        return script
    unknown = sorted(set(raw) - _BACKEND_KEYS)
    if unknown:
        raise ConfigError("backend has unknown key(s): " + ", ".join(unknown))
    for key in ("endpoint_url", "model_name"):
        if key not in raw:
            raise ConfigError(f"backend is missing key {key!r}")
    return llm.BackendConfig(**raw)


def validate_run_config(config: RunConfig) -> list[str]:
    """Check the Table-of-inputs roles for the report type; returns a
    human-readable summary. Never writes or contacts a backend."""
    notes = [f"report_type: {config.report_type.value}"]
    for role in REQUIRED_ROLES[config.report_type]:
        if role not in config.input_paths:
            raise ConfigError(
                f"missing input role {role!r} for report type "
                f"{config.report_type.value}"
            )
        path = config.input_paths[role]
        if not path.exists():
            raise ConfigError(f"input role {role!r} points to missing path {path}")
        notes.append(f"input {role}: {path}")
    backend = config.backend
    if isinstance(backend, llm.MockScript):
        notes.append(f"backend: mock script with {backend.remaining} replies")
    else:
        notes.append(f"backend: {backend.model_name} at {backend.endpoint_url}")
    notes.append(f"out_dir: {config.out_dir}")
    return notes


# ---------------------------------------------------------------------------
# run trace


@dataclass
class RoundTrace:
    """Audited record of one executed round; immutable once appended."""

    stage: str
    kind: str
    sub: str | None
    messages: list[dict]
    completion: dict | None
    tool_calls: list[dict]
    retries_used: int
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "kind": self.kind,
            "sub": self.sub,
            "messages": self.messages,
            "completion": self.completion,
            "tool_calls": self.tool_calls,
            "retries_used": self.retries_used,
            "wall_time_s": self.wall_time_s,
        }


class Trace:
    """Append-only execution record for one report run."""

    def __init__(self, report_type: str, method: str, model: str, seed: int,
                 plan_names: Sequence[str]):
        self.report_type = report_type
        self.method = method
        self.model = model
        self.seed = seed
        self.plan = list(plan_names)
        self.rounds: list[RoundTrace] = []

    def record(self, round_trace: RoundTrace) -> None:
        self.rounds.append(round_trace)

    @property
    def llm_calls(self) -> int:
        return sum(1 + r.retries_used for r in self.rounds if r.completion is not None)

    @property
    def tool_call_count(self) -> int:
        return sum(len(r.tool_calls) for r in self.rounds)

    def stage_sequence(self) -> list[str]:
        sequence: list[str] = []
        for r in self.rounds:
            if not sequence or sequence[-1] != r.stage:
                sequence.append(r.stage)
        return sequence

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "report_type": self.report_type,
            "method": self.method,
            "model": self.model,
            "seed": self.seed,
            "plan": self.plan,
            "rounds": [r.to_dict() for r in self.rounds],
            "llm_calls": self.llm_calls,
            "tool_calls": self.tool_call_count,
        }

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n",
                        encoding="utf-8")


# ---------------------------------------------------------------------------
# structured extraction with self-check retries

REFLECTION_PREFIX = "Your previous output failed validation:"


def _schema_text(schema_id: str) -> str:
    return json.dumps(SCHEMAS[schema_id], indent=2, sort_keys=True)


def _validated_json_round(
    backend,
    schema_id: str,
    variables: dict[str, str],
    max_retries: int,
    *,
    template_id: str,
    registry: prompts.PromptRegistry | None = None,
    semantic_check: Callable[[Any], list[str]] | None = None,
    temperature: float | None = 0.0,
) -> tuple[Any, int, list[llm.Message], llm.Completion]:
    """Chat until the reply's JSON payload validates, re-prompting with the
    validator's errors; at most ``1 + max_retries`` attempts."""
    if schema_id not in SCHEMAS:
        raise ConfigError(f"unknown extraction schema {schema_id!r}")
    if max_retries < 0:
        raise ConfigError("max_retries must be non-negative")
    rendered = prompts.render_prompt(template_id, variables, registry)
    messages = [llm.system(rendered.system), llm.user(rendered.user)]
    validator = jsonschema.Draft202012Validator(SCHEMAS[schema_id])
    failed_attempts: list[list[str]] = []
    while True:
        completion = llm.chat(backend, messages, temperature=temperature)
        errors: list[str] = []
        document = None
        try:
            payload = llm.first_json_payload(completion.text)
        except ValueError as exc:
            errors = [str(exc)]
        else:
            errors = [f"{e.json_path}: {e.message}"
                      for e in sorted(validator.iter_errors(payload),
                                      key=lambda e: str(e.json_path))]
            if not errors and semantic_check is not None:
                errors = semantic_check(payload)
            if not errors:
                document = payload
        if document is not None:
            return document, len(failed_attempts), messages, completion
        failed_attempts.append(errors)
        if len(failed_attempts) > max_retries:
            raise ExtractionFailed(
                f"extraction failed validation after {len(failed_attempts)} "
                f"attempt(s)",
                attempts=failed_attempts,
            )
        reflection = (
            REFLECTION_PREFIX + "\n"
            + "\n".join(f"- {e}" for e in errors)
            + "\n\nThe original instruction is restated below.\n\n"
            + rendered.user
        )
        messages = messages + [llm.assistant(completion.text or "(empty reply)"),
                               llm.user(reflection)]


def _charts_semantic_check(payload: Any) -> list[str]:
    errors = []
    for index, raw in enumerate(payload.get("charts", [])):
        try:
            tools.chart_from_dict(raw)
        except SimReportError as exc:
            errors.append(f"charts[{index}]: {exc}")
    return errors


def extract_structured(backend, schema_id: str, data_blob: str, max_retries: int,
                       *, selectors: str = "", registry=None, trace: Trace | None = None,
                       stage_name: str = "extract_series") -> StructuredSeries:
    """Extract chart series from a data blob with self-check retries.

    Each failed attempt appends exactly one reflection message carrying the
    validator's error list verbatim.
    """
    started = time.perf_counter()
    variables = {
        "data": data_blob,
        "selectors": selectors or json.dumps(DEFAULT_VISUALIZE, indent=2),
        "schema": _schema_text(schema_id),
    }
    document, retries, messages, completion = _validated_json_round(
        backend, schema_id, variables, max_retries,
        template_id="extract_series", registry=registry,
        semantic_check=_charts_semantic_check,
    )
    series = StructuredSeries(
        charts=tuple(tools.chart_from_dict(c) for c in document["charts"])
    )
    if trace is not None:
        trace.record(RoundTrace(
            stage=stage_name, kind=StageKind.EXTRACT.value, sub=None,
            messages=[m.to_dict() for m in messages],
            completion={"text": completion.text,
                        "finish_reason": completion.finish_reason.value},
            tool_calls=[], retries_used=retries,
            wall_time_s=time.perf_counter() - started,
        ))
    return series


# ---------------------------------------------------------------------------
# input loading and prompt-facing text rendering


@dataclass
class TrialInputs:
    trial_id: str
    files: list[tuple[str, list[ProcessEvent]]]
    merged: list[ProcessEvent]


@dataclass
class CaseInputs:
    case_id: str
    factor_assignment: dict[str, str]
    goal: GoalSpec
    trials: list[TrialInputs]


@dataclass
class _Inputs:
    scenario_text: str
    metrics: list[MetricRecord] | None = None
    trial: TrialInputs | None = None
    case: CaseInputs | None = None
    summaries: list[dict] | None = None


def _load_trial_dir(trial_dir: Path) -> TrialInputs:
    files = sorted(trial_dir.glob("*.jsonl"))
    if not files:
        raise IngestError(f"no process files (*.jsonl) under {trial_dir}")
    parsed = [(f.name, corpus.parse_process_file(f)) for f in files]
    merged = corpus.merge_events(*(events for _, events in parsed))
    return TrialInputs(trial_id=trial_dir.name, files=parsed, merged=merged)


def _load_case_dir(case_dir: Path) -> CaseInputs:
    meta_path = case_dir / "case.json"
    if not meta_path.is_file():
        raise IngestError(f"case directory {case_dir} has no case.json")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestError(f"{meta_path}: malformed JSON: {exc.msg}") from exc
    for key in ("case_id", "factor_assignment", "goal", "trials"):
        if key not in meta:
            raise IngestError(f"{meta_path} is missing key {key!r}")
    trials_root = case_dir / "trials"
    trial_dirs = sorted(p for p in trials_root.glob("*") if p.is_dir())
    if not trial_dirs:
        raise IngestError(f"no trial directories under {trials_root}")
    return CaseInputs(
        case_id=meta["case_id"],
        factor_assignment=dict(meta["factor_assignment"]),
        goal=GoalSpec.from_dict(meta["goal"]),
        trials=[_load_trial_dir(d) for d in trial_dirs],
    )


def _load_summaries(summaries_dir: Path) -> list[dict]:
    paths = sorted(summaries_dir.rglob("summary.json"))
    if not paths:
        raise IngestError(f"no summary.json files under {summaries_dir}")
    summaries = []
    for path in paths:
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path}: malformed JSON: {exc.msg}") from exc
        if not isinstance(obj, dict) or "case_id" not in obj:
            raise IngestError(f"{path} is not a case summary (no case_id)")
        summaries.append(obj)
    summaries.sort(key=lambda s: s["case_id"])
    return summaries


def _load_inputs(config: RunConfig) -> _Inputs:
    rt = config.report_type
    scenario_path = config.input_paths["scenario"]
    try:
        scenario_text = scenario_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read scenario {scenario_path}: {exc}") from exc
    if not scenario_text.strip():
        raise IngestError(f"scenario {scenario_path} is empty")
    inputs = _Inputs(scenario_text=scenario_text.strip())
    if rt in (ReportType.A, ReportType.B):
        inputs.metrics = corpus.parse_metric_file(config.input_paths["metrics"])
    elif rt is ReportType.C:
        inputs.trial = _load_trial_dir(config.input_paths["trial"])
    elif rt is ReportType.D:
        inputs.case = _load_case_dir(config.input_paths["case"])
    else:
        inputs.summaries = _load_summaries(config.input_paths["summaries"])
    return inputs


def metrics_to_markdown(records: Sequence[MetricRecord]) -> str:
    lines = ["| case | trial | side | metric | value | unit |",
             "| --- | --- | --- | --- | --- | --- |"]
    for r in records:
        lines.append(
            f"| {r.case_id} | {r.trial_id or ''} | {r.side.value} | "
            f"{r.metric_name} | {render.fmt_number(r.value)} | {r.unit or ''} |"
        )
    return "\n".join(lines)


def events_to_text(events: Sequence[ProcessEvent]) -> str:
    lines = []
    for e in events:
        line = f"t={e.t:g}s {e.side.value} {e.entity_id} {e.event.value}"
        if e.target_id is not None:
            line += f" -> {e.target_id}"
        if e.payload:
            line += " " + json.dumps(dict(e.payload), ensure_ascii=False)
        lines.append(line)
    return "\n".join(lines)


def summaries_to_text(summaries: Sequence[dict]) -> str:
    blocks = []
    for s in summaries:
        lines = [f"### {s['case_id']}"]
        assignment = s.get("factor_assignment") or {}
        if assignment:
            lines.append("- factors: " + ", ".join(f"{k}={v}" for k, v in assignment.items()))
        if "goal_count" in s and "n_trials" in s:
            lines.append(f"- goal achieved in {s['goal_count']} of {s['n_trials']} trials")
        for label, stats in sorted((s.get("metrics") or {}).items()):
            lines.append(
                f"- {label}: mean {render.fmt_number(stats.get('mean'))} "
                f"(min {render.fmt_number(stats.get('min'))}, "
                f"max {render.fmt_number(stats.get('max'))})"
            )
        narrative = s.get("narrative", "").strip()
        if narrative:
            lines.append("- narrative: " + " ".join(narrative.split()))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def _estimate_tokens(text: str) -> int:
    return (len(text) + 3) // 4


# ---------------------------------------------------------------------------
# the runner


class _Runner:
    def __init__(self, config: RunConfig, method: str):
        self.config = config
        self.method = method
        self.registry = prompts.builtin_registry(config.prompts_dir)
        self.plan = plan_stages(config.report_type) if method == "ours" else baseline_plan()
        self.trace = Trace(
            report_type=config.report_type.value, method=method,
            model=config.backend.model_name, seed=config.seed,
            plan_names=self.plan.names,
        )
        self.inputs = _load_inputs(config)
        self.ctx = tools.ToolContext(
            out_dir=config.out_dir,
            trials=self._context_trials(),
            goal=self.inputs.case.goal if self.inputs.case else None,
        )
        self.series: StructuredSeries | None = None
        self.figures: list[tools.FigureArtifact] = []
        self.figure_titles: dict[str, str] = {}
        self.analyses: dict[str, str] = {}
        self.per_trial_summaries: dict[str, str] = {}
        self.per_trial_rates: dict[str, dict[str, float | None]] = {}
        self.hit_rates: dict[str, float | None] = {}
        self.table_rows: list[dict] | None = None
        self.table: render.Table | None = None
        self.aggregates: dict[str, dict] = {}
        self.goal_stats: dict | None = None

    def _context_trials(self) -> list[tuple[str, list[ProcessEvent]]]:
        if self.inputs.trial is not None:
            return [(self.inputs.trial.trial_id, self.inputs.trial.merged)]
        if self.inputs.case is not None:
            return [(t.trial_id, t.merged) for t in self.inputs.case.trials]
        return []

    # -- shared helpers ----------------------------------------------------

    def _record(self, stage: Stage, *, sub: str | None = None, messages=None,
                completion: llm.Completion | None = None, tool_calls=None,
                retries: int = 0, started: float) -> None:
        self.trace.record(RoundTrace(
            stage=stage.name, kind=stage.kind.value, sub=sub,
            messages=[m.to_dict() for m in messages] if messages else [],
            completion=(None if completion is None else
                        {"text": completion.text,
                         "finish_reason": completion.finish_reason.value}),
            tool_calls=list(tool_calls or []),
            retries_used=retries,
            wall_time_s=time.perf_counter() - started,
        ))

    def _user_text(self, text: str) -> str:
        if self.config.extra_user_prompt:
            return text + "\n\n" + self.config.extra_user_prompt.strip()
        return text

    def _analysis_chat(self, stage: Stage, variables: dict[str, str],
                       *, started: float, sub: str | None = None,
                       extra_tool_calls: list[dict] | None = None) -> str:
        """One analysis round: render, chat, execute any model-initiated tool
        calls (retrying once on a malformed fence), record the round."""
        rendered = self.registry.render(stage.template_id, variables)
        messages = [llm.system(rendered.system),
                    llm.user(self._user_text(rendered.user))]
        completion = llm.chat(self.config.backend, messages, temperature=None)
        retries = 0
        try:
            calls = tools.parse_tool_calls(completion.text)
        except ToolParseError as exc:
            reflection = (
                f"{REFLECTION_PREFIX}\n- {exc}\n\nOffending block:\n{exc.block}\n\n"
                "Correct the tool fence and answer again in full."
            )
            messages = messages + [llm.assistant(completion.text or "(empty reply)"),
                                   llm.user(reflection)]
            completion = llm.chat(self.config.backend, messages, temperature=None)
            retries = 1
            calls = tools.parse_tool_calls(completion.text)
        tool_results = list(extra_tool_calls or [])
        for call in calls:
            tool_results.append(tools.execute(call, self.ctx))
        body = tools.strip_tool_fences(completion.text)
        self._record(stage, sub=sub, messages=messages, completion=completion,
                     tool_calls=tool_results, retries=retries, started=started)
        return body

    def _events_blob(self, stage: Stage, files: list[tuple[str, list[ProcessEvent]]],
                     merged: list[ProcessEvent]) -> str:
        """Chronological event text; over-budget inputs are summarized one
        process file at a time and the summaries concatenated."""
        full = events_to_text(merged)
        if _estimate_tokens(full) <= self.config.chunk_token_budget:
            return full
        parts = []
        for file_name, events in files:
            started = time.perf_counter()
            rendered = self.registry.render("chunk_summary", {
                "file_name": file_name, "events": events_to_text(events)})
            messages = [llm.system(rendered.system), llm.user(rendered.user)]
            completion = llm.chat(self.config.backend, messages, temperature=None)
            self._record(stage, sub=f"chunk:{file_name}", messages=messages,
                         completion=completion, started=started)
            parts.append(f"Summary of {file_name}:\n{completion.text.strip()}")
        return "\n\n".join(parts)

    def _scenario(self) -> str:
        return self.inputs.scenario_text

    # -- stages ------------------------------------------------------------

    def run(self) -> render.ReportBundle:
        try:
            self.config.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create out_dir {self.config.out_dir}: {exc}") from exc
        bundle: render.ReportBundle | None = None
        for stage in self.plan.stages:
            try:
                bundle = self._run_stage(stage)
            except SimReportError as exc:
                exc.stage_name = stage.name  # breadcrumb for error reporting
                raise
        self.trace.write(self.config.out_dir / "trace.json")
        assert bundle is not None
        return bundle

    def _run_stage(self, stage: Stage) -> render.ReportBundle | None:
        started = time.perf_counter()
        if stage.kind is StageKind.EXTRACT:
            self._stage_extract(stage)
        elif stage.kind is StageKind.PER_TRIAL_LOOP:
            self._stage_per_trial(stage)
        elif stage.kind is StageKind.TOOL:
            self._stage_tool(stage, started)
        elif stage.kind is StageKind.ANALYZE:
            self._stage_analyze(stage, started)
        else:
            return self._stage_assemble(stage, started)
        return None

    def _stage_extract(self, stage: Stage) -> None:
        rt = self.config.report_type
        if rt in (ReportType.A, ReportType.B):
            blob = metrics_to_markdown(self.inputs.metrics)
        elif rt is ReportType.C:
            blob = self._events_blob(stage, self.inputs.trial.files,
                                     self.inputs.trial.merged)
        else:
            blob = summaries_to_text(self.inputs.summaries)
        selectors = json.dumps(self.config.visualize or DEFAULT_VISUALIZE, indent=2)
        self.series = extract_structured(
            self.config.backend, stage.schema_id, blob,
            self.config.max_extraction_retries, selectors=selectors,
            registry=self.registry, trace=self.trace, stage_name=stage.name,
        )

    def _stage_per_trial(self, stage: Stage) -> None:
        case = self.inputs.case
        for trial in sorted(case.trials, key=lambda t: t.trial_id):
            started = time.perf_counter()
            blob = self._events_blob(stage, trial.files, trial.merged)
            rates = {}
            tool_results = []
            for side in ("red", "blue"):
                call = tools.make_tool_call(
                    "hit_rate", {"side": side, "trial_id": trial.trial_id})
                result = tools.execute(call, self.ctx)
                tool_results.append(result)
                rates[side] = result["output"]["value"]
            body = self._analysis_chat(
                stage,
                {"scenario": self._scenario(), "trial_id": trial.trial_id,
                 "events": blob},
                started=started, sub=trial.trial_id, extra_tool_calls=tool_results,
            )
            self.per_trial_summaries[trial.trial_id] = body
            self.per_trial_rates[trial.trial_id] = rates

    def _stage_tool(self, stage: Stage, started: float) -> None:
        if stage.tool == "plot_series":
            self._stage_plot(stage, started)
        elif stage.tool == "hit_rate":
            trial_id = self.inputs.trial.trial_id
            results = []
            for side in ("red", "blue"):
                call = tools.make_tool_call("hit_rate",
                                            {"side": side, "trial_id": trial_id})
                result = tools.execute(call, self.ctx)
                results.append(result)
                self.hit_rates[side] = result["output"]["value"]
            self._record(stage, tool_calls=results, started=started)
        elif stage.tool == "build_table":
            self._stage_build_table(stage, started)
        else:
            raise ConfigError(f"stage {stage.name!r} names unknown tool {stage.tool!r}")

    def _planned_charts(self) -> list[tools.ChartSpec]:
        if self.series is not None:
            return list(self.series.charts)
        # Report D: the chart is pipeline-built from per-trial tool results.
        trial_ids = sorted(self.per_trial_rates)
        shared = [tid for tid in trial_ids
                  if self.per_trial_rates[tid]["red"] is not None
                  and self.per_trial_rates[tid]["blue"] is not None]
        if not shared:
            return []
        spec = tools.ChartSpec(
            kind=tools.ChartKind.LINE,
            title="Hit rate by trial",
            x_label="Trial",
            y_label="Hit rate",
            series=(
                tools.Series("red", tuple((tid, self.per_trial_rates[tid]["red"])
                                          for tid in shared)),
                tools.Series("blue", tuple((tid, self.per_trial_rates[tid]["blue"])
                                           for tid in shared)),
            ),
        )
        return [spec]

    def _stage_plot(self, stage: Stage, started: float) -> None:
        results = []
        for spec in self._planned_charts():
            call = tools.make_tool_call("plot_series",
                                        {"chart": tools.chart_to_dict(spec)})
            result = tools.execute(call, self.ctx)
            results.append(result)
            output = result["output"]
            self.figures.append(tools.FigureArtifact(
                figure_id=output["figure_id"], svg_path=output["svg_path"],
                manifest_path=output["manifest_path"]))
            self.figure_titles[output["figure_id"]] = spec.title
        self._record(stage, tool_calls=results, started=started)

    def _stage_build_table(self, stage: Stage, started: float) -> None:
        order = sorted(self.per_trial_rates)
        by_id = {row["trial_id"]: row for row in self.table_rows}
        headers = ["Trial", "Red Hit Rate", "Blue Hit Rate",
                   "Red Outcome", "Blue Outcome"]
        rows = [
            [tid, self.per_trial_rates[tid]["red"], self.per_trial_rates[tid]["blue"],
             by_id[tid]["red_summary"], by_id[tid]["blue_summary"]]
            for tid in order
        ]
        call = tools.make_tool_call("build_table", {"headers": headers, "rows": rows})
        result = tools.execute(call, self.ctx)
        output = result["output"]
        self.table = render.Table(
            headers=tuple(output["headers"]),
            rows=tuple(tuple(row) for row in output["rows"]),
        )
        self._record(stage, tool_calls=[result], started=started)

    def _stage_analyze(self, stage: Stage, started: float) -> None:
        template = stage.template_id
        if template == "table_d":
            self._stage_table_rows(stage, started)
            return
        if template == "overall_d":
            self._stage_overall(stage, started)
            return
        scenario = self._scenario()
        if template in ("effectiveness_a", "compare_b"):
            variables = {"scenario": scenario,
                         "metrics": metrics_to_markdown(self.inputs.metrics)}
        elif template == "reconstruct_c":
            variables = {"scenario": scenario,
                         "events": self._events_blob(stage, self.inputs.trial.files,
                                                     self.inputs.trial.merged)}
        elif template == "capability_c":
            variables = {"scenario": scenario,
                         "hit_rates": json.dumps(self.hit_rates, indent=2)}
        elif template == "cross_case_e":
            factor_lines = []
            for s in self.inputs.summaries:
                assignment = s.get("factor_assignment") or {}
                rendered = ", ".join(f"{k}={v}" for k, v in assignment.items()) or "base"
                factor_lines.append(f"- {s['case_id']}: {rendered}")
            variables = {"scenario": scenario,
                         "factors": "\n".join(factor_lines),
                         "summaries": summaries_to_text(self.inputs.summaries)}
        else:
            raise ConfigError(f"no variable mapping for template {template!r}")
        self.analyses[stage.name] = self._analysis_chat(stage, variables,
                                                        started=started)

    def _stage_table_rows(self, stage: Stage, started: float) -> None:
        expected = sorted(self.per_trial_summaries)

        def check(payload: Any) -> list[str]:
            got = sorted(row["trial_id"] for row in payload["rows"])
            if got != expected:
                return [f"rows must cover exactly the trials {expected}, got {got}"]
            return []

        summaries_text = "\n\n".join(
            f"#### {tid}\n{self.per_trial_summaries[tid]}" for tid in expected)
        document, retries, messages, completion = _validated_json_round(
            self.config.backend, stage.schema_id,
            {"summaries": summaries_text, "schema": _schema_text(stage.schema_id)},
            self.config.max_extraction_retries,
            template_id=stage.template_id, registry=self.registry,
            semantic_check=check,
        )
        self.table_rows = document["rows"]
        self._record(stage, messages=messages, completion=completion,
                     retries=retries, started=started)

    def _stage_overall(self, stage: Stage, started: float) -> None:
        order = sorted(self.per_trial_rates)
        tool_results = []
        for side in ("red", "blue"):
            call = tools.make_tool_call("aggregate", {
                "label": f"{side}_hit_rate",
                "values": [[tid, self.per_trial_rates[tid][side]] for tid in order],
            })
            result = tools.execute(call, self.ctx)
            tool_results.append(result)
            self.aggregates[f"{side}_hit_rate"] = result["output"]
        goal_call = tools.make_tool_call("goal_count", {})
        goal_result = tools.execute(goal_call, self.ctx)
        tool_results.append(goal_result)
        self.goal_stats = goal_result["output"]
        body = self._analysis_chat(
            stage,
            {"table": render.table_to_markdown(self.table),
             "aggregates": json.dumps(self.aggregates, indent=2),
             "goal_stats": json.dumps(self.goal_stats, indent=2)},
            started=started, extra_tool_calls=tool_results,
        )
        self.analyses[stage.name] = body

    # -- assembly ----------------------------------------------------------

    def _figures_body(self, none_note: str) -> str:
        if not self.figures:
            return none_note
        blocks = []
        for figure in self.figures:
            title = self.figure_titles.get(figure.figure_id, figure.figure_id)
            blocks.append(f"![{title}]({figure.svg_path})")
        return "\n\n".join(blocks)

    def _split_analysis(self, stage_name: str, headings: Sequence[str]) -> dict[str, str]:
        return render.split_sections(self.analyses.get(stage_name, ""), headings)

    def _stage_assemble(self, stage: Stage, started: float) -> render.ReportBundle:
        rt = self.config.report_type
        sections: list[render.Section] = [
            render.Section("Overview", self._overview_body())
        ]
        none_note = "No figures were generated for this run."
        if rt is ReportType.A:
            sections.append(render.Section("Metrics Visualization",
                                           self._figures_body(none_note)))
            split = self._split_analysis(
                "effectiveness_analysis",
                ("Effectiveness Evaluation", "Optimization Suggestions"))
            for heading in ("Effectiveness Evaluation", "Optimization Suggestions"):
                if heading in split:
                    sections.append(render.Section(heading, split[heading]))
        elif rt is ReportType.B:
            sections.append(render.Section("Metrics Visualization",
                                           self._figures_body(none_note)))
            split = self._split_analysis(
                "comparative_analysis",
                ("Factor Influence Analysis", "Comprehensive Analysis",
                 "Configuration Suggestions"))
            for heading in ("Factor Influence Analysis", "Comprehensive Analysis",
                            "Configuration Suggestions"):
                if heading in split:
                    sections.append(render.Section(heading, split[heading]))
        elif rt is ReportType.C:
            sections.append(render.Section("Process Visualization",
                                           self._figures_body(none_note)))
            split = self._split_analysis(
                "process_reconstruction",
                ("Operational Process Reconstruction", "Process Summary"))
            for heading in ("Operational Process Reconstruction", "Process Summary"):
                if heading in split:
                    sections.append(render.Section(heading, split[heading]))
            sections.append(render.Section("Hit Rate Results", self._hit_rate_body()))
            sections.append(render.Section(
                "Capability Assessment",
                self.analyses.get("capability_assessment", "")))
        elif rt is ReportType.D:
            sections.append(render.Section("Per-Trial Metrics Visualization",
                                           self._figures_body(none_note)))
            sections.append(render.Section("Per-Trial Table",
                                           render.table_to_markdown(self.table)))
            sections.append(render.Section("Overall Assessment",
                                           self._overall_body()))
        else:
            sections.append(render.Section("Cross-Case Metrics Visualization",
                                           self._figures_body(none_note)))
            split = self._split_analysis(
                "cross_case_analysis",
                ("Comprehensive Comparative Analysis", "Configuration Recommendations"))
            for heading in ("Comprehensive Comparative Analysis",
                            "Configuration Recommendations"):
                if heading in split:
                    sections.append(render.Section(heading, split[heading]))

        bundle = render.ReportBundle(
            report_type=rt.value,
            title=render.report_title(rt.value),
            sections=tuple(sections),
            figures=tuple(self.figures),
            tables=(self.table,) if self.table is not None else (),
            trace_path="trace.json",
            meta={"method": self.method, "model": self.config.backend.model_name,
                  "seed": self.config.seed},
        )
        render.assemble(bundle, self.config.out_dir)
        self._record(stage, started=started)
        return bundle

    def _overview_body(self) -> str:
        rt = self.config.report_type
        scenario = self._scenario()
        if rt is ReportType.A:
            note = f"Inputs: {len(self.inputs.metrics)} metric records from a single trial."
        elif rt is ReportType.B:
            cases = sorted({r.case_id for r in self.inputs.metrics})
            note = (f"Inputs: {len(self.inputs.metrics)} metric records across "
                    f"{len(cases)} cases.")
        elif rt is ReportType.C:
            trial = self.inputs.trial
            note = (f"Inputs: trial {trial.trial_id} with {len(trial.merged)} events "
                    f"across {len(trial.files)} process files.")
        elif rt is ReportType.D:
            case = self.inputs.case
            total = sum(len(t.merged) for t in case.trials)
            note = (f"Inputs: case {case.case_id} with {len(case.trials)} trials "
                    f"and {total} events in total.")
        else:
            note = f"Inputs: {len(self.inputs.summaries)} case summaries."
        return scenario + "\n\n" + note

    def _hit_rate_body(self) -> str:
        lines = ["Tool-computed hit rates for this trial:", ""]
        for side in ("red", "blue"):
            value = self.hit_rates.get(side)
            shown = render.fmt_number(value)
            if value is None:
                shown = "n/a (no shots fired)"
            lines.append(f"- {side.capitalize()}: {shown}")
        return "\n".join(lines)

    def _overall_body(self) -> str:
        n = self.goal_stats["n_trials"]
        lines = [f"Tool-computed statistics over {n} trials:", ""]
        for side in ("red", "blue"):
            stats = self.aggregates[f"{side}_hit_rate"]
            lines.append(
                f"- {side.capitalize()} hit rate: mean {render.fmt_number(stats['mean'])} "
                f"(min {render.fmt_number(stats['min'])}, "
                f"max {render.fmt_number(stats['max'])}, "
                f"{stats['n_present']} of {n} trials with shots)"
            )
        lines.append(f"- Goal achieved in {self.goal_stats['count']} of {n} trials.")
        narrative = self.analyses.get("overall_assessment", "").strip()
        if narrative:
            lines += ["", narrative]
        return "\n".join(lines)


def run_report(config: RunConfig) -> render.ReportBundle:
    """Execute the staged pipeline for config.report_type and write the
    bundle (report.md/html/json, figures/, trace.json) under out_dir."""
    validate_run_config(config)
    return _Runner(config, method="ours").run()


# ---------------------------------------------------------------------------
# baseline mode


def run_baseline(config: RunConfig) -> render.ReportBundle:
    """Single-shot comparison arm: one model call with all input data in one
    prompt, no tools, no figures."""
    validate_run_config(config)
    runner = _Runner(config, method="baseline")
    rt = config.report_type
    mandated = render.mandated_sections(rt.value)
    data_parts = [f"Scenario description:\n{runner.inputs.scenario_text}"]
    if runner.inputs.metrics is not None:
        data_parts.append("Metric data:\n" + metrics_to_markdown(runner.inputs.metrics))
    if runner.inputs.trial is not None:
        data_parts.append("Process data:\n" + events_to_text(runner.inputs.trial.merged))
    if runner.inputs.case is not None:
        for trial in sorted(runner.inputs.case.trials, key=lambda t: t.trial_id):
            data_parts.append(f"Process data of {trial.trial_id}:\n"
                              + events_to_text(trial.merged))
    if runner.inputs.summaries is not None:
        data_parts.append("Case summaries:\n"
                          + summaries_to_text(runner.inputs.summaries))

    try:
        config.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create out_dir {config.out_dir}: {exc}") from exc

    stage = runner.plan.stages[0]
    started = time.perf_counter()
    rendered = runner.registry.render(stage.template_id, {
        "report_kind": f"type {rt.value} ({render.REPORT_TITLES[rt.value]})",
        "headings": "\n".join(f"## {h}" for h in mandated),
        "data": "\n\n".join(data_parts),
    })
    messages = [llm.system(rendered.system),
                llm.user(runner._user_text(rendered.user))]
    try:
        completion = llm.chat(config.backend, messages, temperature=None)
    except SimReportError as exc:
        exc.stage_name = stage.name
        raise
    runner._record(stage, messages=messages, completion=completion, started=started)

    split = render.split_sections(completion.text, mandated)
    sections = tuple(render.Section(h, split[h]) for h in mandated if h in split)
    assemble_stage = runner.plan.stages[1]
    started = time.perf_counter()
    bundle = render.ReportBundle(
        report_type=rt.value,
        title=render.report_title(rt.value),
        sections=sections,
        figures=(),
        tables=(),
        trace_path="trace.json",
        meta={"method": "baseline", "model": config.backend.model_name,
              "seed": config.seed},
    )
    try:
        render.assemble(bundle, config.out_dir)
    except SimReportError as exc:
        exc.stage_name = assemble_stage.name
        raise
    runner._record(assemble_stage, started=started)
    runner.trace.write(config.out_dir / "trace.json")
    return bundle


# ---------------------------------------------------------------------------
# case summaries (report D -> report E hand-off)


@dataclass(frozen=True)
class CaseSummary:
    case_id: str
    factor_assignment: dict[str, str]
    n_trials: int
    goal: dict
    goal_count: int
    metrics: dict[str, dict]
    narrative: str

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "factor_assignment": self.factor_assignment,
            "n_trials": self.n_trials,
            "goal": self.goal,
            "goal_count": self.goal_count,
            "metrics": self.metrics,
            "narrative": self.narrative,
        }

    def to_markdown(self) -> str:
        lines = [f"# Case summary: {self.case_id}", ""]
        if self.factor_assignment:
            lines.append("Factors: " + ", ".join(
                f"{k}={v}" for k, v in self.factor_assignment.items()))
        lines.append(f"Goal achieved in {self.goal_count} of {self.n_trials} trials.")
        for label, stats in sorted(self.metrics.items()):
            lines.append(
                f"- {label}: mean {render.fmt_number(stats.get('mean'))} "
                f"(min {render.fmt_number(stats.get('min'))}, "
                f"max {render.fmt_number(stats.get('max'))})"
            )
        lines += ["", self.narrative]
        return "\n".join(lines) + "\n"


def summarize_case(case_dir: str | Path, report_dir: str | Path,
                   out_dir: str | Path | None = None) -> CaseSummary:
    """Condense a finished report D bundle into the machine-readable case
    summary consumed by report E (written as summary.json + summary.md)."""
    case_dir = Path(case_dir)
    report_dir = Path(report_dir)
    out_dir = Path(out_dir) if out_dir is not None else report_dir

    meta_path = case_dir / "case.json"
    if not meta_path.is_file():
        raise IngestError(f"case directory {case_dir} has no case.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))

    report_path = report_dir / "report.json"
    trace_path = report_dir / "trace.json"
    for required in (report_path, trace_path):
        if not required.is_file():
            raise IngestError(f"report D bundle is incomplete: missing {required}")
    bundle = render.read_report(report_path)
    if bundle.report_type != ReportType.D.value:
        raise IngestError(
            f"{report_path} is a type {bundle.report_type} bundle, expected D")
    trace = json.loads(trace_path.read_text(encoding="utf-8"))

    metrics: dict[str, dict] = {}
    goal_count = None
    n_trials = None
    for round_obj in trace.get("rounds", []):
        if round_obj.get("stage") != "overall_assessment":
            continue
        for result in round_obj.get("tool_calls", []):
            if result["tool"] == "aggregate":
                label = result["arguments"].get("label", "aggregate")
                metrics[label] = result["output"]
            elif result["tool"] == "goal_count":
                goal_count = result["output"]["count"]
                n_trials = result["output"]["n_trials"]
    if goal_count is None or not metrics:
        raise IngestError(
            "report D bundle is incomplete: no overall_assessment tool results "
            "in trace.json"
        )

    narrative = ""
    for section in bundle.sections:
        if section.heading == "Overall Assessment":
            narrative = section.body
            break
    if not narrative:
        raise IngestError("report D bundle is incomplete: no Overall Assessment section")

    summary = CaseSummary(
        case_id=meta["case_id"],
        factor_assignment=dict(meta["factor_assignment"]),
        n_trials=n_trials,
        goal=meta["goal"],
        goal_count=goal_count,
        metrics=metrics,
        narrative=narrative,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.json").write_text(
        json.dumps(summary.to_dict(), indent=2, sort_keys=True,
                   ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    (out_dir / "summary.md").write_text(summary.to_markdown(), encoding="utf-8")
    return summary
