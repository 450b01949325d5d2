"""Data model and parsers for all on-disk simulation inputs.

Three file formats are supported, all UTF-8 with LF line endings:

* process file (``*.jsonl``) -- one event object per line with keys
  ``t, entity_id, side, event`` and optional ``target_id, payload``;
* metric file (``metrics.json``) -- a JSON array of objects with keys
  ``case_id, trial_id, side, metric_name, value, unit``;
* experiment manifest (``experiment.json``) -- ``scenario_file``,
  ``factors`` and the ``cases[].trials[]`` hierarchy.

Parsing is strict: malformed lines, unknown enum values, non-monotone
timestamps and duplicate metric keys raise :class:`IngestError` instead of
yielding partial data.  The ``serialize_*`` functions emit the canonical
form of each format (fixed key order, compact event lines, two-space
indented JSON documents) so that ``serialize(parse(f))`` reproduces a
canonical file byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import chain
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import IngestError


class Side(str, Enum):
    RED = "red"
    BLUE = "blue"

    @property
    def enemy(self) -> "Side":
        return Side.BLUE if self is Side.RED else Side.RED


class EventKind(str, Enum):
    DETECT = "detect"
    FIRE = "fire"
    HIT = "hit"
    MISS = "miss"
    DESTROY = "destroy"
    MOVE = "move"
    STATUS = "status"


#: Event kinds that must carry a target_id.
TARGETED_EVENTS = frozenset(
    {EventKind.FIRE, EventKind.HIT, EventKind.MISS, EventKind.DESTROY}
)

_PROCESS_KEYS = ("t", "entity_id", "side", "event", "target_id", "payload")
_METRIC_KEYS = ("case_id", "trial_id", "side", "metric_name", "value", "unit")


@dataclass(frozen=True)
class ScenarioDescription:
    """Free-text scenario description, optionally with factor notes."""

    text: str
    factor_notes: str | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise IngestError("scenario text is empty")


@dataclass(frozen=True)
class MetricRecord:
    """One named metric value for one side of one case (and optionally trial)."""

    case_id: str
    side: Side
    metric_name: str
    value: float
    trial_id: str | None = None
    unit: str | None = None

    @property
    def key(self) -> tuple[str, str | None, Side, str]:
        return (self.case_id, self.trial_id, self.side, self.metric_name)


@dataclass(frozen=True)
class ProcessEvent:
    """One time-stamped simulation occurrence.

    ``payload`` distinguishes "absent" (None) from "present but empty" ({})
    so that canonical serialization can reproduce either form.  Treat the
    mapping as read-only.
    """

    t: float
    entity_id: str
    side: Side
    event: EventKind
    target_id: str | None = None
    payload: Mapping[str, str | int | float] | None = None

    def __post_init__(self) -> None:
        if self.t < 0:
            raise IngestError(f"negative event time {self.t}")
        if self.event in TARGETED_EVENTS and not self.target_id:
            raise IngestError(f"{self.event.value} event requires a target_id")


@dataclass(frozen=True)
class Trial:
    """Paths (as written in the manifest) of one trial's data files."""

    trial_id: str
    process_files: tuple[str, ...]
    metric_file: str | None = None


@dataclass(frozen=True)
class Case:
    case_id: str
    factor_assignment: Mapping[str, str]
    trials: tuple[Trial, ...]


@dataclass(frozen=True)
class FactorDecl:
    name: str
    levels: tuple[str, ...]


@dataclass(frozen=True)
class Experiment:
    """Fully resolved experiment manifest.

    ``root`` is the manifest's directory; all trial paths are stored as
    written (relative to ``root``) so the manifest round-trips exactly.
    """

    scenario: ScenarioDescription
    scenario_file: str
    factors: tuple[FactorDecl, ...]
    cases: tuple[Case, ...]
    root: Path = field(compare=False)

    @property
    def total_trials(self) -> int:
        return sum(len(case.trials) for case in self.cases)

    def resolve(self, rel_path: str) -> Path:
        return self.root / rel_path


# ---------------------------------------------------------------------------
# process files


def _reject_constant(token: str) -> float:
    raise IngestError(f"non-finite value {token!r}")


def _check_payload(obj: Any) -> Mapping[str, str | int | float]:
    if not isinstance(obj, dict):
        raise IngestError("payload must be an object")
    for key, value in obj.items():
        if not isinstance(key, str):
            raise IngestError("payload keys must be strings")
        if isinstance(value, bool) or not isinstance(value, (str, int, float)):
            raise IngestError(f"payload value for {key!r} must be a string or number")
    return obj


def _event_from_obj(obj: Any) -> ProcessEvent:
    if not isinstance(obj, dict):
        raise IngestError("event line must be a JSON object")
    unknown = sorted(set(obj) - set(_PROCESS_KEYS))
    if unknown:
        raise IngestError("unknown key(s): " + ", ".join(unknown))
    for key in ("t", "entity_id", "side", "event"):
        if key not in obj:
            raise IngestError(f"missing key {key!r}")
    t = obj["t"]
    if isinstance(t, bool) or not isinstance(t, (int, float)):
        raise IngestError("t must be a number")
    entity_id = obj["entity_id"]
    if not isinstance(entity_id, str) or not entity_id:
        raise IngestError("entity_id must be a non-empty string")
    try:
        side = Side(obj["side"])
    except ValueError:
        raise IngestError(f"unknown side {obj['side']!r}") from None
    try:
        event = EventKind(obj["event"])
    except ValueError:
        raise IngestError(f"unknown event {obj['event']!r}") from None
    target_id = obj.get("target_id")
    if target_id is not None and not isinstance(target_id, str):
        raise IngestError("target_id must be a string")
    payload = obj.get("payload")
    if payload is not None:
        payload = _check_payload(payload)
    return ProcessEvent(t=t, entity_id=entity_id, side=side, event=event,
                        target_id=target_id, payload=payload)


def parse_process_file(path: str | Path) -> list[ProcessEvent]:
    """Parse one JSON Lines process file into events, in file order.

    Raises :class:`IngestError` carrying the 1-based line number on
    malformed JSON, unknown enum values, negative or non-monotone ``t``.
    An empty file yields an empty list.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read process file {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise IngestError(f"{path} is not valid UTF-8: {exc}") from exc

    events: list[ProcessEvent] = []
    prev_t: float | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        try:
            obj = json.loads(raw, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path.name} line {lineno}: malformed JSON: {exc.msg}",
                              line=lineno) from exc
        try:
            event = _event_from_obj(obj)
        except IngestError as exc:
            raise IngestError(f"{path.name} line {lineno}: {exc}", line=lineno) from None
        if prev_t is not None and event.t < prev_t:
            raise IngestError(
                f"{path.name} line {lineno}: event time {event.t} decreases "
                f"below {prev_t}",
                line=lineno,
            )
        prev_t = event.t
        events.append(event)
    return events


def event_to_json_line(event: ProcessEvent) -> str:
    """Canonical single-line JSON for one event (no trailing newline)."""
    obj: dict[str, Any] = {
        "t": event.t,
        "entity_id": event.entity_id,
        "side": event.side.value,
        "event": event.event.value,
    }
    if event.target_id is not None:
        obj["target_id"] = event.target_id
    if event.payload is not None:
        obj["payload"] = dict(event.payload)
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def serialize_process_file(events: Iterable[ProcessEvent]) -> str:
    return "".join(event_to_json_line(e) + "\n" for e in events)


def merge_events(*event_lists: Iterable[ProcessEvent]) -> list[ProcessEvent]:
    """Merge per-category event lists into one time-sorted stream.

    The sort is stable, so events with equal ``t`` keep their
    per-list-then-list-order position.
    """
    return sorted(chain(*event_lists), key=lambda e: e.t)


# ---------------------------------------------------------------------------
# metric files

_NON_FINITE_STRINGS = {"NaN", "nan", "Infinity", "-Infinity", "inf", "-inf"}


def parse_metric_file(path: str | Path) -> list[MetricRecord]:
    """Parse a metric file; duplicates and non-finite values are rejected."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read metric file {path}: {exc}") from exc
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path.name}: malformed JSON: {exc.msg}") from exc
    if not isinstance(data, list):
        raise IngestError(f"{path.name}: metric file must be a JSON array")

    records: list[MetricRecord] = []
    seen: set[tuple] = set()
    for idx, item in enumerate(data):
        try:
            record = _metric_from_obj(item)
        except IngestError as exc:
            raise IngestError(f"{path.name} record {idx}: {exc}") from None
        if record.key in seen:
            raise IngestError(
                f"{path.name} record {idx}: duplicate metric "
                f"(case_id={record.case_id!r}, trial_id={record.trial_id!r}, "
                f"side={record.side.value}, metric_name={record.metric_name!r})"
            )
        seen.add(record.key)
        records.append(record)
    return records


def _metric_from_obj(obj: Any) -> MetricRecord:
    if not isinstance(obj, dict):
        raise IngestError("metric record must be a JSON object")
    unknown = sorted(set(obj) - set(_METRIC_KEYS))
    if unknown:
        raise IngestError("unknown key(s): " + ", ".join(unknown))
    for key in ("case_id", "side", "metric_name", "value"):
        if key not in obj:
            raise IngestError(f"missing key {key!r}")
    case_id = obj["case_id"]
    if not isinstance(case_id, str):
        raise IngestError("case_id must be a string")
    try:
        side = Side(obj["side"])
    except ValueError:
        raise IngestError(f"unknown side {obj['side']!r}") from None
    metric_name = obj["metric_name"]
    if not isinstance(metric_name, str) or not metric_name:
        raise IngestError("metric_name must be a non-empty string")
    value = obj["value"]
    if isinstance(value, str) and value in _NON_FINITE_STRINGS:
        raise IngestError(f"non-finite value {value!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise IngestError("value must be a number")
    if not math.isfinite(value):
        raise IngestError(f"non-finite value {value!r}")
    trial_id = obj.get("trial_id")
    if trial_id is not None and not isinstance(trial_id, str):
        raise IngestError("trial_id must be a string")
    unit = obj.get("unit")
    if unit is not None and not isinstance(unit, str):
        raise IngestError("unit must be a string")
    return MetricRecord(case_id=case_id, side=side, metric_name=metric_name,
                        value=value, trial_id=trial_id, unit=unit)


def serialize_metric_file(records: Iterable[MetricRecord]) -> str:
    items = []
    for r in records:
        obj: dict[str, Any] = {"case_id": r.case_id}
        if r.trial_id is not None:
            obj["trial_id"] = r.trial_id
        obj["side"] = r.side.value
        obj["metric_name"] = r.metric_name
        obj["value"] = r.value
        if r.unit is not None:
            obj["unit"] = r.unit
        items.append(obj)
    return json.dumps(items, indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# experiment manifests


def load_experiment(manifest_path: str | Path) -> Experiment:
    """Load and fully resolve an experiment manifest.

    Every referenced path is checked; when any are missing the raised
    :class:`IngestError` names all of them at once.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read manifest {manifest_path}: {exc}") from exc
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise IngestError(f"{manifest_path.name}: malformed JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise IngestError("manifest must be a JSON object")
    unknown = sorted(set(obj) - {"scenario_file", "factors", "cases"})
    if unknown:
        raise IngestError("manifest has unknown key(s): " + ", ".join(unknown))
    for key in ("scenario_file", "factors", "cases"):
        if key not in obj:
            raise IngestError(f"manifest is missing key {key!r}")

    scenario_file = obj["scenario_file"]
    if not isinstance(scenario_file, str) or not scenario_file:
        raise IngestError("scenario_file must be a non-empty string")

    factors = _parse_factors(obj["factors"])
    factor_names = {f.name for f in factors}
    cases = _parse_cases(obj["cases"], factor_names)

    missing = _missing_paths(root, scenario_file, cases)
    if missing:
        raise IngestError(
            "missing referenced path(s): " + ", ".join(missing), missing=missing
        )

    scenario_text = (root / scenario_file).read_text(encoding="utf-8")
    scenario = ScenarioDescription(text=scenario_text)
    return Experiment(scenario=scenario, scenario_file=scenario_file,
                      factors=factors, cases=cases, root=root)


def _parse_factors(raw: Any) -> tuple[FactorDecl, ...]:
    if not isinstance(raw, list):
        raise IngestError("factors must be an array")
    factors = []
    names: set[str] = set()
    for item in raw:
        if not isinstance(item, dict) or set(item) != {"name", "levels"}:
            raise IngestError("each factor needs exactly the keys name, levels")
        name, levels = item["name"], item["levels"]
        if not isinstance(name, str) or not name:
            raise IngestError("factor name must be a non-empty string")
        if name in names:
            raise IngestError(f"duplicate factor {name!r}")
        names.add(name)
        if (not isinstance(levels, list) or not levels
                or not all(isinstance(v, str) for v in levels)):
            raise IngestError(f"factor {name!r} needs a non-empty list of string levels")
        factors.append(FactorDecl(name=name, levels=tuple(levels)))
    return tuple(factors)


def _parse_cases(raw: Any, factor_names: set[str]) -> tuple[Case, ...]:
    if not isinstance(raw, list) or not raw:
        raise IngestError("manifest declares no cases")
    cases = []
    case_ids: set[str] = set()
    for item in raw:
        if not isinstance(item, dict) or set(item) != {"case_id", "factor_assignment", "trials"}:
            raise IngestError(
                "each case needs exactly the keys case_id, factor_assignment, trials"
            )
        case_id = item["case_id"]
        if not isinstance(case_id, str) or not case_id:
            raise IngestError("case_id must be a non-empty string")
        if case_id in case_ids:
            raise IngestError(f"duplicate case_id {case_id!r}")
        case_ids.add(case_id)
        assignment = item["factor_assignment"]
        if not isinstance(assignment, dict):
            raise IngestError(f"case {case_id!r}: factor_assignment must be an object")
        for name, level in assignment.items():
            if name not in factor_names:
                raise IngestError(f"case {case_id!r} assigns unknown factor {name!r}")
            if not isinstance(level, str):
                raise IngestError(f"case {case_id!r}: level for {name!r} must be a string")
        cases.append(Case(case_id=case_id, factor_assignment=assignment,
                          trials=_parse_trials(item["trials"], case_id)))
    return tuple(cases)


def _parse_trials(raw: Any, case_id: str) -> tuple[Trial, ...]:
    if not isinstance(raw, list) or not raw:
        raise IngestError(f"case {case_id!r} declares no trials")
    trials = []
    trial_ids: set[str] = set()
    for item in raw:
        if not isinstance(item, dict) or not {"trial_id", "process_files"} <= set(item):
            raise IngestError(f"case {case_id!r}: each trial needs trial_id and process_files")
        unknown = sorted(set(item) - {"trial_id", "process_files", "metric_file"})
        if unknown:
            raise IngestError(f"case {case_id!r}: trial has unknown key(s): " + ", ".join(unknown))
        trial_id = item["trial_id"]
        if not isinstance(trial_id, str) or not trial_id:
            raise IngestError(f"case {case_id!r}: trial_id must be a non-empty string")
        if trial_id in trial_ids:
            raise IngestError(f"case {case_id!r}: duplicate trial_id {trial_id!r}")
        trial_ids.add(trial_id)
        process_files = item["process_files"]
        if (not isinstance(process_files, list) or not process_files
                or not all(isinstance(p, str) for p in process_files)):
            raise IngestError(
                f"case {case_id!r} trial {trial_id!r}: process_files must be a "
                "non-empty list of paths"
            )
        metric_file = item.get("metric_file")
        if metric_file is not None and not isinstance(metric_file, str):
            raise IngestError(f"case {case_id!r} trial {trial_id!r}: metric_file must be a path")
        trials.append(Trial(trial_id=trial_id, process_files=tuple(process_files),
                            metric_file=metric_file))
    return tuple(trials)


def _missing_paths(root: Path, scenario_file: str, cases: tuple[Case, ...]) -> list[str]:
    missing = []
    if not (root / scenario_file).is_file():
        missing.append(scenario_file)
    for case in cases:
        for trial in case.trials:
            for rel in trial.process_files:
                if not (root / rel).is_file():
                    missing.append(rel)
            if trial.metric_file is not None and not (root / trial.metric_file).is_file():
                missing.append(trial.metric_file)
    return missing


def serialize_experiment(experiment: Experiment) -> str:
    """Canonical manifest JSON (two-space indent, fixed key order)."""
    obj: dict[str, Any] = {
        "scenario_file": experiment.scenario_file,
        "factors": [{"name": f.name, "levels": list(f.levels)} for f in experiment.factors],
        "cases": [],
    }
    for case in experiment.cases:
        trials = []
        for trial in case.trials:
            t: dict[str, Any] = {"trial_id": trial.trial_id,
                                 "process_files": list(trial.process_files)}
            if trial.metric_file is not None:
                t["metric_file"] = trial.metric_file
            trials.append(t)
        obj["cases"].append({
            "case_id": case.case_id,
            "factor_assignment": dict(case.factor_assignment),
            "trials": trials,
        })
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
