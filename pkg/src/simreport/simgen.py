"""Seeded synthetic red-blue engagement generator.

Produces experiment directories (manifest, scenario text, per-category
process files, metric files) so every report pipeline can be exercised at
desk scale without real deduction data.  The engagement model is a
discrete-event loop: each living unit fires at exponentially distributed
intervals at a uniformly chosen living enemy, each shot resolves as a
Bernoulli hit, and each hit destroys its target with a fixed probability.
This is a fixture generator, not a wargame: no terrain, sensors or
behaviors beyond detect/fire/move/status.

Everything is a pure function of ``(config, case_id, trial_id)``: per-trial
RNG streams are seeded with a stable hash of those values, so regenerating
a trial yields byte-identical files.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from . import corpus
from .corpus import EventKind, MetricRecord, ProcessEvent, Side
from .errors import ConfigError, IoError

#: Per-category process file stems written for every trial.
CATEGORY_FILES = ("detection", "engagement", "movement", "status")

#: Probability that a hit destroys its target.
DESTROY_PROB = 0.35

#: Seconds between movement updates and the detect lead before a first shot.
MOVE_PERIOD = 60.0
DETECT_LEAD = 2.5


class GoalCondition(str, Enum):
    DESTROY_TARGET = "destroy_target"
    SURVIVE_UNTIL_END = "survive_until_end"


@dataclass(frozen=True)
class GoalSpec:
    """The success predicate counted by report D's goal statistics."""

    side: Side
    condition: GoalCondition
    target_entity: str | None = None

    def __post_init__(self) -> None:
        if self.condition is GoalCondition.DESTROY_TARGET and not self.target_entity:
            raise ConfigError("destroy_target goal requires a target_entity")

    def to_dict(self) -> dict:
        obj: dict = {"side": self.side.value, "condition": self.condition.value}
        if self.target_entity is not None:
            obj["target_entity"] = self.target_entity
        return obj

    @classmethod
    def from_dict(cls, obj: dict) -> "GoalSpec":
        try:
            return cls(side=Side(obj["side"]),
                       condition=GoalCondition(obj["condition"]),
                       target_entity=obj.get("target_entity"))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid goal spec: {exc}") from exc


def _default_goal() -> GoalSpec:
    return GoalSpec(Side.RED, GoalCondition.DESTROY_TARGET, "B-1")


@dataclass(frozen=True)
class SimConfig:
    """Generator knobs; see ``simgen.json`` in the README for defaults.

    ``fire_rate`` is the expected number of fire events per unit per 100
    seconds; ``base_hit_prob`` applies per side to every shot.
    """

    n_red_units: int = 4
    n_blue_units: int = 4
    duration: float = 600.0
    fire_rate: float = 2.0
    base_hit_prob: float = 0.5
    goal: GoalSpec = field(default_factory=_default_goal)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_red_units < 1 or self.n_blue_units < 1:
            raise ConfigError("unit counts must be at least 1")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.fire_rate < 0:
            raise ConfigError("fire_rate must be non-negative")
        if not 0.0 <= self.base_hit_prob <= 1.0:
            raise ConfigError("base_hit_prob must be within [0, 1]")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Factor:
    """One experimental factor: each level string is applied to a SimConfig field."""

    name: str
    levels: tuple[str, ...]
    applies_to: str

    def __post_init__(self) -> None:
        if not self.levels:
            raise ConfigError(f"factor {self.name!r} needs at least one level")
        valid = {f.name for f in fields(SimConfig)} - {"goal", "seed"}
        if self.applies_to not in valid:
            raise ConfigError(
                f"factor {self.name!r} applies to unknown config field {self.applies_to!r}"
            )


@dataclass
class TrialData:
    """In-memory result of one generated trial, ready to write."""

    trial_id: str
    case_id: str
    events: dict[str, list[ProcessEvent]]
    metrics: list[MetricRecord]

    def write(self, out_dir: str | Path) -> list[Path]:
        """Write the per-category process files and metrics.json under out_dir."""
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            written = []
            for category in CATEGORY_FILES:
                path = out_dir / f"{category}.jsonl"
                path.write_text(corpus.serialize_process_file(self.events[category]),
                                encoding="utf-8")
                written.append(path)
            metric_path = out_dir / "metrics.json"
            metric_path.write_text(corpus.serialize_metric_file(self.metrics),
                                   encoding="utf-8")
            written.append(metric_path)
        except OSError as exc:
            raise IoError(f"cannot write trial files under {out_dir}: {exc}") from exc
        return written

    def merged_events(self) -> list[ProcessEvent]:
        return corpus.merge_events(*(self.events[c] for c in CATEGORY_FILES))


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from arbitrary parts (order-sensitive)."""
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def unit_ids(config: SimConfig) -> tuple[list[str], list[str]]:
    red = [f"R-{i}" for i in range(1, config.n_red_units + 1)]
    blue = [f"B-{i}" for i in range(1, config.n_blue_units + 1)]
    return red, blue


def generate_trial(config: SimConfig, trial_id: str, case_id: str = "case-1") -> TrialData:
    """Generate one trial; pure in ``(config, trial_id, case_id)``."""
    if not trial_id:
        raise ConfigError("trial_id must be non-empty")
    rng = random.Random(derive_seed(config.seed, case_id, trial_id, "combat"))
    red, blue = unit_ids(config)
    side_of = {u: Side.RED for u in red}
    side_of.update({u: Side.BLUE for u in blue})
    alive = set(red) | set(blue)
    death_time: dict[str, float] = {}

    detection: list[ProcessEvent] = []
    engagement: list[ProcessEvent] = []
    status: list[ProcessEvent] = []

    for unit in red + blue:
        status.append(ProcessEvent(t=0.0, entity_id=unit, side=side_of[unit],
                                   event=EventKind.STATUS,
                                   payload={"condition": "ready"}))

    rate = config.fire_rate / 100.0
    heap: list[tuple[float, int, str]] = []
    seq = 0
    if rate > 0:
        for unit in red + blue:
            heapq.heappush(heap, (rng.expovariate(rate), seq, unit))
            seq += 1

    detected: set[tuple[str, str]] = set()
    while heap:
        t, _, shooter = heapq.heappop(heap)
        if t > config.duration or shooter not in alive:
            continue
        enemies = sorted(u for u in alive if side_of[u] is not side_of[shooter])
        if not enemies:
            continue
        target = rng.choice(enemies)
        shooter_side = side_of[shooter]
        t_fire = round(t, 3)
        if (shooter, target) not in detected:
            detected.add((shooter, target))
            detection.append(ProcessEvent(
                t=max(0.0, round(t_fire - DETECT_LEAD, 3)), entity_id=shooter,
                side=shooter_side, event=EventKind.DETECT, target_id=target,
            ))
        engagement.append(ProcessEvent(t=t_fire, entity_id=shooter, side=shooter_side,
                                       event=EventKind.FIRE, target_id=target))
        t_impact = round(t_fire + 0.4 + rng.random() * 1.2, 3)
        if rng.random() < config.base_hit_prob:
            engagement.append(ProcessEvent(t=t_impact, entity_id=shooter,
                                           side=shooter_side, event=EventKind.HIT,
                                           target_id=target))
            if target in alive and rng.random() < DESTROY_PROB:
                t_destroy = round(t_impact + 0.2, 3)
                engagement.append(ProcessEvent(t=t_destroy, entity_id=shooter,
                                               side=shooter_side,
                                               event=EventKind.DESTROY,
                                               target_id=target))
                alive.discard(target)
                death_time[target] = t_destroy
                status.append(ProcessEvent(t=t_destroy, entity_id=target,
                                           side=side_of[target],
                                           event=EventKind.STATUS,
                                           payload={"condition": "destroyed"}))
        else:
            engagement.append(ProcessEvent(t=t_impact, entity_id=shooter,
                                           side=shooter_side, event=EventKind.MISS,
                                           target_id=target))
        heapq.heappush(heap, (t + rng.expovariate(rate), seq, shooter))
        seq += 1

    movement = _movement_events(config, case_id, trial_id, red, blue, side_of, death_time)

    events = {
        "detection": sorted(detection, key=lambda e: e.t),
        "engagement": sorted(engagement, key=lambda e: e.t),
        "movement": sorted(movement, key=lambda e: e.t),
        "status": sorted(status, key=lambda e: e.t),
    }
    metrics = _trial_metrics(events["engagement"], case_id, trial_id, side_of)
    return TrialData(trial_id=trial_id, case_id=case_id, events=events, metrics=metrics)


def _movement_events(config, case_id, trial_id, red, blue, side_of, death_time):
    rng = random.Random(derive_seed(config.seed, case_id, trial_id, "movement"))
    pos = {}
    for unit in red:
        pos[unit] = [round(rng.uniform(0, 2000), 1), round(rng.uniform(0, 4000), 1)]
    for unit in blue:
        pos[unit] = [round(rng.uniform(8000, 10000), 1), round(rng.uniform(0, 4000), 1)]
    events = []
    t = 0.0
    while t <= config.duration:
        for unit in red + blue:
            if t > death_time.get(unit, float("inf")):
                continue
            if t > 0:
                pos[unit][0] = round(pos[unit][0] + rng.uniform(-300, 300), 1)
                pos[unit][1] = round(pos[unit][1] + rng.uniform(-300, 300), 1)
            events.append(ProcessEvent(t=t, entity_id=unit, side=side_of[unit],
                                       event=EventKind.MOVE,
                                       payload={"x": pos[unit][0], "y": pos[unit][1]}))
        t += MOVE_PERIOD
    return events


def _trial_metrics(engagement, case_id, trial_id, side_of) -> list[MetricRecord]:
    records = []
    for side in (Side.RED, Side.BLUE):
        fires = sum(1 for e in engagement if e.event is EventKind.FIRE and e.side is side)
        hits = sum(1 for e in engagement if e.event is EventKind.HIT and e.side is side)
        lost = sum(1 for e in engagement
                   if e.event is EventKind.DESTROY and side_of[e.target_id] is side)
        if fires > 0:
            records.append(MetricRecord(case_id=case_id, trial_id=trial_id, side=side,
                                        metric_name="hit_rate", value=hits / fires))
        records.append(MetricRecord(case_id=case_id, trial_id=trial_id, side=side,
                                    metric_name="shots_fired", value=fires))
        records.append(MetricRecord(case_id=case_id, trial_id=trial_id, side=side,
                                    metric_name="units_lost", value=lost))
    return records


def goal_achieved(events: Sequence[ProcessEvent], goal: GoalSpec) -> bool:
    """Single-pass goal predicate over a trial's merged, time-sorted events.

    ``destroy_target`` holds when goal.side issued a destroy against the
    named target.  ``survive_until_end`` holds when the enemy side issued
    no destroy at all (units are only ever destroyed by the opposing side).
    """
    if goal.condition is GoalCondition.DESTROY_TARGET:
        return any(e.event is EventKind.DESTROY and e.side is goal.side
                   and e.target_id == goal.target_entity for e in events)
    enemy = goal.side.enemy
    return not any(e.event is EventKind.DESTROY and e.side is enemy for e in events)


def apply_factor(config: SimConfig, factor: Factor, level: str) -> SimConfig:
    """Return a config with the factor's field set to the parsed level value."""
    current = getattr(config, factor.applies_to)
    try:
        if isinstance(current, bool):
            raise ConfigError(f"field {factor.applies_to!r} is not adjustable")
        if isinstance(current, int):
            value: object = int(level)
        elif isinstance(current, float):
            value = float(level)
        else:
            raise ConfigError(f"field {factor.applies_to!r} is not adjustable")
    except ValueError:
        raise ConfigError(
            f"level {level!r} of factor {factor.name!r} does not parse as "
            f"{type(current).__name__}"
        ) from None
    return replace(config, **{factor.applies_to: value})


def scenario_text(config: SimConfig, factors: Sequence[Factor] = ()) -> str:
    """Deterministic scenario (and factor) description for the experiment."""
    red, blue = unit_ids(config)
    goal = config.goal
    if goal.condition is GoalCondition.DESTROY_TARGET:
        goal_text = (f"The {goal.side.value} side wins a trial by destroying "
                     f"{goal.target_entity} before the exercise ends.")
    else:
        goal_text = (f"The {goal.side.value} side wins a trial by keeping all of "
                     f"its units alive until the exercise ends.")
    lines = [
        "Red-blue confrontation exercise generated by a seeded engagement simulator.",
        "",
        f"The red side fields {len(red)} strike units ({red[0]}..{red[-1]}); "
        f"the blue side fields {len(blue)} units ({blue[0]}..{blue[-1]}). "
        f"The engagement runs for {config.duration:g} seconds. Each unit fires at an "
        f"expected rate of {config.fire_rate:g} shots per 100 seconds at a randomly "
        f"chosen living enemy, and each shot hits with probability "
        f"{config.base_hit_prob:g}. A hit destroys its target with probability "
        f"{DESTROY_PROB:g}. {goal_text}",
    ]
    if factors:
        lines += ["", "Experimental factor changes:"]
        for factor in factors:
            lines.append(
                f"- {factor.name}: levels {', '.join(factor.levels)} "
                f"(adjusts {factor.applies_to}; base value "
                f"{getattr(config, factor.applies_to):g})"
            )
        lines.append(
            "Each case fixes one combination of factor levels; every other "
            "setting stays at its base value."
        )
    return "\n".join(lines) + "\n"


def generate_experiment(base: SimConfig, factors: Sequence[Factor],
                        trials_per_case: int, out_dir: str | Path) -> Path:
    """Generate one case per factor-level combination, each with seeded trials.

    Returns the path of the written ``experiment.json``, which is guaranteed
    loadable by :func:`corpus.load_experiment`.
    """
    if trials_per_case < 1:
        raise ConfigError("trials_per_case must be at least 1")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc

    combos = _level_combinations(factors)
    width = max(2, len(str(trials_per_case)))
    cases: list[corpus.Case] = []
    case_metrics: list[MetricRecord] = []
    for index, combo in enumerate(combos, start=1):
        case_id = f"case-{index}"
        config = base
        assignment: dict[str, str] = {}
        for factor, level in zip(factors, combo):
            config = apply_factor(config, factor, level)
            assignment[factor.name] = level
        case_dir = out_dir / "cases" / case_id
        trials = []
        trial_records: list[list[MetricRecord]] = []
        for n in range(1, trials_per_case + 1):
            trial_id = f"trial-{n:0{width}d}"
            data = generate_trial(config, trial_id, case_id)
            trial_dir = case_dir / "trials" / trial_id
            data.write(trial_dir)
            rel = trial_dir.relative_to(out_dir)
            trials.append(corpus.Trial(
                trial_id=trial_id,
                process_files=tuple(str(rel / f"{c}.jsonl") for c in CATEGORY_FILES),
                metric_file=str(rel / "metrics.json"),
            ))
            trial_records.append(data.metrics)
        _write_case_meta(case_dir, case_id, assignment, config.goal,
                         [t.trial_id for t in trials])
        cases.append(corpus.Case(case_id=case_id, factor_assignment=assignment,
                                 trials=tuple(trials)))
        case_metrics.extend(_case_level_metrics(case_id, trial_records))

    try:
        (out_dir / "scenario.txt").write_text(scenario_text(base, factors),
                                              encoding="utf-8")
        (out_dir / "metrics.json").write_text(
            corpus.serialize_metric_file(case_metrics), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write experiment files under {out_dir}: {exc}") from exc

    experiment = corpus.Experiment(
        scenario=corpus.ScenarioDescription(text=scenario_text(base, factors)),
        scenario_file="scenario.txt",
        factors=tuple(corpus.FactorDecl(name=f.name, levels=f.levels) for f in factors),
        cases=tuple(cases),
        root=out_dir,
    )
    manifest_path = out_dir / "experiment.json"
    try:
        manifest_path.write_text(corpus.serialize_experiment(experiment),
                                 encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {manifest_path}: {exc}") from exc
    corpus.load_experiment(manifest_path)
    return manifest_path


_SIMGEN_KEYS = {"n_red_units", "n_blue_units", "duration", "fire_rate",
                "base_hit_prob", "goal", "seed", "factors", "trials_per_case"}


def load_sim_config(path: str | Path, *, seed_override: int | None = None,
                    ) -> tuple[SimConfig, list[Factor], int]:
    """Parse a ``simgen.json`` file into (config, factors, trials_per_case).

    Every key is optional; defaults are the SimConfig field defaults plus
    ``factors=[]`` and ``trials_per_case=10``.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read simgen config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path.name}: malformed JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("simgen config must be a JSON object")
    unknown = sorted(set(obj) - _SIMGEN_KEYS)
    if unknown:
        raise ConfigError("simgen config has unknown key(s): " + ", ".join(unknown))

    kwargs: dict = {}
    for key in ("n_red_units", "n_blue_units", "duration", "fire_rate",
                "base_hit_prob", "seed"):
        if key in obj:
            kwargs[key] = obj[key]
    if "goal" in obj:
        kwargs["goal"] = GoalSpec.from_dict(obj["goal"])
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        config = SimConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid simgen config: {exc}") from exc

    factors = []
    for raw in obj.get("factors", []):
        if not isinstance(raw, dict) or set(raw) != {"name", "levels", "applies_to"}:
            raise ConfigError(
                "each factor needs exactly the keys name, levels, applies_to"
            )
        factors.append(Factor(name=raw["name"], levels=tuple(raw["levels"]),
                              applies_to=raw["applies_to"]))
    trials_per_case = obj.get("trials_per_case", 10)
    if (not isinstance(trials_per_case, int) or isinstance(trials_per_case, bool)
            or trials_per_case < 1):
        raise ConfigError("trials_per_case must be a positive integer")
    return config, factors, trials_per_case


def _level_combinations(factors: Sequence[Factor]) -> list[tuple[str, ...]]:
    combos: list[tuple[str, ...]] = [()]
    for factor in factors:
        combos = [prefix + (level,) for prefix in combos for level in factor.levels]
    return combos


def _write_case_meta(case_dir: Path, case_id: str, assignment: dict[str, str],
                     goal: GoalSpec, trial_ids: list[str]) -> None:
    obj = {
        "case_id": case_id,
        "factor_assignment": assignment,
        "goal": goal.to_dict(),
        "trials": trial_ids,
    }
    try:
        case_dir.mkdir(parents=True, exist_ok=True)
        (case_dir / "case.json").write_text(
            json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write case metadata under {case_dir}: {exc}") from exc


def _case_level_metrics(case_id: str,
                        trial_records: Iterable[list[MetricRecord]]) -> list[MetricRecord]:
    """Per-case per-side means across trials (trial_id omitted)."""
    by_key: dict[tuple[Side, str], list[float]] = {}
    for records in trial_records:
        for record in records:
            by_key.setdefault((record.side, record.metric_name), []).append(record.value)
    records = []
    for side in (Side.RED, Side.BLUE):
        for name in ("hit_rate", "shots_fired", "units_lost"):
            values = by_key.get((side, name))
            if values:
                records.append(MetricRecord(case_id=case_id, side=side, metric_name=name,
                                            value=sum(values) / len(values)))
    return records
