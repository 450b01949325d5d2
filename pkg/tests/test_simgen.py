from __future__ import annotations

import filecmp

import pytest

from simreport import corpus, simgen
from simreport.corpus import EventKind, Side
from simreport.errors import ConfigError
from simreport.simgen import Factor, GoalCondition, GoalSpec, SimConfig


def test_same_inputs_give_byte_identical_directories(tmp_path):
    config = SimConfig(seed=99)
    a, b = tmp_path / "a", tmp_path / "b"
    simgen.generate_trial(config, "trial-01").write(a)
    simgen.generate_trial(config, "trial-01").write(b)
    names = [f"{c}.jsonl" for c in simgen.CATEGORY_FILES] + ["metrics.json"]
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert mismatch == [] and errors == []
    assert sorted(match) == sorted(names)


def test_zero_fire_rate_gives_no_shots_and_null_hit_rate():
    config = SimConfig(fire_rate=0.0, base_hit_prob=0.0, seed=5)
    data = simgen.generate_trial(config, "trial-01")
    engagement = data.events["engagement"]
    assert not any(e.event is EventKind.HIT for e in engagement)
    assert not any(e.event is EventKind.FIRE for e in engagement)
    # null hit rate is represented by omitting the record entirely
    assert not any(m.metric_name == "hit_rate" for m in data.metrics)


def test_zero_hit_prob_with_fires_gives_zero_rate():
    config = SimConfig(base_hit_prob=0.0, seed=5)
    data = simgen.generate_trial(config, "trial-01")
    engagement = data.events["engagement"]
    assert any(e.event is EventKind.FIRE for e in engagement)
    assert not any(e.event is EventKind.HIT for e in engagement)
    rates = [m for m in data.metrics if m.metric_name == "hit_rate"]
    assert rates and all(m.value == 0.0 for m in rates)


def test_certain_hit_prob_makes_hits_equal_fires():
    config = SimConfig(base_hit_prob=1.0, seed=6)
    data = simgen.generate_trial(config, "trial-01")
    engagement = data.events["engagement"]
    fires = sum(1 for e in engagement if e.event is EventKind.FIRE)
    hits = sum(1 for e in engagement if e.event is EventKind.HIT)
    assert fires >= 1
    assert hits == fires


def test_experiment_shape_5_levels_10_trials(tmp_path):
    factor = Factor("hit_prob", ("0.2", "0.35", "0.5", "0.65", "0.8"),
                    "base_hit_prob")
    manifest = simgen.generate_experiment(SimConfig(seed=1, duration=120.0),
                                          [factor], 10, tmp_path)
    experiment = corpus.load_experiment(manifest)
    assert len(experiment.cases) == 5
    assert experiment.total_trials == 50


def test_zero_factors_yield_single_case(tmp_path):
    manifest = simgen.generate_experiment(SimConfig(seed=1, duration=60.0), [],
                                          2, tmp_path)
    experiment = corpus.load_experiment(manifest)
    assert len(experiment.cases) == 1


def test_two_by_two_factors_yield_four_cases(tmp_path):
    factors = [Factor("hit_prob", ("0.3", "0.7"), "base_hit_prob"),
               Factor("tempo", ("1", "4"), "fire_rate")]
    manifest = simgen.generate_experiment(SimConfig(seed=1, duration=60.0),
                                          factors, 1, tmp_path)
    experiment = corpus.load_experiment(manifest)
    assert len(experiment.cases) == 4
    assert [c.factor_assignment for c in experiment.cases] == [
        {"hit_prob": "0.3", "tempo": "1"},
        {"hit_prob": "0.3", "tempo": "4"},
        {"hit_prob": "0.7", "tempo": "1"},
        {"hit_prob": "0.7", "tempo": "4"},
    ]


def test_goal_achieved_on_empty_events():
    survive = GoalSpec(Side.RED, GoalCondition.SURVIVE_UNTIL_END)
    destroy = GoalSpec(Side.RED, GoalCondition.DESTROY_TARGET, "B-HQ")
    assert simgen.goal_achieved([], survive) is True
    assert simgen.goal_achieved([], destroy) is False


def test_goal_achieved_scans_destroy_events():
    events = [
        corpus.ProcessEvent(1.0, "R-F1", Side.RED, EventKind.FIRE, "B-HQ"),
        corpus.ProcessEvent(2.0, "R-F1", Side.RED, EventKind.HIT, "B-HQ"),
        corpus.ProcessEvent(2.2, "R-F1", Side.RED, EventKind.DESTROY, "B-HQ"),
    ]
    goal = GoalSpec(Side.RED, GoalCondition.DESTROY_TARGET, "B-HQ")
    assert simgen.goal_achieved(events, goal) is True
    assert simgen.goal_achieved(events, GoalSpec(Side.RED, GoalCondition.DESTROY_TARGET,
                                                 "B-2")) is False
    # blue lost a unit, so blue did not survive; red did
    assert simgen.goal_achieved(
        events, GoalSpec(Side.BLUE, GoalCondition.SURVIVE_UNTIL_END)) is False
    assert simgen.goal_achieved(
        events, GoalSpec(Side.RED, GoalCondition.SURVIVE_UNTIL_END)) is True


@pytest.mark.parametrize("seed", range(8))
def test_causality_and_conservation(seed):
    data = simgen.generate_trial(SimConfig(seed=seed), f"trial-{seed:02d}")
    engagement = data.events["engagement"]
    fire_times: dict[tuple[str, str], list[float]] = {}
    hit_times: dict[str, list[float]] = {}
    for event in engagement:
        pair = (event.entity_id, event.target_id)
        if event.event is EventKind.FIRE:
            fire_times.setdefault(pair, []).append(event.t)
        elif event.event in (EventKind.HIT, EventKind.MISS):
            assert any(t < event.t for t in fire_times.get(pair, [])), \
                f"{event.event.value} at {event.t} has no earlier fire for {pair}"
            if event.event is EventKind.HIT:
                hit_times.setdefault(event.target_id, []).append(event.t)
        elif event.event is EventKind.DESTROY:
            assert any(t <= event.t for t in hit_times.get(event.target_id, []))
    for side in Side:
        fires = sum(1 for e in engagement
                    if e.event is EventKind.FIRE and e.side is side)
        hits = sum(1 for e in engagement
                   if e.event is EventKind.HIT and e.side is side)
        misses = sum(1 for e in engagement
                     if e.event is EventKind.MISS and e.side is side)
        assert hits + misses == fires


def test_hit_fraction_converges_to_base_probability():
    # 3-sigma binomial check pooled over >= 100 trials
    p = 0.55
    config = SimConfig(seed=77, base_hit_prob=p, duration=200.0, fire_rate=4.0)
    fires = hits = 0
    for n in range(120):
        data = simgen.generate_trial(config, f"trial-{n:03d}")
        for event in data.events["engagement"]:
            if event.event is EventKind.FIRE:
                fires += 1
            elif event.event is EventKind.HIT:
                hits += 1
    assert fires >= 1000
    sigma = (p * (1 - p) / fires) ** 0.5
    assert abs(hits / fires - p) < 3 * sigma


def test_per_file_times_are_non_decreasing():
    data = simgen.generate_trial(SimConfig(seed=123), "trial-01")
    for events in data.events.values():
        times = [e.t for e in events]
        assert times == sorted(times)


@pytest.mark.parametrize("kwargs", [
    {"base_hit_prob": 1.5},
    {"base_hit_prob": -0.1},
    {"duration": 0},
    {"n_red_units": 0},
    {"seed": -1},
])
def test_invalid_config_raises(kwargs):
    with pytest.raises(ConfigError):
        SimConfig(**kwargs)


def test_destroy_target_goal_requires_entity():
    with pytest.raises(ConfigError):
        GoalSpec(Side.RED, GoalCondition.DESTROY_TARGET)


def test_apply_factor_parses_by_field_type():
    config = SimConfig()
    adjusted = simgen.apply_factor(config, Factor("u", ("6",), "n_red_units"), "6")
    assert adjusted.n_red_units == 6
    adjusted = simgen.apply_factor(config, Factor("p", ("0.9",), "base_hit_prob"), "0.9")
    assert adjusted.base_hit_prob == 0.9
    with pytest.raises(ConfigError):
        simgen.apply_factor(config, Factor("p", ("x",), "base_hit_prob"), "x")


def test_distinct_trials_get_distinct_streams():
    config = SimConfig(seed=42)
    a = simgen.generate_trial(config, "trial-01")
    b = simgen.generate_trial(config, "trial-02")
    assert corpus.serialize_process_file(a.events["engagement"]) != \
        corpus.serialize_process_file(b.events["engagement"])
