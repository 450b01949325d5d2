"""Deterministic metric calculators over parsed process events.

Hit rate is hits divided by shots fired; a side that never fired gets None
rather than 0 so trial averages are not dragged down by non-firing trials.
"""

from __future__ import annotations

from typing import Sequence

from ..corpus import EventKind, ProcessEvent, Side
from ..errors import MetricError
from ..simgen import GoalSpec, goal_achieved


def hit_rate(events: Sequence[ProcessEvent], side: Side) -> float | None:
    """hits/fires for one side; None when the side never fired."""
    side = Side(side)
    fires = sum(1 for e in events if e.event is EventKind.FIRE and e.side is side)
    hits = sum(1 for e in events if e.event is EventKind.HIT and e.side is side)
    if hits > fires:
        raise MetricError(
            f"{side.value} side records {hits} hits but only {fires} fire events"
        )
    if fires == 0:
        return None
    return hits / fires


def aggregate(values: Sequence[tuple[str, float | None]]) -> dict:
    """mean/min/max over the non-null values of (trial_id, value) pairs."""
    if not values:
        raise MetricError("aggregate needs at least one entry")
    present = [v for _, v in values if v is not None]
    n_null = len(values) - len(present)
    if present:
        stats = {"mean": sum(present) / len(present),
                 "min": min(present), "max": max(present)}
    else:
        stats = {"mean": None, "min": None, "max": None}
    stats["n_present"] = len(present)
    stats["n_null"] = n_null
    return stats


def goal_count(trials: Sequence[tuple[str, Sequence[ProcessEvent]]],
               goal: GoalSpec) -> int:
    """Number of trials whose merged events satisfy the goal."""
    return sum(1 for _, events in trials if goal_achieved(events, goal))
