"""Exact replay of switching plans against the analytic battery model.

A plan is replayed happening by happening: each step is split at every
load-change boundary inside it and every battery is advanced in closed
form across each piece. Violations carry their exact analytic times: a
battery dying strictly inside a Use step, positive load left unserviced
during a Wait step, and service against zero load.

A step that ends exactly at the active battery's death time is valid.
Death counts as a violation only when the battery stays dead for more
than 1e-9 min before the step ends, so boundary landings never trip
false positives.

The refinement loop wraps the planner: when a search cannot reach the
goal at the current resolution (or, defensively, when a plan fails to
validate), the duration set gains a new smallest element, one tenth of
the previous one, and the search reruns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

from .battery import (
    BatteryState,
    DEATH_ATOL,
    _delta_gamma_after,
    fresh_state,
    life_margin,
    time_to_death,
)
from .errors import KibamError
from .planner import (
    BudgetExhausted,
    DurationSet,
    Goal,
    Plan,
    Unsolvable,
    search,
)
from .profiles import LoadProfile

TIME_SLOP = 1e-9
DEATH_TIME_ATOL = 1e-9  # dead longer than this inside a step => violation


class MalformedPlan(KibamError):
    """Plan steps are not contiguous from zero, or reference bad batteries."""


class RefinementExhausted(KibamError):
    """No valid plan found within the allowed number of refinements."""


BATTERY_DEAD = "BatteryDeadDuringUse"
UNSERVICED = "UnservicedLoad"
NO_LOAD = "ServiceWithoutLoad"


@dataclass(frozen=True)
class ViolationRecord:
    time: float
    kind: str
    detail: str


@dataclass(frozen=True)
class TraceEntry:
    time: float
    battery: Optional[int]  # None for system-level events
    delta: float
    gamma: float
    event: str


@dataclass
class ValidationReport:
    valid: bool
    violations: list[ViolationRecord] = field(default_factory=list)
    trace: list[TraceEntry] = field(default_factory=list)

    def render_text(self) -> str:
        """Human-readable replay log, one block per happening.

        Each battery variable prints as old value "by" new value, so two
        reports can be diffed line by line.
        """
        lines: list[str] = []
        by_time: dict[float, list[TraceEntry]] = {}
        order: list[float] = []
        for entry in self.trace:
            if entry.time not in by_time:
                by_time[entry.time] = []
                order.append(entry.time)
            by_time[entry.time].append(entry)
        prev_delta: dict[int, float] = {}
        prev_gamma: dict[int, float] = {}
        for t in order:
            entries = by_time[t]
            if any(e.event == "initial state" for e in entries):
                for e in entries:
                    prev_delta[e.battery] = e.delta
                    prev_gamma[e.battery] = e.gamma
                continue
            lines.append(f"- {_fmt(t)}: Checking Happening... ...OK!")
            for e in entries:
                name = f"b{e.battery + 1}"
                lines.append(
                    f" Updating (delta {name}) ({_fmt(prev_delta[e.battery])})"
                    f" by {_fmt(e.delta)} for {e.event}."
                )
                lines.append(
                    f" Updating (gamma {name}) ({_fmt(prev_gamma[e.battery])})"
                    f" by {_fmt(e.gamma)} for {e.event}."
                )
                prev_delta[e.battery] = e.delta
                prev_gamma[e.battery] = e.gamma
        for v in self.violations:
            lines.append(f"EVENT triggered at (time {_fmt(v.time)})")
            lines.append(f"Triggered violation ({v.kind})")
            lines.append(v.detail)
        if self.valid:
            lines.append("Plan valid")
        else:
            lines.append("Plan failed to validate")
        return "\n".join(lines) + "\n"

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "battery", "delta", "gamma", "event"])
            for e in self.trace:
                battery = "" if e.battery is None else e.battery + 1
                writer.writerow(
                    [repr(e.time), battery, repr(e.delta), repr(e.gamma), e.event]
                )


def _fmt(x: float) -> str:
    for digits in range(2, 13):
        text = f"{x:.{digits}f}"
        if abs(float(text) - x) < 1e-12:
            return text
    return repr(x)


def _check_shape(plan: Plan, n_batteries: int) -> None:
    t = 0.0
    for k, step in enumerate(plan.steps):
        if step.duration <= 0:
            raise MalformedPlan(f"step {k}: nonpositive duration {step.duration}")
        if abs(step.start - t) > 1e-6:
            raise MalformedPlan(
                f"step {k}: starts at {step.start}, expected {t} (gap or overlap)"
            )
        if step.action is not None and not 0 <= step.action < n_batteries:
            raise MalformedPlan(f"step {k}: no battery b{step.action + 1}")
        t = step.start + step.duration


def validate(
    plan: Plan,
    profile: LoadProfile,
    params_list,
    initial_states=None,
) -> ValidationReport:
    """Replay a plan exactly and report the first violation, if any.

    Only the plan's own span [0, makespan] is checked; whether the plan
    covers the whole profile is the planner's goal condition, not a
    validity condition (lifetime-maximizing plans end at system death).
    """
    params_list = list(params_list)
    _check_shape(plan, len(params_list))
    states = (
        [fresh_state(p) for p in params_list]
        if initial_states is None
        else list(initial_states)
    )
    report = ValidationReport(valid=True)

    def record(t: float, event: str) -> None:
        for idx, s in enumerate(states):
            report.trace.append(
                TraceEntry(time=t, battery=idx, delta=s.delta,
                           gamma=s.gamma, event=event)
            )

    def fail(time: float, kind: str, detail: str) -> ValidationReport:
        report.valid = False
        report.violations.append(ViolationRecord(time=time, kind=kind,
                                                 detail=detail))
        return report

    record(0.0, "initial state")
    for step in plan.steps:
        t_end = step.start + step.duration
        cursor = step.start
        while cursor < t_end - TIME_SLOP:
            current = profile.current_at(cursor)
            piece_end = min(t_end, profile.next_change_after(cursor))
            piece = piece_end - cursor
            if piece <= TIME_SLOP:
                cursor = piece_end
                continue
            if step.action is None:
                if current > 0:
                    return fail(
                        cursor, UNSERVICED,
                        f"load {current} A has no active battery "
                        f"from time {_fmt(cursor)}",
                    )
            else:
                name = f"b{step.action + 1}"
                if current == 0:
                    return fail(
                        cursor, NO_LOAD,
                        f"(use {name}) is active with zero load "
                        f"at time {_fmt(cursor)}",
                    )
                active = states[step.action]
                params = params_list[step.action]
                if life_margin(active, params) <= DEATH_ATOL:
                    return fail(
                        cursor, BATTERY_DEAD,
                        f"(use {name}) begins with the battery already dead "
                        f"at time {_fmt(cursor)}",
                    )
                margin_end = _margin_after(active, params, current, piece)
                if margin_end < -DEATH_ATOL:
                    death = cursor + time_to_death(active, params, current)
                    if piece_end - death > DEATH_TIME_ATOL:
                        return fail(
                            death, BATTERY_DEAD,
                            f"Invariant for (use {name}) has its condition "
                            f"unsatisfied between time {_fmt(death)} and "
                            f"{_fmt(piece_end)}.",
                        )
            for idx, p in enumerate(params_list):
                i = current if idx == step.action else 0.0
                states[idx] = _advance_unchecked(states[idx], p, i, piece)
            cursor = piece_end
        record(t_end, "continuous update")
    return report


def _margin_after(state, params, current, dt) -> float:
    delta, gamma = _delta_gamma_after(state, params, current, dt)
    return gamma - (1.0 - params.fraction_c) * delta


def _advance_unchecked(state, params, current, dt) -> BatteryState:
    delta, gamma = _delta_gamma_after(state, params, current, dt)
    return BatteryState(delta=delta, gamma=gamma)


def plan_and_validate(
    profile: LoadProfile,
    params_list,
    durations: DurationSet | None = None,
    max_refinements: int = 3,
    goal: str = Goal.MAXIMIZE_LIFETIME,
    horizon: float | None = None,
    **search_kwargs,
):
    """Search, validate, and refine the time resolution until valid.

    Returns (plan, report, refinements_used). Each refinement adds a new
    smallest duration (previous smallest / 10) and reruns the search;
    an unreachable goal at the current resolution counts as a failed
    round, since a finer grid can expose switching points the coarse
    grid cannot hit.
    """
    if max_refinements < 0:
        raise ValueError("max_refinements must be >= 0")
    durations = durations or DurationSet.default()
    last_failure = "no rounds ran"
    for round_no in range(max_refinements + 1):
        try:
            result = search(
                profile, params_list, durations=durations,
                horizon=horizon, goal=goal, **search_kwargs,
            )
        except (Unsolvable, BudgetExhausted) as exc:
            last_failure = str(exc)
            durations = durations.refined()
            continue
        report = validate(result.plan, profile, params_list)
        if report.valid:
            return result.plan, report, round_no
        first = report.violations[0]
        last_failure = f"{first.kind} at {first.time}"
        durations = durations.refined()
    raise RefinementExhausted(
        f"no valid plan within {max_refinements} refinements; "
        f"last failure: {last_failure}"
    )
