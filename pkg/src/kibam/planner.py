"""Best-first search over variable time discretisations.

The planning model is a finite state temporal system: a state carries the
exact analytic battery states, the elapsed time t, and bookkeeping for
symmetry pruning; an action is either Use(battery) or Wait, applied for a
duration drawn from a fixed set. A transition advances every battery
across each load-change boundary inside its interval and fails (returns a
Violation instead of a state) if the active battery dies mid-interval, if
positive load goes unserviced, or if a battery services zero load.

The search pops the open node maximizing h(s) = t(s) + total available
charge. Elapsed time and remaining charge trade one for one along any
service, so h is nearly flat across the frontier and strongly favours
deep, charge-preserving trajectories.

Symmetry pruning follows two rules. A run of consecutive equal actions
may only use non-increasing durations, and the run's accumulated length
may not exceed the next-larger duration than the one that started the
run; the largest duration repeats freely. Longer durations become
available again as soon as a different action intervenes.
"""

from __future__ import annotations

import heapq
import math
import re
import time as _time
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .battery import (
    BatteryParams,
    BatteryState,
    available_charge,
    fresh_state,
    life_margin,
    survives,
    time_to_death,
    DEATH_ATOL,
)
from .errors import KibamError
from .profiles import LoadProfile

TIME_SLOP = 1e-9

DEFAULT_DURATIONS = (0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0)


class Unsolvable(KibamError):
    """No violation-free trajectory reaches the goal."""


class BudgetExhausted(KibamError):
    """The node budget ran out before the goal was reached.

    Carries the best plan found so far (possibly None).
    """

    def __init__(self, message: str, best_plan: Optional["Plan"]):
        super().__init__(message)
        self.best_plan = best_plan


@dataclass(frozen=True)
class DurationSet:
    """Sorted positive durations; the smallest is the time resolution."""

    durations: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.durations:
            raise ValueError("duration set must be nonempty")
        ordered = tuple(sorted(float(d) for d in self.durations))
        if ordered[0] <= 0:
            raise ValueError(f"durations must be positive, got {ordered[0]}")
        if len(set(ordered)) != len(ordered):
            raise ValueError("durations must be distinct")
        object.__setattr__(self, "durations", ordered)

    @classmethod
    def default(cls) -> "DurationSet":
        return cls(DEFAULT_DURATIONS)

    @property
    def smallest(self) -> float:
        return self.durations[0]

    @property
    def largest(self) -> float:
        return self.durations[-1]

    def next_larger(self, d: float) -> float:
        """Smallest member strictly greater than d, or inf past the top."""
        for x in self.durations:
            if x > d + TIME_SLOP:
                return x
        return math.inf

    def refined(self) -> "DurationSet":
        """A new set with one extra resolution step: smallest / 10."""
        return DurationSet((self.smallest / 10.0,) + self.durations)

    def __iter__(self):
        return iter(self.durations)


WAIT = None  # action encoding: battery index for Use, None for Wait


@dataclass(frozen=True)
class Violation:
    """A rejected transition: what went wrong and exactly when."""

    kind: str  # batteryDead | disaster | notOptimal
    time: float


@dataclass(frozen=True)
class PlanStep:
    start: float
    action: Optional[int]  # battery index, or None for Wait
    duration: float


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...]

    @property
    def makespan(self) -> float:
        if not self.steps:
            return 0.0
        last = self.steps[-1]
        return last.start + last.duration

    def __len__(self) -> int:
        return len(self.steps)


_NO_ACTION = object()  # sentinel: fresh state, no symmetry restriction yet


class SearchState:
    """One FSTS node. Parent links reconstruct the plan."""

    __slots__ = (
        "batteries", "active", "t",
        "last_action", "last_duration", "run_first", "run_accum",
        "parent",
    )

    def __init__(self, batteries, active, t, last_action, last_duration,
                 run_first, run_accum, parent):
        self.batteries = batteries
        self.active = active
        self.t = t
        self.last_action = last_action
        self.last_duration = last_duration
        self.run_first = run_first
        self.run_accum = run_accum
        self.parent = parent

    @classmethod
    def initial(cls, params_list) -> "SearchState":
        return cls(
            batteries=tuple(fresh_state(p) for p in params_list),
            active=WAIT,
            t=0.0,
            last_action=_NO_ACTION,
            last_duration=0.0,
            run_first=0.0,
            run_accum=0.0,
            parent=None,
        )


def dedup_key(state: SearchState, profile: LoadProfile, resolution: float) -> tuple:
    """Rounded charge states, active battery, and profile phase.

    Phase is t on the resolution grid, reduced modulo the profile period
    for repeating profiles: states at different points of the cycle see
    different futures and must not merge.
    """
    ticks = round(state.t / resolution)
    if profile.repeat:
        period_ticks = profile.period / resolution
        if abs(period_ticks - round(period_ticks)) < 1e-6:
            phase = ticks % round(period_ticks)
        else:  # period off the grid: keep absolute time, coarser but sound
            phase = ticks
    else:
        phase = ticks
    charges = tuple(
        (round(b.delta, 5), round(b.gamma, 5)) for b in state.batteries
    )
    return (charges, state.active, phase)


def heuristic(state: SearchState, params_list) -> float:
    """t plus total available charge, the monotone-resource guide."""
    total = state.t
    for b, p in zip(state.batteries, params_list):
        total += available_charge(b, p)
    return total


def transition(
    state: SearchState,
    action: Optional[int],
    duration: float,
    profile: LoadProfile,
    params_list,
):
    """Apply (action, duration); return the successor or a Violation.

    The interval is split at every load-change boundary. The active
    battery drains at the segment current while all others recover; a
    death strictly inside the interval, unserviced positive load, or
    service against zero load each abort with the exact event time.
    """
    batteries = list(state.batteries)
    t_end = state.t + duration
    cursor = state.t
    while cursor < t_end - TIME_SLOP:
        current = profile.current_at(cursor)
        piece_end = min(t_end, profile.next_change_after(cursor))
        piece = piece_end - cursor
        if piece <= TIME_SLOP:
            cursor = piece_end
            continue
        if action is WAIT:
            if current > 0:
                return Violation("disaster", cursor)
        else:
            if current == 0:
                return Violation("notOptimal", cursor)
            active = batteries[action]
            params = params_list[action]
            if life_margin(active, params) <= DEATH_ATOL:
                return Violation("batteryDead", cursor)
            if not survives(active, params, current, piece):
                death = cursor + time_to_death(active, params, current)
                return Violation("batteryDead", death)
        for idx, (b, p) in enumerate(zip(batteries, params_list)):
            i = current if idx == action else 0.0
            ck = p.fraction_c * p.rate_k_prime
            asym = i / ck
            decay = math.exp(-p.rate_k_prime * piece)
            batteries[idx] = BatteryState(
                delta=asym + (b.delta - asym) * decay,
                gamma=b.gamma - i * piece,
            )
        cursor = piece_end
    if action == state.last_action:
        run_first = state.run_first
        run_accum = state.run_accum + duration
    else:
        run_first = duration
        run_accum = duration
    return SearchState(
        batteries=tuple(batteries),
        active=action,
        t=t_end,
        last_action=action,
        last_duration=duration,
        run_first=run_first,
        run_accum=run_accum,
        parent=(state, action, duration),
    )


def enabled(
    state: SearchState,
    durations: DurationSet,
    horizon: float,
    profile: LoadProfile,
    params_list,
) -> Iterator[tuple[Optional[int], float]]:
    """Candidate (action, duration) pairs, symmetry-pruned and pre-filtered.

    Wait is refused while load is positive and Use is refused for a
    battery dead at entry or against zero load; those transitions would
    violate immediately, so generating them is wasted work.
    """
    try:
        load_now = profile.current_at(state.t)
    except Exception:
        return
    actions: list[Optional[int]] = []
    if load_now > 0:
        for idx, (b, p) in enumerate(zip(state.batteries, params_list)):
            if life_margin(b, p) > DEATH_ATOL:
                actions.append(idx)
    else:
        actions.append(WAIT)
    budget = horizon - state.t + TIME_SLOP
    for action in actions:
        if action == state.last_action:
            cap = durations.next_larger(state.run_first)
            for d in durations:
                if d > state.last_duration + TIME_SLOP or d > budget:
                    break
                if state.run_accum + d <= cap + TIME_SLOP:
                    yield action, d
        else:
            for d in durations:
                if d > budget:
                    break
                yield action, d


@dataclass
class SearchResult:
    plan: Plan
    lifetime: float
    visited: int
    generated: int
    goal_reached: bool
    exhausted: bool  # True when the open list emptied before any budget


class Goal:
    FINISH_PROFILE = "finish_profile"
    MAXIMIZE_LIFETIME = "maximize_lifetime"


def _reconstruct(state: SearchState) -> Plan:
    steps = []
    node = state
    while node.parent is not None:
        parent, action, duration = node.parent
        steps.append((action, duration))
        node = parent
    steps.reverse()
    out = []
    t = 0.0
    for action, duration in steps:
        out.append(PlanStep(start=t, action=action, duration=duration))
        t += duration
    return Plan(steps=tuple(out))


def search(
    profile: LoadProfile,
    params_list,
    durations: DurationSet | None = None,
    horizon: float | None = None,
    goal: str = Goal.MAXIMIZE_LIFETIME,
    node_budget: int = 200_000,
    time_budget: float | None = None,
    deadend_limit: int | None = None,
    initial_states=None,
) -> SearchResult:
    """Best-first search for a switching plan.

    Parameters
    ----------
    profile : LoadProfile
    params_list : list of BatteryParams
    durations : DurationSet, optional
        Defaults to the standard seven-duration set.
    horizon : float, optional
        Hard bound on plan makespan. Required for MaximizeLifetime on
        repeating profiles (callers pass the single-equivalent bound);
        defaults to the profile end for finite profiles.
    goal : Goal.FINISH_PROFILE or Goal.MAXIMIZE_LIFETIME
        FinishProfile succeeds when t reaches the profile end exactly.
        MaximizeLifetime is anytime: it keeps the deepest violation-free
        state and stops when the open list empties or a budget hits.
    node_budget : int
        Maximum number of expansions.
    time_budget : float, optional
        Wall-clock seconds; checked between expansions.
    deadend_limit : int, optional
        For MaximizeLifetime: stop after this many dead-end expansions.
        The informed heuristic reaches a near-optimal dead end first, so
        small limits trade little lifetime for large node savings.
    initial_states : list of BatteryState, optional
        Defaults to fresh batteries.

    Raises
    ------
    Unsolvable
        FinishProfile only: the reachable space is exhausted.
    BudgetExhausted
        FinishProfile only: a budget hit first; carries the best plan.
    """
    durations = durations or DurationSet.default()
    if goal == Goal.FINISH_PROFILE:
        if profile.repeat:
            raise ValueError("FinishProfile needs a finite profile")
        target = profile.total_duration
        horizon = target if horizon is None else min(horizon, target)
    elif goal == Goal.MAXIMIZE_LIFETIME:
        if horizon is None:
            if profile.repeat:
                raise ValueError(
                    "MaximizeLifetime on a repeating profile needs a horizon"
                )
            horizon = profile.total_duration
        target = None
    else:
        raise ValueError(f"unknown goal {goal!r}")

    root = SearchState.initial(params_list)
    if initial_states is not None:
        root.batteries = tuple(initial_states)
    resolution = durations.smallest

    seen = {dedup_key(root, profile, resolution)}
    counter = 0
    # Max-heap on (h, t, action order, duration); heapq is a min-heap, so
    # all keys are negated. Action order: lower battery index first, Wait
    # last. The counter keeps comparisons away from SearchState objects.
    open_heap = [(-heuristic(root, params_list), -root.t, 0, 0.0, counter, root)]
    best = root
    visited = 0
    generated = 1
    deadends = 0
    started = _time.monotonic()

    def out_of_budget() -> bool:
        if visited >= node_budget:
            return True
        if time_budget is not None and _time.monotonic() - started > time_budget:
            return True
        return False

    budget_hit = False
    while open_heap:
        if out_of_budget():
            budget_hit = True
            break
        _, _, _, _, _, state = heapq.heappop(open_heap)
        visited += 1
        expanded_any = False
        for action, d in enabled(state, durations, horizon, profile, params_list):
            child = transition(state, action, d, profile, params_list)
            if isinstance(child, Violation):
                continue
            key = dedup_key(child, profile, resolution)
            if key in seen:
                continue
            seen.add(key)
            expanded_any = True
            generated += 1
            if child.t > best.t:
                best = child
            if target is not None and abs(child.t - target) <= TIME_SLOP:
                return SearchResult(
                    plan=_reconstruct(child),
                    lifetime=child.t,
                    visited=visited,
                    generated=generated,
                    goal_reached=True,
                    exhausted=False,
                )
            counter += 1
            order = action if action is not None else len(params_list)
            heapq.heappush(
                open_heap,
                (-heuristic(child, params_list), -child.t, order, -d, counter, child),
            )
        if not expanded_any:
            deadends += 1
            if (
                goal == Goal.MAXIMIZE_LIFETIME
                and deadend_limit is not None
                and deadends >= deadend_limit
            ):
                break

    if goal == Goal.FINISH_PROFILE:
        plan = _reconstruct(best) if best.parent is not None else Plan(steps=())
        if budget_hit:
            raise BudgetExhausted(
                f"no goal within {node_budget} expansions", plan
            )
        raise Unsolvable(
            f"profile end {target} unreachable with durations {tuple(durations)}"
        )
    return SearchResult(
        plan=_reconstruct(best),
        lifetime=best.t,
        visited=visited,
        generated=generated,
        goal_reached=False,
        exhausted=not open_heap,
    )


# ---- plan file format ----

_STEP_RE = re.compile(
    r"^\s*([0-9.]+)\s*:\s*\((?:use\s+b(\d+)|(wait))\)\s*\[\s*([0-9.]+)\s*\]\s*$"
)


def _fmt(x: float) -> str:
    # Two decimal places minimum, more only when needed for exactness.
    for digits in range(2, 13):
        text = f"{x:.{digits}f}"
        if float(text) == x:
            return text
    return repr(x)


def render_plan(plan: Plan) -> str:
    lines = []
    for step in plan.steps:
        if step.action is WAIT:
            head = "(wait)"
        else:
            head = f"(use b{step.action + 1})"
        lines.append(f"{_fmt(step.start)}: {head} [{_fmt(step.duration)}]")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_plan(text: str) -> Plan:
    steps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        m = _STEP_RE.match(line)
        if m is None:
            raise ValueError(f"line {lineno}: not a plan step: {raw!r}")
        start = float(m.group(1))
        action = None if m.group(3) else int(m.group(2)) - 1
        duration = float(m.group(4))
        steps.append(PlanStep(start=start, action=action, duration=duration))
    return Plan(steps=tuple(steps))


def write_plan(plan: Plan, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(render_plan(plan))


def read_plan(path) -> Plan:
    with open(path, "r", encoding="ascii") as fh:
        return parse_plan(fh.read())
