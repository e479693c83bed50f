"""Switching policies and the rollout simulator.

A policy maps an observation (per-battery available and total charge,
the currently active battery, the load, and per-battery rest clocks) to
the index of the battery that should service the load. The rollout
advances the system analytically, querying the policy every decision
period while load is positive, plus at every load change and at the
exact instant an active battery dies. Between decision points the
chosen battery is fixed.

Lifetime ends at the first instant positive load exists and no battery
can serve: deaths are located with the closed-form root, never snapped
to the decision grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

from .battery import (
    DEATH_ATOL,
    available_charge,
    fresh_state,
    life_margin,
    single_equivalent_lifetime,
    survives,
    time_to_death,
)
from .battery import _delta_gamma_after, BatteryState
from .errors import KibamError
from .profiles import LoadProfile, StochasticLoadModel, sample_profile

TIME_SLOP = 1e-9
DEFAULT_DECISION_PERIOD = 0.01


class AllDead(KibamError):
    """The policy has no battery left to offer."""


@dataclass(frozen=True)
class Observation:
    """What a policy is allowed to see. Time is deliberately absent."""

    sigma: tuple[float, ...]  # available charge per battery
    gamma: tuple[float, ...]  # total charge per battery
    active: Optional[int]
    load: float
    rest: tuple[float, ...]  # minutes since each battery last served

    @property
    def n_batteries(self) -> int:
        return len(self.sigma)


def _alive_indices(obs: Observation) -> list[int]:
    return [i for i, s in enumerate(obs.sigma) if s > DEATH_ATOL]


def decide_builtin(kind: str, obs: Observation) -> int:
    """One decision of a named baseline policy.

    Vmax/Vmin pick the battery with the highest/lowest available charge,
    Tmax/Tmin the one rested longest/shortest, Sequential the lowest
    index still holding charge. All ties fall to the lowest index.
    """
    alive = _alive_indices(obs)
    if not alive:
        raise AllDead("no battery has available charge")
    if kind == "Vmax":
        return max(alive, key=lambda i: (obs.sigma[i], -i))
    if kind == "Vmin":
        return min(alive, key=lambda i: (obs.sigma[i], i))
    if kind == "Tmax":
        return max(alive, key=lambda i: (obs.rest[i], -i))
    if kind == "Tmin":
        return min(alive, key=lambda i: (obs.rest[i], i))
    if kind == "Sequential":
        return alive[0]
    raise ValueError(f"unknown builtin policy {kind!r}")


class Policy:
    """Base class: stateless decide plus a reset hook for rollouts."""

    name = "policy"

    def reset(self) -> None:
        pass

    def decide(self, obs: Observation) -> int:
        raise NotImplementedError


class BuiltinPolicy(Policy):
    def __init__(self, kind: str):
        if kind not in BUILTIN_KINDS:
            raise ValueError(f"unknown builtin policy {kind!r}")
        self.name = kind
        self.kind = kind

    def decide(self, obs: Observation) -> int:
        return decide_builtin(self.kind, obs)


class SequentialPolicy(Policy):
    """Lowest-index battery, never returning to one it has worn out.

    The pure Sequential rule would flip back to a lower-index battery
    the moment recovery trickles charge into it, switching every tick
    near the end of its life. Retiring a battery once it dies while
    selected keeps the intended behaviour: each battery is drained once,
    in order, giving at most n - 1 switches.
    """

    name = "Sequential"

    def __init__(self):
        self.retired: set[int] = set()
        self.current: Optional[int] = None

    def reset(self) -> None:
        self.retired = set()
        self.current = None

    def decide(self, obs: Observation) -> int:
        if (
            self.current is not None
            and obs.sigma[self.current] <= DEATH_ATOL
        ):
            self.retired.add(self.current)
        candidates = [
            i for i in _alive_indices(obs) if i not in self.retired
        ]
        if not candidates:
            raise AllDead("every battery has been drained")
        self.current = candidates[0]
        return self.current


BUILTIN_KINDS = ("Vmax", "Vmin", "Tmax", "Tmin", "Sequential")


def make_policy(kind: str) -> Policy:
    if kind == "Sequential":
        return SequentialPolicy()
    return BuiltinPolicy(kind)


@dataclass(frozen=True)
class TraceRow:
    time: float
    battery: int
    load: float
    sigma: tuple[float, ...]
    gamma: tuple[float, ...]


@dataclass
class RolloutResult:
    lifetime: float
    switches: int
    trace: list[TraceRow] = field(default_factory=list)
    completed: bool = False  # finite profile fully serviced

    def write_trace_csv(self, path) -> None:
        n = len(self.trace[0].sigma) if self.trace else 0
        with open(path, "w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["time", "active_battery", "load"]
                + [f"sigma_{i + 1}" for i in range(n)]
                + [f"gamma_{i + 1}" for i in range(n)]
            )
            for row in self.trace:
                writer.writerow(
                    [repr(row.time), row.battery + 1, repr(row.load)]
                    + [repr(s) for s in row.sigma]
                    + [repr(g) for g in row.gamma]
                )


def _observe(states, params_list, active, load, rest) -> Observation:
    return Observation(
        sigma=tuple(
            available_charge(s, p) for s, p in zip(states, params_list)
        ),
        gamma=tuple(s.gamma for s in states),
        active=active,
        load=load,
        rest=tuple(rest),
    )


def rollout(
    policy: Policy,
    profile,
    params_list,
    decision_period: float = DEFAULT_DECISION_PERIOD,
    horizon: float | None = None,
    seed: int | None = None,
    record_trace: bool = True,
) -> RolloutResult:
    """Simulate a policy until system death or the end of the profile.

    `profile` may be a LoadProfile or a StochasticLoadModel; a model is
    sampled first (seed overrides the model's own), which requires a
    horizon. Repeating profiles run until death; finite profiles end at
    their end if the system survives.
    """
    if decision_period <= 0:
        raise ValueError("decision_period must be positive")
    if isinstance(profile, StochasticLoadModel):
        if horizon is None:
            raise ValueError("sampling a load model needs a horizon")
        model = profile if seed is None else profile.with_seed(seed)
        profile = sample_profile(model, horizon)

    params_list = list(params_list)
    n = len(params_list)
    states = [fresh_state(p) for p in params_list]
    rest = [0.0] * n
    t = 0.0
    active: Optional[int] = None
    last_choice: Optional[int] = None
    switches = 0
    result = RolloutResult(lifetime=0.0, switches=0)
    policy.reset()

    if profile.repeat:
        end = horizon  # None means run to death
    else:
        end = profile.total_duration if horizon is None else min(
            horizon, profile.total_duration
        )

    while True:
        if end is not None and t >= end - TIME_SLOP:
            result.lifetime = end
            result.completed = True
            break
        load = profile.current_at(t)
        # next decision point: grid tick, load change, or the end
        tick = (math.floor(t / decision_period + 1e-9) + 1) * decision_period
        until = profile.next_change_after(t)
        step_end = min(tick, until) if end is None else min(tick, until, end)

        if load > 0:
            if not any(
                life_margin(s, p) > DEATH_ATOL
                for s, p in zip(states, params_list)
            ):
                result.lifetime = t
                break
            obs = _observe(states, params_list, active, load, rest)
            try:
                choice = policy.decide(obs)
            except AllDead:
                result.lifetime = t
                break
            if last_choice is not None and choice != last_choice:
                switches += 1
            last_choice = choice
            active = choice
            if record_trace:
                result.trace.append(
                    TraceRow(t, choice, load, obs.sigma, obs.gamma)
                )
            dt = step_end - t
            chosen, p = states[choice], params_list[choice]
            if not survives(chosen, p, load, dt):
                died = t + time_to_death(chosen, p, load)
                dt = died - t
                step_end = died  # re-decide exactly at the death instant
            for idx, pp in enumerate(params_list):
                i = load if idx == choice else 0.0
                d, g = _delta_gamma_after(states[idx], pp, i, dt)
                states[idx] = BatteryState(delta=d, gamma=g)
                rest[idx] = 0.0 if idx == choice else rest[idx] + dt
        else:
            # no decisions during idle: jump to the next load change
            active = None
            step_end = until if end is None else min(until, end)
            dt = step_end - t
            for idx, pp in enumerate(params_list):
                d, g = _delta_gamma_after(states[idx], pp, 0.0, dt)
                states[idx] = BatteryState(delta=d, gamma=g)
                rest[idx] += dt
        t = step_end

    result.switches = switches
    return result


def upper_bound(profile: LoadProfile, params_list) -> float:
    """Best achievable lifetime: the single-equivalent closed form.

    Raises MixedKinetics when batteries differ in c or k'. A Vmax
    rollout at a small decision period approaches this from below; see
    rollout() for the finite-frequency comparison.
    """
    return single_equivalent_lifetime(params_list, profile)
