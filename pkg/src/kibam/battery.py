"""Exact analytic kinetic battery dynamics for a single battery.

The kinetic battery model splits the total charge ``gamma`` into an
available well (width ``c``) and a bound well (width ``1 - c``) connected
by a valve. Charge flows between the wells at a rate proportional to the
difference ``delta`` between their surface heights. Working in the
``(delta, gamma)`` coordinates, a constant discharge current ``i`` gives

    d(delta)/dt = i / c - k' * delta
    d(gamma)/dt = -i

which has the closed-form solution used throughout this module:

    delta(dt) = i / (c * k') + (delta0 - i / (c * k')) * exp(-k' * dt)
    gamma(dt) = gamma0 - i * dt

The battery is dead exactly when the available well empties, i.e. when
gamma = (1 - c) * delta. Rest (i = 0) lets delta decay toward zero, which
moves bound charge back into the available well: the recovery effect that
makes battery switching worthwhile.

Units are minutes, amperes and ampere-minutes throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import KibamError

# Absolute tolerance on the life margin gamma - (1-c)*delta. States within
# this band of zero count as sitting exactly on the dead boundary.
DEATH_ATOL = 1e-9

# time_to_death reports the first root to this absolute time tolerance.
TIME_ATOL = 1e-9


class NegativeDuration(KibamError):
    """A time step dt <= 0 was requested."""


class DiesWithinInterval(KibamError):
    """The battery would cross the dead boundary strictly inside the step."""

    def __init__(self, time_of_death: float):
        super().__init__(f"battery dies after {time_of_death:.9f} min, before the step ends")
        self.time_of_death = time_of_death


class AlreadyDead(KibamError):
    """An operation that requires a live battery was given a dead one."""


class MixedKinetics(KibamError):
    """Batteries with differing c or k' cannot form a single equivalent battery."""


@dataclass(frozen=True)
class BatteryParams:
    """Constants of one kinetic battery.

    Attributes
    ----------
    capacity_C : float
        Total charge of the full battery, ampere-minutes.
    fraction_c : float
        Fraction of the capacity held in the available well, in (0, 1).
    rate_k_prime : float
        Valve rate constant k' = k / (c * (1 - c)), per minute.
    """

    capacity_C: float
    fraction_c: float
    rate_k_prime: float

    def __post_init__(self) -> None:
        if self.capacity_C <= 0:
            raise ValueError(f"capacity_C must be positive, got {self.capacity_C}")
        if not 0 < self.fraction_c < 1:
            raise ValueError(f"fraction_c must lie in (0, 1), got {self.fraction_c}")
        if self.rate_k_prime <= 0:
            raise ValueError(f"rate_k_prime must be positive, got {self.rate_k_prime}")

    @property
    def conductance_k(self) -> float:
        """Valve conductance k = k' * c * (1 - c)."""
        return self.rate_k_prime * self.fraction_c * (1.0 - self.fraction_c)


@dataclass(frozen=True)
class BatteryState:
    """Dynamic state of one battery: height difference and total charge.

    Attributes
    ----------
    delta : float
        Scaled difference between the bound and available well heights,
        ampere-minutes. Zero for a rested battery.
    gamma : float
        Total remaining charge, ampere-minutes.
    """

    delta: float
    gamma: float

    def __post_init__(self) -> None:
        if self.delta < 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")


def fresh_state(params: BatteryParams) -> BatteryState:
    """Fully charged, fully rested battery: delta = 0, gamma = C."""
    return BatteryState(delta=0.0, gamma=params.capacity_C)


def available_charge(state: BatteryState, params: BatteryParams) -> float:
    """Charge in the available well, y1 = c * (gamma - (1 - c) * delta).

    Negative values can only describe states past the dead boundary.
    """
    c = params.fraction_c
    return c * (state.gamma - (1.0 - c) * state.delta)


def bound_charge(state: BatteryState, params: BatteryParams) -> float:
    """Charge in the bound well, computed from the well heights.

    Algebraically equal to gamma - available_charge; kept in the height
    form so the conservation property is a real cross-check.
    """
    c = params.fraction_c
    y1 = available_charge(state, params)
    return (1.0 - c) * (y1 / c + state.delta)

def life_margin(state: BatteryState, params: BatteryParams) -> float:
    """gamma - (1 - c) * delta. Positive iff the battery is alive."""
    return state.gamma - (1.0 - params.fraction_c) * state.delta


def is_alive(state: BatteryState, params: BatteryParams) -> bool:
    """True while the available well holds charge (strictly positive margin)."""
    return life_margin(state, params) > DEATH_ATOL


def _delta_gamma_after(
    state: BatteryState, params: BatteryParams, current: float, dt: float
) -> tuple[float, float]:
    # Closed form for constant current; no integration error.
    ck = params.fraction_c * params.rate_k_prime
    asymptote = current / ck
    decay = math.exp(-params.rate_k_prime * dt)
    delta = asymptote + (state.delta - asymptote) * decay
    gamma = state.gamma - current * dt
    return delta, gamma


def advance(
    state: BatteryState, params: BatteryParams, current: float, dt: float
) -> BatteryState:
    """Advance the state by dt minutes of constant discharge current.

    Parameters
    ----------
    state : BatteryState
        State at the start of the interval. Must be alive when current > 0.
    params : BatteryParams
    current : float
        Constant discharge current over the interval, amperes, >= 0.
    dt : float
        Interval length in minutes, > 0.

    Returns
    -------
    BatteryState
        Exact state at the end of the interval. An interval that ends
        exactly on the dead boundary is allowed; crossing the boundary
        strictly inside the interval raises instead of clamping.

    Raises
    ------
    NegativeDuration
        If dt <= 0.
    DiesWithinInterval
        If the battery dies strictly before the interval ends. Only
        possible for current > 0; a resting battery never loses margin.
    """
    if dt <= 0:
        raise NegativeDuration(f"dt must be positive, got {dt}")
    if current < 0:
        raise ValueError(f"current must be nonnegative, got {current}")
    delta, gamma = _delta_gamma_after(state, params, current, dt)
    if current > 0:
        margin = gamma - (1.0 - params.fraction_c) * delta
        if margin < -DEATH_ATOL:
            # The margin crosses zero exactly once under constant positive
            # current, so a negative end margin proves an interior death.
            raise DiesWithinInterval(time_to_death(state, params, current))
    return BatteryState(delta=delta, gamma=gamma)


def survives(
    state: BatteryState, params: BatteryParams, current: float, dt: float
) -> bool:
    """True if the battery stays alive through dt minutes at this current.

    Landing exactly on the dead boundary counts as surviving. This is the
    exception-free form of the advance death check for hot loops.
    """
    if current <= 0:
        return True
    delta, gamma = _delta_gamma_after(state, params, current, dt)
    return gamma - (1.0 - params.fraction_c) * delta >= -DEATH_ATOL


def time_to_death(
    state: BatteryState, params: BatteryParams, current: float
) -> float:
    """First time t* > 0 at which the battery dies under constant current.

    The life margin f(t) = gamma(t) - (1-c) * delta(t) is not globally
    monotone, because recovery can outpace a small drain while delta is
    large. The first sign change is therefore bracketed by a forward scan
    at step min(0.01, 1/k') / 4 and then refined by bisection to an
    absolute tolerance of 1e-9 minutes.

    Returns math.inf when the margin never reaches zero, which happens
    exactly for current = 0.

    Raises
    ------
    AlreadyDead
        If the battery is dead at entry.
    """
    if current < 0:
        raise ValueError(f"current must be nonnegative, got {current}")
    margin0 = life_margin(state, params)
    if margin0 <= DEATH_ATOL:
        raise AlreadyDead(f"life margin {margin0:.3e} at entry")
    if current == 0:
        return math.inf

    c, kp = params.fraction_c, params.rate_k_prime

    def margin(t: float) -> float:
        delta, gamma = _delta_gamma_after(state, params, current, t)
        return gamma - (1.0 - c) * delta

    # gamma alone hits zero at gamma0 / i, and delta stays positive under
    # load, so death happens no later than that.
    latest = state.gamma / current
    step = min(0.01, 1.0 / kp) / 4.0
    lo, hi = 0.0, step
    while margin(hi) > 0.0:
        lo = hi
        hi = min(hi + step, latest)
        if lo == hi:
            hi = latest * (1.0 + 1e-12) + TIME_ATOL
            break
    while hi - lo > TIME_ATOL:
        mid = 0.5 * (lo + hi)
        if margin(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def single_equivalent_lifetime(params_list: list[BatteryParams], profile) -> float:
    """Upper bound on system lifetime: one battery with the summed capacity.

    No switching schedule over n batteries can outlive a single battery
    whose capacity is the sum of the individual capacities, so this death
    time bounds every plan and policy, and doubles as the search horizon.

    Parameters
    ----------
    params_list : list of BatteryParams
        All batteries must share fraction_c and rate_k_prime.
    profile : LoadProfile
        Demand to service. For a finite profile that never kills the
        combined battery the total profile duration is returned; a
        repeating profile with no positive load returns math.inf.

    Raises
    ------
    MixedKinetics
        If the batteries disagree on c or k'.
    """
    if not params_list:
        raise ValueError("params_list must be nonempty")
    head = params_list[0]
    for p in params_list[1:]:
        if not (
            math.isclose(p.fraction_c, head.fraction_c, rel_tol=1e-9)
            and math.isclose(p.rate_k_prime, head.rate_k_prime, rel_tol=1e-9)
        ):
            raise MixedKinetics(
                "single equivalent battery undefined for differing c or k'"
            )
    combined = BatteryParams(
        capacity_C=sum(p.capacity_C for p in params_list),
        fraction_c=head.fraction_c,
        rate_k_prime=head.rate_k_prime,
    )

    if profile.repeat and profile.peak_current() == 0.0:
        return math.inf

    state = fresh_state(combined)
    t = 0.0
    for _, duration, current in profile.iter_segments():
        if current > 0:
            if life_margin(state, combined) <= DEATH_ATOL:
                return t
            if not survives(state, combined, current, duration):
                return t + time_to_death(state, combined, current)
        state = advance(state, combined, current, duration)
        t += duration
    return t
