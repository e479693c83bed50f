"""State-of-charge estimation from terminal voltage and current.

The estimation chain recovers the two-well state of a battery that has
only ever been observed through its terminals: a rolling average of the
loaded voltage is compensated for internal resistance, inverted through
the quadratic voltage curve to the consumed fraction X, and combined
with coulomb counting Q to recover the apparent capacity Q/X. A Newton
iteration then finds the nominal discharge duration with exactly that
capacity, which pins down the equivalent constant-current history and
with it the well imbalance delta. Everything downstream of a voltage
reading can fail on noisy data, so each step reports failure through a
fallback flag rather than an exception once enough samples exist.

Units here are hours, amperes and ampere-hours (the simulation modules
use minutes and ampere-minutes; the scales meet only in the CLI, which
converts explicitly). Load profiles passed to functions in this module
are therefore read with durations in hours.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .battery import BatteryParams, BatteryState, advance, fresh_state
from .errors import KibamError
from .profiles import LoadProfile

DEFAULT_R_INT = 0.34  # ohms, measured on the reference pack
DEFAULT_WINDOW = 65  # rolling-average length, in samples
KNEE_X = 0.98  # consumed fraction past which estimates lose the curve


class NonpositiveT(KibamError):
    pass


class FitDiverged(KibamError):
    pass


class XAtPole(KibamError):
    pass


class NegativeDiscriminant(KibamError):
    """The voltage quadratic has no real root: readings inconsistent."""


class NoConvergence(KibamError):
    pass


class InsufficientSamples(KibamError):
    pass


@dataclass(frozen=True)
class CapacityParams:
    """Capacity-model constants in hour units.

    rate_k is the well-exchange rate per hour; the scaled rate
    k' = k / (c(1-c)) is derived, never stored, so the two can never
    drift apart.
    """

    capacity_C: float  # ampere-hours
    rate_k: float  # per hour
    fraction_c: float

    def __post_init__(self) -> None:
        if self.capacity_C <= 0:
            raise ValueError(f"capacity must be positive, got {self.capacity_C}")
        if self.rate_k <= 0:
            raise ValueError(f"rate must be positive, got {self.rate_k}")
        if not 0 < self.fraction_c < 1:
            raise ValueError(f"fraction must be in (0,1), got {self.fraction_c}")

    @property
    def k_prime(self) -> float:
        return self.rate_k / (self.fraction_c * (1.0 - self.fraction_c))

    @classmethod
    def from_k_prime(cls, capacity_C: float, k_prime: float, fraction_c: float):
        return cls(
            capacity_C=capacity_C,
            rate_k=k_prime * fraction_c * (1.0 - fraction_c),
            fraction_c=fraction_c,
        )

    @classmethod
    def lead_acid_6v(cls) -> "CapacityParams":
        """Constants fitted to the 6 V 1.2 Ah gel pack measurements."""
        return cls(capacity_C=1.372, rate_k=0.1967, fraction_c=0.387)

    def battery_params(self) -> BatteryParams:
        """The same battery for the well-model functions (hour units)."""
        return BatteryParams(
            capacity_C=self.capacity_C,
            fraction_c=self.fraction_c,
            rate_k_prime=self.k_prime,
        )


@dataclass(frozen=True)
class VoltageParams:
    """Loaded-voltage curve V(X) = v_emf + A X + B X/(D - X)."""

    v_emf: float = 6.5
    slope_A: float = -0.194
    knee_B: float = -2.22e-3
    pole_D: float = 1.05

    def __post_init__(self) -> None:
        if self.pole_D <= 1.0:
            raise ValueError(f"pole must sit above X=1, got {self.pole_D}")
        if self.slope_A == 0:
            raise ValueError("linear slope cannot be zero")


@dataclass(frozen=True)
class SensorSample:
    """One reading: loaded terminal voltage and drawn current at time t."""

    t: float  # hours
    voltage: float  # volts, under load
    current: float  # amperes


def qmax(cp: CapacityParams, T: float) -> float:
    """Extractable charge when draining continuously for T hours.

    Monotone in T between the instantly-reachable c*C and the full C.
    The matching nominal current is qmax(T)/T.
    """
    if T <= 0:
        raise NonpositiveT(f"drain duration must be positive, got {T}")
    c = cp.fraction_c
    x = cp.k_prime * T
    shed = -math.expm1(-x)  # 1 - e^-x without cancellation
    denom = shed + c * (x - shed)
    return cp.capacity_C * cp.k_prime * c * T / denom


def drain_time(cp: CapacityParams, current: float) -> float:
    """Hours to drain a fresh battery at a constant current."""
    if current <= 0:
        raise ValueError(f"current must be positive, got {current}")
    # qmax(T)/T falls from +inf to 0, so the bracket below always works
    hi = cp.capacity_C / current + 1.0
    return optimize.brentq(
        lambda T: qmax(cp, T) - current * T, 1e-9, hi, xtol=1e-12
    )


def fit_residual(cp: CapacityParams, records) -> float:
    """Sum of squared capacity mismatches for drain records (I, T)."""
    return sum((i * t - qmax(cp, t)) ** 2 for i, t in records)


def fit_capacity(records, rel_rms_threshold: float = 0.05) -> CapacityParams:
    """Fit (C, k', c) to drain records (current, hours-to-dead).

    Derivative-free simplex descent from C = 1.2 * max extracted
    charge, k' = 1.0, c = 0.3. Diverges loudly instead of returning a
    bad fit: parameters out of range or relative RMS residual above
    the threshold raise FitDiverged.
    """
    records = [(float(i), float(t)) for i, t in records]
    if len(records) < 3 or len({i for i, _ in records}) < 3:
        raise ValueError("need at least 3 records at distinct currents")
    charges = [i * t for i, t in records]

    def objective(theta):
        C, kp, c = theta
        if C <= 0 or kp <= 0 or not 0.001 < c < 0.999:
            return 1e12
        cp = CapacityParams.from_k_prime(C, kp, c)
        return fit_residual(cp, records)

    start = np.array([max(charges) * 1.2, 1.0, 0.3])
    result = optimize.minimize(
        objective,
        start,
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 5000},
    )
    C, kp, c = result.x
    if C <= 0 or kp <= 0 or not 0.001 < c < 0.999:
        raise FitDiverged(f"fit left the admissible region: {result.x}")
    rel_rms = math.sqrt(result.fun / len(records)) / (
        sum(charges) / len(charges)
    )
    if rel_rms > rel_rms_threshold:
        raise FitDiverged(
            f"relative rms residual {rel_rms:.4f} exceeds {rel_rms_threshold}"
        )
    return CapacityParams.from_k_prime(C, kp, c)


def voltage_of(vp: VoltageParams, x: float) -> float:
    """Unloaded terminal voltage at consumed fraction x."""
    if x < 0:
        raise ValueError(f"consumed fraction cannot be negative, got {x}")
    if x >= vp.pole_D:
        raise XAtPole(f"x={x} at or past the pole {vp.pole_D}")
    return vp.v_emf + vp.slope_A * x + vp.knee_B * x / (vp.pole_D - x)


def invert_voltage(vp: VoltageParams, v_adj: float) -> float:
    """Consumed fraction from a voltage drop v_adj = V_obs - v_emf.

    Takes the smaller quadratic root, the one that stays at or below 1;
    a negative discriminant means the reading is off the curve.
    """
    f = (vp.knee_B + vp.slope_A * vp.pole_D + v_adj) / (2.0 * vp.slope_A)
    disc = f * f - vp.pole_D * v_adj / vp.slope_A
    if disc < 0:
        raise NegativeDiscriminant(
            f"voltage drop {v_adj} is outside the model curve"
        )
    return f - math.sqrt(disc)


def solve_t_nom(
    cp: CapacityParams,
    x: float,
    q: float,
    start: float = 4.0,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> float:
    """Nominal full-drain duration whose capacity equals q/x.

    Newton iteration on
        (1 - c) + (c - 1) e^(-k'T) + c k' (1 - C x / q) T = 0,
    which is qmax(T) = q/x cleared of its denominator. The linear
    coefficient vanishes when q/x reaches the full capacity C; past
    that there is no positive root and the iteration reports failure.
    """
    if q <= 0:
        raise ValueError(f"consumed charge must be positive, got {q}")
    if not 0 < x <= 1:
        raise ValueError(f"consumed fraction must be in (0,1], got {x}")
    c, kp = cp.fraction_c, cp.k_prime
    a = c * kp * (1.0 - cp.capacity_C * x / q)
    t = start
    for _ in range(max_iter):
        e = math.exp(-kp * t)
        value = (1.0 - c) + (c - 1.0) * e + a * t
        slope = (1.0 - c) * kp * e + a
        if slope == 0.0:
            break
        step = value / slope
        t -= step
        if t <= 0:
            raise NoConvergence(f"iteration left the positive axis at {t}")
        if abs(step) <= tol:
            if t <= 1e-8:
                raise NoConvergence("only the trivial root T=0 exists")
            return t
    raise NoConvergence(f"no root within {max_iter} iterations from {start}")


@dataclass(frozen=True)
class StateEstimate:
    """Recovered two-well state, with honesty flags.

    fallback is set when any estimation step failed or produced an
    impossible state; low_confidence when the consumed fraction sits
    past the knee where the voltage curve no longer pins X.
    """

    gamma: float  # ampere-hours remaining in total
    delta: float  # well imbalance, ampere-hours
    available: float  # immediately extractable, ampere-hours
    fallback: bool
    low_confidence: bool = False
    x: float = float("nan")  # consumed fraction, when recoverable
    q: float = 0.0  # coulomb count, ampere-hours


def _coulomb_count(samples: Sequence[SensorSample]) -> float:
    # trapezoidal current integral; hours x amperes = ampere-hours
    q = 0.0
    for a, b in zip(samples, samples[1:]):
        q += 0.5 * (a.current + b.current) * (b.t - a.t)
    return q


def estimate_state(
    samples: Sequence[SensorSample],
    cp: CapacityParams,
    vp: VoltageParams,
    r_int: float = DEFAULT_R_INT,
    window: int = DEFAULT_WINDOW,
) -> StateEstimate:
    """Estimate the battery state from all samples since it was loaded."""
    if len(samples) < window:
        raise InsufficientSamples(
            f"need {window} samples, have {len(samples)}"
        )
    for a, b in zip(samples, samples[1:]):
        if b.t < a.t:
            raise ValueError("samples must be time-ordered")
    q = _coulomb_count(samples)
    c, kp, cap = cp.fraction_c, cp.k_prime, cp.capacity_C
    if q <= 1e-12:
        # never meaningfully loaded: fresh by definition
        return StateEstimate(
            gamma=cap, delta=0.0, available=c * cap, fallback=False, x=0.0
        )
    v_bar = math.fsum(s.voltage for s in samples[-window:]) / window
    v_obs = v_bar + r_int * samples[-1].current
    gamma = cap - q

    def fallback_estimate() -> StateEstimate:
        # voltage chain broke: report the coulomb-only optimistic view
        return StateEstimate(
            gamma=gamma,
            delta=0.0,
            available=c * gamma,
            fallback=True,
            q=q,
        )

    try:
        x = invert_voltage(vp, v_obs - vp.v_emf)
    except NegativeDiscriminant:
        return fallback_estimate()
    if x <= 1e-9:
        return StateEstimate(
            gamma=gamma, delta=0.0, available=c * gamma, fallback=False,
            x=x, q=q,
        )
    low_confidence = x > KNEE_X
    x_chain = min(x, 1.0)  # noise can push the root past full-consumed
    try:
        t_nom = solve_t_nom(cp, x_chain, q)
    except NoConvergence:
        return fallback_estimate()
    i_nom = (q / x_chain) / t_nom
    # the equivalent constant-current history has run x of its nominal
    # duration to reach this depth of discharge
    elapsed = x_chain * t_nom
    delta = i_nom * -math.expm1(-kp * elapsed) / (c * kp)
    available = c * (gamma - (1.0 - c) * delta)
    return StateEstimate(
        gamma=gamma,
        delta=delta,
        available=available,
        fallback=available < 0,
        low_confidence=low_confidence,
        x=x,
        q=q,
    )


def ground_truth_state(
    cp: CapacityParams, profile: LoadProfile, t: float
) -> BatteryState:
    """Exact well state after playing the profile (hours) up to t."""
    params = cp.battery_params()
    state = fresh_state(params)
    cursor = 0.0
    end = min(t, profile.total_duration)
    while cursor < end - 1e-12:
        upto = min(end, profile.next_change_after(cursor))
        state = advance(
            state, params, profile.current_at(cursor), upto - cursor
        )
        cursor = upto
    return state


def simulate_sensor_trace(
    cp: CapacityParams,
    vp: VoltageParams,
    r_int: float,
    profile: LoadProfile,
    noise_sigma: float = 0.0,
    sample_period: float = 0.5,
    seed: Optional[int] = None,
) -> list[SensorSample]:
    """Synthesized sensor readings for a discharge profile (hours).

    Consumed charge maps to the fraction of the capacity at the current
    draw rate, then through the voltage curve, minus the resistive sag,
    plus seeded Gaussian noise. During rests the fraction holds (the
    terminal voltage of an unloaded battery moves far slower than any
    window we average over).
    """
    if sample_period <= 0:
        raise ValueError(f"sample period must be positive, got {sample_period}")
    if math.isinf(profile.total_duration):
        raise ValueError("need a finite profile")
    rng = np.random.default_rng(seed)
    end = profile.total_duration
    capacity_at: dict[float, float] = {}
    samples: list[SensorSample] = []
    q = 0.0
    x = 0.0
    t = 0.0
    k = 0
    while t < end - 1e-12:
        if samples:
            q += _integrate_current(profile, samples[-1].t, t)
        current = profile.current_at(t)
        if current > 0:
            if current not in capacity_at:
                capacity_at[current] = current * drain_time(cp, current)
            x = min(q / capacity_at[current], vp.pole_D - 1e-6)
        noise = rng.normal(0.0, noise_sigma) if noise_sigma > 0 else 0.0
        e_obs = voltage_of(vp, x) - r_int * current + noise
        samples.append(SensorSample(t=t, voltage=e_obs, current=current))
        k += 1
        # single rounding from the exact tick time in seconds, so the
        # CSV roundtrip through seconds stays bit-exact
        t = (k * sample_period) / 3600.0
    return samples


def _integrate_current(profile: LoadProfile, t0: float, t1: float) -> float:
    q = 0.0
    cursor = t0
    while cursor < t1 - 1e-15:
        upto = min(t1, profile.next_change_after(cursor))
        q += profile.current_at(cursor) * (upto - cursor)
        cursor = upto
    return q


# ---- trace files ----


def _seconds_for(hours: float) -> float:
    # the nearest product can divide back one ulp off; nudge until the
    # reader's division recovers the stored hour value exactly (always
    # possible when the hours came from a seconds clock)
    w = hours * 3600.0
    if w / 3600.0 == hours:
        return w
    for candidate in (math.nextafter(w, math.inf), math.nextafter(w, -math.inf)):
        if candidate / 3600.0 == hours:
            return candidate
    return w


def write_sensor_csv(samples: Sequence[SensorSample], path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds", "E_obs_volts", "I_obs_amperes"])
        for s in samples:
            writer.writerow(
                [repr(_seconds_for(s.t)), repr(s.voltage), repr(s.current)]
            )


def read_sensor_csv(path) -> list[SensorSample]:
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t_seconds", "E_obs_volts", "I_obs_amperes"]:
            raise ValueError(f"unrecognized sensor trace header: {header}")
        return [
            SensorSample(t=float(t) / 3600.0, voltage=float(v), current=float(i))
            for t, v, i in reader
        ]


def write_estimates_csv(rows, path) -> None:
    """Rows of (t_hours, StateEstimate) to the estimate log format."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "gamma", "delta", "available", "fallback"])
        for t, est in rows:
            writer.writerow(
                [
                    repr(t),
                    repr(est.gamma),
                    repr(est.delta),
                    repr(est.available),
                    int(est.fallback),
                ]
            )
