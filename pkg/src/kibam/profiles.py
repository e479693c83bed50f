"""Piecewise-constant load demands.

Two families of profiles drive everything else in this package: the eight
deterministic benchmarks (continuous and intermittent loads at 250 mA and
500 mA, plus alternating variants) and seeded stochastic profiles drawn
from triangular amplitude and duration distributions.

A profile is an ordered list of (duration, current) segments, optionally
cycled forever. Lookup is right-continuous: at a boundary the new
segment's current applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import KibamError


class UnknownBenchmark(KibamError):
    """make_benchmark was given a name outside the benchmark set."""


class BeyondHorizon(KibamError):
    """A time lookup past the end of a finite profile."""


@dataclass(frozen=True)
class LoadProfile:
    """Piecewise-constant demand.

    Attributes
    ----------
    segments : tuple of (duration, current)
        Durations in minutes (strictly positive), currents in amperes
        (nonnegative).
    repeat : bool
        If true the segment list cycles indefinitely.
    """

    segments: tuple[tuple[float, float], ...]
    repeat: bool = False

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("profile needs at least one segment")
        norm = []
        for duration, current in self.segments:
            if duration <= 0:
                raise ValueError(f"segment duration must be positive, got {duration}")
            if current < 0:
                raise ValueError(f"segment current must be nonnegative, got {current}")
            norm.append((float(duration), float(current)))
        object.__setattr__(self, "segments", tuple(norm))

    @property
    def period(self) -> float:
        """Sum of segment durations: cycle length if repeating, else total."""
        return math.fsum(d for d, _ in self.segments)

    @property
    def total_duration(self) -> float:
        """Total playable time: math.inf for repeating profiles."""
        return math.inf if self.repeat else self.period

    def peak_current(self) -> float:
        return max(i for _, i in self.segments)

    def boundaries(self) -> tuple[float, ...]:
        """Cumulative segment start offsets within one cycle, plus the end."""
        out = [0.0]
        for duration, _ in self.segments:
            out.append(out[-1] + duration)
        return tuple(out)

    def iter_segments(self) -> Iterator[tuple[float, float, float]]:
        """Yield (start, duration, current); endless when repeating."""
        t = 0.0
        while True:
            for duration, current in self.segments:
                yield t, duration, current
                t += duration
            if not self.repeat:
                return

    def _locate(self, t: float) -> int:
        if t < 0:
            raise ValueError(f"t must be nonnegative, got {t}")
        period = self.period
        if self.repeat:
            t = t - math.floor(t / period) * period
            # Guard the wrap: floor division can land exactly on period.
            if t >= period:
                t -= period
        elif t >= period:
            raise BeyondHorizon(f"t={t} is past the profile end {period}")
        acc = 0.0
        for idx, (duration, _) in enumerate(self.segments):
            acc += duration
            if t < acc:
                return idx
        return len(self.segments) - 1

    def current_at(self, t: float) -> float:
        """Demand at time t, right-continuous at boundaries."""
        return self.segments[self._locate(t)][1]

    def next_change_after(self, t: float) -> float:
        """First segment boundary strictly after t (profile end included)."""
        if t < 0:
            raise ValueError(f"t must be nonnegative, got {t}")
        period = self.period
        if not self.repeat:
            if t >= period:
                raise BeyondHorizon(f"t={t} is past the profile end {period}")
            offset, base = t, 0.0
        else:
            cycle = math.floor(t / period)
            offset = t - cycle * period
            if offset >= period:
                cycle += 1
                offset -= period
            base = cycle * period
        for b in self.boundaries():
            if b > offset + 1e-12:
                return base + b
        return base + period  # unreachable for offset < period, kept for safety


def render_profile(profile: LoadProfile) -> str:
    lines = [f"#repeat={'true' if profile.repeat else 'false'}"]
    lines += [f"{duration!r},{current!r}" for duration, current in profile.segments]
    return "\n".join(lines) + "\n"


def parse_profile(text: str) -> LoadProfile:
    repeat = False
    segments = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key.strip() == "repeat":
                repeat = value.strip().lower() == "true"
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'duration,current', got {raw!r}")
        segments.append((float(parts[0]), float(parts[1])))
    return LoadProfile(segments=tuple(segments), repeat=repeat)


def write_profile(profile: LoadProfile, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(render_profile(profile))


def read_profile(path) -> LoadProfile:
    with open(path, "r", encoding="ascii") as fh:
        return parse_profile(fh.read())


# ---- Deterministic benchmarks ----

_JOB = 1.0  # benchmark job length in minutes

_BENCHMARKS = {
    # Continuous loads.
    "CL_250": [(_JOB, 0.25)],
    "CL_500": [(_JOB, 0.5)],
    "CL_alt": [(_JOB, 0.25), (_JOB, 0.5)],
    # Intermittent, short (1 min) idle between jobs.
    "ILs_250": [(_JOB, 0.25), (1.0, 0.0)],
    "ILs_500": [(_JOB, 0.5), (1.0, 0.0)],
    "ILs_alt": [(_JOB, 0.5), (1.0, 0.0), (_JOB, 0.25), (1.0, 0.0)],
    # Intermittent, long (2 min) idle between jobs.
    "ILl_250": [(_JOB, 0.25), (2.0, 0.0)],
    "ILl_500": [(_JOB, 0.5), (2.0, 0.0)],
}


def benchmark_names() -> tuple[str, ...]:
    return tuple(_BENCHMARKS)


def make_benchmark(name: str) -> LoadProfile:
    """One of the eight deterministic benchmark profiles, repeating."""
    try:
        segments = _BENCHMARKS[name]
    except KeyError:
        raise UnknownBenchmark(
            f"unknown benchmark {name!r}; choose from {', '.join(_BENCHMARKS)}"
        ) from None
    return LoadProfile(segments=tuple(segments), repeat=True)


# ---- Stochastic profiles ----


@dataclass(frozen=True)
class Triangular:
    """Triangular distribution on [low, high] with the given mode.

    A point mass (low == high) is allowed so degenerate models can
    reproduce the deterministic benchmarks.
    """

    low: float
    mode: float
    high: float

    def __post_init__(self) -> None:
        if not self.low <= self.mode <= self.high:
            raise ValueError(
                f"need low <= mode <= high, got {self.low}, {self.mode}, {self.high}"
            )

    def sample(self, rng: np.random.Generator) -> float:
        if self.high - self.low < 1e-15:
            return self.low
        return float(rng.triangular(self.low, self.mode, self.high))

    def mean(self) -> float:
        return (self.low + self.mode + self.high) / 3.0


@dataclass(frozen=True)
class StochasticLoadModel:
    """Seeded generator of alternating load/idle demand.

    Each period draws, in order: a uniform variate deciding load vs idle
    against load_prob, a duration, and (for load periods) an amplitude.
    The draw order is part of the format: golden profiles depend on it.
    """

    amplitude_dist: Triangular
    duration_dist: Triangular
    load_prob: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.load_prob <= 1.0:
            raise ValueError(f"load_prob must lie in [0, 1], got {self.load_prob}")

    def with_seed(self, seed: int) -> "StochasticLoadModel":
        return StochasticLoadModel(
            amplitude_dist=self.amplitude_dist,
            duration_dist=self.duration_dist,
            load_prob=self.load_prob,
            seed=seed,
        )


AMPLITUDE_RANGE = (0.1, 0.75)  # amperes
DURATION_RANGE = (0.1, 5.0)  # minutes


def default_stochastic_model(seed: int = 0) -> StochasticLoadModel:
    """Symmetric amplitude around 0.425 A, short-skewed durations."""
    return StochasticLoadModel(
        amplitude_dist=Triangular(AMPLITUDE_RANGE[0], 0.425, AMPLITUDE_RANGE[1]),
        duration_dist=Triangular(DURATION_RANGE[0], 0.5, DURATION_RANGE[1]),
        load_prob=0.5,
        seed=seed,
    )


def named_amplitude_model(name: str, seed: int = 0) -> StochasticLoadModel:
    """Amplitude-shifted variants R100/R250/R500/R750.

    The named milliamp value becomes the amplitude mode, clamped into the
    supported range.
    """
    targets = {"R100": 0.1, "R250": 0.25, "R500": 0.5, "R750": 0.75}
    try:
        mode = targets[name]
    except KeyError:
        raise UnknownBenchmark(
            f"unknown model {name!r}; choose from {', '.join(targets)}"
        ) from None
    lo, hi = AMPLITUDE_RANGE
    base = default_stochastic_model(seed)
    return StochasticLoadModel(
        amplitude_dist=Triangular(lo, min(max(mode, lo), hi), hi),
        duration_dist=base.duration_dist,
        load_prob=base.load_prob,
        seed=seed,
    )


def sample_profile(model: StochasticLoadModel, horizon: float) -> LoadProfile:
    """Draw one finite profile covering exactly the horizon.

    Deterministic in (model, horizon): the generator is rebuilt from the
    model seed on every call.

    Parameters
    ----------
    model : StochasticLoadModel
    horizon : float
        Target length in minutes, > 0. The last period is truncated so the
        total duration equals the horizon.
    """
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(model.seed)))
    segments = []
    total = 0.0
    while total < horizon:
        is_load = bool(rng.random() < model.load_prob)
        duration = model.duration_dist.sample(rng)
        current = model.amplitude_dist.sample(rng) if is_load else 0.0
        duration = min(duration, horizon - total)
        segments.append((duration, current))
        total += duration
    return LoadProfile(segments=tuple(segments), repeat=False)


def quantize_profile(profile: LoadProfile, tick: float) -> LoadProfile:
    """Snap segment durations onto a tick grid (at least one tick each).

    Planning over a profile requires load changes to be reachable by sums
    of plan durations, so pipelines snap sampled profiles to the finest
    plan duration before solving them.
    """
    if tick <= 0:
        raise ValueError(f"tick must be positive, got {tick}")
    segments = []
    for duration, current in profile.segments:
        snapped = max(round(duration / tick), 1) * tick
        segments.append((snapped, current))
    return LoadProfile(segments=tuple(segments), repeat=profile.repeat)
