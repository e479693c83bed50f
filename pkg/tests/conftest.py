"""Shared fixtures and reference oracles.

The Euler integrator below is the independent check for the closed-form
battery dynamics: it knows only the differential equations, not their
solution, so agreement is evidence, not tautology.
"""

from kibam.battery import BatteryParams, BatteryState

# The two battery types used across the benchmark reproductions.
B1 = BatteryParams(capacity_C=5.5, fraction_c=0.166, rate_k_prime=0.122)
B2 = BatteryParams(capacity_C=11.0, fraction_c=0.166, rate_k_prime=0.122)

# Acceptance tests file their verdict here before their final assert, so
# the summary below shows a FAIL line even when the test itself errors out.
ACCEPTANCE_RESULTS: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    word = "PASS" if passed else "FAIL"
    ACCEPTANCE_RESULTS[number] = f"CRITERION {number}: {word} - {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])


def euler_advance(
    state: BatteryState,
    params: BatteryParams,
    current: float,
    dt: float,
    step: float = 1e-5,
) -> BatteryState:
    """Explicit Euler integration of the well equations at a fixed step."""
    delta, gamma = state.delta, state.gamma
    c, kp = params.fraction_c, params.rate_k_prime
    steps = int(round(dt / step))
    for _ in range(steps):
        delta += step * (current / c - kp * delta)
        gamma -= step * current
    remainder = dt - steps * step
    if remainder > 0:
        delta += remainder * (current / c - kp * delta)
        gamma -= remainder * current
    return BatteryState(delta=max(delta, 0.0), gamma=max(gamma, 0.0))


def euler_time_to_death(
    state: BatteryState,
    params: BatteryParams,
    current: float,
    step: float = 1e-6,
) -> float:
    """Brute-force first crossing of the dead boundary, step-accurate."""
    delta, gamma = state.delta, state.gamma
    c, kp = params.fraction_c, params.rate_k_prime
    t = 0.0
    while gamma - (1.0 - c) * delta > 0.0:
        delta += step * (current / c - kp * delta)
        gamma -= step * current
        t += step
    return t
