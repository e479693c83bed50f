"""Kinetic battery model toolkit.

Simulation of multi-battery systems under switched load, a best-first
planner over variable time discretisations, analytic plan validation,
baseline and learned switching policies, and a state-of-charge estimation
pipeline for sensor-driven operation.
"""

from .battery import (
    AlreadyDead,
    BatteryParams,
    BatteryState,
    DiesWithinInterval,
    MixedKinetics,
    NegativeDuration,
    advance,
    available_charge,
    bound_charge,
    fresh_state,
    is_alive,
    single_equivalent_lifetime,
    time_to_death,
)
from .errors import KibamError
from .learner import (
    DecisionTree,
    TrainConfig,
    TrainingSet,
    cross_validate,
    extract_training,
    parse_tree,
    plan_based_policy,
    predict,
    read_tree,
    render_tree,
    train,
    write_tree,
)
from .planner import (
    DurationSet,
    Goal,
    Plan,
    PlanStep,
    SearchResult,
    parse_plan,
    read_plan,
    render_plan,
    search,
    write_plan,
)
from .policies import (
    Observation,
    Policy,
    RolloutResult,
    make_policy,
    rollout,
)
from .profiles import (
    BeyondHorizon,
    LoadProfile,
    StochasticLoadModel,
    Triangular,
    UnknownBenchmark,
    benchmark_names,
    default_stochastic_model,
    make_benchmark,
    parse_profile,
    quantize_profile,
    read_profile,
    render_profile,
    sample_profile,
    write_profile,
)
from .soc import (
    CapacityParams,
    SensorSample,
    StateEstimate,
    VoltageParams,
    drain_time,
    estimate_state,
    fit_capacity,
    ground_truth_state,
    invert_voltage,
    qmax,
    simulate_sensor_trace,
    solve_t_nom,
    voltage_of,
)
from .validator import (
    ValidationReport,
    plan_and_validate,
    validate,
)

__all__ = [
    "AlreadyDead",
    "BatteryParams",
    "BatteryState",
    "BeyondHorizon",
    "CapacityParams",
    "DecisionTree",
    "DiesWithinInterval",
    "DurationSet",
    "Goal",
    "KibamError",
    "LoadProfile",
    "MixedKinetics",
    "NegativeDuration",
    "Observation",
    "Plan",
    "PlanStep",
    "Policy",
    "RolloutResult",
    "SearchResult",
    "SensorSample",
    "StateEstimate",
    "StochasticLoadModel",
    "TrainConfig",
    "TrainingSet",
    "Triangular",
    "UnknownBenchmark",
    "ValidationReport",
    "VoltageParams",
    "advance",
    "available_charge",
    "benchmark_names",
    "bound_charge",
    "cross_validate",
    "default_stochastic_model",
    "drain_time",
    "estimate_state",
    "extract_training",
    "fit_capacity",
    "fresh_state",
    "ground_truth_state",
    "invert_voltage",
    "is_alive",
    "make_benchmark",
    "make_policy",
    "parse_plan",
    "parse_profile",
    "parse_tree",
    "plan_and_validate",
    "plan_based_policy",
    "predict",
    "qmax",
    "quantize_profile",
    "read_plan",
    "read_profile",
    "read_tree",
    "render_plan",
    "render_profile",
    "render_tree",
    "rollout",
    "sample_profile",
    "search",
    "simulate_sensor_trace",
    "single_equivalent_lifetime",
    "solve_t_nom",
    "time_to_death",
    "train",
    "validate",
    "voltage_of",
    "write_plan",
    "write_profile",
    "write_tree",
]

__version__ = "0.1.0"
