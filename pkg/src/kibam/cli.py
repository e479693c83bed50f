"""Command line front end for the battery scheduling pipeline.

Four subcommands: `plan` solves one load profile, `train` builds a
switching policy from sampled plans, `eval` rolls policies over profile
sets, and `reproduce` recomputes the reference tables side by side with
the published figures.

Every option can also come from a flat config file (`key = value`, `#`
comments) passed with --config; explicit flags win. All commands are
deterministic given their config and seeds, and every emitted file is
byte-identical across reruns. Exit codes: 0 success, 1 domain failure
(unsolvable, diverged, all dead), 2 usage or parse errors.

`KIBAM_THREADS` caps how many worker threads `eval` fans rollouts onto.
"""

import argparse
import csv
import math
import os
import statistics
import sys
import time
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

from .battery import BatteryParams, single_equivalent_lifetime
from .errors import KibamError
from .learner import (
    TrainConfig,
    cross_validate,
    extract_training,
    plan_based_policy,
    read_tree,
    train,
    write_tree,
)
from .planner import (
    DurationSet,
    Goal,
    Plan,
    SearchResult,
    Unsolvable,
    render_plan,
    search,
    write_plan,
)
from .policies import BUILTIN_KINDS, make_policy, rollout
from .profiles import (
    benchmark_names,
    default_stochastic_model,
    make_benchmark,
    named_amplitude_model,
    parse_profile,
    quantize_profile,
    sample_profile,
)
from .validator import RefinementExhausted, validate

PRESET_BATTERIES = {
    "B1": BatteryParams(capacity_C=5.5, fraction_c=0.166, rate_k_prime=0.122),
    "B2": BatteryParams(capacity_C=11.0, fraction_c=0.166, rate_k_prime=0.122),
}

# reference figures for the reproduce tables: the two-battery study
# (bounds, plan lifetime, visited states) and the eight-battery scale-up
REF_BOUNDS_2B1 = {
    "CL_250": 12.16, "CL_500": 4.59, "CL_alt": 7.03, "ILs_250": 44.79,
    "ILs_500": 10.82, "ILs_alt": 16.95, "ILl_250": 84.91, "ILl_500": 21.86,
}
REF_BOUNDS_2B2 = {
    "CL_250": 46.92, "CL_500": 12.16, "CL_alt": 21.26, "ILs_250": 132.8,
    "ILs_500": 44.79, "ILs_alt": 72.75, "ILl_250": 216.9, "ILl_500": 84.91,
}
REF_PLANS_2B1 = {
    "CL_250": (12.14, 194), "CL_500": (4.59, 116), "CL_alt": (7.03, 136),
    "ILs_250": (44.76, 552), "ILs_500": (10.8, 131), "ILs_alt": (16.92, 159),
    "ILl_250": (84.88, 488), "ILl_500": (21.85, 173),
}
REF_PLANS_2B2 = {
    "CL_250": (46.91, 691), "CL_500": (12.14, 194), "CL_alt": (21.2, 350),
    "ILs_250": (132.7, 1068), "ILs_500": (44.76, 552), "ILs_alt": (72.55, 599),
    "ILl_250": (216.8, 1123), "ILl_500": (84.88, 488),
}
REF_BOUNDS_8B2 = {
    "CL_250": 310.6, "CL_500": 134.7, "CL_alt": 192.8, "ILs_250": 660.7,
    "ILs_500": 308.7, "ILs_alt": 424.8, "ILl_250": 1008.9, "ILl_500": 480.9,
}
REF_PLANS_8B2 = {
    "CL_250": (307.6, 485), "CL_500": (133.4, 266), "CL_alt": (190.8, 355),
    "ILs_250": (654.1, 495), "ILs_500": (305.7, 293), "ILs_alt": (420.6, 357),
    "ILl_250": (998.8, 471), "ILl_500": (476.1, 295),
}

HELD_OUT_SEED_OFFSET = 10_000  # eval seeds live far from training seeds


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    """Validated settings shared by the subcommands. Flags win over the
    config file, the config file wins over these defaults."""

    batteries: str = "2xB1"
    benchmark: str | None = None
    profile: str | None = None
    durations: tuple[float, ...] | None = None  # None = planner default
    delta: float = 0.01  # decision and extraction period, minutes
    seed: int = 0
    plans: int = 50
    out: str | None = None
    horizon: float = 60.0  # sampling horizon for stochastic profiles
    model: str = "default"
    count: int = 20
    policy: str | None = None
    baseline: str | None = None
    baseline_delta: float | None = None
    deadend_limit: int = 3
    min_leaf: int = 2
    max_depth: int = 64

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise UsageError(f"delta must be positive, got {self.delta}")
        if self.plans < 0:
            raise UsageError(f"plans must be nonnegative, got {self.plans}")
        if self.count < 0:
            raise UsageError(f"count must be nonnegative, got {self.count}")
        if self.horizon <= 0:
            raise UsageError(f"horizon must be positive, got {self.horizon}")
        if self.deadend_limit < 1:
            raise UsageError(
                f"deadend-limit must be at least 1, got {self.deadend_limit}"
            )
        parse_batteries(self.batteries)  # fail early on bad specs


def parse_batteries(spec: str) -> list[BatteryParams]:
    """Battery fleet spec: <n>x<B1|B2|custom:C,c,kprime>."""
    count_text, sep, kind = spec.partition("x")
    if not sep or not count_text.isdigit() or int(count_text) < 1:
        raise UsageError(
            f"battery spec must look like 2xB1 or 3xcustom:5.5,0.166,0.122, got {spec!r}"
        )
    n = int(count_text)
    if kind in PRESET_BATTERIES:
        params = PRESET_BATTERIES[kind]
    elif kind.startswith("custom:"):
        parts = kind[len("custom:"):].split(",")
        if len(parts) != 3:
            raise UsageError(f"custom battery needs C,c,kprime, got {kind!r}")
        try:
            capacity, fraction, k_prime = (float(p) for p in parts)
        except ValueError:
            raise UsageError(f"custom battery needs three numbers, got {kind!r}")
        params = BatteryParams(capacity, fraction, k_prime)
    else:
        raise UsageError(
            f"unknown battery type {kind!r}; use B1, B2, or custom:C,c,kprime"
        )
    return [params] * n


def parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(
                    f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}"
                )
            values[key.strip()] = value.strip()
    return values


def _parse_duration_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError:
        raise UsageError(f"durations must be comma-separated numbers, got {text!r}")


_CASTS = {
    "batteries": str, "benchmark": str, "profile": str,
    "durations": _parse_duration_list, "delta": float, "seed": int,
    "plans": int, "out": str, "horizon": float, "model": str,
    "count": int, "policy": str, "baseline": str, "baseline_delta": float,
    "deadend_limit": int, "min_leaf": int, "max_depth": int,
}


def load_run_config(args: argparse.Namespace) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    for key in file_values:
        if key not in _CASTS:
            raise UsageError(f"unknown config key {key!r}")
    merged: dict[str, object] = {}
    for key, cast in _CASTS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key in file_values:
            merged[key] = cast(file_values[key])
    return RunConfig(**merged)


# ---- plan ----


def _search_validated(
    profile, params_list, durations, goal, horizon, deadend_limit, max_refinements=3
):
    """Like the validator pipeline, but keeps the search metrics."""
    durations = durations or DurationSet.default()
    last_failure = "no rounds ran"
    for round_no in range(max_refinements + 1):
        try:
            result = search(
                profile, params_list, durations=durations, horizon=horizon,
                goal=goal, deadend_limit=deadend_limit,
            )
        except KibamError as exc:
            last_failure = str(exc)
            durations = durations.refined()
            continue
        report = validate(result.plan, profile, params_list)
        if report.valid:
            return result, report, round_no
        first = report.violations[0]
        last_failure = f"{first.kind} at {first.time}"
        durations = durations.refined()
    raise RefinementExhausted(
        f"no valid plan within {max_refinements} refinements; "
        f"last failure: {last_failure}"
    )


def _profile_has_content(text: str) -> bool:
    return any(
        line.strip() and not line.strip().startswith("#")
        for line in text.splitlines()
    )


def cmd_plan(cfg: RunConfig) -> int:
    if (cfg.benchmark is None) == (cfg.profile is None):
        raise UsageError("plan needs exactly one of --benchmark or --profile")
    params = parse_batteries(cfg.batteries)
    if cfg.benchmark is not None:
        profile = make_benchmark(cfg.benchmark)
    else:
        with open(cfg.profile, "r", encoding="ascii") as fh:
            text = fh.read()
        if not _profile_has_content(text):
            # nothing to service: the wait plan is already optimal
            print("profile is empty; emitting the trivial wait plan")
            print("lifetime_minutes=inf visited_states=0 refinements=0")
            if cfg.out:
                write_plan(Plan(steps=()), cfg.out)
            return 0
        profile = parse_profile(text)

    durations = DurationSet(cfg.durations) if cfg.durations else None
    bound = single_equivalent_lifetime(params, profile)
    if math.isinf(profile.total_duration):
        goal, horizon = Goal.MAXIMIZE_LIFETIME, bound
        deadend_limit = cfg.deadend_limit
    else:
        # the bound equals the profile end exactly when the combined
        # capacity survives it, so anything less is provably hopeless
        if bound < profile.total_duration - 1e-9:
            raise Unsolvable(
                f"demand cannot be met: the combined capacity dies at "
                f"{bound:.4f} min, before the profile end at "
                f"{profile.total_duration:.4f}"
            )
        goal, horizon = Goal.FINISH_PROFILE, None
        deadend_limit = None

    t0 = time.perf_counter()
    result, report, rounds = _search_validated(
        profile, params, durations, goal, horizon, deadend_limit
    )
    wall = time.perf_counter() - t0

    print(
        f"lifetime_minutes={result.lifetime:.4f} "
        f"visited_states={result.visited} refinements={rounds}"
    )
    print(f"upper_bound_minutes={bound:.4f} efficiency={result.lifetime / bound:.4f}")
    print(f"wall_seconds={wall:.2f}", file=sys.stderr)
    if cfg.out:
        write_plan(result.plan, cfg.out)
    else:
        sys.stdout.write(render_plan(result.plan))
    return 0


# ---- train ----


def _training_model(cfg: RunConfig):
    if cfg.model == "default":
        return default_stochastic_model(cfg.seed)
    return named_amplitude_model(cfg.model, cfg.seed)


def _plan_one_profile(profile, params, durations, deadend_limit) -> SearchResult:
    bound = single_equivalent_lifetime(params, profile)
    horizon = min(bound, profile.total_duration)
    return search(
        profile, params, durations=durations or DurationSet.default(),
        horizon=horizon, goal=Goal.MAXIMIZE_LIFETIME, deadend_limit=deadend_limit,
    )


def cmd_train(cfg: RunConfig) -> int:
    if cfg.plans < 1:
        raise UsageError("train needs --plans >= 1")
    if cfg.plans < 10:
        print(
            f"warning: only {cfg.plans} training plan(s); "
            "expect a weak policy from so small a dataset",
            file=sys.stderr,
        )
    params = parse_batteries(cfg.batteries)
    durations = DurationSet(cfg.durations) if cfg.durations else None
    tick = (durations or DurationSet.default()).smallest
    model = _training_model(cfg)

    pairs = []
    for i in range(cfg.plans):
        profile = sample_profile(model.with_seed(cfg.seed + i), cfg.horizon)
        # load changes must land on the plan's duration grid
        profile = quantize_profile(profile, tick)
        result = _plan_one_profile(profile, params, durations, cfg.deadend_limit)
        pairs.append((result.plan, profile))

    dataset = extract_training(pairs, params, increment=cfg.delta)
    tree = train(
        dataset, TrainConfig(min_leaf=cfg.min_leaf, max_depth=cfg.max_depth)
    )
    accuracy = cross_validate(dataset, k=10)
    print(
        f"rows={len(dataset)} depth={tree.depth} nodes={tree.node_count} "
        f"cv_accuracy={accuracy:.4f}"
    )
    out = cfg.out or "policy.tree"
    write_tree(tree, out)
    print(f"policy written to {out}")
    return 0


# ---- eval ----


def _policy_factory(name: str, cfg: RunConfig, delta: float):
    """A fresh policy per rollout: policies carry rollout-local state."""
    if name in BUILTIN_KINDS:
        return lambda: make_policy(name)
    tree = read_tree(name)
    fraction = parse_batteries(cfg.batteries)[0].fraction_c
    return lambda: plan_based_policy(
        tree, decision_period=delta, fraction_c=fraction
    )


def _eval_workers(n_jobs: int) -> int:
    cap_text = os.environ.get("KIBAM_THREADS", "").strip()
    cap = int(cap_text) if cap_text else (os.cpu_count() or 1)
    if cap < 1:
        raise UsageError(f"KIBAM_THREADS must be a positive integer, got {cap_text!r}")
    return max(1, min(cap, 8, n_jobs))


def _run_rollouts(jobs, factory, params, delta, horizon):
    """jobs: list of (label, profile or model, seed or None). A sampled
    model needs the horizon; concrete profiles ignore it."""
    def one(job):
        label, prof, seed = job
        result = rollout(
            factory(), prof, params, decision_period=delta,
            horizon=None if seed is None else horizon,
            seed=seed, record_trace=False,
        )
        return label, result.lifetime, result.switches

    if not jobs:
        return []
    with ThreadPoolExecutor(max_workers=_eval_workers(len(jobs))) as pool:
        return list(pool.map(one, jobs))


def cmd_eval(cfg: RunConfig) -> int:
    if cfg.policy is None:
        raise UsageError("eval needs --policy (a builtin name or a tree file)")
    params = parse_batteries(cfg.batteries)

    jobs: list[tuple[str, object, int | None]] = []
    if cfg.profile is not None:
        for path in cfg.profile.split(","):
            with open(path, "r", encoding="ascii") as fh:
                jobs.append((os.path.basename(path), parse_profile(fh.read()), None))
    elif cfg.benchmark is not None:
        jobs.append((cfg.benchmark, make_benchmark(cfg.benchmark), None))
    else:
        model = _training_model(cfg)
        for i in range(cfg.count):
            seed = cfg.seed + HELD_OUT_SEED_OFFSET + i
            jobs.append((f"seed{seed}", model, seed))

    factory = _policy_factory(cfg.policy, cfg, cfg.delta)
    rows = _run_rollouts(jobs, factory, params, cfg.delta, cfg.horizon)

    out = cfg.out or "eval.csv"
    with open(out, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["profile", "lifetime_minutes", "switches"])
        for label, lifetime, switches in rows:
            writer.writerow([label, repr(lifetime), switches])
    print(f"results written to {out}")
    print(f"profiles={len(rows)}")
    if not rows:
        return 0

    lifetimes = [r[1] for r in rows]
    switch_counts = [r[2] for r in rows]
    mean_life = statistics.fmean(lifetimes)
    mean_sw = statistics.fmean(switch_counts)
    print(
        f"mean_lifetime={mean_life:.4f} sigma_lifetime={statistics.pstdev(lifetimes):.4f}"
    )
    print(
        f"mean_switches={mean_sw:.2f} sigma_switches={statistics.pstdev(switch_counts):.2f}"
    )

    if cfg.baseline is not None:
        base_delta = cfg.baseline_delta if cfg.baseline_delta is not None else cfg.delta
        base_factory = _policy_factory(cfg.baseline, cfg, base_delta)
        base_rows = _run_rollouts(jobs, base_factory, params, base_delta, cfg.horizon)
        base_life = statistics.fmean(r[1] for r in base_rows)
        base_sw = statistics.fmean(r[2] for r in base_rows)
        print(
            f"baseline_mean_lifetime={base_life:.4f} baseline_mean_switches={base_sw:.2f}"
        )
        print(
            f"efficiency_ratio={mean_life / base_life:.4f} "
            f"switch_ratio={mean_sw / base_sw:.4f}"
        )
    return 0


# ---- reproduce ----


def _print_bound_rows(names, params, ref_bounds, note_threshold=0.01):
    flagged = []
    print(f"{'profile':10s} {'ref_bound':>10s} {'computed':>10s} {'rel_err':>8s}")
    for name in names:
        bound = single_equivalent_lifetime(params, make_benchmark(name))
        ref = ref_bounds[name]
        err = (bound - ref) / ref
        mark = " *" if abs(err) > note_threshold else ""
        print(f"{name:10s} {ref:10.2f} {bound:10.4f} {err:+8.2%}{mark}")
        if mark:
            flagged.append((name, ref, bound))
    for name, ref, bound in flagged:
        print(
            f"  * {name}: computed bound {bound:.4f} differs from the "
            f"reference {ref} by more than 1%; the closed form does not "
            f"reproduce that cell"
        )
    return flagged


def _print_plan_rows(names, params, ref_plans, deadend_limit):
    print(
        f"{'profile':10s} {'ref_plan':>9s} {'ref_seen':>9s} "
        f"{'plan':>9s} {'seen':>6s} {'eff':>7s}"
    )
    for name in names:
        profile = make_benchmark(name)
        bound = single_equivalent_lifetime(params, profile)
        result, _, _ = _search_validated(
            profile, params, None, Goal.MAXIMIZE_LIFETIME, bound, deadend_limit
        )
        ref_life, ref_seen = ref_plans[name]
        print(
            f"{name:10s} {ref_life:9.2f} {ref_seen:9d} "
            f"{result.lifetime:9.4f} {result.visited:6d} "
            f"{result.lifetime / bound:7.2%}"
        )


def cmd_reproduce(cfg: RunConfig, table: str, bounds_only: bool, long_run: bool) -> int:
    names = benchmark_names()
    if table == "table1":
        for label, spec, ref_b, ref_p in (
            ("two batteries, type 1", "2xB1", REF_BOUNDS_2B1, REF_PLANS_2B1),
            ("two batteries, type 2", "2xB2", REF_BOUNDS_2B2, REF_PLANS_2B2),
        ):
            print(f"== upper bounds, {label} ==")
            _print_bound_rows(names, parse_batteries(spec), ref_b)
            if not bounds_only:
                print(f"== plans, {label} ==")
                _print_plan_rows(names, parse_batteries(spec), ref_p, cfg.deadend_limit)
        return 0
    if table == "table2":
        params = parse_batteries("8xB2")
        print("== upper bounds, eight batteries, type 2 ==")
        _print_bound_rows(names, params, REF_BOUNDS_8B2)
        if long_run and not bounds_only:
            print("== plans, eight batteries, type 2 (long run) ==")
            _print_plan_rows(names, params, REF_PLANS_8B2, cfg.deadend_limit)
        elif not bounds_only:
            print("(plans for eight batteries run long; pass --long to include them)")
        return 0
    if table == "table4-desk":
        return _reproduce_policy_study(cfg, long_run)
    raise UsageError(f"unknown table {table!r}")


def _reproduce_policy_study(cfg: RunConfig, long_run: bool) -> int:
    """Desk-scale policy study: learned policy against the high-frequency
    best-of-n baseline on held-out stochastic profiles.

    The published eight-battery study (R100..R750, 100 profiles each) is
    a long-running optional reproduction and not part of this command.
    """
    specs = ["2xB1"] + (["4xB1"] if long_run else [])
    for spec in specs:
        params = parse_batteries(spec)
        print(f"== policy study, {spec} ==")
        model = _training_model(cfg)
        pairs = []
        for i in range(cfg.plans):
            profile = sample_profile(model.with_seed(cfg.seed + i), cfg.horizon)
            profile = quantize_profile(profile, DurationSet.default().smallest)
            result = _plan_one_profile(profile, params, None, cfg.deadend_limit)
            pairs.append((result.plan, profile))
        dataset = extract_training(pairs, params, increment=cfg.delta)
        tree = train(
            dataset, TrainConfig(min_leaf=cfg.min_leaf, max_depth=cfg.max_depth)
        )
        print(f"trained on rows={len(dataset)} nodes={tree.node_count}")

        jobs = [
            (f"seed{cfg.seed + HELD_OUT_SEED_OFFSET + i}", model,
             cfg.seed + HELD_OUT_SEED_OFFSET + i)
            for i in range(cfg.count)
        ]
        fraction = params[0].fraction_c
        learned = _run_rollouts(
            jobs,
            lambda: plan_based_policy(
                tree, decision_period=cfg.delta, fraction_c=fraction
            ),
            params,
            cfg.delta,
            cfg.horizon,
        )
        baseline_delta = 0.005  # high-frequency switching reference
        best_of_n = _run_rollouts(
            jobs, lambda: make_policy("Vmax"), params, baseline_delta, cfg.horizon
        )
        life = statistics.fmean(r[1] for r in learned)
        life_base = statistics.fmean(r[1] for r in best_of_n)
        sw = statistics.fmean(r[2] for r in learned)
        sw_base = statistics.fmean(r[2] for r in best_of_n)
        print(
            f"{'policy':12s} {'time':>9s} {'(sigma)':>8s} {'sw':>9s} {'(sigma)':>8s}"
        )
        print(
            f"{'best-of-n':12s} {life_base:9.4f} "
            f"{statistics.pstdev(r[1] for r in best_of_n):8.4f} "
            f"{sw_base:9.1f} {statistics.pstdev(r[2] for r in best_of_n):8.1f}"
        )
        print(
            f"{'learned':12s} {life:9.4f} "
            f"{statistics.pstdev(r[1] for r in learned):8.4f} "
            f"{sw:9.1f} {statistics.pstdev(r[2] for r in learned):8.1f}"
        )
        print(
            f"efficiency_ratio={life / life_base:.4f} switch_ratio={sw / sw_base:.4f}"
        )
    return 0


# ---- wiring ----


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--batteries", help="fleet spec, e.g. 2xB1 or 3xcustom:C,c,kprime")
    sub.add_argument("--durations", type=_parse_duration_list,
                     help="comma-separated plan durations in minutes")
    sub.add_argument("--delta", type=float, help="decision period in minutes")
    sub.add_argument("--seed", type=int, help="base random seed")
    sub.add_argument("--out", help="output file path")
    sub.add_argument("--deadend-limit", dest="deadend_limit", type=int,
                     help="stop search after this many dead ends")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kibam",
        description="Plan, learn, and evaluate multi-battery switching schedules.",
    )
    parser.add_argument("--config", help="flat key = value config file")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("plan", help="solve one load profile")
    p.add_argument("--benchmark", choices=benchmark_names())
    p.add_argument("--profile", help="load profile file")
    _add_common(p)
    p.set_defaults(func=lambda cfg, args: cmd_plan(cfg))

    t = subs.add_parser("train", help="learn a switching policy from plans")
    t.add_argument("--plans", type=int, help="number of training plans")
    t.add_argument("--horizon", type=float, help="sampling horizon, minutes")
    t.add_argument("--model", help="amplitude model: default or R100/R250/R500/R750")
    t.add_argument("--min-leaf", dest="min_leaf", type=int)
    t.add_argument("--max-depth", dest="max_depth", type=int)
    _add_common(t)
    t.set_defaults(func=lambda cfg, args: cmd_train(cfg))

    e = subs.add_parser("eval", help="roll a policy over profiles")
    e.add_argument("--policy", help="builtin name or policy tree file")
    e.add_argument("--baseline", help="second policy for ratio reporting")
    e.add_argument("--baseline-delta", dest="baseline_delta", type=float,
                   help="decision period for the baseline, minutes")
    e.add_argument("--profile", help="comma-separated profile files")
    e.add_argument("--benchmark", choices=benchmark_names())
    e.add_argument("--count", type=int, help="number of sampled profiles")
    e.add_argument("--horizon", type=float, help="sampling horizon, minutes")
    e.add_argument("--model", help="amplitude model: default or R100/R250/R500/R750")
    _add_common(e)
    e.set_defaults(func=lambda cfg, args: cmd_eval(cfg))

    r = subs.add_parser("reproduce", help="recompute the reference tables")
    r.add_argument("table", choices=["table1", "table2", "table4-desk"])
    r.add_argument("--bounds-only", action="store_true",
                   help="skip the planning columns")
    r.add_argument("--long", action="store_true",
                   help="include the long-running variants")
    r.add_argument("--plans", type=int, help="training plans for table4-desk")
    r.add_argument("--count", type=int, help="held-out profiles for table4-desk")
    r.add_argument("--horizon", type=float)
    r.add_argument("--model", help="amplitude model for table4-desk")
    _add_common(r)
    r.set_defaults(
        func=lambda cfg, args: cmd_reproduce(
            cfg, args.table, args.bounds_only, args.long
        )
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(args)
        return args.func(cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KibamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
