"""Learning switching policies from plans.

Plans are replayed at a fixed time increment; every tick with positive
load contributes one training row: the exact analytic charge state of
every battery, the previously active battery, and the load, labelled
with the battery the plan keeps active at that tick. A decision tree is
induced from the rows with the classic top-down gain-ratio recursion,
splitting numeric features at midpoints between sorted distinct values.

The resulting tree backs a policy: predict, but fall back to the
best-available-charge rule whenever the predicted battery lacks the
charge to survive one decision period. Trees serialize to a nested
text format of paired if-blocks and parse back losslessly (thresholds
are written with repr so the parsed tree predicts identically).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .battery import (
    BatteryState,
    _delta_gamma_after,
    available_charge,
    fresh_state,
)
from .errors import KibamError
from .planner import Plan
from .policies import Observation, Policy, decide_builtin
from .profiles import LoadProfile

DEFAULT_INCREMENT = 0.01


class EmptyDataset(KibamError):
    pass


class TooFewRows(KibamError):
    pass


class ArityMismatch(KibamError):
    pass


class InvalidPlan(KibamError):
    pass


def feature_names(
    n_batteries: int, one_hot_active: bool = False
) -> tuple[str, ...]:
    names: list[str] = []
    for k in range(1, n_batteries + 1):
        names.append(f"b{k}sigma")
        names.append(f"b{k}gamma")
    if one_hot_active:
        names.extend(f"b{k}active" for k in range(1, n_batteries + 1))
    else:
        names.append("active")
    names.append("load")
    return tuple(names)


def _arity(n_batteries: int, one_hot_active: bool) -> int:
    return (3 * n_batteries + 1) if one_hot_active else (2 * n_batteries + 2)


@dataclass
class TrainingSet:
    """Feature rows (sigma_i, gamma_i, ..., active, load) with 1-based labels."""

    features: np.ndarray  # (n_rows, 2N + 2) float
    labels: np.ndarray  # (n_rows,) int, in [1, N]
    n_batteries: int
    one_hot_active: bool = False

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        want = _arity(self.n_batteries, self.one_hot_active)
        if len(self.features) and self.features.shape[1] != want:
            raise ValueError(
                f"expected {want} features for {self.n_batteries} batteries,"
                f" got {self.features.shape[1]}"
            )
        bad = (self.labels < 1) | (self.labels > self.n_batteries)
        if bad.any():
            raise ValueError("labels must be battery numbers in [1, N]")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return feature_names(self.n_batteries, self.one_hot_active)

    def __len__(self) -> int:
        return len(self.labels)


def extract_training(
    plans_with_profiles,
    params_list,
    increment: float = DEFAULT_INCREMENT,
    one_hot_active: bool = False,
) -> TrainingSet:
    """Replay (plan, profile) pairs and sample rows at each load tick.

    The "active" feature is the battery chosen at the previous tick of
    the same plan (the plan's own first choice for the first tick), so
    a policy reading it can tell staying put from switching. With
    one_hot_active it becomes one indicator column per battery.
    """
    if increment <= 0:
        raise ValueError("increment must be positive")
    params_list = list(params_list)
    n = len(params_list)
    rows: list[list[float]] = []
    labels: list[int] = []
    for plan, profile in plans_with_profiles:
        _extract_one(plan, profile, params_list, increment, rows, labels)
    if one_hot_active:
        for row in rows:
            previous = int(row[-2])
            hot = [0.0] * n
            hot[previous - 1] = 1.0
            row[-2:-1] = hot
    features = (
        np.array(rows, dtype=float)
        if rows
        else np.empty((0, _arity(n, one_hot_active)), dtype=float)
    )
    return TrainingSet(
        features=features,
        labels=np.array(labels, dtype=int),
        n_batteries=n,
        one_hot_active=one_hot_active,
    )


def _extract_one(plan, profile, params_list, increment, rows, labels) -> None:
    states = [fresh_state(p) for p in params_list]
    expected_start = 0.0
    prev_label: Optional[int] = None
    pending: list[tuple[list[float], int]] = []
    slop = 1e-9
    for step in plan.steps:
        if abs(step.start - expected_start) > 1e-6 or step.duration <= 0:
            raise InvalidPlan(
                f"step at {step.start} breaks the timeline at {expected_start}"
            )
        expected_start = step.start + step.duration
        t_end = step.start + step.duration
        cursor = step.start
        # next sample tick at or after the cursor
        tick_idx = math.ceil(cursor / increment - slop)
        while cursor < t_end - slop:
            current = profile.current_at(cursor)
            boundary = min(t_end, profile.next_change_after(cursor))
            tick = tick_idx * increment
            while tick < boundary - slop:
                if tick >= cursor - slop:
                    dt = tick - cursor
                    if dt > slop:
                        states = _advance_all(
                            states, params_list, step.action, current, dt
                        )
                        cursor = tick
                    if current > 0:
                        if step.action is None:
                            raise InvalidPlan(
                                f"load {current} unserviced at {tick}"
                            )
                        label = step.action + 1
                        feats: list[float] = []
                        for s, p in zip(states, params_list):
                            feats.append(available_charge(s, p))
                            feats.append(s.gamma)
                        feats.append(0.0)  # placeholder for "active"
                        feats.append(current)
                        pending.append((feats, label))
                tick_idx += 1
                tick = tick_idx * increment
            dt = boundary - cursor
            if dt > slop:
                states = _advance_all(
                    states, params_list, step.action, current, dt
                )
            cursor = boundary
    for feats, label in pending:
        feats[-2] = float(label if prev_label is None else prev_label)
        prev_label = label
        rows.append(feats)
        labels.append(label)


def _advance_all(states, params_list, action, current, dt):
    out = []
    for idx, (s, p) in enumerate(zip(states, params_list)):
        i = current if idx == action else 0.0
        d, g = _delta_gamma_after(s, p, i, dt)
        out.append(BatteryState(delta=d, gamma=g))
    return out


# ---- decision tree ----


@dataclass(frozen=True)
class Leaf:
    label: int


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "Node"
    right: "Node"


Node = Leaf | Split


@dataclass(frozen=True)
class DecisionTree:
    root: Node
    n_features: int
    names: tuple[str, ...]

    @property
    def depth(self) -> int:
        def d(node) -> int:
            if isinstance(node, Leaf):
                return 1
            return 1 + max(d(node.left), d(node.right))

        return d(self.root)

    @property
    def node_count(self) -> int:
        def c(node) -> int:
            if isinstance(node, Leaf):
                return 1
            return 1 + c(node.left) + c(node.right)

        return c(self.root)


@dataclass(frozen=True)
class TrainConfig:
    min_leaf: int = 2
    max_depth: int = 64
    use_gain_ratio: bool = True
    prune: bool = False  # pessimistic (error-based) post-pruning


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def _majority(labels: np.ndarray) -> int:
    values, counts = np.unique(labels, return_counts=True)
    return int(values[counts.argmax()])  # ties: np.unique sorts, lowest wins


def _candidate_splits(col, y_idx, k, parent_entropy, min_leaf):
    """All midpoint splits of one sorted column: (thresholds, gain, info)."""
    n = len(col)
    order = np.argsort(col, kind="stable")
    sorted_col = col[order]
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y_idx[order]] = 1.0
    left_counts = np.cumsum(onehot, axis=0)  # counts through row i
    distinct = sorted_col[1:] > sorted_col[:-1]
    cut = np.nonzero(distinct)[0]  # split after sorted position i
    if len(cut):
        nl = cut + 1.0
        nr = n - nl
        ok = (nl >= min_leaf) & (nr >= min_leaf)
        cut = cut[ok]
    if len(cut) == 0:
        return None
    nl = cut + 1.0
    nr = n - nl
    lc = left_counts[cut]
    rc = left_counts[-1] - lc

    def h(counts, sizes):
        with np.errstate(divide="ignore", invalid="ignore"):
            p = counts / sizes[:, None]
            t = np.where(p > 0, p * np.log2(p), 0.0)
        return -t.sum(axis=1)

    child = (nl * h(lc, nl) + nr * h(rc, nr)) / n
    gain = parent_entropy - child
    pl, pr = nl / n, nr / n
    split_info = -(pl * np.log2(pl) + pr * np.log2(pr))
    thresholds = (sorted_col[cut] + sorted_col[cut + 1]) / 2.0
    return thresholds, gain, split_info


def _best_split(X: np.ndarray, y: np.ndarray, config: TrainConfig):
    """Pick the split maximizing gain ratio among usefully-gaining cuts.

    Raw gain ratio degenerates toward one-row peel-offs (tiny split
    info inflates the ratio), so candidates must first reach the mean
    gain over all cuts at this node, the classic guard. Scanning
    features in ascending order with a strictly-greater comparison
    makes the lowest feature index, then lowest threshold, win ties.

    Returns (score, feature, threshold) or None.
    """
    n, n_features = X.shape
    classes, y_idx = np.unique(y, return_inverse=True)
    k = len(classes)
    parent_entropy = _entropy(np.bincount(y_idx, minlength=k).astype(float))
    per_feature = []
    all_gains = []
    for f in range(n_features):
        cand = _candidate_splits(
            X[:, f], y_idx, k, parent_entropy, config.min_leaf
        )
        per_feature.append(cand)
        if cand is not None:
            all_gains.append(cand[1])
    if not all_gains:
        return None
    mean_gain = float(np.concatenate(all_gains).mean())
    best = None
    best_score = 1e-12  # a split must strictly beat "no split"
    for f, cand in enumerate(per_feature):
        if cand is None:
            continue
        thresholds, gain, split_info = cand
        if config.use_gain_ratio:
            eligible = gain >= mean_gain - 1e-12
            if not eligible.any():
                continue
            score = np.where(eligible, gain / split_info, -np.inf)
        else:
            score = gain
        i = int(np.argmax(score))
        if score[i] > best_score:
            best_score = float(score[i])
            best = (best_score, f, float(thresholds[i]))
    return best


def train(dataset: TrainingSet, config: TrainConfig | None = None) -> DecisionTree:
    """Top-down induction with gain-ratio splits and majority leaves."""
    config = config or TrainConfig()
    if len(dataset) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    X, y = dataset.features, dataset.labels

    def build(idx: np.ndarray, depth: int) -> Node:
        labels = y[idx]
        if (labels == labels[0]).all():
            return Leaf(int(labels[0]))
        if depth >= config.max_depth or len(idx) < 2 * config.min_leaf:
            return Leaf(_majority(labels))
        found = _best_split(X[idx], labels, config)
        if found is None:
            return Leaf(_majority(labels))
        _, f, thr = found
        mask = X[idx, f] <= thr
        left = build(idx[mask], depth + 1)
        right = build(idx[~mask], depth + 1)
        if config.prune:
            pruned = _try_prune(left, right, labels, X[idx, f], thr)
            if pruned is not None:
                return pruned
        return Split(f, thr, left, right)

    root = build(np.arange(len(y)), 0)
    return DecisionTree(
        root=root, n_features=X.shape[1], names=dataset.feature_names
    )


def _try_prune(left, right, labels, col, thr):
    """Collapse a fresh leaf pair when one leaf would not test worse.

    Uses the classic pessimistic estimate: half a count of continuity
    correction per leaf, so a split must buy at least one training error
    net of the extra correction to survive.
    """
    if not (isinstance(left, Leaf) and isinstance(right, Leaf)):
        return None
    mask = col <= thr
    subtree_err = (
        int((labels[mask] != left.label).sum())
        + int((labels[~mask] != right.label).sum())
        + 1.0
    )
    majority = _majority(labels)
    leaf_err = int((labels != majority).sum()) + 0.5
    if leaf_err <= subtree_err:
        return Leaf(majority)
    return None


def predict(tree: DecisionTree, features) -> int:
    """Descend to a leaf; values equal to a threshold go left."""
    x = np.asarray(features, dtype=float)
    if x.shape != (tree.n_features,):
        raise ArityMismatch(
            f"expected {tree.n_features} features, got {x.shape}"
        )
    node = tree.root
    while isinstance(node, Split):
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.label


def training_accuracy(tree: DecisionTree, dataset: TrainingSet) -> float:
    hits = sum(
        predict(tree, row) == label
        for row, label in zip(dataset.features, dataset.labels)
    )
    return hits / len(dataset)


def cross_validate(
    dataset: TrainingSet, k: int = 10, config: TrainConfig | None = None
) -> float:
    """Stratified k-fold mean held-out accuracy, deterministic in row order."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(dataset) < k:
        raise TooFewRows(f"{len(dataset)} rows cannot fill {k} folds")
    folds = np.zeros(len(dataset), dtype=int)
    for label in np.unique(dataset.labels):
        where = np.nonzero(dataset.labels == label)[0]
        folds[where] = np.arange(len(where)) % k
    accuracies = []
    for fold in range(k):
        test = folds == fold
        if not test.any():
            continue
        sub = TrainingSet(
            features=dataset.features[~test],
            labels=dataset.labels[~test],
            n_batteries=dataset.n_batteries,
        )
        tree = train(sub, config)
        hits = sum(
            predict(tree, row) == label
            for row, label in zip(dataset.features[test], dataset.labels[test])
        )
        accuracies.append(hits / int(test.sum()))
    return float(np.mean(accuracies))


# ---- text format ----


def render_tree(tree: DecisionTree) -> str:
    lines: list[str] = []

    def emit(node: Node, depth: int) -> None:
        pad = "  " * depth
        if isinstance(node, Leaf):
            lines.append(f"{pad}return {node.label};")
            return
        name = tree.names[node.feature]
        thr = repr(node.threshold)
        lines.append(f"{pad}if ({name}<={thr}) {{")
        emit(node.left, depth + 1)
        lines.append(f"{pad}}}")
        lines.append(f"{pad}if ({name}>{thr}) {{")
        emit(node.right, depth + 1)
        lines.append(f"{pad}}}")

    emit(tree.root, 0)
    return "\n".join(lines) + "\n"


_IF_RE = re.compile(
    r"^if \((b(\d+)(?:sigma|gamma|active)|active|load)(<=|>)(-?[0-9.eE+]+)\) \{$"
)
_RETURN_RE = re.compile(r"^return (\d+);$")


def parse_tree(
    text: str,
    n_batteries: int | None = None,
    one_hot_active: bool = False,
) -> DecisionTree:
    """Rebuild a tree from its rendered form.

    The battery count is inferred from the feature names mentioned
    unless given; pass it explicitly when the tree might not test the
    highest-numbered battery.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if n_batteries is None:
        n_batteries = 1
        for ln in lines:
            m = _IF_RE.match(ln)
            if m and m.group(2):
                n_batteries = max(n_batteries, int(m.group(2)))
    names = feature_names(n_batteries, one_hot_active)
    index = {name: i for i, name in enumerate(names)}
    pos = 0

    def parse_node() -> Node:
        nonlocal pos
        if pos >= len(lines):
            raise ValueError("tree text ends inside a block")
        m = _RETURN_RE.match(lines[pos])
        if m:
            pos += 1
            return Leaf(int(m.group(1)))
        m = _IF_RE.match(lines[pos])
        if m is None or m.group(3) != "<=":
            raise ValueError(f"expected a split at line: {lines[pos]!r}")
        name, threshold = m.group(1), float(m.group(4))
        if name not in index:
            raise ValueError(f"unknown feature {name!r}")
        pos += 1
        left = parse_node()
        _expect("}")
        m2 = _IF_RE.match(lines[pos]) if pos < len(lines) else None
        if (
            m2 is None
            or m2.group(1) != name
            or m2.group(3) != ">"
            or float(m2.group(4)) != threshold
        ):
            raise ValueError(f"unpaired if-block for {name}")
        pos += 1
        right = parse_node()
        _expect("}")
        return Split(index[name], threshold, left, right)

    def _expect(token: str) -> None:
        nonlocal pos
        if pos >= len(lines) or lines[pos] != token:
            got = lines[pos] if pos < len(lines) else "<end>"
            raise ValueError(f"expected {token!r}, got {got!r}")
        pos += 1

    root = parse_node()
    if pos != len(lines):
        raise ValueError(f"trailing content after the tree: {lines[pos]!r}")
    return DecisionTree(
        root=root,
        n_features=_arity(n_batteries, one_hot_active),
        names=names,
    )


def write_tree(tree: DecisionTree, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(render_tree(tree))


def read_tree(
    path, n_batteries: int | None = None, one_hot_active: bool = False
) -> DecisionTree:
    with open(path, "r", encoding="ascii") as fh:
        return parse_tree(
            fh.read(), n_batteries=n_batteries, one_hot_active=one_hot_active
        )


# ---- the learned policy ----


class PlanBasedPolicy(Policy):
    """Tree decisions with a best-available-charge safety net.

    The tree's choice is overridden whenever that battery's available
    charge could not cover one decision period of the current load
    (sigma below load * period / c); fallback events are counted.
    """

    name = "PlanBased"

    def __init__(
        self,
        tree: DecisionTree,
        decision_period: float = DEFAULT_INCREMENT,
        fraction_c: float = 0.166,
        epsilon_fn: Callable[[Observation], float] | None = None,
    ):
        self.tree = tree
        self.decision_period = decision_period
        self.fraction_c = fraction_c
        self.epsilon_fn = epsilon_fn or self._default_epsilon
        self.last_choice: Optional[int] = None
        self.fallbacks = 0
        self.decisions = 0

    def _default_epsilon(self, obs: Observation) -> float:
        return obs.load * self.decision_period / self.fraction_c

    def reset(self) -> None:
        self.last_choice = None
        self.fallbacks = 0
        self.decisions = 0

    def observation_features(self, obs: Observation) -> list[float]:
        feats: list[float] = []
        for s, g in zip(obs.sigma, obs.gamma):
            feats.append(s)
            feats.append(g)
        if self.last_choice is not None:
            previous = self.last_choice
        elif obs.active is not None:
            previous = obs.active + 1
        else:
            previous = 1  # fresh system: the convention matches training
        if "active" in self.tree.names:
            feats.append(float(previous))
        else:  # one-hot indicator columns
            hot = [0.0] * obs.n_batteries
            hot[previous - 1] = 1.0
            feats.extend(hot)
        feats.append(obs.load)
        return feats

    def decide(self, obs: Observation) -> int:
        self.decisions += 1
        choice = predict(self.tree, self.observation_features(obs)) - 1
        if obs.sigma[choice] < self.epsilon_fn(obs):
            self.fallbacks += 1
            choice = decide_builtin("Vmax", obs)
        self.last_choice = choice + 1
        return choice


def plan_based_policy(
    tree: DecisionTree,
    decision_period: float = DEFAULT_INCREMENT,
    fraction_c: float = 0.166,
    epsilon_fn: Callable[[Observation], float] | None = None,
) -> PlanBasedPolicy:
    return PlanBasedPolicy(tree, decision_period, fraction_c, epsilon_fn)
