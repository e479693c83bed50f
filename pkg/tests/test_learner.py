"""Training-data extraction, tree induction, and the learned policy."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kibam.battery import single_equivalent_lifetime
from kibam.learner import (
    ArityMismatch,
    DecisionTree,
    EmptyDataset,
    InvalidPlan,
    Leaf,
    PlanBasedPolicy,
    Split,
    TooFewRows,
    TrainConfig,
    TrainingSet,
    cross_validate,
    extract_training,
    feature_names,
    parse_tree,
    plan_based_policy,
    predict,
    read_tree,
    render_tree,
    train,
    training_accuracy,
    write_tree,
)
from kibam.planner import Plan, PlanStep, search
from kibam.policies import Observation, rollout
from kibam.profiles import LoadProfile, make_benchmark

from conftest import B1


def const_profile(duration=60.0, load=0.5):
    return LoadProfile(segments=((duration, load),), repeat=False)


def steps(*triples):
    return Plan(steps=tuple(PlanStep(s, a, d) for s, a, d in triples))


class TestExtraction:
    def test_one_minute_plan_yields_100_rows(self):
        plan = steps((0.0, 0, 1.0))
        ts = extract_training([(plan, const_profile())], [B1], increment=0.01)
        assert len(ts) == 100
        assert ts.n_batteries == 1
        assert ts.features.shape == (100, 4)
        assert (ts.labels == 1).all()
        assert ts.feature_names == ("b1sigma", "b1gamma", "active", "load")
        # first tick: battery fresh, previous battery defaults to own label
        sigma0, gamma0, active0, load0 = ts.features[0]
        assert sigma0 == pytest.approx(0.166 * 5.5, abs=1e-12)
        assert gamma0 == pytest.approx(5.5, abs=1e-12)
        assert active0 == 1.0
        assert load0 == 0.5

    def test_row_features_are_exact(self):
        plan = steps((0.0, 0, 1.0))
        ts = extract_training([(plan, const_profile())], [B1], increment=0.01)
        # closed-form state at t = 0.05 under 0.5 A, written out from the
        # well equations so extraction is checked against the math, not
        # against itself
        t, i, c, kp = 0.05, 0.5, 0.166, 0.122
        asym = i / (c * kp)
        delta = asym * (1.0 - math.exp(-kp * t))
        gamma = 5.5 - i * t
        sigma = c * (gamma - (1.0 - c) * delta)
        assert ts.features[5][0] == pytest.approx(sigma, abs=1e-9)
        assert ts.features[5][1] == pytest.approx(gamma, abs=1e-12)

    def test_increment_larger_than_plan_gives_initial_tick(self):
        plan = steps((0.0, 0, 0.5))
        ts = extract_training(
            [(plan, const_profile(0.5))], [B1], increment=10.0
        )
        assert len(ts) == 1

    def test_idle_ticks_are_skipped(self):
        prof = LoadProfile(segments=((0.5, 0.0), (0.5, 0.5)), repeat=False)
        plan = steps((0.0, None, 0.5), (0.5, 0, 0.5))
        ts = extract_training([(plan, prof)], [B1], increment=0.01)
        assert len(ts) == 50
        # battery idled through the gap: still fresh at the first load tick
        assert ts.features[0][0] == pytest.approx(0.166 * 5.5, abs=1e-12)
        assert ts.features[0][1] == pytest.approx(5.5, abs=1e-12)

    def test_active_feature_chains_previous_label(self):
        plan = steps((0.0, 0, 0.5), (0.5, 1, 0.5))
        ts = extract_training(
            [(plan, const_profile(1.0))], [B1, B1], increment=0.01
        )
        labels = ts.labels.tolist()
        assert labels == [1] * 50 + [2] * 50
        active = ts.features[:, 4].tolist()
        assert active == [1.0] + [float(l) for l in labels[:-1]]

    def test_previous_label_does_not_leak_across_plans(self):
        a = steps((0.0, 1, 0.2))
        b = steps((0.0, 0, 0.2))
        ts = extract_training(
            [(a, const_profile(0.2)), (b, const_profile(0.2))],
            [B1, B1],
            increment=0.1,
        )
        # each plan restarts the chain with its own first label
        assert ts.features[0][4] == 2.0
        assert ts.features[2][4] == 1.0

    def test_one_hot_active_encoding(self):
        plan = steps((0.0, 0, 0.5), (0.5, 1, 0.5))
        ts = extract_training(
            [(plan, const_profile(1.0))],
            [B1, B1],
            increment=0.01,
            one_hot_active=True,
        )
        assert ts.features.shape == (100, 7)
        assert ts.feature_names == (
            "b1sigma", "b1gamma", "b2sigma", "b2gamma",
            "b1active", "b2active", "load",
        )
        # first tick of the second step still points back at battery 1
        assert ts.features[50][4] == 1.0
        assert ts.features[50][5] == 0.0
        assert ts.labels[50] == 2

    def test_wait_under_load_rejected(self):
        plan = steps((0.0, None, 1.0))
        with pytest.raises(InvalidPlan):
            extract_training([(plan, const_profile())], [B1])

    def test_timeline_gap_rejected(self):
        plan = steps((0.0, 0, 0.5), (0.6, 0, 0.4))
        with pytest.raises(InvalidPlan):
            extract_training([(plan, const_profile())], [B1])

    def test_nonpositive_increment_rejected(self):
        plan = steps((0.0, 0, 1.0))
        with pytest.raises(ValueError):
            extract_training([(plan, const_profile())], [B1], increment=0.0)


def two_battery_set(col0, labels, fill=0.5):
    """Rows for 2 batteries where only feature 0 (b1sigma) varies."""
    rows = [[v, fill, fill, fill, 1.0, 0.25] for v in col0]
    return TrainingSet(
        features=np.array(rows), labels=np.array(labels), n_batteries=2
    )


class TestTraining:
    def test_single_class_gives_single_leaf(self):
        ts = two_battery_set([0.1, 0.2, 0.3, 0.4], [2, 2, 2, 2])
        tree = train(ts)
        assert isinstance(tree.root, Leaf)
        assert tree.root.label == 2
        assert tree.depth == 1
        assert tree.node_count == 1
        assert predict(tree, [9, 9, 9, 9, 9, 9]) == 2

    def test_hand_derived_midpoint_split(self):
        # candidate thresholds are midpoints of sorted distinct values:
        # 0.15, 0.5, 0.85; only 0.5 separates the classes completely
        ts = two_battery_set([0.1, 0.2, 0.8, 0.9], [1, 1, 2, 2])
        tree = train(ts)
        root = tree.root
        assert isinstance(root, Split)
        assert root.feature == 0
        assert root.threshold == pytest.approx(0.5, abs=1e-15)
        assert isinstance(root.left, Leaf) and root.left.label == 1
        assert isinstance(root.right, Leaf) and root.right.label == 2

    def test_boundary_input_goes_left(self):
        ts = two_battery_set([0.1, 0.2, 0.8, 0.9], [1, 1, 2, 2])
        tree = train(ts)
        x = [tree.root.threshold, 0.5, 0.5, 0.5, 1.0, 0.25]
        assert predict(tree, x) == 1

    def test_tie_breaks_on_lowest_feature_index(self):
        # features 0 and 2 are identical columns; both split perfectly
        rows = [
            [0.1, 0.5, 0.1, 0.5, 1.0, 0.25],
            [0.2, 0.5, 0.2, 0.5, 1.0, 0.25],
            [0.8, 0.5, 0.8, 0.5, 1.0, 0.25],
            [0.9, 0.5, 0.9, 0.5, 1.0, 0.25],
        ]
        ts = TrainingSet(
            features=np.array(rows),
            labels=np.array([1, 1, 2, 2]),
            n_batteries=2,
        )
        tree = train(ts)
        assert tree.root.feature == 0

    def test_majority_tie_prefers_lowest_label(self):
        rows = [[0.5, 0.5, 0.5, 0.5, 1.0, 0.25]] * 4
        ts = TrainingSet(
            features=np.array(rows),
            labels=np.array([2, 1, 2, 1]),
            n_batteries=2,
        )
        tree = train(ts)
        assert isinstance(tree.root, Leaf)
        assert tree.root.label == 1

    def test_min_leaf_blocks_tiny_splits(self):
        # 3 rows cannot split into two children of >= 2 rows each
        ts = two_battery_set([0.1, 0.2, 0.9], [1, 1, 2])
        tree = train(ts)
        assert isinstance(tree.root, Leaf)
        assert tree.root.label == 1

    def test_max_depth_caps_the_tree(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(size=(64, 6))
        y = 1 + ((X[:, 0] > 0.5).astype(int) ^ (X[:, 1] > 0.5).astype(int))
        ts = TrainingSet(features=X, labels=y, n_batteries=2)
        shallow = train(ts, TrainConfig(max_depth=1))
        assert shallow.depth <= 2
        full = train(ts)
        assert full.depth > shallow.depth

    def test_consistent_data_trains_to_perfect_accuracy(self):
        rng = np.random.default_rng(11)
        X = rng.uniform(size=(200, 6))
        y = rng.integers(1, 3, size=200)
        ts = TrainingSet(features=X, labels=y, n_batteries=2)
        # labels are pure noise, so memorizing can need one level per
        # handful of rows; lift the depth cap out of the way
        tree = train(ts, TrainConfig(min_leaf=1, max_depth=10_000))
        assert training_accuracy(tree, ts) == 1.0

    @given(st.data())
    @settings(max_examples=25, deadline=None)
    def test_memorizes_any_consistent_dataset(self, data):
        n = data.draw(st.integers(min_value=1, max_value=40))
        seed = data.draw(st.integers(min_value=0, max_value=2**31))
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(n, 6))  # continuous draws: rows distinct
        y = rng.integers(1, 3, size=n)
        ts = TrainingSet(features=X, labels=y, n_batteries=2)
        tree = train(ts, TrainConfig(min_leaf=1, max_depth=10_000))
        assert training_accuracy(tree, ts) == 1.0

    def test_training_is_deterministic(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(size=(120, 6))
        y = 1 + (X[:, 1] + 0.1 * rng.uniform(size=120) > 0.55).astype(int)
        ts = TrainingSet(features=X, labels=y, n_batteries=2)
        assert render_tree(train(ts)) == render_tree(train(ts))

    def test_pruning_never_grows_the_tree(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(size=(150, 6))
        y = 1 + (X[:, 0] > 0.5).astype(int)
        flip = rng.uniform(size=150) < 0.15
        y[flip] = 3 - y[flip]
        ts = TrainingSet(features=X, labels=y, n_batteries=2)
        plain = train(ts)
        pruned = train(ts, TrainConfig(prune=True))
        assert pruned.node_count <= plain.node_count

    def test_plain_information_gain_also_works(self):
        ts = two_battery_set([0.1, 0.2, 0.8, 0.9], [1, 1, 2, 2])
        tree = train(ts, TrainConfig(use_gain_ratio=False))
        assert tree.root.threshold == pytest.approx(0.5)

    def test_empty_dataset_raises(self):
        ts = TrainingSet(
            features=np.empty((0, 6)), labels=np.empty(0, int), n_batteries=2
        )
        with pytest.raises(EmptyDataset):
            train(ts)

    def test_arity_mismatch_raises(self):
        ts = two_battery_set([0.1, 0.9], [1, 2], fill=0.3)
        tree = train(ts, TrainConfig(min_leaf=1))
        with pytest.raises(ArityMismatch):
            predict(tree, [0.1, 0.3, 0.3])

    def test_predictions_match_region_oracle(self):
        # every training row must land in exactly one leaf region, and
        # the tree's descent must agree with direct region membership
        rng = np.random.default_rng(13)
        X = np.round(rng.uniform(size=(100, 6)), 3)
        y = 1 + (X[:, 0] + X[:, 3] > 1.0).astype(int)
        ts = TrainingSet(features=X, labels=y, n_batteries=2)
        tree = train(ts, TrainConfig(min_leaf=1))

        regions = []

        def collect(node, constraints):
            if isinstance(node, Leaf):
                regions.append((tuple(constraints), node.label))
                return
            collect(node.left, constraints + [(node.feature, "<=", node.threshold)])
            collect(node.right, constraints + [(node.feature, ">", node.threshold)])

        collect(tree.root, [])

        def member(x, constraints):
            return all(
                x[f] <= thr if op == "<=" else x[f] > thr
                for f, op, thr in constraints
            )

        for row in X:
            hits = [lb for cons, lb in regions if member(row, cons)]
            assert len(hits) == 1
            assert hits[0] == predict(tree, row)


# A five-level nest on one feature plus two other tests, assembled by
# hand; expectations below are traced through it with a pencil.
FRAGMENT = """\
if (b2gamma<=0.297404) {
  if (b2gamma<=0.296404) {
    if (b2gamma<=0.288404) {
      if (b2gamma<=0.286404) {
        if (b2gamma<=0.277404) {
          return 1;
        }
        if (b2gamma>0.277404) {
          return 2;
        }
      }
      if (b2gamma>0.286404) {
        return 1;
      }
    }
    if (b2gamma>0.288404) {
      return 2;
    }
  }
  if (b2gamma>0.296404) {
    if (b2sigma<=-0.043615) {
      return 1;
    }
    if (b2sigma>-0.043615) {
      if (b1gamma<=0.164404) {
        return 1;
      }
      if (b1gamma>0.164404) {
        return 2;
      }
    }
  }
}
if (b2gamma>0.297404) {
  return 2;
}
"""


class TestTreeText:
    def test_fragment_parses_and_descends(self):
        tree = parse_tree(FRAGMENT, n_batteries=2)
        assert tree.n_features == 6

        def x(b1gamma=0.5, b2sigma=0.5, b2gamma=0.5):
            return [0.5, b1gamma, b2sigma, b2gamma, 1.0, 0.25]

        assert predict(tree, x(b2gamma=0.27)) == 1  # innermost branch
        assert predict(tree, x(b2gamma=0.28)) == 2
        assert predict(tree, x(b2gamma=0.287)) == 1
        assert predict(tree, x(b2gamma=0.29)) == 2
        assert predict(tree, x(b2gamma=0.297, b2sigma=-0.05)) == 1
        assert predict(tree, x(b2gamma=0.297, b1gamma=0.1)) == 1
        assert predict(tree, x(b2gamma=0.297, b1gamma=0.2)) == 2
        assert predict(tree, x(b2gamma=0.3)) == 2

    def test_fragment_rerenders_identically(self):
        tree = parse_tree(FRAGMENT, n_batteries=2)
        assert render_tree(tree) == FRAGMENT

    def test_battery_count_inferred_from_names(self):
        tree = parse_tree(FRAGMENT)
        assert tree.n_features == 6

    def test_roundtrip_text_and_predictions(self):
        rng = np.random.default_rng(17)
        X = rng.uniform(size=(300, 6))
        y = 1 + ((X[:, 0] > 0.4) & (X[:, 3] < 0.7)).astype(int)
        ts = TrainingSet(features=X, labels=y, n_batteries=2)
        tree = train(ts, TrainConfig(min_leaf=1))
        text = render_tree(tree)
        back = parse_tree(text, n_batteries=2)
        assert render_tree(back) == text
        probes = rng.uniform(low=-0.2, high=1.2, size=(10_000, 6))
        for row in probes:
            assert predict(back, row) == predict(tree, row)

    def test_threshold_survives_exactly(self):
        thr = 0.1 + 0.2  # not representable as the decimal it prints from
        tree = DecisionTree(
            root=Split(3, thr, Leaf(1), Leaf(2)),
            n_features=6,
            names=feature_names(2),
        )
        back = parse_tree(render_tree(tree), n_batteries=2)
        assert back.root.threshold == thr

    def test_one_hot_names_roundtrip(self):
        tree = DecisionTree(
            root=Split(4, 0.5, Leaf(1), Leaf(2)),
            n_features=7,
            names=feature_names(2, one_hot_active=True),
        )
        text = render_tree(tree)
        assert "b1active" in text
        back = parse_tree(text, n_batteries=2, one_hot_active=True)
        assert render_tree(back) == text

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_tree("while (x) { return 1; }")

    def test_parse_rejects_unpaired_blocks(self):
        bad = (
            "if (b1sigma<=0.5) {\n  return 1;\n}\n"
            "if (b1sigma>0.6) {\n  return 2;\n}\n"
        )
        with pytest.raises(ValueError):
            parse_tree(bad)

    def test_parse_rejects_trailing_content(self):
        with pytest.raises(ValueError):
            parse_tree(FRAGMENT + "return 1;\n", n_batteries=2)

    def test_file_roundtrip(self, tmp_path):
        tree = parse_tree(FRAGMENT, n_batteries=2)
        path = tmp_path / "policy.tree"
        write_tree(tree, path)
        back = read_tree(path, n_batteries=2)
        assert render_tree(back) == FRAGMENT


class TestPlanBasedPolicy:
    def obs(self, sigma, load=0.25):
        n = len(sigma)
        return Observation(
            sigma=tuple(sigma),
            gamma=tuple(1.0 for _ in sigma),
            active=None,
            load=load,
            rest=tuple(0.0 for _ in sigma),
        )

    def leaf_policy(self, label, **kw):
        tree = DecisionTree(
            root=Leaf(label), n_features=6, names=feature_names(2)
        )
        return plan_based_policy(tree, **kw)

    def test_default_epsilon_matches_formula(self):
        pol = self.leaf_policy(2)
        eps = pol._default_epsilon(self.obs([0.9, 0.9], load=0.25))
        assert eps == pytest.approx(0.25 * 0.01 / 0.166, abs=1e-15)
        assert eps == pytest.approx(0.01506, abs=5e-6)

    def test_healthy_prediction_is_followed(self):
        pol = self.leaf_policy(2)
        assert pol.decide(self.obs([0.9, 0.5])) == 1
        assert pol.fallbacks == 0

    def test_weak_prediction_falls_back_to_best_charge(self):
        pol = self.leaf_policy(2)
        assert pol.decide(self.obs([0.9, 0.001])) == 0
        assert pol.fallbacks == 1

    def test_zero_charge_prediction_falls_back(self):
        pol = self.leaf_policy(2)
        assert pol.decide(self.obs([0.9, 0.0])) == 0
        assert pol.fallbacks == 1

    def test_last_choice_feeds_the_active_feature(self):
        pol = self.leaf_policy(2)
        o = self.obs([0.9, 0.9])
        assert pol.observation_features(o)[4] == 1.0  # fresh default
        pol.decide(o)
        assert pol.observation_features(o)[4] == 2.0

    def test_reset_clears_state(self):
        pol = self.leaf_policy(2)
        pol.decide(self.obs([0.9, 0.001]))
        pol.reset()
        assert pol.fallbacks == 0
        assert pol.decisions == 0
        assert pol.last_choice is None

    def test_arity_guard(self):
        pol = self.leaf_policy(2)
        with pytest.raises(ArityMismatch):
            pol.decide(self.obs([0.9, 0.9, 0.9]))


class TestCrossValidation:
    def test_perfectly_separable_scores_one(self):
        col = [0.1 + 0.001 * i for i in range(30)] + [
            0.9 + 0.001 * i for i in range(30)
        ]
        ts = two_battery_set(col, [1] * 30 + [2] * 30)
        assert cross_validate(ts, k=10) == 1.0

    def test_random_labels_score_near_half(self):
        rng = np.random.default_rng(23)
        X = rng.uniform(size=(400, 6))
        y = np.tile([1, 2], 200)  # balanced, independent of features
        ts = TrainingSet(features=X, labels=y, n_batteries=2)
        acc = cross_validate(ts, k=10)
        assert abs(acc - 0.5) <= 0.05

    def test_k_must_be_at_least_two(self):
        ts = two_battery_set([0.1, 0.9], [1, 2])
        with pytest.raises(ValueError):
            cross_validate(ts, k=1)

    def test_too_few_rows(self):
        ts = two_battery_set([0.1, 0.2, 0.9], [1, 1, 2])
        with pytest.raises(TooFewRows):
            cross_validate(ts, k=10)

    def test_deterministic(self):
        rng = np.random.default_rng(29)
        X = rng.uniform(size=(80, 6))
        y = 1 + (X[:, 2] > 0.5).astype(int)
        ts = TrainingSet(features=X, labels=y, n_batteries=2)
        assert cross_validate(ts, k=5) == cross_validate(ts, k=5)


@pytest.fixture(scope="module")
def planned_dataset():
    prof = make_benchmark("CL_250")
    params = [B1, B1]
    bound = single_equivalent_lifetime(params, prof)
    r = search(prof, params, horizon=bound, deadend_limit=3)
    ts = extract_training([(r.plan, prof)], params, increment=0.01)
    return prof, params, r, ts


class TestEndToEnd:
    def test_extraction_scales_with_plan_length(self, planned_dataset):
        prof, params, r, ts = planned_dataset
        # constant load: one row per increment tick over the whole plan
        assert len(ts) == pytest.approx(r.plan.makespan / 0.01, abs=2)

    def test_plan_rows_crossvalidate_well(self, planned_dataset):
        _, _, _, ts = planned_dataset
        assert cross_validate(ts, k=10) >= 0.95

    def test_learned_policy_nearly_matches_plan(self, planned_dataset):
        prof, params, r, ts = planned_dataset
        tree = train(ts)
        pol = plan_based_policy(tree, decision_period=0.01)
        res = rollout(pol, prof, params, decision_period=0.01)
        assert res.lifetime >= 0.97 * r.lifetime
