import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from markovtilt.data import Dataset
from markovtilt.estimation import (
    EPS_POS,
    EmpiricalEstimator,
    EstimationError,
    ForestEstimator,
    JointEstimator,
    apply_floor,
    build_observed_law,
    estimator_from_config,
    fit_diagnostic,
    fit_empirical,
    fit_random_forest,
    joint_counts,
    model_pair_joint,
)
from markovtilt.forest import ForestParams, all_assignments, forest_predict_table
from markovtilt.inference import sample_dataset
from markovtilt.model import ModelSpec
from markovtilt.oracle import exact_observed_law, gen_full_law
from markovtilt.simulation import random_observed_law
from markovtilt.tables import O, FactorTable, product, restrict


def _linf(a, b):
    return float(np.max(np.abs(a.values - b.values)))


class TestEmpirical:
    def test_smoothed_counts(self):
        d = Dataset.from_cells([[0], [0], [1]])
        t = fit_empirical(d, 1, [], smoothing=0.5, eps=0.0)
        np.testing.assert_allclose(t.values, np.array([2.5, 1.5, 0.5]) / 4.5)

    def test_unseen_context_is_uniform(self):
        d = Dataset.from_cells([[0, 1], [0, 0]])
        t = fit_empirical(d, 2, [1])
        np.testing.assert_allclose(t.values[1], 1 / 3)
        np.testing.assert_allclose(t.values[2], 1 / 3)

    def test_floor(self):
        d = Dataset(np.zeros((10**6, 2), dtype=np.int8))
        t = fit_empirical(d, 2, [1], smoothing=1e-9)
        assert t.values.min() >= EPS_POS
        np.testing.assert_allclose(t.values.sum(axis=-1), 1.0, atol=1e-15)

    @pytest.mark.parametrize("lam", [0.0, -1.0])
    def test_smoothing_must_be_positive(self, lam):
        with pytest.raises(EstimationError, match="positive"):
            fit_empirical(Dataset.from_cells([[0]]), 1, [], smoothing=lam)

    @pytest.mark.parametrize("F,j", [([1, 1], 2), ([2], 2), ([5], 1)])
    def test_bad_columns(self, F, j):
        with pytest.raises(EstimationError):
            fit_empirical(Dataset.from_cells([[0, 1]]), j, F)

    def test_joint_counts(self):
        d = Dataset.from_cells([[0, None], [0, None], [1, 0]])
        c = joint_counts(d, [2, 1])
        assert c.schema == (O(1), O(2))
        assert c[{O(1): 0, O(2): 2}] == 2.0 and c.total() == 3.0


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3).filter(lambda v: sum(v) > 0),
       st.sampled_from([1e-6, 1e-3, 0.05]))
def test_apply_floor_properties(raw, eps):
    p = np.array(raw) / sum(raw)
    t = apply_floor(FactorTable((O(1),), p), O(1), eps)
    assert t.values.min() >= eps - 1e-18
    assert t.values.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.max(np.abs(t.values - p)) <= 3 * eps + 1e-15


class TestForest:
    def test_assignments_row_major(self):
        X = all_assignments(2)
        assert X.shape == (9, 2)
        assert X[1].tolist() == [0, 1] and X[3].tolist() == [1, 0]

    def test_depth_zero_is_smoothed_marginal(self):
        counts = np.zeros((3, 3))
        counts[0] = [10, 5, 0]
        counts[2] = [5, 0, 10]
        hp = ForestParams(n_trees=1, max_depth=0, bootstrap=False, leaf_smoothing=0.5)
        pred = forest_predict_table(counts, 1, hp)
        np.testing.assert_allclose(pred, np.tile(np.array([15.5, 5.5, 10.5]) / 31.5, (3, 1)))

    def test_learns_deterministic_copy(self):
        rng = np.random.default_rng(0)
        x = rng.integers(0, 3, size=(3000, 2))
        d = Dataset(np.column_stack([x, x[:, 0]]))
        t = fit_random_forest(d, 3, [1, 2], ForestParams(n_trees=30, seed=1))
        for v in range(3):
            for w in range(3):
                assert t[{O(1): v, O(2): w, O(3): v}] >= 0.95

    def test_independent_target(self):
        rng = np.random.default_rng(1)
        codes = rng.choice(3, size=(5000, 3), p=[0.5, 0.3, 0.2])
        t = fit_random_forest(Dataset(codes), 3, [1, 2], ForestParams(n_trees=40, seed=2))
        np.testing.assert_allclose(t.values, np.broadcast_to([0.5, 0.3, 0.2], (3, 3, 3)), atol=0.05)

    def test_deterministic_for_seed(self):
        d = sample_dataset(random_observed_law(6, 1, 0), 500, 3)
        hp = ForestParams(n_trees=10, seed=7)
        a, b = fit_random_forest(d, 4, [1, 2, 3], hp), fit_random_forest(d, 4, [1, 2, 3], hp)
        np.testing.assert_array_equal(a.values, b.values)
        c = fit_random_forest(d, 4, [1, 2, 3], ForestParams(n_trees=10, seed=8))
        assert not np.array_equal(a.values, c.values)

    def test_needs_features_and_rows(self):
        with pytest.raises(EstimationError):
            fit_random_forest(Dataset.from_cells([[0, 1]]), 2, [], ForestParams(n_trees=1))
        with pytest.raises(EstimationError, match="empty"):
            fit_random_forest(Dataset(np.zeros((0, 2), dtype=np.int8)), 2, [1], ForestParams(n_trees=1))

    @pytest.mark.parametrize("bad", [dict(n_trees=0), dict(max_depth=-1), dict(min_leaf=0)])
    def test_bad_params(self, bad):
        with pytest.raises(ValueError):
            ForestParams(**bad)


class TestBuildObservedLaw:
    def test_single_window_is_smoothed_joint(self):
        spec = ModelSpec(3, 0)
        d = sample_dataset(random_observed_law(3, 0, 0), 400, 1)
        law = build_observed_law(d, spec, EmpiricalEstimator())
        assert len(law.windows) == 2
        law.check()

    def test_exact_conditionals_reassemble_windows(self):
        spec = ModelSpec.common(7, 1, 0.8)
        o = gen_full_law(spec, 6)
        truth = exact_observed_law(o)
        law = build_observed_law(Dataset(np.zeros((1, 7), dtype=np.int8)), spec,
                                 JointEstimator(o.observed_joint()))
        for a, b in zip(law.windows, truth.windows):
            assert _linf(a, b) <= 1e-12

    def test_empirical_recovers_windows(self):
        spec = ModelSpec(6, 1)
        true = random_observed_law(6, 1, 3)
        law = build_observed_law(sample_dataset(true, 20000, 4), spec, EmpiricalEstimator())
        law.check()
        assert max(_linf(a, b) for a, b in zip(law.windows, true.windows)) <= 0.03

    def test_forest_law_is_valid(self):
        spec = ModelSpec(5, 1)
        d = sample_dataset(random_observed_law(5, 1, 0), 800, 2)
        law = build_observed_law(d, spec, ForestEstimator(ForestParams(n_trees=5)))
        law.check()
        assert law.estimator["name"] == "forest"

    def test_dimension_mismatch(self):
        with pytest.raises(EstimationError, match="K="):
            build_observed_law(Dataset.from_cells([[0, 1]]), ModelSpec(4, 1), EmpiricalEstimator())

    def test_errors_name_window(self):
        class Broken:
            def fit(self, d, j, F):
                raise ValueError("boom")

            def config(self):
                return {}

        with pytest.raises(EstimationError, match="window 1: fitting O_1: boom"):
            build_observed_law(Dataset(np.zeros((3, 4), dtype=np.int8)), ModelSpec(4, 1), Broken())


class TestConfig:
    @pytest.mark.parametrize("est", [EmpiricalEstimator(0.2), ForestEstimator(ForestParams(n_trees=3, seed=4))])
    def test_round_trip(self, est):
        assert estimator_from_config(est.config()) == est

    def test_unknown(self):
        with pytest.raises(EstimationError, match="unknown estimator"):
            estimator_from_config({"name": "svm"})


class TestDiagnostic:
    def test_pair_joint_far_apart(self):
        law = random_observed_law(8, 1, 2)
        # brute force: chain all conditionals into the full O-joint
        full = law.window(1)
        for j in range(5, 9):
            full = product(full, law.conditional(j))
        for j, j2 in [(1, 2), (1, 5), (2, 8), (3, 7), (1, 8)]:
            assert _linf(model_pair_joint(law, j, j2), restrict(full, [O(j), O(j2)])) <= 1e-12

    def test_exact_data_has_no_discrepancy(self):
        # a dataset that reproduces its own pair frequencies under a saturated fit
        d = sample_dataset(random_observed_law(4, 1, 0), 3000, 5)
        law = build_observed_law(d, ModelSpec(4, 1), EmpiricalEstimator(smoothing=1e-9, eps=0.0))
        rep = fit_diagnostic(d, law)
        assert rep.overall <= 1e-6
        assert len(rep.rows()) == 6

    def test_misfit_detected(self):
        d = sample_dataset(random_observed_law(6, 1, 0), 4000, 6)
        other = random_observed_law(6, 1, 99)
        rep = fit_diagnostic(d, other)
        assert rep.overall > 0.02
        assert rep.worst_pair in [(r["j"], r["j2"]) for r in rep.rows()]
