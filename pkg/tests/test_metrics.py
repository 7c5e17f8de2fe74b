import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import wasserstein_distance

from transparent_reward.core import Dataset, DimensionMismatchError, NormalizationStats, Trajectory
from transparent_reward.envlab import LinearPolicy, PointMass1D, collect_rollouts
from transparent_reward.features import CandidateSet, MonomialFeature
from transparent_reward.maxent import RewardModel
from transparent_reward.metrics import (
    EvalReport,
    UndefinedCorrelationError,
    evaluate,
    pearson,
    return_pairs,
    return_pairs_csv,
    sliced_wasserstein,
    wasserstein_1d,
)

# mpmath, 40 digits: (x, y) = ((1, 2, 3), (1, 2, 4))
PEARSON_123_124 = 0.98198050606196571569


class TestPearson:
    def test_identity_and_negation(self):
        x = np.array([0.3, 1.0, -2.0, 5.0])
        assert pearson(x, x) == 1.0
        assert pearson(x, -x) == -1.0

    def test_high_precision_value(self):
        assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(PEARSON_123_124, abs=1e-15)

    def test_zero_variance(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1.0, 1.0, 1.0], [0.0, 1.0, 2.0])

    def test_length_checks(self):
        with pytest.raises(ValueError):
            pearson([1.0], [2.0])
        with pytest.raises(ValueError):
            pearson([1.0, 2.0], [2.0, 3.0, 4.0])

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (8, 2), elements=st.floats(-10, 10)), st.floats(0.1, 10), st.floats(-5, 5))
    def test_positive_affine_invariance(self, xy, a, b):
        x, y = xy[:, 0], xy[:, 1]
        if np.ptp(x) < 1e-3 or np.ptp(y) < 1e-3:
            return
        assert pearson(a * x + b, y) == pytest.approx(pearson(x, y), abs=1e-12)


class TestWasserstein:
    def test_point_masses(self):
        assert sliced_wasserstein(np.array([[0.0]]), np.array([[1.0]])) == 1.0

    def test_identical(self, rng):
        A = rng.normal(size=(30, 3))
        assert sliced_wasserstein(A, A.copy()) == 0.0

    def test_translation_oracle(self, rng):
        A = rng.normal(size=(40, 2))
        t = 0.75
        got = sliced_wasserstein(A, A + np.array([t, 0.0]), projections=128, seed=7)
        u = np.random.default_rng(7).standard_normal((128, 2))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        assert got == pytest.approx(t * np.abs(u[:, 0]).mean(), abs=1e-9)
        direct = np.mean([wasserstein_distance(A @ d, (A + [t, 0.0]) @ d) for d in u])
        assert got == pytest.approx(direct, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-100, 100)),
           arrays(np.float64, st.integers(1, 20), elements=st.floats(-100, 100)))
    def test_one_dimensional_matches_scipy(self, a, b):
        assert wasserstein_1d(a, b) == pytest.approx(wasserstein_distance(a, b), rel=1e-9, abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000))
    def test_symmetric_and_duplicate_invariant(self, seed):
        rng = np.random.default_rng(seed)
        A, B = rng.normal(size=(9, 3)), rng.normal(size=(13, 3)) + 1.0
        assert sliced_wasserstein(A, B, 16, seed) == sliced_wasserstein(B, A, 16, seed)
        assert sliced_wasserstein(A, np.vstack([A, A]), 16, seed) == 0.0

    def test_datasets_and_dimension_check(self, rng):
        A = Dataset.from_trajectories([Trajectory(rng.normal(size=(5, 2)))])
        assert sliced_wasserstein(A, A) == 0.0
        with pytest.raises(DimensionMismatchError):
            sliced_wasserstein(rng.normal(size=(5, 2)), rng.normal(size=(5, 3)))


def _gt_model(env):
    """Ground truth of PointMass1D written as a RewardModel on identity stats."""
    phi = CandidateSet((MonomialFeature((2, 0)), MonomialFeature((0, 2))), 2)
    return RewardModel(phi, [-1.0, -0.1], NormalizationStats(np.zeros(2), np.ones(2)))


class TestEvaluate:
    def test_ground_truth_model(self):
        env = PointMass1D()
        expert = collect_rollouts(LinearPolicy([[-2.0, -2.0, 0.0]]), env, 10, seed=0)
        model = _gt_model(env)
        pairs = return_pairs(model, env, expert)
        np.testing.assert_allclose(pairs[:, 0], pairs[:, 1], rtol=1e-12)
        report = evaluate(model, LinearPolicy([[-2.0, -2.0, 0.0]]), env, expert, episodes=5, seed=1)
        assert report.pearson_r == pytest.approx(1.0, abs=1e-12)
        assert report.parameter_count == 2
        assert report.wasserstein >= 0
        assert report.mean_return_recovered == pytest.approx(report.mean_return_ground_truth, rel=1e-12)

    def test_policy_reproducing_expert_states(self):
        env = PointMass1D()
        pol = LinearPolicy([[-2.0, -2.0, 0.0]])
        # evaluate() draws its rollouts from the first child of its seed
        roll_ss = np.random.SeedSequence(3).spawn(2)[0]
        expert = collect_rollouts(pol, env, 6, roll_ss)
        report = evaluate(_gt_model(env), pol, env, expert, episodes=6, seed=3)
        assert report.wasserstein == 0.0

    def test_report_serialization(self):
        r = EvalReport(0.9, 0.1, -2.0, -3.0, 12)
        assert json.loads(r.to_json())["parameter_count"] == 12
        assert "pearson_r" in r.table()

    def test_pairs_csv(self):
        text = return_pairs_csv(np.array([[1.0, 2.0], [-1.5, 0.25]]))
        assert text.splitlines() == ["trajectory,ground_truth_return,recovered_return", "0,1.0,2.0", "1,-1.5,0.25"]
