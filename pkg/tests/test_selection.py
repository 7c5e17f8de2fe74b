import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from fractions import Fraction

from transparent_reward.core import Dataset, Trajectory, fit_normalization
from transparent_reward.density import fit_density, log_prob_trajectories
from transparent_reward.features import generate_candidates
from transparent_reward.selection import (
    EXPERT,
    F_CEILING,
    PseudoLabelSelector,
    SelectionTable,
    augmentation_bounds,
    build_table,
    f_scores,
    f_statistic,
    rank_features,
    ranking_csv,
    select_topk,
)

from conftest import random_dataset


def _exact_f(x, y):
    x, y = [Fraction(v) for v in x], [Fraction(v) for v in y]
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    r2 = sxy * sxy / (sxx * syy)
    return r2, r2 / (1 - r2) * (n - 2)


class TestFStatistic:
    def test_small_example_matches_exact_rational(self):
        r2, F = _exact_f([1, 2, 3, 4], [1, 2, 3, 5])
        assert (r2, F) == (Fraction(169, 175), Fraction(169, 3))
        assert f_statistic([1, 2, 3, 4], [1, 2, 3, 5]) == pytest.approx(169 / 3, rel=1e-12)

    def test_perfect_fit_is_capped(self):
        x = np.arange(10.0)
        assert f_statistic(x, 2 * x + 1) == F_CEILING

    def test_constant_x(self):
        assert f_statistic(np.full(6, 3.3), np.arange(6.0)) == 0.0

    def test_constant_y(self):
        assert f_statistic(np.arange(6.0), np.full(6, -2.0)) == 0.0

    def test_needs_three_samples(self):
        with pytest.raises(ValueError):
            f_statistic([1.0, 2.0], [1.0, 3.0])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (12, 2), elements=st.floats(-100, 100)),
           st.floats(1e-3, 1e3))
    def test_positive_column_scaling_invariance(self, XY, c):
        x, y = XY[:, 0], XY[:, 1]
        a, b = f_statistic(x, y), f_statistic(c * x, y)
        if a < 1e9:  # away from the cap the statistic is a smooth function of r
            assert b == pytest.approx(a, rel=1e-9, abs=1e-9)

    def test_vectorised_matches_scalar(self, rng):
        X, y = rng.normal(size=(30, 6)), rng.normal(size=30)
        np.testing.assert_allclose(f_scores(X, y), [f_statistic(X[:, j], y) for j in range(6)], rtol=1e-13)


def test_percentile_convention():
    lo, hi = augmentation_bounds([0, -10, -20, -30, -40, -50, -60, -70, -80, -90])
    assert (lo, hi) == (-90.0, -81.0)


class TestBuildTable:
    def _setup(self, rng):
        expert = random_dataset(rng, k=10)
        stats = fit_normalization(expert)
        return expert, stats, fit_density(expert, stats), generate_candidates(2)

    def test_augmented_labels_in_bottom_decile(self, rng):
        expert, stats, model, phi = self._setup(rng)
        non = random_dataset(rng, k=7, scale=3.0)
        table = build_table(expert, non, phi, model, stats, seed=3)
        assert table.X.shape == (17, 9)
        assert table.row_tags == (EXPERT,) * 10 + ("augmented",) * 7
        lo, hi = augmentation_bounds(table.Y[:10])
        assert np.all((table.Y[10:] >= lo) & (table.Y[10:] <= hi))
        np.testing.assert_array_equal(table.Y[:10], log_prob_trajectories(model, expert))

    @pytest.mark.parametrize("non", [None, []])
    def test_without_nonexpert(self, rng, non):
        expert, stats, model, phi = self._setup(rng)
        table = build_table(expert, non, phi, model, stats)
        assert table.n_rows == table.n_expert == 10

    def test_deterministic(self, rng):
        expert, stats, model, phi = self._setup(rng)
        non = random_dataset(rng, k=4)
        a = build_table(expert, non, phi, model, stats, seed=11)
        b = build_table(expert, non, phi, model, stats, seed=11)
        assert a.X.tobytes() == b.X.tobytes() and a.Y.tobytes() == b.Y.tobytes()

    def test_empty_expert(self, rng):
        _, stats, model, phi = self._setup(rng)
        with pytest.raises(ValueError):
            build_table([], None, phi, model, stats)


class TestRanking:
    def test_perfect_predictor_first(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            y = rng.normal(size=40)
            table = SelectionTable(np.column_stack([y, rng.normal(size=(40, 2))]), y, (EXPERT,) * 40)
            assert rank_features(table, seed=seed).order[0] == 0

    def test_duplicated_rows(self):
        # four identical rows: every fold complement sees the same data
        X = np.tile([[1.0, 2.0, -3.0]], (4, 1))
        y = np.full(4, 0.5)
        r = rank_features(SelectionTable(X, y, (EXPERT,) * 4), folds=2, seed=0)
        np.testing.assert_array_equal(r.fold_scores[0], r.fold_scores[1])
        np.testing.assert_array_equal(r.scores, r.fold_scores[0])

    def test_exact_fit_columns_agree_across_folds(self):
        x = np.arange(8.0)
        X = np.column_stack([x, 3 * x - 1])
        r = rank_features(SelectionTable(X, 2 * x + 1, (EXPERT,) * 8), folds=2, seed=5)
        np.testing.assert_array_equal(r.fold_scores, F_CEILING)

    def test_column_permutation_equivariance(self, rng):
        X, y = rng.normal(size=(30, 5)), rng.normal(size=30)
        perm = np.array([3, 0, 4, 1, 2])
        a = rank_features(SelectionTable(X, y, (EXPERT,) * 30), seed=4)
        b = rank_features(SelectionTable(X[:, perm], y, (EXPERT,) * 30), seed=4)
        np.testing.assert_array_equal(b.scores, a.scores[perm])

    def test_ties_break_by_index(self):
        y = np.arange(12.0)
        X = np.column_stack([np.zeros(12), y, np.zeros(12), y])
        r = rank_features(SelectionTable(X, y, (EXPERT,) * 12), folds=2)
        assert list(r.order) == [1, 3, 0, 2]

    def test_too_few_rows(self):
        table = SelectionTable(np.zeros((9, 2)), np.arange(9.0), (EXPERT,) * 9)
        with pytest.raises(ValueError):
            rank_features(table, folds=5)
        with pytest.raises(ValueError):
            rank_features(table, folds=1)

    def test_deterministic_scores_nonnegative(self, rng):
        X, y = rng.normal(size=(25, 8)), rng.normal(size=25)
        t = SelectionTable(X, y, (EXPERT,) * 25)
        a, b = rank_features(t, seed=7, k=3), rank_features(t, seed=7, k=3)
        np.testing.assert_array_equal(a.scores, b.scores)
        assert np.all(np.isfinite(a.scores) & (a.scores >= 0))
        assert len(set(a.selected)) == 3

    def test_topk(self, rng):
        X, y = rng.normal(size=(20, 4)), rng.normal(size=20)
        r = rank_features(SelectionTable(X, y, (EXPERT,) * 20))
        np.testing.assert_array_equal(select_topk(r, 4), r.order)
        assert list(select_topk(r, 1)) == [r.order[0]]
        with pytest.raises(ValueError):
            select_topk(r, 0)
        with pytest.raises(ValueError):
            select_topk(r, 5)
        assert len(select_topk(r, 2, generate_candidates(2).subset(range(4)))) == 2

    def test_csv(self, rng):
        X, y = rng.normal(size=(20, 3)), rng.normal(size=20)
        r = rank_features(SelectionTable(X, y, (EXPERT,) * 20), k=2)
        lines = ranking_csv(r, generate_candidates(3).subset(range(3))).splitlines()
        assert lines[0] == "rank,feature,score,selected"
        assert len(lines) == 4
        assert [line.split(",")[3] for line in lines[1:]] == ["1", "1", "0"]


def test_selector_estimator(rng):
    expert = random_dataset(rng, k=20, n=10)
    non = random_dataset(rng, k=10, n=10, scale=3.0)
    sel = PseudoLabelSelector(k=20, random_state=1).fit(expert, nonexpert=non)
    assert len(sel.selected_) == 9  # clipped to the candidate count
    assert sel.table_.n_rows == 26  # 30% of 20 expert rows
    assert sel.get_support().sum() == 9
    assert sel.transform(expert).shape == (20, 9)
    again = PseudoLabelSelector(k=20, random_state=1).fit(expert, nonexpert=non)
    assert ranking_csv(sel.ranking_, sel.candidates_) == ranking_csv(again.ranking_, again.candidates_)
