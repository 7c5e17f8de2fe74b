import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from transparent_reward.core import (
    Dataset,
    DatasetError,
    DimensionMismatchError,
    NormalizationStats,
    StateNormalizer,
    Trajectory,
    fit_normalization,
    load_dataset,
    normalize,
    save_dataset,
)


def _write(path, lines):
    path.write_text("\n".join(json.dumps(x) for x in lines) + "\n")
    return path


class TestLoadDataset:
    def test_two_trajectories(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [
            {"meta": {"name": "toy", "d": 2}},
            {"states": [[0, 1], [1, 2], [2, 3]], "return": None},
            {"states": [[0, 0], [1, 1], [2, 2]], "return": -1.5},
        ])
        data = load_dataset(p)
        assert len(data) == 2
        assert data.state_dim == 2
        assert data.name == "toy"
        assert data[1].ground_truth_return == -1.5
        assert data[0].ground_truth_return is None

    def test_header_is_optional(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [{"states": [[1.0]], "return": None}])
        assert load_dataset(p).state_dim == 1

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        with pytest.raises(DatasetError, match="empty dataset"):
            load_dataset(p)

    def test_header_only_is_empty(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [{"meta": {"name": "x", "d": 2}}])
        with pytest.raises(DatasetError, match="empty dataset"):
            load_dataset(p)

    def test_dimension_mismatch_inside_trajectory(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [
            {"states": [[0, 1], [1, 2]], "return": None},
            {"states": [[0, 1], [1, 2, 3]], "return": None},
        ])
        with pytest.raises(DimensionMismatchError, match="trajectory 1"):
            load_dataset(p)

    def test_dimension_mismatch_against_header(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [{"meta": {"d": 3}}, {"states": [[0, 1]], "return": None}])
        with pytest.raises(DimensionMismatchError):
            load_dataset(p)

    def test_parse_error_reports_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"states": [[0, 1]], "return": null}\n{"states": [[0, 1]\n')
        with pytest.raises(DatasetError, match=":2:"):
            load_dataset(p)

    @pytest.mark.parametrize("record", [
        {"states": [], "return": None},
        {"states": [[0, "a"]], "return": None},
        {"states": [[0, 1]], "return": "high"},
        {"return": 1.0},
    ])
    def test_malformed_records(self, tmp_path, record):
        p = _write(tmp_path / "d.jsonl", [record])
        with pytest.raises((DatasetError, ValueError)):
            load_dataset(p)


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 4).flatmap(
        lambda d: st.lists(arrays(np.float64, st.tuples(st.integers(1, 5), st.just(d)), elements=finite),
                           min_size=1, max_size=4)
    ),
    st.lists(st.one_of(st.none(), finite), min_size=4, max_size=4),
)
def test_round_trip_is_bit_exact(tmp_path_factory, state_arrays, returns):
    data = Dataset.from_trajectories(
        [Trajectory(a, r) for a, r in zip(state_arrays, returns)], name="rt", source="hypothesis")
    path = tmp_path_factory.mktemp("rt") / "d.jsonl"
    back = load_dataset(save_dataset(data, path))
    assert back == data
    for a, b in zip(back, data):
        assert a.states.tobytes() == b.states.tobytes()


def test_rejects_non_finite_states():
    with pytest.raises(DatasetError):
        Trajectory([[0.0, np.nan]])


def test_dataset_rejects_mixed_dims():
    with pytest.raises(DimensionMismatchError):
        Dataset((Trajectory([[0.0, 1.0]]), Trajectory([[0.0]])), 2)


class TestNormalization:
    def _data(self, states):
        return Dataset.from_trajectories([Trajectory(states)])

    def test_two_point(self):
        stats = fit_normalization(self._data([[0.0], [2.0]]))
        np.testing.assert_array_equal(stats.mean, [1.0])
        np.testing.assert_array_equal(stats.std, [1.0])
        assert stats.degenerate_dims == frozenset()

    def test_identical_states_are_degenerate(self):
        stats = fit_normalization(self._data([[3.0, 3.0]] * 4))
        np.testing.assert_array_equal(stats.std, [0.0, 0.0])
        assert stats.degenerate_dims == {0, 1}

    def test_mixed(self):
        stats = fit_normalization(self._data([[-1.0, 5.0], [1.0, 5.0]]))
        np.testing.assert_array_equal(stats.mean, [0.0, 5.0])
        np.testing.assert_array_equal(stats.std, [1.0, 0.0])
        assert stats.degenerate_dims == {1}

    def test_population_std_pools_trajectories(self):
        data = Dataset.from_trajectories([Trajectory([[0.0]]), Trajectory([[2.0], [4.0]])])
        stats = fit_normalization(data)
        np.testing.assert_allclose(stats.std, [np.std([0.0, 2.0, 4.0])])

    def test_normalize_examples(self):
        stats = NormalizationStats([1.0], [1.0])
        np.testing.assert_array_equal(normalize([2.0], stats), [1.0])
        np.testing.assert_array_equal(normalize([1.0], stats), [0.0])
        deg = NormalizationStats([7.0], [0.0])
        np.testing.assert_array_equal(normalize([7.0], deg), [0.0])
        np.testing.assert_array_equal(normalize([9.0], deg), [0.0])

    def test_normalize_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            normalize([1.0, 2.0], NormalizationStats([0.0], [1.0]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 4)),
                  elements=st.floats(-1e3, 1e3, allow_nan=False)))
    def test_normalized_moments(self, states):
        stats = fit_normalization(self._data(states))
        z = normalize(states, stats)
        # relative spread guard: dims that are constant up to round-off are degenerate in spirit
        ok = stats.std > 1e-6 * np.maximum(1.0, np.abs(stats.mean))
        np.testing.assert_allclose(z.mean(axis=0)[ok], 0.0, atol=1e-9)
        np.testing.assert_allclose(z.std(axis=0)[ok], 1.0, atol=1e-9)
        np.testing.assert_array_equal(z[:, stats.degenerate], 0.0)


def test_state_normalizer_estimator():
    X = np.array([[0.0, 5.0], [2.0, 5.0], [4.0, 5.0]])
    est = StateNormalizer().fit(X)
    np.testing.assert_array_equal(est.degenerate_, [False, True])
    Z = est.transform(X)
    np.testing.assert_allclose(Z[:, 0].std(), 1.0)
    np.testing.assert_array_equal(Z[:, 1], 0.0)
    assert est.get_params() == {}
