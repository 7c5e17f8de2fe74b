"""Trajectory containers, JSONL persistence and state normalization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class DatasetError(ValueError):
    """Raised for malformed or inconsistent trajectory data."""


class DimensionMismatchError(DatasetError):
    """Raised when a state does not have the expected dimension."""


def _as_states(states, d: int | None = None) -> np.ndarray:
    arr = np.array(states, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DatasetError(f"states must be a non-empty (n, d) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DatasetError("states contain NaN or Inf")
    if d is not None and arr.shape[1] != d:
        raise DimensionMismatchError(f"expected state dimension {d}, got {arr.shape[1]}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One episode of states, shape ``(n, d)``.

    ``ground_truth_return`` is only filled in for evaluation datasets.
    """

    states: np.ndarray
    ground_truth_return: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", _as_states(self.states))
        if self.ground_truth_return is not None:
            object.__setattr__(self, "ground_truth_return", float(self.ground_truth_return))

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.states.shape == other.states.shape
            and bool(np.array_equal(self.states, other.states))
            and self.ground_truth_return == other.ground_truth_return
        )

    def __hash__(self):
        return hash((self.states.tobytes(), self.ground_truth_return))


@dataclass(frozen=True)
class Dataset:
    trajectories: tuple[Trajectory, ...]
    state_dim: int
    name: str = ""
    source: str = ""

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        object.__setattr__(self, "trajectories", trajs)
        if not trajs:
            raise DatasetError("empty dataset")
        for i, tau in enumerate(trajs):
            if tau.d != self.state_dim:
                raise DimensionMismatchError(
                    f"trajectory {i} has state dimension {tau.d}, dataset expects {self.state_dim}"
                )

    @classmethod
    def from_trajectories(cls, trajectories: Iterable[Trajectory], name: str = "", source: str = "") -> "Dataset":
        trajs = tuple(trajectories)
        if not trajs:
            raise DatasetError("empty dataset")
        return cls(trajs, trajs[0].d, name=name, source=source)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    def pooled_states(self) -> np.ndarray:
        return np.concatenate([tau.states for tau in self.trajectories], axis=0)

    def returns(self) -> np.ndarray | None:
        vals = [tau.ground_truth_return for tau in self.trajectories]
        if any(v is None for v in vals):
            return None
        return np.asarray(vals, dtype=np.float64)


def as_trajectory_list(data) -> list[Trajectory]:
    """Accept a Dataset, a Trajectory list, or a list of ``(n, d)`` arrays."""
    if isinstance(data, Dataset):
        return list(data.trajectories)
    if isinstance(data, Trajectory):
        return [data]
    return [t if isinstance(t, Trajectory) else Trajectory(t) for t in data]


# JSONL persistence ---------------------------------------------------------


def _record_line(tau: Trajectory) -> str:
    return json.dumps({"states": tau.states.tolist(), "return": tau.ground_truth_return})


def dumps_dataset(data: Dataset) -> str:
    lines = [json.dumps({"meta": {"name": data.name, "d": data.state_dim, "source": data.source}})]
    lines.extend(_record_line(tau) for tau in data.trajectories)
    return "\n".join(lines) + "\n"


def save_dataset(data: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_dataset(data))
    return path


def load_dataset(path) -> Dataset:
    """Read a JSONL trajectory file.

    The optional first line ``{"meta": {...}}`` carries name and state
    dimension; every other non-blank line is ``{"states": [[...]], "return": x}``.
    """
    path = Path(path)
    name, source, declared_d = path.stem, str(path), None
    trajectories: list[Trajectory] = []
    d = None
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise DatasetError(f"{path}:{lineno}: expected a JSON object")
            if "meta" in rec:
                if trajectories:
                    raise DatasetError(f"{path}:{lineno}: meta header must precede trajectories")
                meta = rec["meta"] or {}
                name = meta.get("name", name)
                source = meta.get("source", source)
                declared_d = meta.get("d")
                if declared_d is not None and (not isinstance(declared_d, int) or declared_d < 1):
                    raise DatasetError(f"{path}:{lineno}: meta.d must be a positive integer")
                d = declared_d
                continue
            if "states" not in rec:
                raise DatasetError(f"{path}:{lineno}: record has no 'states' field")
            states = rec["states"]
            if not isinstance(states, list) or not states or not all(isinstance(s, list) for s in states):
                raise DatasetError(f"{path}:{lineno}: 'states' must be a non-empty list of lists")
            widths = {len(s) for s in states}
            if d is None:
                d = len(states[0])
            if widths != {d}:
                bad = next(w for w in (len(s) for s in states) if w != d)
                raise DimensionMismatchError(
                    f"{path}:{lineno}: trajectory {len(trajectories)} has a {bad}-entry state, expected d={d}"
                )
            ret = rec.get("return")
            if ret is not None and not isinstance(ret, (int, float)):
                raise DatasetError(f"{path}:{lineno}: 'return' must be a number or null")
            try:
                trajectories.append(Trajectory(states, ret))
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    if not trajectories:
        raise DatasetError("empty dataset")
    return Dataset(tuple(trajectories), d, name=name, source=source)


# Normalization -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    """Per-dimension mean and population std of pooled states."""

    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray = field(init=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).ravel()
        std = np.array(self.std, dtype=np.float64).ravel()
        if mean.shape != std.shape:
            raise DimensionMismatchError("mean and std lengths differ")
        if np.any(std < 0) or not np.all(np.isfinite(std)):
            raise ValueError("std entries must be finite and non-negative")
        mean.setflags(write=False)
        std.setflags(write=False)
        degenerate = std == 0
        degenerate.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "degenerate", degenerate)

    @property
    def d(self) -> int:
        return self.mean.size

    @property
    def degenerate_dims(self) -> frozenset[int]:
        return frozenset(int(i) for i in np.flatnonzero(self.degenerate))

    @property
    def active_dims(self) -> np.ndarray:
        return np.flatnonzero(~self.degenerate)

    def __eq__(self, other):
        if not isinstance(other, NormalizationStats):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(d["mean"], d["std"])


def fit_normalization(data) -> NormalizationStats:
    if isinstance(data, Dataset):
        states = data.pooled_states()
    else:
        states = np.concatenate([t.states for t in as_trajectory_list(data)], axis=0)
    return NormalizationStats(states.mean(axis=0), states.std(axis=0))


def normalize(s, stats: NormalizationStats) -> np.ndarray:
    """Z-score states with ``stats``; degenerate dimensions map to 0.

    Accepts a single state ``(d,)`` or a batch ``(..., d)``.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != stats.d:
        raise DimensionMismatchError(f"expected state dimension {stats.d}, got {s.shape[-1]}")
    safe_std = np.where(stats.degenerate, 1.0, stats.std)
    z = (s - stats.mean) / safe_std
    return np.where(stats.degenerate, 0.0, z)


class StateNormalizer(TransformerMixin, BaseEstimator):
    """Z-score transformer over pooled states.

    Fitted attributes mirror :class:`NormalizationStats`: ``mean_``,
    ``std_``, ``degenerate_``.
    """

    def fit(self, X, y=None):
        if isinstance(X, Dataset) or (isinstance(X, Sequence) and X and isinstance(X[0], Trajectory)):
            self.stats_ = fit_normalization(X)
        else:
            X = check_array(X)
            self.stats_ = NormalizationStats(X.mean(axis=0), X.std(axis=0))
        self.mean_ = self.stats_.mean
        self.std_ = self.stats_.std
        self.degenerate_ = self.stats_.degenerate
        self.n_features_in_ = self.stats_.d
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        X = check_array(X)
        return normalize(X, self.stats_)

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        X = check_array(X)
        return X * self.stats_.std + self.stats_.mean


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)
