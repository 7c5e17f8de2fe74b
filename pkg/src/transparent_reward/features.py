"""Monomial candidate features of degree 1..3 over normalized states."""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import (
    DimensionMismatchError,
    NormalizationStats,
    Trajectory,
    as_trajectory_list,
    fit_normalization,
    normalize,
)

MAX_SUPPORTED_DEGREE = 3


@dataclass(frozen=True, order=True)
class MonomialFeature:
    """Product ``prod_j z_j ** exponents[j]`` of normalized coordinates."""

    exponents: tuple[int, ...]

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if any(e < 0 for e in exps):
            raise ValueError("exponents must be non-negative")
        if not 1 <= sum(exps) <= MAX_SUPPORTED_DEGREE:
            raise ValueError(f"monomial degree must be in 1..{MAX_SUPPORTED_DEGREE}, got {sum(exps)}")
        object.__setattr__(self, "exponents", exps)

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    @property
    def d(self) -> int:
        return len(self.exponents)

    @property
    def dims(self) -> frozenset[int]:
        return frozenset(j for j, e in enumerate(self.exponents) if e)

    @classmethod
    def from_dims(cls, d: int, dims: Iterable[int]) -> "MonomialFeature":
        exps = [0] * d
        for j in dims:
            exps[j] += 1
        return cls(tuple(exps))

    def name(self, var: str = "s") -> str:
        parts = []
        for j, e in enumerate(self.exponents):
            if e == 1:
                parts.append(f"{var}{j}")
            elif e > 1:
                parts.append(f"{var}{j}^{e}")
        return "*".join(parts)

    def __str__(self) -> str:
        return self.name()


def eval_feature(f: MonomialFeature, s) -> float:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (f.d,):
        raise DimensionMismatchError(f"expected state dimension {f.d}, got shape {s.shape}")
    return float(np.prod(s ** np.asarray(f.exponents)))


@dataclass(frozen=True)
class CandidateSet:
    """Ordered, duplicate-free list of monomials over a ``d``-dim state."""

    features: tuple[MonomialFeature, ...]
    d: int

    def __post_init__(self):
        feats = tuple(self.features)
        object.__setattr__(self, "features", feats)
        if len(set(feats)) != len(feats):
            raise ValueError("duplicate monomials in candidate set")
        for f in feats:
            if f.d != self.d:
                raise DimensionMismatchError(f"monomial {f} is over {f.d} dims, set expects {self.d}")

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return CandidateSet(self.features[i], self.d)
        return self.features[i]

    def subset(self, indices: Sequence[int]) -> "CandidateSet":
        return CandidateSet(tuple(self.features[i] for i in indices), self.d)

    @property
    def exponent_matrix(self) -> np.ndarray:
        if not self.features:
            return np.zeros((0, self.d), dtype=np.int64)
        return np.array([f.exponents for f in self.features], dtype=np.int64)

    def names(self, var: str = "s") -> list[str]:
        return [f.name(var) for f in self.features]

    def evaluate(self, z) -> np.ndarray:
        """Feature matrix ``(n, K)`` for already-normalized states ``z``."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.d:
            raise DimensionMismatchError(f"expected state dimension {self.d}, got {z.shape[1]}")
        out = np.ones((z.shape[0], len(self.features)))
        for k, f in enumerate(self.features):
            for j, e in enumerate(f.exponents):
                if e == 1:
                    out[:, k] *= z[:, j]
                elif e:
                    out[:, k] *= z[:, j] ** e
        return out

    def to_json(self) -> str:
        return json.dumps({"d": self.d, "exponents": [list(f.exponents) for f in self.features]})

    @classmethod
    def from_json(cls, text: str) -> "CandidateSet":
        obj = json.loads(text)
        if isinstance(obj, list):
            exps = obj
            d = len(exps[0]) if exps else 0
        else:
            exps, d = obj["exponents"], obj["d"]
        return cls(tuple(MonomialFeature(tuple(e)) for e in exps), d)


def candidate_count(d: int, max_degree: int = 3) -> int:
    return comb(d + max_degree, max_degree) - 1


def generate_candidates(d: int, max_degree: int = 3, excluded_dims: Iterable[int] = ()) -> CandidateSet:
    """All monomials of degree 1..max_degree over the non-excluded dimensions.

    Ordering is by degree, then by ``combinations_with_replacement`` order of
    the dimension indices, e.g. for ``d=2``: s0, s1, s0^2, s0*s1, s1^2, ...
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if not 1 <= max_degree <= MAX_SUPPORTED_DEGREE:
        raise ValueError(f"max_degree must be in 1..{MAX_SUPPORTED_DEGREE}")
    excluded = set(int(j) for j in excluded_dims)
    dims = [j for j in range(d) if j not in excluded]
    feats = [
        MonomialFeature.from_dims(d, combo)
        for degree in range(1, max_degree + 1)
        for combo in combinations_with_replacement(dims, degree)
    ]
    return CandidateSet(tuple(feats), d)


def feature_matrix(phi: CandidateSet, states, stats: NormalizationStats) -> np.ndarray:
    """Per-state feature values ``(n, K)`` of raw ``states``."""
    return phi.evaluate(normalize(np.atleast_2d(states), stats))


def trajectory_feature_expectation(phi: CandidateSet, tau, stats: NormalizationStats) -> np.ndarray:
    """Undiscounted sum of feature values over the states of ``tau``."""
    states = tau.states if isinstance(tau, Trajectory) else np.atleast_2d(tau)
    if states.shape[1] != phi.d or stats.d != phi.d:
        raise DimensionMismatchError("trajectory, stats and features disagree on state dimension")
    if len(phi) == 0:
        return np.zeros(0)
    return feature_matrix(phi, states, stats).sum(axis=0)


def feature_expectations(phi: CandidateSet, data, stats: NormalizationStats) -> np.ndarray:
    """Row ``i`` is the feature expectation of trajectory ``i``; shape ``(N, K)``."""
    trajs = as_trajectory_list(data)
    if not trajs or len(phi) == 0:
        return np.zeros((len(trajs), len(phi)))
    if any(t.d != phi.d for t in trajs) or stats.d != phi.d:
        raise DimensionMismatchError("trajectory, stats and features disagree on state dimension")
    lengths = np.array([t.n for t in trajs])
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    values = feature_matrix(phi, np.concatenate([t.states for t in trajs], axis=0), stats)
    return np.add.reduceat(values, starts, axis=0)


class MonomialFeatures(TransformerMixin, BaseEstimator):
    """Expand raw states into normalized monomials of degree 1..max_degree.

    Degenerate (constant) input dimensions are left out of the expansion.
    """

    def __init__(self, max_degree=3):
        self.max_degree = max_degree

    def fit(self, X, y=None):
        if isinstance(X, np.ndarray) or (isinstance(X, list) and X and not isinstance(X[0], Trajectory)
                                          and np.ndim(X[0]) == 1):
            X = check_array(X)
            self.stats_ = NormalizationStats(X.mean(axis=0), X.std(axis=0))
        else:
            self.stats_ = fit_normalization(X)
        self.candidates_ = generate_candidates(self.stats_.d, self.max_degree, self.stats_.degenerate_dims)
        self.n_features_in_ = self.stats_.d
        return self

    def transform(self, X):
        check_is_fitted(self, "candidates_")
        X = check_array(X)
        return feature_matrix(self.candidates_, X, self.stats_)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "candidates_")
        return np.asarray(self.candidates_.names(), dtype=object)
