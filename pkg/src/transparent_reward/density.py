"""Gaussian kernel density estimates over states and consecutive-state pairs.

The trajectory log-probability used as a pseudo-label is

    log P(tau) = log P(s_1) + sum_t [log P(s_t, s_{t+1}) - log P(s_t)]

with the marginal and the pair density each estimated by a KDE on
normalized states.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import (
    DatasetError,
    DimensionMismatchError,
    NormalizationStats,
    Trajectory,
    as_trajectory_list,
    fit_normalization,
    normalize,
)

DEFAULT_DENSITY_FLOOR = 1e-300
_LOG_2PI = np.log(2.0 * np.pi)
_CHUNK = 256


class InsufficientDataError(DatasetError):
    pass


def scott_bandwidth(n_points: int, dim: int) -> float:
    """Scott's factor ``n ** (-1 / (dim + 4))`` for unit-variance data."""
    return float(n_points) ** (-1.0 / (dim + 4))


@dataclass(frozen=True, eq=False)
class GaussianKDE:
    """Diagonal-bandwidth Gaussian KDE with exact kernel sums.

    Dimensions flagged inactive carry no information (every point and every
    query sits at 0 there) and are dropped from the kernel.
    """

    points: np.ndarray
    bandwidth: np.ndarray
    active: np.ndarray
    density_floor: float = DEFAULT_DENSITY_FLOOR

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        bw = np.asarray(self.bandwidth, dtype=np.float64)
        act = np.asarray(self.active, dtype=bool)
        if pts.ndim != 2 or bw.shape != (pts.shape[1],) or act.shape != bw.shape:
            raise ValueError("inconsistent KDE shapes")
        if np.any(bw[act] <= 0):
            raise ValueError("bandwidth must be positive on active dimensions")
        if not self.density_floor > 0:
            raise ValueError("density_floor must be > 0")
        for name, arr in (("points", pts), ("bandwidth", bw), ("active", act)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        # scaled fit points on active dims, cached for evaluation
        scaled = pts[:, act] / bw[act]
        scaled.setflags(write=False)
        object.__setattr__(self, "_scaled", scaled)
        norm = -0.5 * act.sum() * _LOG_2PI - np.log(bw[act]).sum() - np.log(pts.shape[0])
        object.__setattr__(self, "_log_norm", float(norm))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def log_floor(self) -> float:
        return float(np.log(self.density_floor))

    def log_density(self, x) -> np.ndarray:
        """Clamped log-density at query points ``x`` of shape ``(m, dim)``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise DimensionMismatchError(f"expected {self.dim}-dim query, got {x.shape[1]}")
        q = x[:, self.active] / self.bandwidth[self.active]
        out = np.empty(x.shape[0])
        sq_pts = np.einsum("ij,ij->i", self._scaled, self._scaled)
        for lo in range(0, q.shape[0], _CHUNK):
            qc = q[lo:lo + _CHUNK]
            # |q - p|^2 expanded; clip tiny negatives from cancellation
            d2 = np.einsum("ij,ij->i", qc, qc)[:, None] + sq_pts[None, :] - 2.0 * qc @ self._scaled.T
            np.maximum(d2, 0.0, out=d2)
            out[lo:lo + _CHUNK] = logsumexp(-0.5 * d2, axis=1)
        return np.maximum(out + self._log_norm, self.log_floor)


def fit_kde(points: np.ndarray, active: np.ndarray | None = None,
            density_floor: float = DEFAULT_DENSITY_FLOOR, bandwidth=None) -> GaussianKDE:
    points = np.asarray(points, dtype=np.float64)
    n, dim = points.shape
    if active is None:
        active = np.ones(dim, dtype=bool)
    active = np.asarray(active, dtype=bool)
    if bandwidth is None or (isinstance(bandwidth, str) and bandwidth == "scott"):
        h = scott_bandwidth(n, int(active.sum()))
        bandwidth = np.where(active, h, 0.0)
    else:
        bandwidth = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (dim,)).copy()
    return GaussianKDE(points, bandwidth, active, density_floor)


@dataclass(frozen=True, eq=False)
class DensityModel:
    """Marginal KDE over ``R^d`` and pair KDE over ``R^{2d}`` on normalized states."""

    marginal: GaussianKDE
    joint: GaussianKDE
    stats: NormalizationStats

    @property
    def d(self) -> int:
        return self.stats.d

    @property
    def bandwidth(self) -> np.ndarray:
        return self.marginal.bandwidth

    @property
    def density_floor(self) -> float:
        return self.marginal.density_floor

    def _norm(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        if s.shape[-1] != self.d:
            raise DimensionMismatchError(f"expected state dimension {self.d}, got {s.shape[-1]}")
        return normalize(s, self.stats)

    def log_prob_states(self, states) -> np.ndarray:
        return self.marginal.log_density(self._norm(np.atleast_2d(states)))

    def log_prob_pairs(self, states, next_states) -> np.ndarray:
        z = self._norm(np.atleast_2d(states))
        zn = self._norm(np.atleast_2d(next_states))
        return self.joint.log_density(np.hstack([z, zn]))


def _consecutive_pairs(trajs: list[Trajectory]) -> np.ndarray | None:
    pairs = [np.hstack([t.states[:-1], t.states[1:]]) for t in trajs if t.n >= 2]
    return np.concatenate(pairs, axis=0) if pairs else None


def fit_density(data, stats: NormalizationStats | None = None, bandwidth="scott",
                density_floor: float = DEFAULT_DENSITY_FLOOR) -> DensityModel:
    """Fit marginal and pair KDEs on the normalized states of ``data``."""
    trajs = as_trajectory_list(data)
    if stats is None:
        stats = fit_normalization(trajs)
    states = np.concatenate([t.states for t in trajs], axis=0)
    if states.shape[0] < 2:
        raise InsufficientDataError("density fit needs at least 2 pooled states")
    if states.shape[1] != stats.d:
        raise DimensionMismatchError("stats and data dimensions differ")
    pairs = _consecutive_pairs(trajs)
    if pairs is None:
        raise InsufficientDataError("density fit needs at least one trajectory with 2 or more states")
    active = ~stats.degenerate
    z = normalize(states, stats)
    zp = np.hstack([normalize(pairs[:, :stats.d], stats), normalize(pairs[:, stats.d:], stats)])
    marginal = fit_kde(z, active, density_floor, bandwidth)
    scott = isinstance(bandwidth, str)
    if scott and bandwidth != "scott":
        raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
    joint = fit_kde(zp, np.concatenate([active, active]), density_floor,
                    None if scott else np.tile(marginal.bandwidth, 2))
    return DensityModel(marginal, joint, stats)


def log_prob_state(model: DensityModel, s) -> float:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1:
        raise DimensionMismatchError("expected a single state vector")
    return float(model.log_prob_states(s)[0])


def log_prob_pair(model: DensityModel, s_t, s_next) -> float:
    s_t, s_next = np.asarray(s_t, dtype=np.float64), np.asarray(s_next, dtype=np.float64)
    if s_t.ndim != 1 or s_next.ndim != 1:
        raise DimensionMismatchError("expected single state vectors")
    return float(model.log_prob_pairs(s_t, s_next)[0])


def log_prob_trajectory(model: DensityModel, tau) -> float:
    states = tau.states if isinstance(tau, Trajectory) else np.atleast_2d(np.asarray(tau, dtype=np.float64))
    lp_first = model.log_prob_states(states[:1])[0]
    if states.shape[0] == 1:
        return float(lp_first)
    lp_pairs = model.log_prob_pairs(states[:-1], states[1:])
    lp_states = model.log_prob_states(states[:-1])
    return float(lp_first + np.sum(lp_pairs - lp_states))


def log_prob_trajectories(model: DensityModel, data, workers: int = 1) -> np.ndarray:
    """Pseudo-labels for every trajectory; order follows the input."""
    trajs = as_trajectory_list(data)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(lambda t: log_prob_trajectory(model, t), trajs)))
    return np.array([log_prob_trajectory(model, t) for t in trajs])


class TrajectoryKDE(BaseEstimator):
    """Estimator wrapper: fit on expert trajectories, score trajectories.

    Parameters
    ----------
    bandwidth : "scott" or float or array-like, default="scott"
        Kernel bandwidth on normalized states.
    density_floor : float, default=1e-300
        Densities are clamped to this value before taking logs.
    """

    def __init__(self, bandwidth="scott", density_floor=DEFAULT_DENSITY_FLOOR):
        self.bandwidth = bandwidth
        self.density_floor = density_floor

    def fit(self, X, y=None):
        trajs = as_trajectory_list(X)
        self.stats_ = fit_normalization(trajs)
        self.model_ = fit_density(trajs, self.stats_, self.bandwidth, self.density_floor)
        self.n_features_in_ = self.stats_.d
        return self

    def score_samples(self, X):
        """Log-probability of each trajectory in ``X``."""
        check_is_fitted(self, "model_")
        return log_prob_trajectories(self.model_, X)

    def score(self, X, y=None):
        return float(np.sum(self.score_samples(X)))
