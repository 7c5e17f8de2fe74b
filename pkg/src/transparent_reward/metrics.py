"""Reward correlation and state-distribution divergence."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .core import DimensionMismatchError, as_trajectory_list
from .envlab import Environment, Policy, collect_rollouts, ground_truth_returns


class UndefinedCorrelationError(ValueError):
    pass


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation is undefined for a zero-variance input")
    return float(np.clip((xc @ yc) / np.sqrt(sxx * syy), -1.0, 1.0))


def wasserstein_1d(a, b) -> float:
    """W1 between two empirical distributions: integral of |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    grid = np.sort(np.concatenate([a, b]))
    gaps = np.diff(grid)
    fa = np.searchsorted(a, grid[:-1], side="right") / a.size
    fb = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * gaps))


def projection_directions(d: int, projections: int, seed) -> np.ndarray:
    """``projections`` seeded unit vectors in ``R^d``, one per row."""
    u = np.random.default_rng(seed).standard_normal((projections, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _pooled(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return np.atleast_2d(data)
    return np.concatenate([t.states for t in as_trajectory_list(data)], axis=0)


def sliced_wasserstein(A, B, projections: int = 128, seed=0) -> float:
    """Mean 1-D W1 of pooled states projected on seeded random directions."""
    a, b = _pooled(A), _pooled(B)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"state dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    dirs = projection_directions(a.shape[1], projections, seed)
    pa, pb = a @ dirs.T, b @ dirs.T
    return float(np.mean([wasserstein_1d(pa[:, i], pb[:, i]) for i in range(projections)]))


wasserstein_state_divergence = sliced_wasserstein


@dataclass
class EvalReport:
    pearson_r: float
    wasserstein: float
    mean_return_ground_truth: float
    mean_return_recovered: float
    parameter_count: int
    mean_speed: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def table(self) -> str:
        rows = [(k, v) for k, v in asdict(self).items() if v is not None]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v:.6g}" if isinstance(v, float) else f"{k.ljust(width)}  {v}"
                         for k, v in rows)


def return_pairs(model, env: Environment, data) -> np.ndarray:
    """``(N, 2)`` array of per-trajectory (ground-truth, recovered) undiscounted returns."""
    trajs = as_trajectory_list(data)
    gt = ground_truth_returns(env, trajs)
    rec = np.array([float(np.sum(model(t.states))) for t in trajs])
    return np.column_stack([gt, rec])


def return_pairs_csv(pairs: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trajectory", "ground_truth_return", "recovered_return"])
    for i, (g, r) in enumerate(pairs):
        w.writerow([i, repr(float(g)), repr(float(r))])
    return buf.getvalue()


def mean_speed(env: Environment, data) -> float:
    """Mean Euclidean norm of the velocity coordinates over all states."""
    if not env.velocity_dims:
        raise ValueError(f"{env.name} has no velocity coordinates")
    states = _pooled(data)[:, list(env.velocity_dims)]
    return float(np.linalg.norm(states, axis=1).mean())


def evaluate(model, policy: Policy, env: Environment, expert, episodes: int = 20, seed=0,
             projections: int = 128) -> EvalReport:
    """Roll out ``policy`` and compare it and ``model`` against ``expert``.

    ``mean_speed`` of the rollouts is reported for environments that declare
    velocity coordinates.
    """
    ss = np.random.SeedSequence(seed)
    roll_ss, proj_ss = ss.spawn(2)
    rollouts = collect_rollouts(policy, env, episodes, roll_ss)
    states = np.stack([t.states for t in rollouts])
    pairs = return_pairs(model, env, expert)
    return EvalReport(
        pearson_r=pearson(pairs[:, 0], pairs[:, 1]),
        wasserstein=sliced_wasserstein(expert, rollouts, projections, proj_ss),
        mean_return_ground_truth=float(np.mean(rollouts.returns())),
        mean_return_recovered=float(model(states).sum(axis=-1).mean()),
        parameter_count=int(getattr(model, "parameter_count", 0)),
        mean_speed=mean_speed(env, rollouts) if env.velocity_dims else None,
    )
