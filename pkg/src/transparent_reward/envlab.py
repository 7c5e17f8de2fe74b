"""Small continuous-control environments, rollouts and a CEM policy learner.

Environments are vectorized: ``reset`` and ``step`` operate on a batch of
states of shape ``(..., d)`` so a whole CEM population can be simulated at
once. Ground-truth rewards depend on the state only.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Dataset, Trajectory, as_seed_sequence, as_trajectory_list


class UnknownEnvironmentError(KeyError):
    pass


class Environment:
    """Base class. Subclasses set the class attributes and implement
    :meth:`_dynamics` and :meth:`ground_truth_reward`."""

    name: str = "env"
    state_dim: int
    action_dim: int
    action_low: float = -1.0
    action_high: float = 1.0
    state_labels: tuple[str, ...] = ()
    velocity_dims: tuple[int, ...] = ()

    def __init__(self, horizon: int = 100, dt: float = 0.1, process_noise: float = 0.0):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = int(horizon)
        self.dt = float(dt)
        self.process_noise = float(process_noise)

    def reset(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        raise NotImplementedError

    def _dynamics(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step(self, s, a, rng: np.random.Generator | None = None) -> np.ndarray:
        a = np.clip(np.asarray(a, dtype=np.float64), self.action_low, self.action_high)
        nxt = self._dynamics(np.asarray(s, dtype=np.float64), a)
        if self.process_noise > 0:
            if rng is None:
                raise ValueError("a noisy environment needs an rng")
            nxt = nxt + self.process_noise * rng.standard_normal(nxt.shape)
        return nxt

    def ground_truth_reward(self, s) -> np.ndarray | float:
        raise NotImplementedError

    def config(self) -> dict:
        return {"name": self.name, "horizon": self.horizon, "dt": self.dt, "process_noise": self.process_noise}

    def __repr__(self):
        return f"{type(self).__name__}(horizon={self.horizon}, dt={self.dt})"


class PointMass1D(Environment):
    """Double integrator on a line; state ``(p, v)``; reward ``-p^2 - 0.1 v^2``.

    Position and velocity saturate at ``pos_limit`` and ``vel_limit``. The
    walls bound how far an odd-degree learned reward can be exploited.
    """

    name = "PointMass1D"
    state_dim = 2
    action_dim = 1
    state_labels = ("p", "v")
    velocity_dims = (1,)

    def __init__(self, horizon=100, dt=0.1, process_noise=0.0, init_pos_range=1.0, init_vel_range=0.0,
                 pos_limit=1.0, vel_limit=1.0):
        super().__init__(horizon, dt, process_noise)
        self.init_pos_range = float(init_pos_range)
        self.init_vel_range = float(init_vel_range)
        self.pos_limit = float(pos_limit)
        self.vel_limit = float(vel_limit)

    def reset(self, rng, n=None):
        size = () if n is None else (n,)
        p = rng.uniform(-self.init_pos_range, self.init_pos_range, size=size)
        v = rng.uniform(-self.init_vel_range, self.init_vel_range, size=size)
        return np.stack([p, v], axis=-1)

    def _dynamics(self, s, a):
        p, v = s[..., 0], s[..., 1]
        p_next = np.clip(p + v * self.dt, -self.pos_limit, self.pos_limit)
        v_next = np.clip(v + a[..., 0] * self.dt, -self.vel_limit, self.vel_limit)
        return np.stack([p_next, v_next], axis=-1)

    def ground_truth_reward(self, s):
        s = np.asarray(s, dtype=np.float64)
        return -s[..., 0] ** 2 - 0.1 * s[..., 1] ** 2

    def config(self):
        return {**super().config(), "init_pos_range": self.init_pos_range, "init_vel_range": self.init_vel_range,
                "pos_limit": self.pos_limit, "vel_limit": self.vel_limit}


class PointMass2D(Environment):
    """Planar reach task; state ``(px, py, vx, vy)``; reward ``-|p - g|^2 - 0.1 |v|^2``.

    Coordinates saturate per axis at ``pos_limit`` / ``vel_limit``.
    """

    name = "PointMass2D"
    state_dim = 4
    action_dim = 2
    state_labels = ("px", "py", "vx", "vy")
    velocity_dims = (2, 3)

    def __init__(self, horizon=100, dt=0.1, process_noise=0.0, goal=(0.5, -0.5),
                 init_pos_range=1.0, init_vel_range=0.0, pos_limit=1.0, vel_limit=1.0):
        super().__init__(horizon, dt, process_noise)
        self.goal = np.asarray(goal, dtype=np.float64).reshape(2)
        self.init_pos_range = float(init_pos_range)
        self.init_vel_range = float(init_vel_range)
        self.pos_limit = float(pos_limit)
        self.vel_limit = float(vel_limit)

    def reset(self, rng, n=None):
        size = (2,) if n is None else (n, 2)
        p = rng.uniform(-self.init_pos_range, self.init_pos_range, size=size)
        v = rng.uniform(-self.init_vel_range, self.init_vel_range, size=size)
        return np.concatenate([p, v], axis=-1)

    def _dynamics(self, s, a):
        p, v = s[..., :2], s[..., 2:]
        p_next = np.clip(p + v * self.dt, -self.pos_limit, self.pos_limit)
        v_next = np.clip(v + a * self.dt, -self.vel_limit, self.vel_limit)
        return np.concatenate([p_next, v_next], axis=-1)

    def ground_truth_reward(self, s):
        s = np.asarray(s, dtype=np.float64)
        dp = s[..., :2] - self.goal
        return -np.sum(dp**2, axis=-1) - 0.1 * np.sum(s[..., 2:] ** 2, axis=-1)

    def config(self):
        return {**super().config(), "goal": self.goal.tolist(), "init_pos_range": self.init_pos_range,
                "init_vel_range": self.init_vel_range, "pos_limit": self.pos_limit, "vel_limit": self.vel_limit}


class CubicRidge(Environment):
    """Kinematic point in the box ``[-2, 2]^2``; reward ``s0 - 0.5 s0 s1^2``.

    The optimum sits at ``(2, 0)``; the reward has a third-order cross term.
    """

    name = "CubicRidge"
    state_dim = 2
    action_dim = 2
    state_labels = ("s0", "s1")
    bound = 2.0

    def __init__(self, horizon=100, dt=0.1, process_noise=0.0, init_range=1.0):
        super().__init__(horizon, dt, process_noise)
        self.init_range = float(init_range)

    def reset(self, rng, n=None):
        size = (2,) if n is None else (n, 2)
        return rng.uniform(-self.init_range, self.init_range, size=size)

    def _dynamics(self, s, a):
        return np.clip(s + a * self.dt, -self.bound, self.bound)

    def ground_truth_reward(self, s):
        s = np.asarray(s, dtype=np.float64)
        return s[..., 0] - 0.5 * s[..., 0] * s[..., 1] ** 2

    def config(self):
        return {**super().config(), "init_range": self.init_range}


_REGISTRY: dict[str, type[Environment]] = {
    cls.name: cls for cls in (PointMass1D, PointMass2D, CubicRidge)
}


def builtin_envs() -> dict[str, type[Environment]]:
    return dict(_REGISTRY)


def make_env(name: str, **kwargs) -> Environment:
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise UnknownEnvironmentError(f"unknown environment {name!r}; choose from {sorted(_REGISTRY)}") from None
    return cls(**kwargs)


# Policies ------------------------------------------------------------------


class Policy:
    action_dim: int

    def act(self, states: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @staticmethod
    def from_dict(d: dict) -> "Policy":
        kind = d.get("type")
        if kind == "linear":
            return LinearPolicy(np.asarray(d["gain"], dtype=np.float64), d["action_low"], d["action_high"])
        if kind == "uniform":
            return UniformRandomPolicy(d["action_dim"], d["action_low"], d["action_high"])
        raise ValueError(f"unknown policy type {kind!r}")

    @staticmethod
    def from_json(text: str) -> "Policy":
        return Policy.from_dict(json.loads(text))


class LinearPolicy(Policy):
    """``a = clip(K @ [s, 1])`` with ``K`` of shape ``(action_dim, d + 1)``."""

    def __init__(self, gain, action_low=-1.0, action_high=1.0):
        gain = np.array(gain, dtype=np.float64)
        if gain.ndim != 2:
            raise ValueError("gain must be a matrix")
        self.gain = gain
        self.action_low = float(action_low)
        self.action_high = float(action_high)

    @classmethod
    def zeros(cls, env: Environment) -> "LinearPolicy":
        return cls(np.zeros((env.action_dim, env.state_dim + 1)), env.action_low, env.action_high)

    @classmethod
    def from_params(cls, params, env: Environment) -> "LinearPolicy":
        return cls(np.asarray(params, dtype=np.float64).reshape(env.action_dim, env.state_dim + 1),
                   env.action_low, env.action_high)

    @property
    def action_dim(self) -> int:
        return self.gain.shape[0]

    @property
    def params(self) -> np.ndarray:
        return self.gain.ravel().copy()

    def act(self, states, rng=None):
        s = np.asarray(states, dtype=np.float64)
        a = s @ self.gain[:, :-1].T + self.gain[:, -1]
        return np.clip(a, self.action_low, self.action_high)

    def to_dict(self):
        return {"type": "linear", "gain": self.gain.tolist(), "action_low": self.action_low,
                "action_high": self.action_high}

    def __eq__(self, other):
        return isinstance(other, LinearPolicy) and np.array_equal(self.gain, other.gain)

    def __repr__(self):
        return f"LinearPolicy(gain={self.gain.tolist()})"


class UniformRandomPolicy(Policy):
    def __init__(self, action_dim: int, action_low=-1.0, action_high=1.0):
        self.action_dim = int(action_dim)
        self.action_low = float(action_low)
        self.action_high = float(action_high)

    def act(self, states, rng=None):
        if rng is None:
            raise ValueError("UniformRandomPolicy needs an rng")
        shape = np.shape(states)[:-1] + (self.action_dim,)
        return rng.uniform(self.action_low, self.action_high, size=shape)

    def to_dict(self):
        return {"type": "uniform", "action_dim": self.action_dim, "action_low": self.action_low,
                "action_high": self.action_high}


# Rollouts ------------------------------------------------------------------


def simulate(env: Environment, policy: Policy, starts: np.ndarray, rng: np.random.Generator | None = None):
    """Roll ``policy`` from each start for ``env.horizon`` states; ``(E, n, d)``."""
    s = np.asarray(starts, dtype=np.float64)
    out = np.empty(s.shape[:-1] + (env.horizon, env.state_dim))
    for t in range(env.horizon):
        out[..., t, :] = s
        if t + 1 < env.horizon:
            s = env.step(s, policy.act(s, rng), rng)
    return out


def simulate_linear_population(env: Environment, gains: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """States of every (candidate, start) pair: ``(P, E, n, d)``; noise-free envs only."""
    P = gains.shape[0]
    K, b = gains[:, :, :-1], gains[:, :, -1]
    s = np.broadcast_to(starts, (P,) + starts.shape).copy()
    out = np.empty((P, starts.shape[0], env.horizon, env.state_dim))
    for t in range(env.horizon):
        out[:, :, t, :] = s
        if t + 1 < env.horizon:
            a = np.einsum("ped,pad->pea", s, K) + b[:, None, :]
            s = env.step(s, a)
    return out


def discounted_returns(rewards: np.ndarray, discount: float) -> np.ndarray:
    """Sum over the last axis weighted by ``discount ** t``."""
    if discount == 1.0:
        return rewards.sum(axis=-1)
    w = discount ** np.arange(rewards.shape[-1])
    return rewards @ w


def _rewards_of(reward_fn, states: np.ndarray) -> np.ndarray:
    d = states.shape[-1]
    return np.asarray(reward_fn(states.reshape(-1, d)), dtype=np.float64).reshape(states.shape[:-1])


def collect_rollouts(policy: Policy, env: Environment, count: int, seed, name: str = "rollouts") -> Dataset:
    """``count`` episodes from seeded resets; returns carry the ground-truth return."""
    if count < 1:
        raise ValueError("count must be >= 1")
    ss = as_seed_sequence(seed)
    reset_ss, act_ss = ss.spawn(2)
    starts = env.reset(np.random.default_rng(reset_ss), count)
    states = simulate(env, policy, starts, np.random.default_rng(act_ss))
    if not np.all(np.isfinite(states)):
        raise FloatingPointError("environment produced non-finite states")
    gt = _rewards_of(env.ground_truth_reward, states).sum(axis=-1)
    trajs = tuple(Trajectory(states[i], float(gt[i])) for i in range(count))
    return Dataset(trajs, env.state_dim, name=name, source=f"{env.name} rollouts")


def ground_truth_returns(env: Environment, data) -> np.ndarray:
    return np.array([float(np.sum(env.ground_truth_reward(t.states))) for t in as_trajectory_list(data)])


def mean_return(env: Environment, policy: Policy, reward_fn, episodes: int = 20, seed=0,
                discount: float = 1.0) -> float:
    data = collect_rollouts(policy, env, episodes, seed)
    states = np.stack([t.states for t in data])
    return float(discounted_returns(_rewards_of(reward_fn, states), discount).mean())


# Policy learning -----------------------------------------------------------


@dataclass
class PolicyLearnerConfig:
    """Cross-entropy search settings. ``generations`` is the training budget."""

    discount: float = 0.99
    generations: int = 30
    population: int = 32
    elite_frac: float = 0.25
    init_std: float = 2.0
    min_std: float = 0.05
    episodes: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.discount <= 1:
            raise ValueError("discount must be in (0, 1]")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.population < 2 or self.episodes < 1:
            raise ValueError("population must be >= 2 and episodes >= 1")
        if not 0 < self.elite_frac <= 1:
            raise ValueError("elite_frac must be in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CEMHistory:
    best_returns: list[float] = field(default_factory=list)
    mean_returns: list[float] = field(default_factory=list)


class CEMPolicyLearner:
    """Cross-entropy method over :class:`LinearPolicy` gains.

    Every call scores candidates on one fixed set of seeded start states, so
    the best-so-far return never decreases and a budget of 0 returns the
    warm start unchanged.
    """

    def __init__(self, config: PolicyLearnerConfig | None = None):
        self.config = config or PolicyLearnerConfig()
        self.history_ = CEMHistory()

    def population_returns(self, env: Environment, reward_fn, gains: np.ndarray, starts: np.ndarray) -> np.ndarray:
        states = simulate_linear_population(env, gains, starts)
        rets = discounted_returns(_rewards_of(reward_fn, states), self.config.discount)
        return rets.mean(axis=1)

    def learn(self, env: Environment, reward_fn, warm_start: LinearPolicy | None = None, seed=None) -> LinearPolicy:
        cfg = self.config
        if env.process_noise > 0:
            raise ValueError("CEM learner assumes noise-free dynamics")
        ss = as_seed_sequence(cfg.seed if seed is None else seed)
        start_ss, search_ss = ss.spawn(2)
        starts = env.reset(np.random.default_rng(start_ss), cfg.episodes)
        rng = np.random.default_rng(search_ss)
        base = warm_start if warm_start is not None else LinearPolicy.zeros(env)
        shape = base.gain.shape
        mean = base.gain.ravel().copy()
        std = np.full_like(mean, cfg.init_std)
        best_params = mean.copy()
        best = float(self.population_returns(env, reward_fn, mean.reshape((1,) + shape), starts)[0])
        history = CEMHistory([best], [best])
        n_elite = max(1, int(round(cfg.elite_frac * cfg.population)))
        for _ in range(cfg.generations):
            cand = mean + std * rng.standard_normal((cfg.population, mean.size))
            cand = np.vstack([mean, cand])
            rets = self.population_returns(env, reward_fn, cand.reshape((-1,) + shape), starts)
            rets = np.where(np.isfinite(rets), rets, -np.inf)
            order = np.lexsort((np.arange(rets.size), -rets))
            if rets[order[0]] > best:
                best = float(rets[order[0]])
                best_params = cand[order[0]].copy()
            elite = cand[order[:n_elite]]
            mean = elite.mean(axis=0)
            std = np.maximum(elite.std(axis=0), cfg.min_std)
            history.best_returns.append(best)
            history.mean_returns.append(float(np.mean(rets[np.isfinite(rets)])) if np.isfinite(rets).any() else -np.inf)
        self.history_ = history
        return LinearPolicy(best_params.reshape(shape), env.action_low, env.action_high)


def learn_policy(env: Environment, reward_fn, config: PolicyLearnerConfig | None = None,
                 warm_start: LinearPolicy | None = None, seed=None) -> LinearPolicy:
    return CEMPolicyLearner(config).learn(env, reward_fn, warm_start=warm_start, seed=seed)


