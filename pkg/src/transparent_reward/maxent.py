"""Linear reward over selected monomials and max-entropy weight fitting."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import DimensionMismatchError, NormalizationStats, as_trajectory_list, fit_normalization, normalize
from .envlab import CEMPolicyLearner, Environment, LinearPolicy, PolicyLearnerConfig, collect_rollouts
from .features import CandidateSet, MonomialFeature, feature_expectations


@dataclass(frozen=True, eq=False)
class RewardModel:
    """``R(s) = weights . phi(normalize(s))``; one parameter per monomial."""

    features: CandidateSet
    weights: np.ndarray
    stats: NormalizationStats
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        if w.size != len(self.features):
            raise ValueError(f"{w.size} weights for {len(self.features)} features")
        if self.stats.d != self.features.d:
            raise DimensionMismatchError("stats and features disagree on state dimension")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "notes", tuple(self.notes))

    @property
    def parameter_count(self) -> int:
        return self.weights.size

    @property
    def d(self) -> int:
        return self.features.d

    def __call__(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=np.float64)
        if s.shape[-1] != self.d:
            raise DimensionMismatchError(f"expected state dimension {self.d}, got {s.shape[-1]}")
        flat = s.reshape(-1, self.d)
        r = self.features.evaluate(normalize(flat, self.stats)) @ self.weights
        return r.reshape(s.shape[:-1])

    def with_weights(self, weights, note: str | None = None) -> "RewardModel":
        notes = self.notes + ((note,) if note else ())
        return RewardModel(self.features, weights, self.stats, notes)

    def amend(self, index: int, factor: float) -> "RewardModel":
        """Scale a single term's weight by ``factor``."""
        if not 0 <= index < self.parameter_count:
            raise IndexError(f"term index {index} out of range 0..{self.parameter_count - 1}")
        w = self.weights.copy()
        w[index] *= factor
        name = self.features[index].name("z")
        return self.with_weights(w, f"amended term {index} ({name}) weight by factor {factor!r}")

    def render(self, precision: int = 3, var: str = "z") -> str:
        """Polynomial string over normalized variables, e.g. ``R = 0.57*z1 - 0.21*z0^2``."""
        parts = []
        for i, (w, f) in enumerate(zip(self.weights, self.features)):
            mag = f"{abs(w):.{precision}f}*{f.name(var)}"
            if i == 0:
                parts.append(("-" if w < 0 else "") + mag)
            else:
                parts.append(("- " if w < 0 else "+ ") + mag)
        return "R = " + (" ".join(parts) if parts else "0")

    def to_dict(self) -> dict:
        return {
            "stats": self.stats.to_dict(),
            "exponents": [list(f.exponents) for f in self.features],
            "weights": self.weights.tolist(),
            "terms": self.features.names("z"),
            "polynomial": self.render(),
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RewardModel":
        stats = NormalizationStats.from_dict(d["stats"])
        feats = CandidateSet(tuple(MonomialFeature(tuple(e)) for e in d["exponents"]), stats.d)
        return cls(feats, d["weights"], stats, tuple(d.get("notes", ())))

    @classmethod
    def from_json(cls, text: str) -> "RewardModel":
        return cls.from_dict(json.loads(text))


def reward_of_state(model: RewardModel, s) -> float:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (model.d,):
        raise DimensionMismatchError(f"expected state dimension {model.d}, got shape {s.shape}")
    return float(model(s))


def expert_feature_expectation(expert, features: CandidateSet, stats: NormalizationStats) -> np.ndarray:
    """Mean over trajectories of their summed feature values."""
    trajs = as_trajectory_list(expert)
    if not trajs:
        raise ValueError("empty dataset")
    return feature_expectations(features, trajs, stats).mean(axis=0)


def irl_step(model: RewardModel, mu_e, rollouts, lr: float) -> RewardModel:
    """One ascent step ``theta + lr * (mu_e - mu_a)``."""
    trajs = as_trajectory_list(rollouts)
    if not trajs:
        raise ValueError("empty rollouts")
    mu_a = expert_feature_expectation(trajs, model.features, model.stats)
    return model.with_weights(model.weights + lr * (np.asarray(mu_e) - mu_a))


# Exact likelihood on an enumerable trajectory set --------------------------


def exact_log_likelihood(theta, demo_features, all_features) -> float:
    """``sum_D theta.phi(tau) - |D| log Z`` with ``Z`` summed over ``all_features`` rows."""
    theta = np.asarray(theta, dtype=np.float64)
    demo = np.atleast_2d(demo_features)
    return float(np.sum(demo @ theta) - demo.shape[0] * logsumexp(np.asarray(all_features) @ theta))


def exact_gradient(theta, demo_features, all_features) -> np.ndarray:
    """``sum_D phi(tau) - |D| sum_T p(tau | theta) phi(tau)``."""
    theta = np.asarray(theta, dtype=np.float64)
    demo = np.atleast_2d(demo_features)
    allf = np.asarray(all_features, dtype=np.float64)
    logits = allf @ theta
    p = np.exp(logits - logsumexp(logits))
    return demo.sum(axis=0) - demo.shape[0] * (p @ allf)


# Outer IRL loop --------------------------------------------------------------


@dataclass
class IrlConfig:
    """Outer-loop settings.

    ``optimizer`` is ``"sgd"`` (plain ascent on ``mu_e - mu_a``) or ``"adam"``.
    Feature expectations are sums over a whole episode, so gradients reach
    ``1e2``-``1e4`` and the default SGD rate is correspondingly small.
    ``warm_start=False`` retrains the policy from scratch every iteration;
    warm-starting lets the learner drift into wall-hugging exploits of
    odd-degree terms that the next few updates cannot undo.
    """

    iterations: int = 50
    learning_rate: float = 2e-3
    lr_decay: float = 0.99
    rollouts_per_iter: int = 20
    seed: int = 0
    warm_start: bool = False
    optimizer: str = "sgd"
    max_step_norm: float | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.rollouts_per_iter < 1:
            raise ValueError("rollouts_per_iter must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.max_step_norm is not None and self.max_step_norm <= 0:
            raise ValueError("max_step_norm must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IterationRecord:
    iteration: int
    theta: np.ndarray
    grad_norm: float
    learner_return: float
    ground_truth_return: float
    divergence: float | None = None


@dataclass
class IrlTrace:
    records: list[IterationRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.records])

    @property
    def thetas(self) -> np.ndarray:
        return np.vstack([r.theta for r in self.records])

    @property
    def divergences(self) -> np.ndarray:
        return np.array([np.nan if r.divergence is None else r.divergence for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.records[0].theta.size if self.records else 0
        w.writerow(["iteration", "grad_norm", "learner_return", "ground_truth_return", "divergence"]
                   + [f"theta_{j}" for j in range(k)])
        for r in self.records:
            div = "" if r.divergence is None else repr(r.divergence)
            w.writerow([r.iteration, repr(r.grad_norm), repr(r.learner_return), repr(r.ground_truth_return), div]
                       + [repr(float(x)) for x in r.theta])
        return buf.getvalue()


class _Adam:
    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def direction(self, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


def run_irl(expert, features: CandidateSet, env: Environment, policy_learner=None,
            config: IrlConfig | None = None, stats: NormalizationStats | None = None,
            divergence=None):
    """Alternate policy learning and feature-expectation matching.

    Returns ``(reward_model, policy, trace)``. ``divergence`` is an optional
    callable ``(expert_dataset, rollouts) -> float`` recorded per iteration.
    """
    config = config or IrlConfig()
    trajs = as_trajectory_list(expert)
    if trajs[0].d != env.state_dim:
        raise DimensionMismatchError(f"dataset has d={trajs[0].d}, {env.name} has d={env.state_dim}")
    stats = stats or fit_normalization(trajs)
    learner = policy_learner or CEMPolicyLearner(PolicyLearnerConfig(seed=config.seed))
    init_ss, loop_ss = np.random.SeedSequence(config.seed).spawn(2)
    theta = np.random.default_rng(init_ss).uniform(-1.0, 1.0, size=len(features))
    mu_e = expert_feature_expectation(trajs, features, stats)
    adam = _Adam(theta.size) if config.optimizer == "adam" else None
    trace = IrlTrace()
    policy = None
    iter_seeds = loop_ss.spawn(config.iterations)
    for t in range(config.iterations):
        model = RewardModel(features, theta, stats)
        learn_ss, roll_ss = iter_seeds[t].spawn(2)
        warm = policy if config.warm_start else None
        policy = learner.learn(env, model, warm_start=warm, seed=learn_ss)
        rollouts = collect_rollouts(policy, env, config.rollouts_per_iter, roll_ss)
        mu_a = expert_feature_expectation(rollouts, features, stats)
        grad = mu_e - mu_a
        states = np.stack([r.states for r in rollouts])
        trace.records.append(IterationRecord(
            iteration=t,
            theta=theta.copy(),
            grad_norm=float(np.linalg.norm(grad)),
            learner_return=float(model(states).sum(axis=-1).mean()),
            ground_truth_return=float(np.mean(rollouts.returns())),
            divergence=None if divergence is None else float(divergence(trajs, rollouts)),
        ))
        lr = config.learning_rate * config.lr_decay**t
        step = lr * (adam.direction(grad) if adam is not None else grad)
        if config.max_step_norm is not None:
            norm = np.linalg.norm(step)
            if norm > config.max_step_norm:
                step = step * (config.max_step_norm / norm)
        theta = theta + step
    return RewardModel(features, theta, stats), policy, trace


class MaxEntIRL(BaseEstimator):
    """Fit reward weights over a fixed monomial set by max-entropy IRL.

    Parameters
    ----------
    env : Environment
        Simulator used for policy learning and rollouts.
    features : CandidateSet
        Selected monomials (e.g. ``PseudoLabelSelector().selected_``).
    iterations, learning_rate, lr_decay, rollouts_per_iter, optimizer, warm_start
        See :class:`IrlConfig`.
    learner_config : PolicyLearnerConfig, optional
    random_state : int, default=0
    """

    def __init__(self, env=None, features=None, iterations=50, learning_rate=2e-3, lr_decay=0.99,
                 rollouts_per_iter=20, optimizer="sgd", warm_start=False, learner_config=None,
                 random_state=0):
        self.env = env
        self.features = features
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.rollouts_per_iter = rollouts_per_iter
        self.optimizer = optimizer
        self.warm_start = warm_start
        self.learner_config = learner_config
        self.random_state = random_state

    def fit(self, X, y=None, stats=None, divergence=None):
        if self.env is None or self.features is None:
            raise ValueError("MaxEntIRL needs env and features")
        cfg = IrlConfig(self.iterations, self.learning_rate, self.lr_decay, self.rollouts_per_iter,
                        self.random_state, self.warm_start, self.optimizer)
        lcfg = self.learner_config or PolicyLearnerConfig(seed=self.random_state)
        self.reward_model_, self.policy_, self.trace_ = run_irl(
            X, self.features, self.env, CEMPolicyLearner(lcfg), cfg, stats=stats, divergence=divergence)
        self.coef_ = self.reward_model_.weights
        self.n_features_in_ = self.reward_model_.d
        return self

    def predict(self, X):
        """Recovered reward of each raw state row in ``X``."""
        check_is_fitted(self, "reward_model_")
        return self.reward_model_(check_array(X))
