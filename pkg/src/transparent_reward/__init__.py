"""Transparent polynomial rewards learned from state-only demonstrations.

Pipeline: KDE pseudo-labels rank degree<=3 monomials of normalized states,
the top ``k`` become features of a linear reward, and max-entropy
feature-expectation matching fits the weights.
"""

from .core import (
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
from .density import DensityModel, TrajectoryKDE, fit_density, log_prob_trajectory
from .envlab import (
    CEMPolicyLearner,
    LinearPolicy,
    PolicyLearnerConfig,
    builtin_envs,
    collect_rollouts,
    learn_policy,
    make_env,
)
from .features import CandidateSet, MonomialFeature, MonomialFeatures, generate_candidates
from .maxent import IrlConfig, MaxEntIRL, RewardModel, run_irl
from .metrics import EvalReport, evaluate, pearson, sliced_wasserstein
from .selection import PseudoLabelSelector, rank_features

__version__ = "0.1.0"

__all__ = [
    "CEMPolicyLearner", "CandidateSet", "Dataset", "DatasetError", "DensityModel", "DimensionMismatchError",
    "EvalReport", "IrlConfig", "LinearPolicy", "MaxEntIRL", "MonomialFeature", "MonomialFeatures",
    "NormalizationStats", "PolicyLearnerConfig", "PseudoLabelSelector", "RewardModel", "StateNormalizer",
    "Trajectory", "TrajectoryKDE", "builtin_envs", "collect_rollouts", "evaluate", "fit_density",
    "fit_normalization", "generate_candidates", "learn_policy", "load_dataset", "log_prob_trajectory",
    "make_env", "normalize", "pearson", "rank_features", "run_irl", "save_dataset", "sliced_wasserstein",
]
