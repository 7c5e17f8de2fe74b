"""Unsupervised ranking of candidate monomials against KDE pseudo-labels."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import Dataset, NormalizationStats, as_trajectory_list, fit_normalization
from .density import DensityModel, fit_density, log_prob_trajectories
from .features import CandidateSet, feature_expectations, generate_candidates

F_CEILING = 1e12
EXPERT, AUGMENTED = "expert", "augmented"


@dataclass(frozen=True, eq=False)
class SelectionTable:
    X: np.ndarray
    Y: np.ndarray
    row_tags: tuple[str, ...]

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64).ravel()
        if X.ndim != 2 or X.shape[0] != Y.shape[0] or len(self.row_tags) != Y.shape[0]:
            raise ValueError("X rows, Y length and row_tags must agree")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "row_tags", tuple(self.row_tags))

    @property
    def n_rows(self) -> int:
        return self.Y.shape[0]

    @property
    def n_expert(self) -> int:
        return sum(t == EXPERT for t in self.row_tags)


@dataclass(frozen=True, eq=False)
class RankingResult:
    scores: np.ndarray
    order: np.ndarray
    selected: np.ndarray
    fold_scores: np.ndarray | None = None


def augmentation_bounds(expert_labels) -> tuple[float, float]:
    """``(min, 10th percentile)`` of expert labels, linear interpolation."""
    y = np.asarray(expert_labels, dtype=np.float64)
    return float(y.min()), float(np.percentile(y, 10, method="linear"))


def build_table(expert, nonexpert, phi: CandidateSet, model: DensityModel,
                stats: NormalizationStats, seed: int = 0, workers: int = 1) -> SelectionTable:
    """Stack expert and non-expert feature expectations with their labels.

    Expert rows are labelled with their KDE log-probability. Non-expert rows
    get labels drawn uniformly from the bottom decile of the expert labels.
    """
    expert = as_trajectory_list(expert)
    if not expert:
        raise ValueError("empty expert dataset")
    nonexpert = as_trajectory_list(nonexpert) if nonexpert is not None else []
    y_exp = log_prob_trajectories(model, expert, workers=workers)
    X_exp = feature_expectations(phi, expert, stats)
    if not nonexpert:
        return SelectionTable(X_exp, y_exp, (EXPERT,) * len(expert))
    lo, hi = augmentation_bounds(y_exp)
    rng = np.random.default_rng(seed)
    y_aug = rng.uniform(lo, hi, size=len(nonexpert))
    X_aug = feature_expectations(phi, nonexpert, stats)
    return SelectionTable(
        np.vstack([X_exp, X_aug]),
        np.concatenate([y_exp, y_aug]),
        (EXPERT,) * len(expert) + (AUGMENTED,) * len(nonexpert),
    )


def f_scores(X, y, min_samples: int = 3) -> np.ndarray:
    """Column-wise univariate regression F statistic ``r^2 / (1 - r^2) * (N - 2)``.

    Zero-variance columns (or a constant target) score 0; perfect fits are
    capped at ``F_CEILING``. With ``N = 2`` (allowed only inside the fold loop)
    there are no residual degrees of freedom and every column scores 0.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim == 1:
        X = X[:, None]
    n = y.shape[0]
    if n < min_samples:
        raise ValueError(f"F statistic needs at least {min_samples} samples")
    if X.shape[0] != n:
        raise ValueError("X and y lengths differ")
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    # axis-0 sums keep every column's arithmetic independent of its neighbours
    sxx = (Xc * Xc).sum(axis=0)
    syy = float(yc @ yc)
    sxy = (Xc * yc[:, None]).sum(axis=0)
    # relative tolerance against round-off in the centring
    flat_x = sxx <= (1e-12 * np.maximum(np.abs(X).max(axis=0), 1e-300)) ** 2 * n
    flat_y = syy <= (1e-12 * max(np.abs(y).max(), 1e-300)) ** 2 * n
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(flat_x | flat_y | (n < 3), 0.0, sxy**2 / (sxx * syy))
    r2 = np.clip(r2, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        F = np.where(r2 >= 1.0, F_CEILING, r2 / (1.0 - r2) * (n - 2))
    return np.minimum(F, F_CEILING)


def f_statistic(x, y) -> float:
    return float(f_scores(np.asarray(x, dtype=np.float64)[:, None], y)[0])


def fold_assignment(n_rows: int, folds: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n_rows)
    fold_of = np.empty(n_rows, dtype=np.int64)
    for f, idx in enumerate(np.array_split(perm, folds)):
        fold_of[idx] = f
    return fold_of


_COLUMN_BLOCK = 256


def rank_features(table: SelectionTable, folds: int = 5, seed: int = 0, k: int | None = None) -> RankingResult:
    """Mean F statistic over fold complements; descending, ties by column index."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    n = table.n_rows
    if n < 2 * folds:
        raise ValueError(f"{n} rows are too few for {folds} folds (need >= {2 * folds})")
    fold_of = fold_assignment(n, folds, seed)
    K = table.X.shape[1]
    per_fold = np.empty((folds, K))
    # column blocks keep the working set cache-sized, so time stays linear in K;
    # per-column arithmetic is block-independent, so scores are unchanged
    for lo in range(0, K, _COLUMN_BLOCK):
        block = table.X[:, lo:lo + _COLUMN_BLOCK]
        for f in range(folds):
            keep = fold_of != f
            per_fold[f, lo:lo + _COLUMN_BLOCK] = f_scores(block[keep], table.Y[keep], min_samples=2)
    scores = per_fold.mean(axis=0)
    order = np.lexsort((np.arange(scores.size), -scores))
    k = K if k is None else k
    if not 1 <= k <= K:
        raise ValueError(f"k must be in 1..{K}, got {k}")
    return RankingResult(scores, order, order[:k].copy(), per_fold)


def select_topk(ranking: RankingResult, k: int, phi: CandidateSet | None = None):
    """First ``k`` columns in ranking order, as indices or as a CandidateSet."""
    K = ranking.scores.size
    if not 1 <= k <= K:
        raise ValueError(f"k must be in 1..{K}, got {k}")
    idx = ranking.order[:k]
    return idx.copy() if phi is None else phi.subset(idx)


def ranking_csv(ranking: RankingResult, phi: CandidateSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "feature", "score", "selected"])
    chosen = set(int(i) for i in ranking.selected)
    for rank, j in enumerate(ranking.order, start=1):
        w.writerow([rank, phi[j].name(), repr(float(ranking.scores[j])), int(j in chosen)])
    return buf.getvalue()


class PseudoLabelSelector(BaseEstimator):
    """Pick the ``k`` monomials whose trajectory sums best predict KDE log-probabilities.

    Parameters
    ----------
    k : int, default=12
        Number of features to keep; clipped to the candidate count.
    max_degree : int, default=3
        Highest monomial degree in the candidate set.
    folds : int, default=5
        Cross-validation folds for score aggregation.
    augment_fraction : float, default=0.3
        Non-expert rows to keep, as a fraction of the expert count.
    bandwidth, density_floor
        Passed to the density fit.
    random_state : int, default=0

    Attributes
    ----------
    stats_, density_, candidates_, table_, ranking_, selected_
    """

    def __init__(self, k=12, max_degree=3, folds=5, augment_fraction=0.3,
                 bandwidth="scott", density_floor=1e-300, random_state=0, workers=1):
        self.k = k
        self.max_degree = max_degree
        self.folds = folds
        self.augment_fraction = augment_fraction
        self.bandwidth = bandwidth
        self.density_floor = density_floor
        self.random_state = random_state
        self.workers = workers

    def fit(self, X, y=None, nonexpert=None):
        """``X`` are expert trajectories; ``nonexpert`` optional augmentation pool."""
        expert = as_trajectory_list(X)
        self.stats_ = fit_normalization(expert)
        self.density_ = fit_density(expert, self.stats_, self.bandwidth, self.density_floor)
        self.candidates_ = generate_candidates(self.stats_.d, self.max_degree, self.stats_.degenerate_dims)
        pool = as_trajectory_list(nonexpert) if nonexpert is not None else []
        n_aug = min(len(pool), int(round(self.augment_fraction * len(expert))))
        pool = pool[:n_aug]
        seeds = np.random.SeedSequence(self.random_state).spawn(2)
        self.table_ = build_table(expert, pool, self.candidates_, self.density_, self.stats_,
                                  seed=int(seeds[0].generate_state(1)[0]), workers=self.workers)
        k = min(self.k, len(self.candidates_))
        self.ranking_ = rank_features(self.table_, self.folds, int(seeds[1].generate_state(1)[0]), k=k)
        self.selected_ = select_topk(self.ranking_, k, self.candidates_)
        self.n_features_in_ = self.stats_.d
        return self

    def get_support(self, indices=False):
        check_is_fitted(self, "ranking_")
        if indices:
            return self.ranking_.selected.copy()
        mask = np.zeros(len(self.candidates_), dtype=bool)
        mask[self.ranking_.selected] = True
        return mask

    def transform(self, X):
        """Trajectory feature expectations of the selected monomials, ``(N, k)``."""
        check_is_fitted(self, "selected_")
        return feature_expectations(self.selected_, X, self.stats_)
