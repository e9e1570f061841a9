"""Synthetic preference oracles and the average-rank pair selector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _pref_from_margin(margin):
    """σ(margin), evaluated so that pref(m) + pref(-m) == 1 exactly in floating point."""
    m = np.asarray(margin, dtype=np.float64)
    e = np.exp(-np.abs(m))
    hi = 1.0 / (1.0 + e)
    # for m < 0 return 1 - σ(|m|); 1 - hi is exact because hi lies in [0.5, 1]
    return np.where(m >= 0, hi, 1.0 - hi)


@dataclass(frozen=True)
class ScoreOracle:
    """score(x, c) = -||x - target_c||^2; preference = σ(kappa · score gap)."""

    targets: np.ndarray
    kappa: float = 1.0
    weight: float = 1.0
    name: str = "score"

    def __post_init__(self):
        targets = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        object.__setattr__(self, "targets", targets)
        if self.kappa <= 0 or self.weight <= 0:
            raise ValueError("kappa and weight must be positive")

    has_scores = True

    def score(self, x, c) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return -np.sum((x - self.targets[c]) ** 2, axis=-1)

    def pairwise_pref(self, x, x2, c):
        return _pref_from_margin(self.kappa * (self.score(x, c) - self.score(x2, c)))


def cyclic_table(K: int) -> np.ndarray:
    """Dominance table with entries +1 (row wins), -1 (row loses), 0 (tie).

    Sector i beats the next floor((K-1)/2) sectors cyclically; for K=3 this is
    0 > 1 > 2 > 0.
    """
    if K < 2:
        raise ValueError("need at least two sectors")
    D = np.zeros((K, K), dtype=np.int64)
    reach = (K - 1) // 2
    for i in range(K):
        for j in range(K):
            gap = (j - i) % K
            if 1 <= gap <= reach:
                D[i, j] = 1
            elif K - reach <= gap <= K - 1:
                D[i, j] = -1
    return D


@dataclass(frozen=True)
class IntransitiveOracle:
    """Preference by angular sector around a per-prompt centre, resolved by a cyclic table.

    Only the first two coordinates of a sample determine its sector.
    """

    centers: np.ndarray
    K: int = 3
    table: np.ndarray | None = None
    offset: float = 0.0
    weight: float = 1.0
    name: str = "intransitive"

    has_scores = False

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        object.__setattr__(self, "centers", centers)
        table = cyclic_table(self.K) if self.table is None else np.asarray(self.table, dtype=np.int64)
        if table.shape != (self.K, self.K):
            raise ValueError("dominance table must be K x K")
        if not np.array_equal(table, -table.T):
            raise ValueError("dominance table must be antisymmetric")
        object.__setattr__(self, "table", table)

    def sector(self, x, c) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        rel = x[..., :2] - self.centers[c][..., :2]
        ang = np.mod(np.arctan2(rel[..., 1], rel[..., 0]) - self.offset, 2 * np.pi)
        return np.minimum((ang // (2 * np.pi / self.K)).astype(np.int64), self.K - 1)

    def pairwise_pref(self, x, x2, c):
        outcome = self.table[self.sector(x, c), self.sector(x2, c)]
        return 0.5 + 0.5 * outcome.astype(np.float64)


@dataclass
class RankResult:
    ranks: np.ndarray          # (n_oracles, k), 1 = best
    average_rank: np.ndarray   # (k,)
    best: int
    worst: int
    scores: dict = field(default_factory=dict)


def _ranks_from_values(values: np.ndarray) -> np.ndarray:
    """Rank 1 for the largest value; equal values keep index order."""
    order = np.argsort(-values, kind="stable")
    ranks = np.empty(values.size, dtype=np.int64)
    ranks[order] = np.arange(1, values.size + 1)
    return ranks


def copeland_counts(oracle, candidates, c) -> np.ndarray:
    """Wins plus half ties against every other candidate."""
    k = candidates.shape[0]
    i, j = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    P = oracle.pairwise_pref(candidates[i.ravel()], candidates[j.ravel()], c).reshape(k, k)
    wins = (P > 0.5).astype(np.float64) + 0.5 * (P == 0.5)
    np.fill_diagonal(wins, 0.0)
    return wins.sum(axis=1)


def rank_candidates(candidates, c: int, oracles) -> RankResult:
    """Rank ``k`` candidates under every oracle and pick best/worst by (weighted) average rank.

    Score oracles rank by descending score, pairwise-only oracles by Copeland
    count. Ties at every stage go to the lowest candidate index.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    k = candidates.shape[0]
    if k < 2:
        raise ValueError(f"need at least two candidates, got {k}")
    if not oracles:
        raise ValueError("need at least one oracle")
    ranks, weights, scores = [], [], {}
    for o in oracles:
        if o.has_scores:
            vals = o.score(candidates, c)
            scores[o.name] = vals
        else:
            vals = copeland_counts(o, candidates, c)
        ranks.append(_ranks_from_values(vals))
        weights.append(o.weight)
    ranks = np.stack(ranks)
    w = np.asarray(weights, dtype=np.float64)
    avg = (w[:, None] * ranks).sum(axis=0) / w.sum()
    return RankResult(ranks, avg, int(np.argmin(avg)), int(np.argmax(avg)), scores)


def pairwise_pref(oracle, x, x2, c):
    """P(x preferred over x2 | c) under ``oracle``."""
    return oracle.pairwise_pref(x, x2, c)
