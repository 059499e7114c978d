"""Random forest for a ternary target with ternary categorical features.

The training rows are collapsed to a count table over all ``3^p`` feature
assignments, so a bootstrap resample is a multinomial draw of that table and
every tree can be evaluated on every assignment at once.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

N_CLASSES = 3


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 1000
    max_depth: int = 12
    min_leaf: int = 5
    leaf_smoothing: float = 0.5
    max_features: Optional[int] = None  # None -> ceil(sqrt(p))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.max_depth < 0 or self.min_leaf < 1 or self.leaf_smoothing < 0:
            raise ValueError("invalid forest hyperparameters")

    def to_dict(self) -> dict:
        return asdict(self)


def all_assignments(p: int) -> np.ndarray:
    """Every ternary vector of length ``p``, row-major (last feature fastest)."""
    if p == 0:
        return np.zeros((1, 0), dtype=np.int8)
    grids = np.indices([N_CLASSES] * p).reshape(p, -1).T
    return grids.astype(np.int8)


def _gini_cost(counts: np.ndarray) -> float:
    n = counts.sum()
    if n <= 0:
        return 0.0
    return n - (counts @ counts) / n  # n * gini impurity


class _TreeGrower:
    def __init__(self, X, weights, params: ForestParams, rng, mtry):
        self.X = X
        self.w = weights
        self.p = params
        self.rng = rng
        self.mtry = mtry
        self.pred = np.zeros((X.shape[0], N_CLASSES))

    def grow(self, cells: np.ndarray, depth: int):
        w = self.w[cells]
        tot = w.sum(axis=0)
        n = tot.sum()
        best = None
        if depth < self.p.max_depth and n >= 2 * self.p.min_leaf and np.count_nonzero(tot) > 1:
            parent_cost = _gini_cost(tot)
            feats = self.rng.choice(self.X.shape[1], size=self.mtry, replace=False)
            best_cost = parent_cost - 1e-12
            for f in feats:
                xv = self.X[cells, f]
                G = np.stack(
                    [np.bincount(xv, weights=w[:, c], minlength=N_CLASSES) for c in range(N_CLASSES)],
                    axis=1,
                )
                for v in range(N_CLASSES):
                    left = G[v]
                    right = tot - left
                    nl = left.sum()
                    if nl < self.p.min_leaf or n - nl < self.p.min_leaf:
                        continue
                    cost = _gini_cost(left) + _gini_cost(right)
                    if cost < best_cost:
                        best_cost, best = cost, (f, v)
        if best is None:
            lam = self.p.leaf_smoothing
            if n + N_CLASSES * lam > 0:
                prob = (tot + lam) / (n + N_CLASSES * lam)
            else:
                prob = np.full(N_CLASSES, 1.0 / N_CLASSES)
            self.pred[cells] = prob
            return
        f, v = best
        mask = self.X[cells, f] == v
        self.grow(cells[mask], depth + 1)
        self.grow(cells[~mask], depth + 1)


def forest_predict_table(counts: np.ndarray, p: int, params: ForestParams, rng=None) -> np.ndarray:
    """Averaged leaf class proportions for every feature assignment.

    ``counts`` has shape ``(3^p, 3)``: training rows per (assignment, class).
    Returns an array of the same shape whose rows sum to one.
    """
    counts = np.asarray(counts, dtype=float)
    n = int(round(counts.sum()))
    if n == 0:
        raise ValueError("cannot fit a forest to an empty training set")
    X = all_assignments(p)
    if rng is None:
        rng = np.random.default_rng(params.seed)
    mtry = params.max_features or max(1, math.ceil(math.sqrt(p)))
    mtry = min(mtry, p)
    # every cell is routed, including ones without training rows
    cells = np.arange(X.shape[0])
    total = np.zeros_like(counts)
    flat = counts.reshape(-1)
    tree_seeds = rng.integers(0, 2**63 - 1, size=params.n_trees)
    for s in tree_seeds:
        trng = np.random.default_rng(s)
        if params.bootstrap:
            w = trng.multinomial(n, flat / flat.sum()).reshape(counts.shape).astype(float)
        else:
            w = counts
        g = _TreeGrower(X, w, params, trng, mtry)
        if p == 0:
            g.p = ForestParams(**{**params.to_dict(), "max_depth": 0})
        g.grow(cells, 0)
        total += g.pred
    return total / params.n_trees
