"""Estimate the observed-data law as a chain of sliding-window joints.

Each window conditional ``f(O_j | O_{j-2m-1}, ..., O_{j-1})`` is fitted by a
pluggable estimator; the first window uses the full history of its columns.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from markovtilt.data import Dataset
from markovtilt.forest import ForestParams, forest_predict_table
from markovtilt.law import ObservedLaw
from markovtilt.model import ModelSpec
from markovtilt.tables import (
    FactorTable,
    O,
    marginalize,
    normalize,
    product,
    restrict,
    to_conditional,
)

EPS_POS = 1e-6
DEFAULT_SMOOTHING = 0.5


class EstimationError(RuntimeError):
    pass


def apply_floor(cond: FactorTable, target, eps: float = EPS_POS) -> FactorTable:
    """Shrink a conditional toward uniform so every cell is at least ``eps``.

    ``p' = eps + (1 - 3 eps) p`` keeps each row summing to one and moves no
    cell by more than ``3 eps``.
    """
    if eps <= 0:
        return cond
    card = target.card
    return FactorTable(cond.schema, eps + (1.0 - card * eps) * cond.values)


def joint_counts(d: Dataset, columns: Sequence[int]) -> FactorTable:
    """Row counts of every O-code combination over ``columns`` (as a table)."""
    cols = sorted(columns)
    shape = [3] * len(cols)
    if not cols:
        return FactorTable((), np.array(float(d.n)))
    idx = np.ravel_multi_index(tuple(d.codes[:, c - 1].astype(np.intp) for c in cols), shape)
    counts = np.bincount(idx, minlength=3 ** len(cols)).astype(float)
    return FactorTable(tuple(O(c) for c in cols), counts.reshape(shape))


def _check_columns(d: Dataset, j: int, F: Sequence[int]):
    F = list(F)
    if len(set(F)) != len(F):
        raise EstimationError(f"feature columns {F} are not distinct")
    if j in F:
        raise EstimationError(f"target column {j} is also a feature")
    for c in F + [j]:
        if not 1 <= c <= d.K:
            raise EstimationError(f"column {c} out of range 1..{d.K}")


def fit_empirical(d: Dataset, j: int, F: Sequence[int], smoothing: float = DEFAULT_SMOOTHING,
                  eps: float = EPS_POS) -> FactorTable:
    """``(count(F=f, O_j=o) + lam) / (count(F=f) + 3 lam)``, floored at ``eps``."""
    if not smoothing > 0:
        raise EstimationError(f"smoothing must be positive, got {smoothing}")
    _check_columns(d, j, F)
    counts = joint_counts(d, list(F) + [j])
    cond = to_conditional(FactorTable(counts.schema, counts.values + smoothing), [O(c) for c in F])
    return apply_floor(cond, O(j), eps)


def fit_random_forest(d: Dataset, j: int, F: Sequence[int], hp: ForestParams,
                      eps: float = EPS_POS) -> FactorTable:
    """Forest prediction of ``O_j`` at every assignment of the ``F`` columns."""
    F = list(F)
    if not F:
        raise EstimationError("the forest needs at least one feature column")
    _check_columns(d, j, F)
    if d.n == 0:
        raise EstimationError("cannot fit a forest to an empty dataset")
    p = len(F)
    idx = np.ravel_multi_index(tuple(d.codes[:, c - 1].astype(np.intp) for c in F), [3] * p)
    counts = np.zeros((3 ** p, 3))
    np.add.at(counts, (idx, d.codes[:, j - 1].astype(np.intp)), 1.0)
    rng = np.random.default_rng([hp.seed, j])
    pred = forest_predict_table(counts, p, hp, rng)
    cond = FactorTable.from_array([O(c) for c in F] + [O(j)], pred.reshape([3] * p + [3]))
    # rows are averages of normalized leaves; renormalize away rounding drift
    cond = to_conditional(cond, [O(c) for c in F])
    return apply_floor(cond, O(j), eps)


class ConditionalEstimator(Protocol):
    name: str

    def fit(self, d: Dataset, j: int, F: Sequence[int]) -> FactorTable: ...

    def config(self) -> dict: ...


@dataclass(frozen=True)
class EmpiricalEstimator:
    smoothing: float = DEFAULT_SMOOTHING
    eps: float = EPS_POS
    name: str = "empirical"

    def fit(self, d, j, F):
        return fit_empirical(d, j, F, self.smoothing, self.eps)

    def config(self) -> dict:
        return {"name": self.name, "smoothing": self.smoothing, "eps": self.eps}


@dataclass(frozen=True)
class ForestEstimator:
    params: ForestParams = ForestParams()
    smoothing: float = DEFAULT_SMOOTHING  # for the featureless f(O_1)
    eps: float = EPS_POS
    name: str = "forest"

    def fit(self, d, j, F):
        if not F:
            return fit_empirical(d, j, F, self.smoothing, self.eps)
        return fit_random_forest(d, j, F, self.params, self.eps)

    def config(self) -> dict:
        return {"name": self.name, "smoothing": self.smoothing, "eps": self.eps, **self.params.to_dict()}


@dataclass(frozen=True)
class JointEstimator:
    """Reads conditionals off a known O-joint; used to check window assembly."""

    joint: FactorTable
    name: str = "exact"

    def fit(self, d, j, F):
        t = restrict(self.joint, [O(c) for c in list(F) + [j]])
        return to_conditional(t, [O(c) for c in F])

    def config(self) -> dict:
        return {"name": self.name}


def estimator_from_config(cfg: dict):
    cfg = dict(cfg)
    name = cfg.pop("name", "empirical")
    if name == "empirical":
        return EmpiricalEstimator(**cfg)
    if name == "forest":
        smoothing = cfg.pop("smoothing", DEFAULT_SMOOTHING)
        eps = cfg.pop("eps", EPS_POS)
        return ForestEstimator(ForestParams(**cfg), smoothing, eps)
    raise EstimationError(f"unknown estimator {name!r}")


def build_observed_law(d: Dataset, spec: ModelSpec, est) -> ObservedLaw:
    if d.K != spec.K:
        raise EstimationError(f"dataset has K={d.K}, model expects K={spec.K}")
    m = spec.m
    w = spec.window_width

    def fit(j, F, i):
        try:
            return est.fit(d, j, F)
        except Exception as e:
            raise EstimationError(f"window {i}: fitting O_{j}: {e}") from e

    W = fit(1, [], 1)
    for j in range(2, w + 1):
        W = product(W, fit(j, list(range(1, j)), 1))
    windows = [normalize(W)]
    for i in range(1, spec.n_windows):
        j = i + w
        base = marginalize(windows[-1], [O(i)])
        windows.append(normalize(product(base, fit(j, list(range(i + 1, j)), i + 1))))
    return ObservedLaw(spec.K, m, tuple(windows), est.config())


# --- fit diagnostic ---------------------------------------------------------------

@dataclass(frozen=True)
class DiagnosticReport:
    pairs: tuple  # ((j, j2, max abs difference), ...)
    overall: float
    worst_pair: tuple

    def rows(self) -> list[dict]:
        return [{"j": j, "j2": j2, "max_abs_diff": v} for j, j2, v in self.pairs]


def model_pair_joint(law: ObservedLaw, j: int, j2: int) -> FactorTable:
    """Model-based joint of ``(O_j, O_j2)``, ``j < j2``."""
    span = 2 * law.m + 1
    if j2 - j <= span:
        return law.marginal([j, j2])
    T = law.window(j)  # O_j .. O_{j+2m+1}
    for t in range(j + span + 1, j2 + 1):
        drop = t - span - 1
        if drop != j:
            T = marginalize(T, [O(drop)])
        T = product(T, law.conditional(t))
    return restrict(T, [O(j), O(j2)])


def fit_diagnostic(d: Dataset, law: ObservedLaw) -> DiagnosticReport:
    if d.K != law.K:
        raise EstimationError(f"dataset has K={d.K}, law has K={law.K}")
    pairs = []
    for j in range(1, d.K + 1):
        for j2 in range(j + 1, d.K + 1):
            emp = joint_counts(d, [j, j2]).values / max(d.n, 1)
            mod = model_pair_joint(law, j, j2).values
            pairs.append((j, j2, float(np.max(np.abs(emp - mod)))))
    worst = max(pairs, key=lambda r: r[2])
    return DiagnosticReport(tuple(pairs), worst[2], worst[:2])
