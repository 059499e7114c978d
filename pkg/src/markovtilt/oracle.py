"""Exact full-data laws in the model, built by enumeration.

An oracle draws the outcome chain ``f(Y_k | Y_{k-m..k-1})`` and baseline
missingness logits ``b_k(Y_{k-m..k-1}, O_{k+1..k+m})``, then sets
``P(R_k = 0 | ...) = expit(b_k + alpha_k * Y_k)``.  The joint is kept over
``(Y_1..Y_K, O_1..O_K)``; ``Yobs_k`` is folded into the O-code.
"""
from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from markovtilt.graph import CiStatement, vertex_name
from markovtilt.law import ObservedLaw
from markovtilt.model import ModelSpec, future_o, past_y, window_vars
from markovtilt.tables import (
    MISSING,
    FactorTable,
    O,
    Y,
    product_all,
    restrict,
    slice_table,
)

K_MAX_ENUM = 8


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class FullLawOracle:
    spec: ModelSpec
    y_conditionals: tuple[FactorTable, ...]
    r_models: tuple  # (context variables, baseline logit array) per k
    joint: FactorTable

    def outcome_law(self) -> FactorTable:
        """``f(Y_1, ..., Y_K)``."""
        return restrict(self.joint, [Y(k) for k in range(1, self.spec.K + 1)])

    def observed_joint(self) -> FactorTable:
        return restrict(self.joint, [O(k) for k in range(1, self.spec.K + 1)])


def _missingness_factor(k: int, spec: ModelSpec, ctx: list, b: np.ndarray) -> FactorTable:
    """``f(O_k | Y_{k-m..k}, O_{k+1..k+m})`` from baseline logits ``b`` over ``ctx``."""
    alpha = spec.alpha(k)
    p_mis = np.stack([expit(b), expit(b + alpha)], axis=0)  # leading axis Y_k
    arr = np.zeros((2, 3) + b.shape)
    arr[0, 0] = 1.0 - p_mis[0]
    arr[1, 1] = 1.0 - p_mis[1]
    arr[:, MISSING] = p_mis
    return FactorTable.from_array([Y(k), O(k)] + ctx, arr)


def gen_full_law(
    spec: ModelSpec,
    seed,
    concentration: float = 1.0,
    baseline: Optional[float] = None,
    baseline_range: float = 1.5,
) -> FullLawOracle:
    """Draw a random law in the model and enumerate its joint.

    ``concentration=np.inf`` makes every outcome a fair coin; a scalar
    ``baseline`` fixes every missingness logit instead of drawing it.
    """
    K, m = spec.K, spec.m
    if K > K_MAX_ENUM:
        raise OracleError(f"enumeration is limited to K <= {K_MAX_ENUM}, got K={K}")
    rng = np.random.default_rng(seed)
    y_conds, r_models, factors = [], [], []
    for k in range(1, K + 1):
        past = past_y(k, m)
        shape = [2] * len(past)
        if np.isinf(concentration):
            p1 = np.full(shape, 0.5)
        else:
            p1 = rng.beta(concentration, concentration, size=shape)
        g = FactorTable.from_array(past + [Y(k)], np.stack([1 - p1, p1], axis=-1))
        y_conds.append(g)
    for k in range(1, K + 1):
        ctx = past_y(k, m) + future_o(k, m, K)
        shape = [v.card for v in ctx]
        if baseline is None:
            b = rng.uniform(-baseline_range, baseline_range, size=shape)
        else:
            b = np.full(shape, float(baseline))
        r_models.append((tuple(ctx), b))
        factors.append(_missingness_factor(k, spec, ctx, b))
    joint = product_all(y_conds + factors[::-1])
    return FullLawOracle(spec, tuple(y_conds), tuple(r_models), joint)


def exact_observed_law(o: FullLawOracle) -> ObservedLaw:
    spec = o.spec
    oj = o.observed_joint()
    windows = [restrict(oj, window_vars(i, spec.m)) for i in range(1, spec.n_windows + 1)]
    return ObservedLaw(spec.K, spec.m, tuple(windows), {"name": "exact"})


def law_from_observed_joint(oj: FactorTable, m: int) -> ObservedLaw:
    K = len(oj.schema)
    return ObservedLaw(
        K, m, tuple(restrict(oj, window_vars(i, m)) for i in range(1, K - 2 * m)), {"name": "exact"}
    )


def tilt_residual(o: FullLawOracle, min_mass: float = 1e-9) -> float:
    """Largest violation of ``f(y|R=0,ctx) = f(y|R=1,ctx) e^{alpha y} / c(ctx)``."""
    spec = o.spec
    worst = 0.0
    for k in range(1, spec.K + 1):
        ctx = past_y(k, spec.m) + future_o(k, spec.m, spec.K)
        t = restrict(o.joint, ctx + [Y(k), O(k)])
        r1 = np.stack(
            [slice_table(t, {Y(k): 0, O(k): 0}).values, slice_table(t, {Y(k): 1, O(k): 1}).values],
            axis=-1,
        )
        r0 = slice_table(t, {O(k): MISSING})
        # r0 has axes ctx + [Y_k] in canonical order; move Y_k last
        r0v = np.moveaxis(r0.values, r0.schema.index(Y(k)), -1)
        m1 = r1.sum(axis=-1, keepdims=True)
        m0 = r0v.sum(axis=-1, keepdims=True)
        ok = ((m1 + m0) >= min_mass) & (m1 > 0) & (m0 > 0)
        f1 = np.divide(r1, m1, out=np.zeros_like(r1), where=m1 > 0)
        f0 = np.divide(r0v, m0, out=np.zeros_like(r0v), where=m0 > 0)
        w = np.array([1.0, np.exp(spec.alpha(k))])
        pred = f1 * w
        pred = pred / pred.sum(axis=-1, keepdims=True).clip(min=1e-300)
        diff = np.abs(pred - f0) * ok
        worst = max(worst, float(diff.max()))
    return worst


# --- conditional independence checks -----------------------------------------------

@dataclass(frozen=True)
class CiReport:
    statement: CiStatement
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol

    def row(self) -> dict:
        return {
            "source": self.statement.source,
            "k": self.statement.k,
            "statement": self.statement.describe(),
            "residual": self.residual,
            "passed": self.passed,
        }


_R_OF_O = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 0.0]])  # O-code -> (R=0, R=1)


def derived_joint(o: FullLawOracle, groups: list[list]) -> np.ndarray:
    """Joint over DAG vertices, axes grouped and flattened per group.

    Returns an array with one axis per group.
    """
    verts = [v for g in groups for v in g]
    base = []
    for name, j in verts:
        var = Y(j) if name == "Y" else O(j)
        if var not in base:
            base.append(var)
    t = restrict(o.joint, base)
    letters = iter(string.ascii_letters)
    base_letter = {v: next(letters) for v in t.schema}
    operands, subs, out = [t.values], ["".join(base_letter[v] for v in t.schema)], ""
    for name, j in verts:
        new = next(letters)
        out += new
        if name == "Y":
            operands.append(np.eye(2))
            subs.append(base_letter[Y(j)] + new)
        elif name == "Yobs":
            operands.append(np.eye(3))
            subs.append(base_letter[O(j)] + new)
        elif name == "R":
            operands.append(_R_OF_O)
            subs.append(base_letter[O(j)] + new)
        else:
            raise OracleError(f"unknown vertex {name}{j}")
    arr = np.einsum(",".join(subs) + "->" + out, *operands, optimize=True)
    sizes = []
    for g in groups:
        n = 1
        for name, _ in g:
            n *= 2 if name in ("Y", "R") else 3
        sizes.append(n)
    return arr.reshape(sizes)


def verify_ci(o: FullLawOracle, stmt: CiStatement, tol: float = 1e-10, min_mass: float = 1e-9) -> CiReport:
    """Max over conditioning cells of ``|f(Z | X, S) - f(Z | S)|``."""
    order = lambda vs: sorted(vs, key=vertex_name)  # noqa: E731
    p = derived_joint(o, [order(stmt.X), order(stmt.Z), order(stmt.S)])  # (X, Z, S)
    pxs = p.sum(axis=1, keepdims=True)
    ps = p.sum(axis=(0, 1), keepdims=True)
    f_zxs = np.divide(p, pxs, out=np.zeros_like(p), where=pxs > 0)
    f_zs = np.divide(p.sum(axis=0, keepdims=True), ps, out=np.zeros_like(ps * p[:1]), where=ps > 0)
    diff = np.abs(f_zxs - f_zs) * (pxs >= min_mass)
    return CiReport(stmt, float(diff.max()), tol)
