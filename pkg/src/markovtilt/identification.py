"""Exponential tilting and the forward identification recursion.

The recursion alternates two steps for ``k = 1 .. K``:

* ``recursion_step`` turns ``f(Y_{k-m..k-1}, O_k..O_{k+m+1})`` into
  ``M_k = f(Y_{k-m..k}, O_{k+1}..O_{k+m+1})`` by splitting ``O_k`` into its
  observed part and the tilted distribution of the missing outcome;
* ``extend_step`` drops ``Y_{k-m}`` and appends the next observed variable
  using a window of the observed-data law restricted to ``R = 1`` on the
  relevant past.

Windows are truncated at the boundaries (an empty index range is empty).
"""
from __future__ import annotations

import contextlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from markovtilt.law import ObservedLaw
from markovtilt.model import ModelSpec, future_o, past_indices, past_y
from markovtilt.tables import (
    MISSING,
    FactorTable,
    O,
    Var,
    Y,
    add,
    marginalize,
    metered,
    observed_as_outcome,
    product,
    restrict,
    slice_table,
    to_conditional,
)


class IdentificationError(RuntimeError):
    pass


# --- tilting -----------------------------------------------------------------

def _check_alpha(alpha: float):
    if not math.isfinite(alpha):
        raise ValueError(f"sensitivity parameter must be finite, got {alpha}")


def tilt_normalizer(cond: FactorTable, alpha: float, k: int) -> FactorTable:
    """``c_k(ctx) = E[exp(alpha * Y_k) | R_k = 1, ctx]`` over the context of ``cond``."""
    _check_alpha(alpha)
    ax = cond.schema.index(Y(k))
    v = cond.values
    ctx = tuple(x for x in cond.schema if x != Y(k))
    return FactorTable(ctx, v.take(0, axis=ax) + v.take(1, axis=ax) * math.exp(alpha))


def tilt_missing(cond: FactorTable, alpha: float, k: int) -> FactorTable:
    """Distribution of ``Y_k`` among non-responders: ``f(y | R=1, ctx) e^{alpha y} / c_k``."""
    _check_alpha(alpha)
    if alpha == 0.0:
        return cond
    c = tilt_normalizer(cond, alpha, k)
    ax = cond.schema.index(Y(k))
    shape = [1] * len(cond.schema)
    shape[ax] = 2
    weights = np.array([1.0, math.exp(alpha)]).reshape(shape)
    return FactorTable(cond.schema, cond.values * weights / np.expand_dims(c.values, ax))


def _divide(num: FactorTable, den: FactorTable) -> FactorTable:
    # den.schema is a subsequence of num.schema
    shape = [v.card if v in den.schema else 1 for v in num.schema]
    return FactorTable(num.schema, num.values / den.values.reshape(shape))


def impute_missing(cond: FactorTable, value: int, k: int) -> FactorTable:
    """Point mass at ``value`` for every context: the exact ``alpha -> +/-inf`` limit."""
    pm = np.zeros(2)
    pm[value] = 1.0
    ctx = [v for v in cond.schema if v != Y(k)]
    shape = [v.card for v in ctx]
    return product(FactorTable(tuple(ctx), np.ones(shape)), FactorTable((Y(k),), pm))


class MissingOutcomeModel:
    """Supplies ``f(Y_k | R_k = 0, ctx)`` from ``f(Y_k | R_k = 1, ctx)``."""

    name = "tilt"

    def __init__(self, alphas):
        self.alphas = tuple(alphas)

    def __call__(self, cond: FactorTable, k: int) -> FactorTable:
        return tilt_missing(cond, self.alphas[k - 1], k)

    def label(self, k: int) -> Optional[str]:
        return f"c{k}"


class Benchmark(MissingOutcomeModel):
    """Non-responders share the responders' outcome distribution (``alpha = 0``)."""

    name = "benchmark"

    def __init__(self):
        self.alphas = ()

    def __call__(self, cond, k):
        return cond


class Impute(MissingOutcomeModel):
    """Every missing outcome equals ``value`` (missing=0 / missing=1 analyses)."""

    def __init__(self, value: int):
        if value not in (0, 1):
            raise ValueError("imputed value must be 0 or 1")
        self.value = value
        self.name = f"missing={value}"
        self.alphas = ()

    def __call__(self, cond, k):
        return impute_missing(cond, self.value, k)

    def label(self, k):
        return None


def missing_model_for(spec: ModelSpec, mode: Optional[str] = None) -> MissingOutcomeModel:
    if mode in (None, "tilt"):
        return MissingOutcomeModel(spec.alphas)
    if mode == "benchmark":
        return Benchmark()
    if mode in ("missing=0", "impute0"):
        return Impute(0)
    if mode in ("missing=1", "impute1"):
        return Impute(1)
    raise ValueError(f"unknown mode {mode!r}")


# --- trace formatting ----------------------------------------------------------

def _names(vs) -> str:
    return ",".join(str(v) for v in vs)


def _fmt_joint(t: FactorTable) -> str:
    return f"f({_names(t.schema)})"


class Trace:
    """Factor-by-factor record of what each step multiplies together."""

    def __init__(self):
        self.steps: list[tuple[int, str, list[str]]] = []

    def add(self, k: int, stage: str, factors: list[str]):
        self.steps.append((k, stage, factors))

    def for_step(self, k: int, stage: str) -> list[str]:
        for kk, st, f in self.steps:
            if kk == k and st == stage:
                return f
        raise KeyError((k, stage))


# --- the recursion -----------------------------------------------------------

def _context(k: int, spec: ModelSpec) -> list[Var]:
    return past_y(k, spec.m) + future_o(k, spec.m, spec.K)


def initial_table(law: ObservedLaw, spec: ModelSpec, trace: Optional[Trace] = None) -> FactorTable:
    """``f(O_1, ..., O_{m+2})``, the input to the ``k = 1`` step."""
    t = restrict(law.window(1), [O(j) for j in range(1, spec.m + 3)])
    if trace is not None:
        trace.add(1, "extend", [_fmt_joint(t)])
    return t


@dataclass
class StepOutput:
    marginal: FactorTable
    missing_mean: float
    missing_prob: float


def recursion_step(
    k: int,
    prev: FactorTable,
    law: ObservedLaw,
    spec: ModelSpec,
    missing: Optional[MissingOutcomeModel] = None,
    trace: Optional[Trace] = None,
) -> StepOutput:
    """Identify ``M_k`` from ``prev = f(Y_{k-m..k-1}, O_k..O_{k+m+1})``."""
    return _recursion_step(k, [prev], law, spec, missing, trace)


def _recursion_step(k, box, law, spec, missing=None, trace=None) -> StepOutput:
    # ``box`` holds the only reference to ``prev`` so it can be released early
    prev = box.pop()
    K, m = spec.K, spec.m
    if missing is None:
        missing = MissingOutcomeModel(spec.alphas)
    ctx = _context(k, spec)
    has_target = k <= K - m - 1
    target = O(k + m + 1)
    expected = set(past_y(k, m)) | {O(j) for j in range(k, min(k + m + 1, K) + 1)}
    if set(prev.schema) != expected:
        raise IdentificationError(f"step {k}: unexpected input schema {prev.schema}")

    f_ok = marginalize(prev, [target]) if has_target else prev  # f(O_k, ctx)
    if not has_target:
        del prev
    p_mis = slice_table(f_ok, {O(k): MISSING})  # P(R_k=0, ctx)
    resp = observed_as_outcome(f_ok, [k])  # f(Y_k, R_k=1, ctx)
    del f_ok
    cond_y = to_conditional(resp, ctx)  # f(Y_k | R_k=1, ctx)
    mis_y = missing(cond_y, k)  # f(Y_k | R_k=0, ctx)
    del cond_y
    mis_joint = product(mis_y, p_mis)  # f(Y_k, R_k=0, ctx)
    del mis_y
    # P(Y_k = 1 | R_k = 0) under the identified law
    mass = p_mis.total()
    del p_mis
    mean = float(mis_joint.values.take(1, axis=mis_joint.schema.index(Y(k))).sum() / mass)
    joint = add(resp, mis_joint)  # f(Y_k, ctx)
    del mis_joint
    if has_target:
        # f(target | Y_k, R_k=1, ctx) f(Y_k, ctx), without forming the conditional
        ratio = _divide(joint, resp)
        del joint, resp
        full = observed_as_outcome(prev, [k])
        del prev
        out = product(full, ratio)
        del full, ratio
    else:
        del resp
        out = joint

    if trace is not None:
        given = _names(ctx)
        bar = f"|{given}" if given else ""
        factors = []
        if has_target:
            factors.append(f"f({target}|R{k}=1,{_names(past_y(k, m) + [Y(k)] + future_o(k, m, K))})")
        factors.append(f"f(Y{k}|R{k}=1{',' + given if given else ''})")
        factors.append(f"P(R{k}=1{bar})")
        factors.append(f"P(R{k}=0{bar})")
        lab = missing.label(k)
        if lab:
            factors.append(f"{lab}({given})")
        factors.append(f"f({given})")
        trace.add(k, "identify", factors)
    return StepOutput(out, mean, mass)


def extend_step(
    k: int,
    prev_marginal: FactorTable,
    law: ObservedLaw,
    spec: ModelSpec,
    trace: Optional[Trace] = None,
) -> FactorTable:
    """Build ``f(Y_{k-m..k-1}, O_k..O_{k+m+1})`` from ``M_{k-1}``."""
    return _extend_step(k, [prev_marginal], law, spec, trace)


def _extend_step(k, box, law, spec, trace=None) -> FactorTable:
    prev = box.pop()
    K, m = spec.K, spec.m
    if k < 2:
        raise IdentificationError("extend_step requires k >= 2")
    factors = []
    if k <= m + 1:
        base = prev
        base_label = _fmt_joint(prev)
    else:
        base = marginalize(prev, [Y(k - m - 1)])
        base_label = f"sum_{{Y{k - m - 1}}} {_fmt_joint(prev)}"
    del prev
    if k <= K - m - 1:
        lo = max(1, k - m)
        if lo > law.K - 2 * m - 1:
            raise IdentificationError(f"no observed-law window for step {k}")
        past = past_indices(k, m)
        target = O(k + m + 1)
        w = law.marginal(range(lo, k + m + 2))
        w_ctx = marginalize(w, [target])
        denom = observed_as_outcome(w_ctx, past)  # f(Y_past, R_past=1, O ...)
        del w_ctx
        if denom.schema != base.schema:
            raise IdentificationError(f"step {k}: window schema {denom.schema} != {base.schema}")
        # f(target | ctx, R_past=1) base, as resp * (base / denom)
        ratio = _divide(base, denom)
        given = _names(denom.schema)
        del base, denom
        resp = observed_as_outcome(w, past)
        del w
        out = product(resp, ratio)
        del resp, ratio
        if trace is not None:
            rs = "=".join(f"R{j}" for j in past)
            factors.append(f"f({target}|{given},{rs}=1)")
    else:
        out = base
        del base
    if trace is not None:
        factors.append(base_label)
        trace.add(k, "extend", factors)
    return out


@dataclass
class FullLawResult:
    """Identified outcome law: conditionals ``g_k = f(Y_k | Y_{k-m..k-1})``."""

    spec: ModelSpec
    conditionals: list[FactorTable]
    mode: str = "tilt"
    marginals: Optional[list[FactorTable]] = None
    missing_means: list[float] = field(default_factory=list)
    missing_probs: list[float] = field(default_factory=list)
    peak_storage: Optional[int] = None

    def g(self, k: int) -> FactorTable:
        return self.conditionals[k - 1]

    def to_dict(self) -> dict:
        return {
            "format": "full-law",
            "version": 1,
            "spec": self.spec.to_dict(),
            "mode": self.mode,
            "conditionals": [
                {"k": k, "schema": [str(v) for v in g.schema], "values": g.flat.tolist()}
                for k, g in enumerate(self.conditionals, start=1)
            ],
            "marginal_means": marginal_means(self),
            "expected_count": expected_negative_count(self),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def identify_all(
    law: ObservedLaw,
    spec: ModelSpec,
    mode: Optional[str] = None,
    *,
    keep_marginals: bool = False,
    trace: Optional[Trace] = None,
    measure_storage: bool = True,
) -> FullLawResult:
    """Run the recursion for ``k = 1 .. K`` and return the identified ``g_k``.

    ``mode`` selects how missing outcomes are modelled: ``"tilt"`` (default,
    using ``spec.alphas``), ``"benchmark"``, ``"missing=0"`` or ``"missing=1"``.
    With ``measure_storage`` the peak number of live table entries is recorded:
    the observed-data law plus working tables.  The returned conditionals are
    output and are not counted; kept marginals are.
    """
    if law.K != spec.K or law.m != spec.m:
        raise IdentificationError(
            f"law (K={law.K}, m={law.m}) does not match spec (K={spec.K}, m={spec.m})"
        )
    missing = missing_model_for(spec, mode)
    K, m = spec.K, spec.m
    conds, kept, means, probs = [], [], [], []
    with (metered() if measure_storage else contextlib.nullcontext()) as meter:
        box = [initial_table(law, spec, trace)]
        for k in range(1, K + 1):
            if k > 1:
                box = [_extend_step(k, box, law, spec, trace)]
            step = _recursion_step(k, box, law, spec, missing, trace)
            marg = step.marginal
            means.append(step.missing_mean)
            probs.append(step.missing_prob)
            del step
            ys = restrict(marg, [Y(j) for j in range(max(1, k - m), k + 1)])
            g = to_conditional(ys, past_y(k, m))
            # the returned conditionals are output, not working storage
            conds.append((g.schema, g.values))
            del ys, g
            if keep_marginals:
                kept.append(marg)
            box = [marg]
            del marg
        box.clear()
        peak = meter.peak if meter is not None else None
    conds = [FactorTable(schema, values) for schema, values in conds]
    return FullLawResult(
        spec=spec,
        conditionals=conds,
        mode=missing.name,
        marginals=kept if keep_marginals else None,
        missing_means=means,
        missing_probs=probs,
        peak_storage=None if peak is None else peak + law.storage,
    )


# --- functionals ---------------------------------------------------------------

def joint_probability(res: FullLawResult, ybar) -> float:
    """``prod_k g_k(y_k | y_{k-m..k-1})``."""
    ybar = list(ybar)
    if len(ybar) != res.spec.K:
        raise ValueError(f"expected {res.spec.K} outcomes, got {len(ybar)}")
    p = 1.0
    for k, g in enumerate(res.conditionals, start=1):
        p *= g[{Y(j): ybar[j - 1] for j in range(max(1, k - res.spec.m), k + 1)}]
    return p


def _forward(res: FullLawResult, visit: Callable[[int, FactorTable], None]):
    """Propagate the law of the last ``m`` outcomes, calling ``visit(k, f(Y_{k-m..k}))``."""
    m = res.spec.m
    state = FactorTable.unit()
    for k, g in enumerate(res.conditionals, start=1):
        joint = product(state, g)
        visit(k, joint)
        drop = k - m
        state = marginalize(joint, [Y(drop)]) if drop >= 1 else joint


def marginal_means(res: FullLawResult) -> list[float]:
    """``P(Y_k = 1)`` for every ``k``."""
    out = []
    _forward(res, lambda k, joint: out.append(restrict(joint, [Y(k)]).values[1]))
    return [float(x) for x in out]


def expected_negative_count(res: FullLawResult) -> float:
    """``E[sum_k Y_k]`` by forward propagation over at most ``2^m`` states."""
    return float(sum(marginal_means(res)))
