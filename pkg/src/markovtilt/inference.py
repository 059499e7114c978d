"""Plug-in estimation, parametric bootstrap intervals and sensitivity grids."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Union

import numpy as np

from markovtilt.data import Dataset, imputed_outcomes, observed_means
from markovtilt.estimation import build_observed_law
from markovtilt.identification import (
    FullLawResult,
    expected_negative_count,
    identify_all,
    joint_probability,
    marginal_means,
)
from markovtilt.law import ObservedLaw
from markovtilt.model import ModelSpec
from markovtilt.tables import MISSING

DEFAULT_ANCHORS = (-5.0, 5.0)
DEFAULT_LEVEL = 0.95

COUNT = "count"
MARGINAL = "marginal"
JOINT = "joint"


class InferenceError(ValueError):
    pass


@dataclass(frozen=True)
class FunctionalSpec:
    """What to estimate: ``E[sum Y_k]``, ``P(Y_k = 1)`` or ``P(Y = ybar)``."""

    kind: str = COUNT
    k: Optional[int] = None
    ybar: Optional[tuple] = None
    alpha: Union[float, tuple] = 0.0

    def __post_init__(self):
        if self.kind not in (COUNT, MARGINAL, JOINT):
            raise InferenceError(f"unknown functional {self.kind!r}")
        if self.kind == MARGINAL and (self.k is None or self.k < 1):
            raise InferenceError("marginal mean needs an assessment index k >= 1")
        if self.kind == JOINT:
            if self.ybar is None:
                raise InferenceError("joint probability needs an outcome sequence")
            object.__setattr__(self, "ybar", tuple(int(y) for y in self.ybar))
        a = self.alpha
        vals = (a,) if np.isscalar(a) else tuple(a)
        if not all(math.isfinite(float(x)) for x in vals):
            raise InferenceError("sensitivity parameters must be finite")
        if not np.isscalar(a):
            object.__setattr__(self, "alpha", tuple(float(x) for x in a))

    def spec_for(self, template: ModelSpec) -> ModelSpec:
        spec = template.with_alphas(self.alpha)
        if self.kind == MARGINAL and self.k > spec.K:
            raise InferenceError(f"k={self.k} exceeds K={spec.K}")
        if self.kind == JOINT and len(self.ybar) != spec.K:
            raise InferenceError(f"outcome sequence has length {len(self.ybar)}, expected {spec.K}")
        return spec

    def with_alpha(self, alpha) -> "FunctionalSpec":
        return FunctionalSpec(self.kind, self.k, self.ybar, alpha)

    @property
    def scalar_alpha(self) -> float:
        """The common tilt, or the average tilt for a vector."""
        a = self.alpha
        return float(a) if np.isscalar(a) else float(np.mean(a))

    def evaluate(self, res: FullLawResult) -> float:
        if self.kind == COUNT:
            return expected_negative_count(res)
        if self.kind == MARGINAL:
            return marginal_means(res)[self.k - 1]
        return joint_probability(res, self.ybar)

    def row_values(self, y: np.ndarray) -> np.ndarray:
        """Per-participant contribution on an (imputed) outcome matrix."""
        if self.kind == COUNT:
            return y.sum(axis=1)
        if self.kind == MARGINAL:
            return y[:, self.k - 1]
        target = np.array(self.ybar, dtype=float)
        return np.prod(np.where(target == 1, y, 1.0 - y), axis=1)


def estimate_law(d: Dataset, spec: ModelSpec, est) -> ObservedLaw:
    return build_observed_law(d, spec, est)


def plug_in_law(law: ObservedLaw, spec: ModelSpec, fspec: FunctionalSpec, mode=None) -> float:
    """Evaluate the functional on the law identified from ``law``."""
    res = identify_all(law, fspec.spec_for(spec), mode, measure_storage=False)
    return fspec.evaluate(res)


def plug_in(d: Dataset, spec: ModelSpec, est, fspec: FunctionalSpec, mode=None) -> float:
    """Estimate the observed law, identify the full law and evaluate ``fspec``."""
    return plug_in_law(estimate_law(d, spec, est), spec, fspec, mode)


# --- parametric sampling -------------------------------------------------------

def _transition_tables(law: ObservedLaw) -> list[np.ndarray]:
    """``f(O_j | previous 2m+1)`` arrays for ``j > 2m+2``; empty contexts go uniform."""
    out = []
    span = 2 * law.m + 1
    for j in range(span + 2, law.K + 1):
        w = law.window(j - span).values
        den = w.sum(axis=-1, keepdims=True)
        out.append(np.divide(w, den, out=np.full_like(w, 1.0 / 3.0), where=den > 0))
    return out


def _draw(probs: np.ndarray, rng) -> np.ndarray:
    """One categorical draw per row of ``probs``."""
    cum = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    return np.minimum((u[:, None] >= cum).sum(axis=1), probs.shape[1] - 1)


def sample_dataset(law: ObservedLaw, n: int, seed) -> Dataset:
    """Draw ``n`` participants from the observed-data law."""
    if n < 1:
        raise InferenceError("n must be at least 1")
    rng = np.random.default_rng(seed)
    width = 2 * law.m + 2
    first = law.window(1).flat
    cells = rng.choice(first.size, size=n, p=first / first.sum())
    codes = np.empty((n, law.K), dtype=np.int8)
    codes[:, :width] = np.array(np.unravel_index(cells, [3] * width)).T
    for t, table in enumerate(_transition_tables(law)):
        j = width + t  # zero-based column of O_{j+1}
        ctx = tuple(codes[:, c].astype(np.intp) for c in range(j - width + 1, j))
        codes[:, j] = _draw(table[ctx], rng)
    return Dataset(codes)


def resample_rows(d: Dataset, seed) -> Dataset:
    rng = np.random.default_rng(seed)
    return Dataset(d.codes[rng.integers(0, d.n, size=d.n)])


# --- standard errors and intervals --------------------------------------------

def interpolated_se(alpha: float, se0: float, seL: float, seU: float, alphaL: float, alphaU: float) -> float:
    """Piecewise-linear SE anchored at ``SE(alphaL)=seL``, ``SE(0)=se0``, ``SE(alphaU)=seU``."""
    if not alphaL < 0:
        raise InferenceError(f"lower anchor must be negative, got {alphaL}")
    if not alphaU > 0:
        raise InferenceError(f"upper anchor must be positive, got {alphaU}")
    if alpha < 0:
        w = min(alpha / alphaL, 1.0)
        return w * seL + (1.0 - w) * se0
    w = min(alpha / alphaU, 1.0)
    return w * seU + (1.0 - w) * se0


def min_replicates(level: float = DEFAULT_LEVEL) -> int:
    """Smallest ``B`` for which the ``level`` quantile is not forced to the maximum."""
    return math.ceil(1.0 / (1.0 - level) - 1e-9)


def type1_quantile(x: Sequence[float], level: float) -> float:
    """Order statistic ``ceil(level * B)`` (1-based) of ``x``."""
    x = np.sort(np.asarray(x, dtype=float))
    r = math.ceil(level * len(x) - 1e-9)
    return float(x[max(r, 1) - 1])


@dataclass(frozen=True)
class CiResult:
    estimate: float
    se: float
    lower: float
    upper: float
    B: int
    t_star: float
    alpha: Optional[float] = None

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper

    def to_dict(self) -> dict:
        return asdict(self)


def t_statistics(theta_hat: float, reps: np.ndarray, se_reps: np.ndarray) -> np.ndarray:
    """``|theta_b - theta_hat| / SE_b``, with ``0/0`` read as 0."""
    dev = np.abs(np.asarray(reps, dtype=float) - theta_hat)
    se = np.asarray(se_reps, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dev == 0, 0.0, dev / se)
    return t


def symmetric_t_interval(theta_hat: float, se: float, t_stats, level: float = DEFAULT_LEVEL,
                         alpha: Optional[float] = None) -> CiResult:
    t_stats = np.asarray(t_stats, dtype=float)
    B = t_stats.size
    need = min_replicates(level)
    if B < need:
        raise InferenceError(f"B={B} is too small for a {level:g} interval; need B >= {need}")
    t_star = type1_quantile(t_stats, level)
    theta_hat, se = float(theta_hat), float(se)
    half = 0.0 if se == 0 else t_star * se
    return CiResult(theta_hat, se, theta_hat - half, theta_hat + half, B, t_star, alpha)


# --- bootstrap ---------------------------------------------------------------------

ANCHOR_IMPUTATIONS = ("mean", "zero", "one")  # SE_0, SE_l, SE_u


def _row_gradient(fspec: FunctionalSpec, y: np.ndarray) -> np.ndarray:
    """``d h(y_i) / d y_ik`` for the per-row contribution ``h``."""
    if fspec.kind == COUNT:
        return np.ones_like(y)
    if fspec.kind == MARGINAL:
        g = np.zeros_like(y)
        g[:, fspec.k - 1] = 1.0
        return g
    target = np.array(fspec.ybar, dtype=float)
    sign = np.where(target == 1, 1.0, -1.0)
    f = np.where(target == 1, y, 1.0 - y)
    g = np.empty_like(y)
    for k in range(y.shape[1]):
        g[:, k] = sign[k] * np.prod(np.delete(f, k, axis=1), axis=1)
    return g


def imputation_estimate(d: Dataset, fspec: FunctionalSpec, how: str) -> tuple[float, float]:
    """Estimate under deterministic or mean imputation, with its analytic SE.

    For mean imputation the SE includes the variability of the imputed
    visitwise means (influence-function form).
    """
    y = imputed_outcomes(d, how)
    h = fspec.row_values(y)
    theta = float(h.mean())
    infl = h - theta
    if how == "mean":
        obs = d.codes != MISSING
        r = obs.mean(axis=0)
        p = np.nan_to_num(observed_means(d))
        dtheta = ((~obs) * _row_gradient(fspec, y)).mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            scores = np.where(obs, (d.codes - p) / np.where(r > 0, r, 1.0), 0.0)
        infl = infl + scores @ dtheta
    se = float(infl.std(ddof=1) / math.sqrt(d.n)) if d.n > 1 else 0.0
    return theta, se


def anchor_values(d: Dataset, fspec: FunctionalSpec) -> tuple[np.ndarray, np.ndarray]:
    """Imputation estimates and analytic SEs, in SE_0 / SE_l / SE_u order."""
    pairs = [imputation_estimate(d, fspec, how) for how in ANCHOR_IMPUTATIONS]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


@dataclass
class ArmBootstrap:
    """Point estimates and replicates for one dataset over a list of tilts."""

    alphas: tuple
    theta: np.ndarray  # (A,)
    reps: np.ndarray  # (B, A)
    anchor_reps: np.ndarray  # (B, 3) imputation estimates per replicate
    anchor_se_reps: np.ndarray  # (B, 3) analytic SEs per replicate
    anchors: tuple
    failures: dict  # alpha index -> message

    @property
    def B(self) -> int:
        return self.reps.shape[0]

    def anchor_se(self) -> np.ndarray:
        """Bootstrap SDs of the three imputation estimates."""
        if self.B < 2:
            return np.zeros(3)
        return self.anchor_reps.std(axis=0, ddof=1)

    def se_at(self, alpha: float) -> float:
        s0, sl, su = self.anchor_se()
        return interpolated_se(alpha, s0, sl, su, *self.anchors)

    def se_reps_at(self, alpha: float) -> np.ndarray:
        return np.array([interpolated_se(alpha, *row, *self.anchors) for row in self.anchor_se_reps])

    def ci(self, a_idx: int, level: float = DEFAULT_LEVEL) -> CiResult:
        alpha = self.alphas[a_idx]
        theta = self.theta[a_idx]
        t = t_statistics(theta, self.reps[:, a_idx], self.se_reps_at(alpha))
        return symmetric_t_interval(theta, self.se_at(alpha), t, level, alpha)


def _alpha_key(a) -> float:
    return float(a) if np.isscalar(a) else float(np.mean(a))


def bootstrap_arm(
    d: Dataset,
    spec: ModelSpec,
    est,
    fspec: FunctionalSpec,
    alphas: Sequence,
    B: int,
    seed,
    anchors=DEFAULT_ANCHORS,
    resample: str = "parametric",
    stream: Sequence[int] = (),
    level: float = DEFAULT_LEVEL,
) -> ArmBootstrap:
    """Plug-in estimates for every tilt plus ``B`` shared bootstrap replicates.

    Replicate ``b`` draws its dataset from the stream ``(seed, *stream, b)``,
    so results do not depend on evaluation order.
    """
    if B < 2:
        raise InferenceError("B must be at least 2")
    need = min_replicates(level)
    if B < need:
        raise InferenceError(f"B={B} is too small for a {level:g} interval; need B >= {need}")
    if resample not in ("parametric", "nonparametric"):
        raise InferenceError(f"unknown resampling scheme {resample!r}")
    alphas = tuple(alphas)
    if not alphas:
        raise InferenceError("at least one sensitivity parameter is required")
    interpolated_se(0.0, 0.0, 0.0, 0.0, *anchors)  # validates anchors
    fs = [fspec.with_alpha(a) for a in alphas]
    law = estimate_law(d, spec, est)
    theta = np.full(len(alphas), np.nan)
    failures = {}
    for i, f in enumerate(fs):
        try:
            theta[i] = plug_in_law(law, spec, f)
        except (ArithmeticError, ValueError) as e:
            failures[i] = str(e)
    reps = np.full((B, len(alphas)), np.nan)
    anchor_reps = np.zeros((B, 3))
    anchor_se_reps = np.zeros((B, 3))
    base_seed = [int(s) for s in np.atleast_1d(seed)]
    for b in range(B):
        key = base_seed + [int(s) for s in stream] + [b]
        rep = sample_dataset(law, d.n, key) if resample == "parametric" else resample_rows(d, key)
        anchor_reps[b], anchor_se_reps[b] = anchor_values(rep, fspec)
        law_b = estimate_law(rep, spec, est)
        for i, f in enumerate(fs):
            if i in failures:
                continue
            reps[b, i] = plug_in_law(law_b, spec, f)
    return ArmBootstrap(alphas, theta, reps, anchor_reps, anchor_se_reps, tuple(anchors), failures)


def bootstrap_ci(
    d: Dataset,
    spec: ModelSpec,
    est,
    fspec: FunctionalSpec,
    B: int,
    seed,
    anchors=DEFAULT_ANCHORS,
    resample: str = "parametric",
    level: float = DEFAULT_LEVEL,
) -> CiResult:
    arm = bootstrap_arm(d, spec, est, fspec, [fspec.alpha], B, seed, anchors, resample, level=level)
    if arm.failures:
        raise InferenceError(f"alpha={fspec.alpha}: {arm.failures[0]}")
    ci = arm.ci(0, level)
    return CiResult(ci.estimate, ci.se, ci.lower, ci.upper, ci.B, ci.t_star, _alpha_key(fspec.alpha))


@dataclass(frozen=True)
class GridRow:
    alpha: float
    estimate: float
    lower: float
    upper: float
    se: float
    t_star: float
    error: str = ""


def sensitivity_grid(
    d: Dataset,
    spec: ModelSpec,
    est,
    alphas: Sequence[float],
    fspec: FunctionalSpec = FunctionalSpec(),
    B: int = 1000,
    seed=0,
    anchors=DEFAULT_ANCHORS,
    resample: str = "parametric",
    level: float = DEFAULT_LEVEL,
) -> list[GridRow]:
    """One row per tilt, in input order; failing tilts are reported, not raised."""
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise InferenceError("the sensitivity grid is empty")
    arm = bootstrap_arm(d, spec, est, fspec, alphas, B, seed, anchors, resample, level=level)
    rows = []
    for i, a in enumerate(alphas):
        if i in arm.failures:
            rows.append(GridRow(a, math.nan, math.nan, math.nan, math.nan, math.nan, arm.failures[i]))
            continue
        ci = arm.ci(i, level)
        rows.append(GridRow(a, ci.estimate, ci.lower, ci.upper, ci.se, ci.t_star))
    return rows


@dataclass(frozen=True)
class ContourRow:
    alpha_a: float
    alpha_b: float
    difference: float
    lower: float
    upper: float
    se: float
    excludes_zero: bool


def contour_grid(
    dA: Dataset,
    dB: Dataset,
    spec: ModelSpec,
    est,
    alphas_a: Sequence[float],
    alphas_b: Sequence[float],
    fspec: FunctionalSpec = FunctionalSpec(),
    B: int = 1000,
    seed=0,
    anchors=DEFAULT_ANCHORS,
    resample: str = "parametric",
    level: float = DEFAULT_LEVEL,
) -> list[ContourRow]:
    """Treatment differences ``theta_B(alpha_b) - theta_A(alpha_a)`` on a grid."""
    if dA.K != dB.K:
        raise InferenceError(f"arms have different K ({dA.K} vs {dB.K})")
    arm_a = bootstrap_arm(dA, spec, est, fspec, alphas_a, B, seed, anchors, resample, stream=(0,), level=level)
    arm_b = bootstrap_arm(dB, spec, est, fspec, alphas_b, B, seed, anchors, resample, stream=(1,), level=level)
    for arm in (arm_a, arm_b):
        if arm.failures:
            i, msg = next(iter(arm.failures.items()))
            raise InferenceError(f"alpha={arm.alphas[i]}: {msg}")
    rows = []
    for i, a in enumerate(arm_a.alphas):
        se_a, se_a_reps = arm_a.se_at(a), arm_a.se_reps_at(a)
        for j, b in enumerate(arm_b.alphas):
            se_b, se_b_reps = arm_b.se_at(b), arm_b.se_reps_at(b)
            diff = arm_b.theta[j] - arm_a.theta[i]
            rep_diff = arm_b.reps[:, j] - arm_a.reps[:, i]
            t = t_statistics(diff, rep_diff, np.hypot(se_a_reps, se_b_reps))
            ci = symmetric_t_interval(diff, math.hypot(se_a, se_b), t, level)
            excludes = ci.lower > 0 or ci.upper < 0
            rows.append(ContourRow(float(a), float(b), diff, ci.lower, ci.upper, ci.se, excludes))
    return rows


# --- diagnostics and reference analyses --------------------------------------------

@dataclass(frozen=True)
class AlphaDiagnosticRow:
    k: int
    alpha: float
    p_missing: float
    p_observed: float
    percent_difference: Optional[float]

    @property
    def defined(self) -> bool:
        return self.percent_difference is not None


def alpha_diagnostic(d: Dataset, spec: ModelSpec, est, alphas: Sequence[float],
                     law: Optional[ObservedLaw] = None) -> list[AlphaDiagnosticRow]:
    """Percent difference between identified ``P(Y_k=1 | R_k=0)`` and the observed proportion."""
    law = law if law is not None else estimate_law(d, spec, est)
    p_obs = observed_means(d)
    rows = []
    for a in alphas:
        res = identify_all(law, spec.with_alphas(float(a)), measure_storage=False)
        for k in range(1, spec.K + 1):
            pm, po = res.missing_means[k - 1], float(p_obs[k - 1])
            pct = None if not np.isfinite(po) or po == 0 else 100.0 * (pm - po) / po
            rows.append(AlphaDiagnosticRow(k, float(a), pm, po, pct))
    return rows


def reference_analyses(d: Dataset, fspec: FunctionalSpec = FunctionalSpec()) -> dict:
    """Raw-data MCAR (visitwise observed means), missing=0 and missing=1 estimates."""
    mcar = FunctionalSpec(fspec.kind, fspec.k, fspec.ybar)
    return {
        "mcar": float(mcar.row_values(imputed_outcomes(d, "mean")).mean()),
        "missing=0": float(fspec.row_values(imputed_outcomes(d, "zero")).mean()),
        "missing=1": float(fspec.row_values(imputed_outcomes(d, "one")).mean()),
    }
