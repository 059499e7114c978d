"""Acceptance criteria 1-10.  Each test prints one pass/fail line.

Criterion 7 takes roughly a quarter of an hour on one CPU and is marked
``slow`` (deselect with ``-m "not slow"``).  Criterion 10 needs the trial
data and is skipped without it.
"""
import itertools
import os
import time
from pathlib import Path

import numpy as np
import pytest

from markovtilt.cli import main
from markovtilt.data import Dataset, pattern_summary
from markovtilt.estimation import EmpiricalEstimator, ForestEstimator, build_observed_law
from markovtilt.forest import ForestParams
from markovtilt.graph import LEMMA1, LEMMA2, build_full_dag, d_separated, lemma_statements
from markovtilt.identification import Trace, identify_all, joint_probability, marginal_means
from markovtilt.inference import FunctionalSpec, plug_in_law, sample_dataset
from markovtilt.model import ModelSpec
from markovtilt.oracle import exact_observed_law, gen_full_law, verify_ci
from markovtilt.simulation import random_observed_law, run_simulation
from markovtilt.tables import FactorTable, O, Y, marginalize, product, slice_table, to_conditional

from reference import max_residual, ref_conditional, ref_marginalize, ref_product, ref_slice
from test_cli import COMMANDS, _argv, _files
from test_identification import EXPECTED_TRACE

ROUND_TRIP = [(4, 1), (5, 1), (6, 1), (7, 1), (6, 2), (7, 2)]
SEEDS = range(20)


def _oracle(K, m, seed):
    rng = np.random.default_rng([100, K, m, seed])
    spec = ModelSpec(K, m, tuple(rng.uniform(-3, 3, K)))
    return gen_full_law(spec, [K, m, seed])


def test_criterion_01_oracle_round_trip(acceptance):
    t0 = time.perf_counter()
    worst_g = worst_joint = 0.0
    cases = 0
    for K, m in ROUND_TRIP:
        for seed in SEEDS:
            o = _oracle(K, m, seed)
            res = identify_all(exact_observed_law(o), o.spec)
            for k in range(1, K + 1):
                worst_g = max(worst_g, float(np.max(np.abs(res.g(k).values - o.y_conditionals[k - 1].values))))
            truth = o.outcome_law()
            for ybar in itertools.product((0, 1), repeat=K):
                cell = truth[{Y(k): ybar[k - 1] for k in range(1, K + 1)}]
                worst_joint = max(worst_joint, abs(joint_probability(res, ybar) - cell))
            cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst_g <= 1e-9 and worst_joint <= 1e-9 and elapsed < 60
    acceptance(1, ok, f"oracle round trip over {cases} laws: max |g_k err| {worst_g:.1e}, "
                      f"max |joint err| {worst_joint:.1e} (tol 1e-9), {elapsed:.1f}s (< 60s)")


def test_criterion_02_lemma_verification(acceptance):
    t0 = time.perf_counter()
    checked = failed = 0
    worst = 0.0
    for K, m in ROUND_TRIP:
        stmts = lemma_statements(ModelSpec(K, m), LEMMA1) + lemma_statements(ModelSpec(K, m), LEMMA2)
        for seed in SEEDS:
            o = _oracle(K, m, seed)
            for s in stmts:
                rep = verify_ci(o, s, tol=1e-10)
                worst = max(worst, rep.residual)
                checked += 1
                failed += not rep.passed
    dsep_total = dsep_fail = 0
    for K in range(2, 13):
        for m in range(0, 4):
            if not 2 * m + 1 < K:
                continue
            spec = ModelSpec(K, m)
            dag = build_full_dag(spec)
            for s in lemma_statements(spec, LEMMA2):
                dsep_total += 1
                dsep_fail += not d_separated(dag, s.X, s.Z, s.S)
    elapsed = time.perf_counter() - t0
    ok = failed == 0 and dsep_fail == 0 and elapsed < 30
    acceptance(2, ok, f"{checked - failed}/{checked} lemma checks pass (max residual {worst:.1e}, tol 1e-10); "
                      f"{dsep_total - dsep_fail}/{dsep_total} Lemma 2 statements d-separated (K<=12, m<=3); "
                      f"{elapsed:.1f}s (< 30s)")


def test_criterion_03_appendix_trace(acceptance):
    spec = ModelSpec.common(7, 2, 0.5)
    t = Trace()
    identify_all(exact_observed_law(gen_full_law(spec, 0)), spec, trace=t)
    matched = sum(a == b for a, b in zip(t.steps, EXPECTED_TRACE))
    ok = len(t.steps) == len(EXPECTED_TRACE) and matched == len(EXPECTED_TRACE)
    acceptance(3, ok, f"K=7, m=2 trace: {matched}/{len(EXPECTED_TRACE)} step factor lists match "
                      f"the appendix bullets k=1..7")


def test_criterion_04_tilt_limits(acceptance):
    K, m = 10, 2
    spec = ModelSpec(K, m)
    d = sample_dataset(random_observed_law(K, m, 4), 2000, 4)
    law = build_observed_law(d, spec, EmpiricalEstimator())

    def est(alpha, mode=None):
        return np.array(marginal_means(identify_all(law, spec.with_alphas(alpha), mode, measure_storage=False)))

    hi = np.max(np.abs(est(40.0) - est(0.0, "missing=1")))
    lo = np.max(np.abs(est(-40.0) - est(0.0, "missing=0")))
    bench = est(0.0, "benchmark")
    zero_exact = bool(np.array_equal(est(0.0), bench))
    grid = np.linspace(-10, 10, 21)
    curve = np.array([est(a) for a in grid])  # (21, K) marginal means
    counts = curve.sum(axis=1)
    monotone = bool(np.all(np.diff(curve, axis=0) >= -1e-12))
    ok = hi <= 1e-4 and lo <= 1e-4 and zero_exact and monotone
    acceptance(4, ok, f"K=10, m=2, n=2000: |alpha=+40 - missing=1| {hi:.1e}, |alpha=-40 - missing=0| {lo:.1e} "
                      f"(tol 1e-4); alpha=0 == benchmark exactly: {zero_exact}; monotone over 21-point grid: "
                      f"{monotone} (E[sum Y] {counts[0]:.3f} .. {counts[-1]:.3f})")


def test_criterion_05_storage_scaling(acceptance):
    K, m = 24, 3
    law = random_observed_law(K, m, 5)
    spec = ModelSpec.common(K, m, 1.0)
    t0 = time.perf_counter()
    res = identify_all(law, spec)
    elapsed = time.perf_counter() - t0
    bound = 3 ** 8 * (24 - 7) + 2 * 3 ** 8
    # brute force: the full (Y, O) joint over K visits has 6^K cells; measure how
    # enumeration time per cell behaves at small K and extrapolate to K=15
    per_cell = []
    for k_small in (7, 8):
        t1 = time.perf_counter()
        gen_full_law(ModelSpec(k_small, 1), 0)
        per_cell.append((time.perf_counter() - t1) / 6 ** k_small)
    cells15 = 6 ** 15
    est_seconds = cells15 * min(per_cell)
    est_bytes = cells15 * 8
    infeasible = est_seconds > 10 or est_bytes > 64 * 2 ** 30
    ok = elapsed < 10 and res.peak_storage <= bound and infeasible
    acceptance(5, ok, f"K=24, m=3 identified in {elapsed:.2f}s (< 10s), peak {res.peak_storage} entries "
                      f"<= {bound}; unrestricted K=15 joint needs 6^15 = {cells15:.2e} cells "
                      f"({est_bytes / 2 ** 40:.1f} TiB, ~{est_seconds:.0f}s at measured speed): infeasible")


def test_criterion_06_estimation_consistency(acceptance):
    K, m = 8, 1
    spec = ModelSpec(K, m)
    truth = random_observed_law(K, m, 6)
    d = sample_dataset(truth, 200000, 6)

    def err(est):
        law = build_observed_law(d, spec, est)
        return max(float(np.max(np.abs(a.values - b.values))) for a, b in zip(law.windows, truth.windows))

    e_emp = err(EmpiricalEstimator())
    e_rf = err(ForestEstimator(ForestParams(seed=6)))
    ok = e_emp <= 0.01 and e_rf <= 0.05
    acceptance(6, ok, f"K=8, m=1, n=200000: empirical window error {e_emp:.4f} (tol 0.01), "
                      f"forest (1000 trees) {e_rf:.4f} (tol 0.05)")


@pytest.mark.slow
def test_criterion_07_bootstrap_behavior(acceptance):
    K, m = 10, 1
    law = random_observed_law(K, m, 7)
    t0 = time.perf_counter()
    rows = run_simulation(law, ModelSpec(K, m), EmpiricalEstimator(), [250, 500], [-2.0, 0.0, 2.0],
                          reps=100, B=200, seed=7)
    elapsed = time.perf_counter() - t0
    parts, ok = [], elapsed < 1800
    for r in rows:
        good = abs(r.bias) <= 2 * r.mc_se and 0.88 <= r.coverage <= 0.99
        ok &= good
        parts.append(f"(a={r.alpha:+g}, n={r.n}: bias {r.bias:+.3f} vs 2 MCSE {2 * r.mc_se:.3f}, "
                     f"cover {r.coverage:.2f})")
    acceptance(7, ok, f"simulation K=10, m=1, 100 reps, B=200 in {elapsed:.0f}s (< 1800s): " + " ".join(parts))


def _random_table(rng, pool, n_min=0, n_max=4):
    n = int(rng.integers(n_min, n_max + 1))
    idx = rng.choice(len(pool), size=n, replace=False)
    vs = [pool[i] for i in sorted(idx)]
    return FactorTable.from_array(vs, rng.uniform(0.01, 1.0, size=[v.card for v in vs]))


def test_criterion_08_table_algebra(acceptance):
    rng = np.random.default_rng(8)
    pool = [O(1), Y(1), O(2), Y(2), O(3), Y(3)]
    worst = 0.0
    n_cases = 0
    for _ in range(300):
        a, b = _random_table(rng, pool), _random_table(rng, pool)
        worst = max(worst, max_residual(*ref_product(a, b), product(a, b)))
        t = _random_table(rng, pool, 1)
        out = [v for v in t.schema if rng.random() < 0.5]
        worst = max(worst, max_residual(*ref_marginalize(t, out), marginalize(t, out)))
        ev = {v: int(rng.integers(v.card)) for v in t.schema if rng.random() < 0.5}
        worst = max(worst, max_residual(*ref_slice(t, ev), slice_table(t, ev)))
        given = [v for v in t.schema if rng.random() < 0.5]
        worst = max(worst, max_residual(*ref_conditional(t, given), to_conditional(t, given)))
        n_cases += 4
    acceptance(8, n_cases >= 1000 and worst <= 1e-12,
               f"{n_cases} random cases (product/marginalize/slice/to_conditional) vs nested loops: "
               f"max residual {worst:.1e} (tol 1e-12)")


def test_criterion_09_reproducibility(acceptance, tmp_path, capsys):
    root = tmp_path / "data"
    root.mkdir()
    data = (root / "a.csv", root / "b.csv")
    sample_dataset(random_observed_law(6, 1, 9), 150, 1).write_csv(data[0])
    sample_dataset(random_observed_law(6, 1, 10), 150, 2).write_csv(data[1])
    same = []
    for name in sorted(COMMANDS):
        out = tmp_path / name
        assert main(_argv(name, data, out)) == 0
        first = _files(out)
        rerun = tmp_path / f"{name}-replay"
        code = main(["replay", str(out / "manifest.json"), "--out", str(rerun)])
        same.append(code == 0 and _files(rerun) == first)
    acceptance(9, all(same), f"{sum(same)}/{len(same)} command runs replayed from their manifests "
                             f"with byte-identical outputs")


TRIAL_DIR = os.environ.get("MARKOVTILT_TRIAL_DIR")
TABLE1 = {
    "tau": dict(n=252, complete=20, monotone=10, all_missing=7,
                nonmonotone={"1": 10, "2": 20, "3": 21, ">=4": 164}),
    "tau_plus": dict(n=255, complete=44, monotone=16, all_missing=2,
                     nonmonotone={"1": 20, "2": 27, "3": 14, ">=4": 132}),
}
BENCHMARK = {"tau": 14.91, "tau_plus": 16.36, "difference": 1.44}


@pytest.mark.skipif(not TRIAL_DIR, reason="set MARKOVTILT_TRIAL_DIR to the directory holding tau.csv "
                                          "and tau_plus.csv (restricted trial data)")
def test_criterion_10_trial_reproduction(acceptance):
    arms = {name: Dataset.read_csv(Path(TRIAL_DIR) / f"{name}.csv") for name in TABLE1}
    pattern_ok = True
    for name, d in arms.items():
        s = pattern_summary(d)
        got = dict(n=s.n, complete=s.complete, monotone=s.monotone_total, all_missing=s.all_missing,
                   nonmonotone=s.nonmonotone)
        pattern_ok &= got == TABLE1[name]
    spec = ModelSpec(24, 3)
    est = ForestEstimator(ForestParams(n_trees=1000, seed=0))
    vals = {name: plug_in_law(build_observed_law(d, spec, est), spec, FunctionalSpec(alpha=0.0))
            for name, d in arms.items()}
    vals["difference"] = vals["tau_plus"] - vals["tau"]
    est_ok = all(abs(vals[k] - BENCHMARK[k]) <= 0.1 for k in BENCHMARK)
    acceptance(10, pattern_ok and est_ok,
               f"Table 1 pattern counts exact: {pattern_ok}; benchmark TAU {vals['tau']:.2f} (14.91), "
               f"TAU+ {vals['tau_plus']:.2f} (16.36), difference {vals['difference']:.2f} (1.44), tol 0.1")
