import numpy as np
import pytest

from markovtilt.graph import ADHOC, LEMMA1, LEMMA2, CiStatement, Ov, Rv, Yv, build_full_dag, d_separated, lemma_statements
from markovtilt.model import ModelSpec, future_o, past_y
from markovtilt.oracle import (
    OracleError,
    exact_observed_law,
    gen_full_law,
    tilt_residual,
    verify_ci,
)
from markovtilt.tables import MISSING, O, Y, product, restrict, slice_table


def test_joint_is_normalized():
    o = gen_full_law(ModelSpec.common(6, 1, 0.7), 3)
    assert o.joint.total() == pytest.approx(1.0, abs=1e-12)
    assert o.joint.schema == tuple(v for k in range(1, 7) for v in (O(k), Y(k)))


def test_same_seed_same_oracle():
    spec = ModelSpec.common(5, 1, -1.0)
    a, b = gen_full_law(spec, 11), gen_full_law(spec, 11)
    np.testing.assert_array_equal(a.joint.values, b.joint.values)
    assert not np.array_equal(a.joint.values, gen_full_law(spec, 12).joint.values)


def test_enumeration_cap():
    with pytest.raises(OracleError, match="K <= 8"):
        gen_full_law(ModelSpec(9, 1), 0)


def test_observed_codes_agree_with_outcome():
    o = gen_full_law(ModelSpec(4, 1), 0)
    t = restrict(o.joint, [O(2), Y(2)])
    assert t[{O(2): 0, Y(2): 1}] == 0.0
    assert t[{O(2): 1, Y(2): 0}] == 0.0


def test_symmetric_limit():
    spec = ModelSpec(5, 1)
    o = gen_full_law(spec, 0, concentration=np.inf, baseline=0.0)
    for k in range(1, 6):
        t = restrict(o.joint, [O(k), Y(k)])
        assert slice_table(t, {O(k): MISSING}).total() == pytest.approx(0.5)
        assert restrict(o.joint, [Y(k)]).values == pytest.approx([0.5, 0.5])
    # 50% missing completely at random: R_k independent of everything else
    rest = [v for v in o.joint.schema if v not in (O(3),)]
    joint = restrict(o.joint, rest + [O(3)])
    num = slice_table(joint, {O(3): MISSING}).values
    den = restrict(o.joint, rest).values
    live = den > 1e-15
    assert live.any()
    np.testing.assert_allclose(num[live] / den[live], 0.5, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("K,m,alpha", [(5, 1, 1.3), (6, 2, -2.0), (7, 1, 0.4)])
def test_tilt_identity(K, m, alpha, seed):
    assert tilt_residual(gen_full_law(ModelSpec.common(K, m, alpha), seed)) <= 1e-10


def test_selection_form():
    spec = ModelSpec.common(5, 1, 0.8)
    o = gen_full_law(spec, 4)
    k = 3
    ctx, b = o.r_models[k - 1]
    assert list(ctx) == past_y(k, 1) + future_o(k, 1, 5)
    t = restrict(o.joint, list(ctx) + [Y(k), O(k)])
    for y in (0, 1):
        mis = slice_table(t, {Y(k): y, O(k): MISSING}).values
        tot = slice_table(restrict(t, list(ctx) + [Y(k)]), {Y(k): y}).values
        np.testing.assert_allclose(mis / tot, 1 / (1 + np.exp(-(b + 0.8 * y))), atol=1e-12)


class TestExactObservedLaw:
    def test_overlap_exact(self):
        law = exact_observed_law(gen_full_law(ModelSpec.common(7, 1, 1.0), 2))
        assert law.overlap_residual() <= 1e-12
        law.check(tol=1e-12)

    def test_no_missingness_limit(self):
        o = gen_full_law(ModelSpec(6, 1), 0, baseline=-40.0)
        for w in exact_observed_law(o).windows:
            miss_mass = sum(slice_table(w, {v: MISSING}).total() for v in w.schema)
            assert miss_mass < 1e-15

    def test_mcar_windows_factorize(self):
        spec = ModelSpec(6, 1)
        o = gen_full_law(spec, 0, concentration=np.inf, baseline=0.3)
        for w in exact_observed_law(o).windows:
            prod = restrict(w, w.schema[:1])
            for v in w.schema[1:]:
                prod = product(prod, restrict(w, [v]))
            assert np.max(np.abs(prod.values - w.values)) <= 1e-10


class TestVerifyCi:
    @pytest.mark.parametrize("K,m", [(5, 1), (6, 1), (7, 2)])
    def test_lemma_statements_pass(self, K, m):
        spec = ModelSpec.common(K, m, 1.5)
        o = gen_full_law(spec, K * 10 + m)
        for s in lemma_statements(spec, LEMMA1) + lemma_statements(spec, LEMMA2):
            rep = verify_ci(o, s)
            assert rep.passed, (s.describe(), rep.residual)

    def test_tilt_dependence_detected(self):
        o = gen_full_law(ModelSpec.common(5, 1, 2.0), 1)
        stmt = CiStatement(frozenset({Rv(1)}), frozenset({Yv(1)}), frozenset(), ADHOC)
        assert not verify_ci(o, stmt).passed

    def test_benchmark_independence(self):
        spec = ModelSpec(6, 1)
        o = gen_full_law(spec, 5)
        for k in range(1, 7):
            S = {Yv(j) for j in range(max(1, k - 1), k)}
            for j in range(k + 1, min(k + 1, 6) + 1):
                S |= Ov(j)
            stmt = CiStatement(frozenset({Rv(k)}), frozenset({Yv(k)}), frozenset(S))
            assert verify_ci(o, stmt).passed

    def test_d_separated_lemma1_statements_hold(self):
        spec = ModelSpec.common(7, 2, 0.9)
        dag = build_full_dag(spec)
        o = gen_full_law(spec, 0)
        for s in lemma_statements(spec, LEMMA1):
            if d_separated(dag, s.X, s.Z, s.S):
                assert verify_ci(o, s).passed

    def test_report_row(self):
        spec = ModelSpec(4, 1)
        s = lemma_statements(spec, LEMMA2)[0]
        row = verify_ci(gen_full_law(spec, 0), s).row()
        assert row["source"] == LEMMA2 and row["k"] == 1 and row["passed"]
