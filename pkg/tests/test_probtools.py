import numpy as np
import pytest
from hypothesis import given, strategies as st

from renorm_lab import probtools as pt
from renorm_lab.errors import TooManyVariables


def poly(m, *terms):
    return pt.BooleanPoly(m, tuple(terms))


def test_exact_moment_examples():
    assert pt.exact_moment(poly(1, ((0,), 1.0)), 2) == 1.0
    assert pt.exact_moment(poly(2, ((0,), 1.0), ((1,), 1.0)), 4) == 8.0


def test_repeated_variables_reduce():
    f = poly(2, ((0, 0, 1), 1.0))
    assert f.multilinear() == {2: 1.0}


poly_strategy = st.builds(
    lambda seed, m, s: pt.random_boolean_poly(np.random.default_rng(seed), m, s),
    st.integers(0, 10 ** 6), st.integers(1, 10), st.integers(0, 3))


@given(poly_strategy)
def test_parseval(f):
    weight = sum(c * c for c in f.multilinear().values())
    assert pt.exact_moment(f, 2) == pytest.approx(weight, rel=1e-12, abs=1e-300)


@given(poly_strategy, st.floats(0.1, 10))
def test_bonami_scale_invariant(f, c):
    assert pt.bonami_check(f.scaled(c)) == pytest.approx(pt.bonami_check(f), rel=1e-9)


@given(poly_strategy)
def test_bonami_inequality(f):
    assert pt.bonami_check(f) <= 1.0 + 1e-12


def test_bonami_examples():
    assert pt.bonami_check(poly(1, ((0,), 1.0))) == pytest.approx(1 / 9)
    for s in (1, 2, 3):
        assert pt.bonami_check(poly(s, (tuple(range(s)), 1.0))) == pytest.approx(9.0 ** -s)


def test_bonami_survey_all_within_bound():
    res = pt.bonami_survey(200, 12, 3, seed=42)
    assert res["trials"] == 200 and res["max_ratio"] <= 1 + 1e-12


def test_too_many_variables():
    with pytest.raises(TooManyVariables):
        pt.exact_moment(poly(40, ((0,), 1.0)), 2)


def test_moment_equivalence_examples():
    rng = np.random.default_rng(5)
    f = pt.random_boolean_poly(rng, 10, 2)
    assert pt.moment_equivalence_check(f, 1) <= 1 + 1e-12
    assert pt.moment_equivalence_check(poly(1, ((0,), 1.0)), 8) == pytest.approx(1.0)
    r4 = pt.moment_equivalence_check(f, 4)
    assert r4 <= 9 and r4 <= pt.moment_bound_constant(4, 2)


@given(poly_strategy, st.sampled_from([3, 4, 6, 8]))
def test_moment_equivalence_bound(f, p):
    assert pt.moment_equivalence_check(f, p) <= pt.moment_bound_constant(p, max(f.degree, 1))


def test_sample_omega_deterministic_and_balanced():
    a, b = pt.sample_omega(3, 100), pt.sample_omega(3, 100)
    assert np.array_equal(a.values, b.values)
    differ = sum(not np.array_equal(pt.sample_omega(s, 100).values,
                                    pt.sample_omega(s + 1000, 100).values) for s in range(100))
    assert differ >= 99
    big = pt.sample_omega_batch(0, 1000, 1000).astype(float)
    assert abs(big.mean()) < 0.005
    assert abs((big > 0).mean() - 0.5) < 0.01


def test_sample_omega_site_lookup():
    f = pt.sample_omega(1, [(0, 0), (0, 1)])
    assert f[(0, 1)] in (-1, 1)
    assert set(f.as_dict()) == {(0, 0), (0, 1)}


def test_khintchine_s1_orthogonality():
    rng = np.random.default_rng(7)
    for _ in range(10):
        r = pt.khintchine_check(pt.random_weights(rng, 10, 1), p=2)
        assert abs(r.ratio - 1.0) <= 1e-12


def test_khintchine_zero_weights():
    r = pt.khintchine_check([np.zeros(5), np.zeros((5, 5)), np.zeros(5)])
    assert r.lhs == r.rhs == r.ratio == 0.0


def test_khintchine_s2_recorded_constant():
    res = pt.khintchine_survey(100, 10, 2, 2, seed=11)
    assert res["max_ratio"] <= 4.0


def test_khintchine_mc_agrees_with_exact():
    w = pt.random_weights(np.random.default_rng(2), 6, 2)
    ex = pt.khintchine_check(w, 2)
    mc = pt.khintchine_check(w, 2, mode="mc", trials=40000, seed=1)
    assert mc.lhs == pytest.approx(ex.lhs, rel=0.03)


def test_cancelled_witness_negative_control():
    w = pt.cancelled_witness(9)
    un = pt.khintchine_check(w, 2, admissible_only=False)
    ad = pt.khintchine_check(w, 2, admissible_only=True)
    assert un.lhs > un.rhs
    assert un.ratio == pytest.approx(3.0)
    assert ad.lhs == 0.0
