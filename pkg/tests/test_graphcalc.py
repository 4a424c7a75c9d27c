from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from renorm_lab import graphcalc as gc
from renorm_lab.errors import GraphIncomplete, LengthMismatch, OrderOutOfRange

S, R, E = (gc.CoeffPoly.var(x) for x in "sre")

polys = st.builds(
    lambda terms: gc.CoeffPoly({m: Fraction(c, 7) for m, c in terms}),
    st.lists(st.tuples(st.tuples(st.integers(0, 3), st.integers(0, 2), st.integers(0, 2)),
                       st.integers(-20, 20)), max_size=5))


@given(polys, polys, polys)
def test_coeffpoly_ring_laws(a, b, c):
    assert a + b == b + a
    assert a * b == b * a
    assert (a + b) + c == a + (b + c)
    assert (a * b) * c == a * (b * c)
    assert a * (b + c) == a * b + a * c
    assert a - a == gc.CoeffPoly()


@given(polys)
def test_coeffpoly_text_roundtrip(a):
    assert gc.parse_poly(str(a)) == a


@given(polys, st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_coeffpoly_evaluate_is_a_homomorphism(a, s, r, e):
    b = a * a + S
    assert b.evaluate(s, r, e) == pytest.approx(a.evaluate(s, r, e) ** 2 + s, abs=1e-9)


def test_parse_poly_grammar():
    assert gc.parse_poly("8*e*s-7*s^6+12*s^3*r") == 8 * E * S - 7 * S ** 6 + 12 * S ** 3 * R
    assert gc.parse_poly("r-s^3") == R - S ** 3
    assert gc.parse_poly("0").is_zero()


def test_cancels_examples():
    assert gc.cancels(gc.TuplePattern.of(0, 1, 0, 1))
    assert not gc.cancels(gc.TuplePattern.of(0, 1, 2))
    assert not gc.cancels(gc.TuplePattern.of(0, 0, 1))


def test_admissible_examples():
    assert gc.admissible(gc.TuplePattern.of(0, 1, 0))
    assert not gc.admissible(gc.TuplePattern.of(0, 1, 1, 0))
    assert not gc.admissible(gc.TuplePattern.of(0, 1, 0, 1))


def _windows_cancel(labels):
    return any(gc.cancels(labels[i:j]) for i in range(len(labels))
               for j in range(i + 2, len(labels) + 1))


@given(st.lists(st.integers(0, 3), min_size=1, max_size=9))
def test_admissible_matches_window_definition(labels):
    assert gc.admissible(labels) == (not _windows_cancel(labels))


@given(st.lists(st.integers(0, 3), min_size=1, max_size=9))
def test_odd_length_never_cancels(labels):
    if len(labels) % 2:
        assert not gc.cancels(labels)


@pytest.mark.parametrize("n,s", [(3, 3), (4, 4), (5, 3)])
def test_admissible_tuples_matches_oracle(n, s):
    import itertools

    got = {tuple(r) for r in gc.admissible_tuples(n, s).tolist()}
    want = {t for t in itertools.product(range(n), repeat=s) if gc.admissible(t)}
    assert got == want
    assert len(gc.admissible_tuples(n, s, filtered=False)) == n ** s


def test_complete_counts():
    src = gc.CharGraph((gc.SOLID, gc.VACUUM, gc.SOLID, gc.SOLID, gc.SOLID))
    assert len(gc.complete(src)) == 2
    full = gc.CharGraph((gc.DOTTED,) * 3)
    assert gc.complete(full) == [full]
    assert len(gc.complete(gc.CharGraph((gc.VACUUM,) * 2))) == 4


def test_component_sequence_examples():
    g = gc.TuplePattern.of(0, 0, 1, 2, 2, 0, 0).graph()
    assert gc.component_sequence(g) == (2, 1, 2, 2)
    assert gc.component_sequence(gc.CharGraph((gc.DOTTED,) * 5)) == (1,) * 6
    assert gc.component_sequence(gc.CharGraph((gc.SOLID,) * 5)) == (6,)
    with pytest.raises(GraphIncomplete):
        gc.component_sequence(gc.CharGraph((gc.VACUUM,)))


@given(st.lists(st.integers(1, 4), min_size=1, max_size=5))
def test_sequence_roundtrip(seq):
    assert gc.component_sequence(gc.CharGraph.from_sequence(seq)) == tuple(seq)


def test_born_source_terms_low_orders():
    one = gc.born_source_terms(1, ("1",))
    assert [t.word for t in one] == ["G0 V G0"] and one[0].prefactor == -1
    two = {t.word: t.prefactor for t in gc.born_source_terms(2, ("1", "2"))}
    assert two == {"G0 V G0 V G0": 1, "G0 v^2 G0": -S}


def test_born_source_terms_order6_family():
    terms = gc.born_source_terms(6, gc.LOWER_STAGES[6])
    counts = {}
    for t in terms:
        counts[str(t.prefactor)] = counts.get(str(t.prefactor), 0) + 1
    # words with factors 4+2, 2+4 (-s*r), 4+1+1 family (+r), 2+2+2 (-s^3),
    # 2+2+1+1 family (+s^2), 2+1+1+1+1 family (-s), 1^6 (+1)
    assert counts == {"-s*r": 2, "r": 3, "-s^3": 1, "s^2": 6, "-s": 5, "1": 1}
    assert len(terms) == 18


def test_born_source_terms_range():
    with pytest.raises(OrderOutOfRange):
        gc.born_source_terms(9)


def test_coefficient_of_reference_examples():
    src6 = gc.born_source_terms(6, gc.LOWER_STAGES[6])
    assert gc.coefficient_of(gc.CharGraph((gc.SOLID,) * 5), src6) == S ** 5 + R * S ** 2
    assert gc.coefficient_of(gc.TuplePattern.of(0, 1, 0, 1, 1, 1), src6) == -S ** 2
    src7 = [t for t in gc.born_source_terms(7, gc.LOWER_STAGES[7]) if "6R" not in t.factors]
    assert (gc.coefficient_of(gc.CharGraph((gc.SOLID,) * 6), src7)
            == 8 * E * S - 7 * S ** 6 + 12 * S ** 3 * R)


def test_coefficient_of_length_mismatch():
    with pytest.raises(LengthMismatch):
        gc.coefficient_of(gc.CharGraph((gc.SOLID,) * 3), gc.born_source_terms(6))


@given(st.permutations(range(18)))
def test_coefficient_of_order_invariant(perm):
    src = gc.born_source_terms(6, gc.LOWER_STAGES[6])
    target = gc.CharGraph.from_sequence((1, 4, 1))
    assert gc.coefficient_of(target, [src[i] for i in perm]) == gc.coefficient_of(target, src)


def test_coefficient_of_linear_in_sources():
    src = gc.born_source_terms(6, gc.LOWER_STAGES[6])
    target = gc.CharGraph.from_sequence((2, 2, 1, 1))
    split = gc.coefficient_of(target, src[:7]) + gc.coefficient_of(target, src[7:])
    assert split == gc.coefficient_of(target, src)


@pytest.mark.parametrize("order", [6, 7])
def test_coefficient_tables_match(order):
    rep = gc.coefficient_tables(order)
    assert rep.factorization_ok
    assert rep.mismatches == []


def test_table_rows():
    t6 = gc.coefficient_tables(6)
    assert t6.lookup("(n1,n2,n2,n2,n2,n1)").coefficient == R - S ** 3
    for seq in ((2, 2, 1, 1), (1, 2, 2, 1), (1, 1, 2, 2)):
        assert t6.lookup(gc.sequence_label(seq)).coefficient.is_zero()
    t7 = gc.coefficient_tables(7)
    assert t7.lookup("<5,1,1>").coefficient == -2 * S * R
    assert t7.lookup("<3,3,1>").coefficient == -S ** 4
    assert t7.lookup("<1,1,1,1,1,1,1>").coefficient == -1


def test_coefficient_tables_order_range():
    with pytest.raises(OrderOutOfRange):
        gc.coefficient_tables(5)


def test_renormalization_counterterms():
    assert gc.renormalization_report(2).counterterm == S
    assert gc.renormalization_report(4).counterterm == -R
    assert gc.renormalization_report(6).counterterm == 4 * E - 3 * S ** 5 + 5 * S ** 2 * R


def test_verify_offsets_and_negative_control():
    rep = gc.verify_offsets(strict=False)
    assert rep.ok and rep.negative_control_failed is True
    bad = gc.verify_offsets(eta_shift=1, strict=False, control=False)
    assert not bad.ok
