from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from core.exceptions import ConfigurationError
from services.polynomial import CtrPolynomial
from tests.hypothesis_profiles import STANDARD_SETTINGS

MU0 = CtrPolynomial.variable(2, 0)
MU1 = CtrPolynomial.variable(2, 1)


def test_click_product_expands_misses():
    assert CtrPolynomial.click_product([1, 0], [0, 1]) == MU0 - MU0 * MU1
    assert CtrPolynomial.click_product([0, 0], [2, 0]) == 1 - 2 * MU0 + MU0 ** 2


def test_arithmetic_and_scalars():
    p = (MU0 + 1) ** 2
    assert p.coefficient((2, 0)) == 1
    assert p.coefficient((1, 0)) == 2
    assert p.coefficient((0, 0)) == 1
    assert p.degree == 2
    assert CtrPolynomial.constant(2, 3) == 3
    assert not (MU0 - MU0)
    assert CtrPolynomial.zero(2).degree == -1
    assert 2 - MU1 == CtrPolynomial(2, {(0, 0): 2, (0, 1): -1})


def test_invalid_polynomials():
    with pytest.raises(ConfigurationError):
        CtrPolynomial(2, {(1,): 1})
    with pytest.raises(ConfigurationError):
        CtrPolynomial(2, {(1, -1): 1})
    with pytest.raises(ConfigurationError):
        MU0 + CtrPolynomial.variable(3, 0)
    with pytest.raises(ConfigurationError):
        MU0 ** -1
    with pytest.raises(ConfigurationError):
        MU0.evaluate([0.5])


def test_exact_evaluation():
    p = Fraction(1, 3) * MU0 * MU1 - MU1
    assert p.evaluate([Fraction(1, 2), Fraction(3, 4)]) == Fraction(1, 8) - Fraction(3, 4)
    assert p.exact


def test_string_form():
    assert str(MU0 - MU0 * MU1) == "mu0 - mu0*mu1"
    assert str(CtrPolynomial.zero(2)) == "0"
    assert str(3 * MU1 ** 2 + 1) == "1 + 3*mu1^2"


def test_records_keep_float_coefficients_exact():
    p = 0.25 * MU0 + Fraction(2, 3) * MU1 ** 3
    assert CtrPolynomial.from_records(2, p.to_records()) == p


coefficients = st.fractions(min_value=-5, max_value=5, max_denominator=7)
polynomials = st.dictionaries(st.tuples(st.integers(0, 3), st.integers(0, 3)), coefficients, max_size=5).map(
    lambda cs: CtrPolynomial(2, cs))
points = st.tuples(st.fractions(0, 1, max_denominator=9), st.fractions(0, 1, max_denominator=9))


@STANDARD_SETTINGS
@given(p=polynomials, q=polynomials, mu=points)
def test_evaluation_is_a_ring_homomorphism(p, q, mu):
    assert (p * q).evaluate(mu) == p.evaluate(mu) * q.evaluate(mu)
    assert (p + q).evaluate(mu) == p.evaluate(mu) + q.evaluate(mu)


@STANDARD_SETTINGS
@given(p=polynomials, mu=points)
def test_vectorised_evaluation_matches_scalar(p, mu):
    many = p.evaluate_many(np.array([[float(m) for m in mu]]))
    assert many[0] == pytest.approx(float(p.evaluate(mu)), abs=1e-9)
