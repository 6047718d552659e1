from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pishape import EvenPolyBasis, InvalidArgumentError, enumerate_even_monomials, eval_basis
from pishape.polybasis import even_basis_size

finite = st.floats(-3, 3, allow_nan=False)


def test_example_counts():
    assert len(enumerate_even_monomials(3, 4)) == 21
    assert len(enumerate_even_monomials(4, 4)) == 45


def test_two_vars_degree_four():
    b = enumerate_even_monomials(2, 4)
    assert len(b) == 8
    assert list(b.degrees) == [2] * 3 + [4] * 5


def test_graded_lex_order():
    b = enumerate_even_monomials(2, 4)
    assert b.terms[:3] == ((2, 0), (1, 1), (0, 2))
    assert b.terms[3:] == ((4, 0), (3, 1), (2, 2), (1, 3), (0, 4))
    # deterministic across constructions
    assert enumerate_even_monomials(3, 4).terms == enumerate_even_monomials(3, 4).terms


@pytest.mark.parametrize("deg", [0, 1, 3, 5, -2])
def test_bad_degree(deg):
    with pytest.raises(InvalidArgumentError):
        enumerate_even_monomials(2, deg)


def test_bad_nvars():
    with pytest.raises(InvalidArgumentError):
        enumerate_even_monomials(0, 2)


def test_terms_validated():
    with pytest.raises(InvalidArgumentError):
        EvenPolyBasis(2, 4, ((1, 0),))
    with pytest.raises(InvalidArgumentError):
        EvenPolyBasis(2, 4, ((2, 0), (2, 0)))
    with pytest.raises(InvalidArgumentError):
        EvenPolyBasis(1, 2, ((4,),))


def test_origin_vanishes():
    b = enumerate_even_monomials(3, 4)
    v, g = eval_basis(b, np.zeros(3))
    assert v.shape == (21,) and g.shape == (3, 21)
    assert not v.any() and not g.any()


def test_scalar_example():
    b = enumerate_even_monomials(1, 4)
    v, g = eval_basis(b, np.array([2.0]))
    np.testing.assert_array_equal(v, [4.0, 16.0])
    np.testing.assert_array_equal(g, [[4.0, 32.0]])


def test_dimension_mismatch():
    b = enumerate_even_monomials(3, 4)
    with pytest.raises(InvalidArgumentError):
        eval_basis(b, np.zeros(2))


def test_gradients_match_fd():
    rng = np.random.default_rng(1)
    b = enumerate_even_monomials(3, 4)
    h = 1e-5
    for _ in range(10):
        x = rng.uniform(-2, 2, 3)
        _, g = eval_basis(b, x)
        fd = np.stack([(b.values(x + h * e) - b.values(x - h * e)) / (2 * h) for e in np.eye(3)])
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


def test_hessians_match_fd():
    rng = np.random.default_rng(2)
    b = enumerate_even_monomials(3, 4, scale=[1.0, 2.0, 0.5])
    x = rng.uniform(-1, 1, 3)
    h = 1e-5
    H = b.hessians(x)
    fd = np.stack([(b.gradients(x + h * e) - b.gradients(x - h * e)) / (2 * h)
                   for e in np.eye(3)], axis=1)
    np.testing.assert_allclose(H, fd, rtol=1e-6, atol=1e-7)


def test_scaled_terms():
    b = enumerate_even_monomials(2, 2, scale=[2.0, 4.0])
    np.testing.assert_allclose(b.values(np.array([2.0, 4.0])), [1.0, 1.0, 1.0])


def test_batch_broadcast():
    b = enumerate_even_monomials(3, 4)
    X = np.random.default_rng(0).normal(size=(5, 7, 3))
    v, g = b.values_and_gradients(X)
    assert v.shape == (5, 7, 21) and g.shape == (5, 7, 3, 21)
    np.testing.assert_allclose(v[2, 3], b.values(X[2, 3]))


@given(arrays(float, 3, elements=finite))
def test_even_symmetry(x):
    b = enumerate_even_monomials(3, 4)
    np.testing.assert_allclose(b.values(-x), b.values(x), rtol=1e-12, atol=0)


@given(st.integers(1, 5), st.integers(1, 3))
def test_size_closed_form(n, half):
    d = 2 * half
    expected = sum(comb(k + n - 1, n - 1) for k in range(2, d + 1, 2))
    assert len(enumerate_even_monomials(n, d)) == expected == even_basis_size(n, d)


@given(st.integers(1, 4), st.integers(1, 3))
def test_gradients_vanish_at_origin(n, half):
    b = enumerate_even_monomials(n, 2 * half)
    assert not b.gradients(np.zeros(n)).any()
