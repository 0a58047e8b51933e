"""Dense linear algebra: products, softmax, orthonormalization, eigen."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import matmul_loops
from bnt.linalg import (
    DegenerateBasisError,
    gram_schmidt,
    matmul,
    orthonormal_rows,
    softmax_rows,
    symmetric_eigendecomposition,
    xavier_uniform,
)
from bnt.rng import Rng

finite_floats = st.floats(min_value=-100.0, max_value=100.0, allow_nan=False)


def _matrix_strategy(max_dim=6):
    return st.integers(1, max_dim).flatmap(
        lambda r: st.integers(1, max_dim).flatmap(
            lambda c: st.lists(
                st.lists(finite_floats, min_size=c, max_size=c), min_size=r, max_size=r
            ).map(np.array)
        )
    )


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_matmul_matches_triple_loop(rows, inner, cols, seed):
    rng = Rng(seed)
    a = rng.normal(rows * inner).reshape(rows, inner)
    b = rng.normal(inner * cols).reshape(inner, cols)
    assert np.allclose(matmul(a, b), matmul_loops(a, b), rtol=1e-12, atol=1e-12)


def test_matmul_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_rejects_overflow():
    big = np.full((2, 2), 1e308)
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
        matmul(big, big)


def test_softmax_rows_hand_value():
    # softmax([0, ln 3]) = [1/4, 3/4]
    out = softmax_rows(np.array([[0.0, np.log(3.0)]]))
    assert np.allclose(out, [[0.25, 0.75]], atol=1e-15)


@given(_matrix_strategy())
def test_softmax_rows_sum_to_one(m):
    out = softmax_rows(m)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert (out > 0).all()


def test_softmax_rows_shift_invariant_and_stable():
    m = np.array([[1.0, 2.0, 3.0], [0.0, -1.0, 5.0]])
    shifted = softmax_rows(m + 1234.5)
    assert np.allclose(shifted, softmax_rows(m), atol=1e-12)
    huge = softmax_rows(np.array([[1e4, 0.0]]))
    assert np.isfinite(huge).all()


def test_xavier_uniform_bound_and_determinism():
    w = xavier_uniform(30, 50, Rng(3))
    bound = np.sqrt(6.0 / 80.0)
    assert w.shape == (30, 50)
    assert (np.abs(w) <= bound).all()
    assert np.array_equal(w, xavier_uniform(30, 50, Rng(3)))
    # draws should actually approach the bound
    assert np.abs(w).max() > 0.9 * bound


def test_gram_schmidt_hand_case():
    e = gram_schmidt(np.array([[3.0, 4.0], [1.0, 0.0]]))
    assert np.allclose(e, [[0.6, 0.8], [0.8, -0.6]], atol=1e-15)


@given(st.integers(1, 8), st.integers(0, 10_000))
def test_gram_schmidt_orthonormal_and_span(k, seed):
    v = k + 3
    c = Rng(seed).normal(k * v).reshape(k, v)
    e = gram_schmidt(c)
    assert np.abs(e @ e.T - np.eye(k)).max() < 1e-10
    # span preservation: every input row lies in the span of the output rows
    residual = c - (c @ e.T) @ e
    assert np.abs(residual).max() < 1e-9 * max(1.0, np.abs(c).max())


def test_gram_schmidt_does_not_mutate_input():
    c = np.array([[2.0, 0.0], [1.0, 1.0]])
    snapshot = c.copy()
    gram_schmidt(c)
    assert np.array_equal(c, snapshot)


def test_gram_schmidt_rejects_dependent_rows():
    with pytest.raises(DegenerateBasisError):
        gram_schmidt(np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]))


def test_gram_schmidt_rejects_wide_input():
    with pytest.raises(ValueError):
        gram_schmidt(np.ones((3, 2)))


def test_eigendecomposition_hand_case():
    vals, vecs = symmetric_eigendecomposition(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(vals, [3.0, 1.0], atol=1e-12)
    s = 1.0 / np.sqrt(2.0)
    for column, expected in ((vecs[:, 0], [s, s]), (vecs[:, 1], [s, -s])):
        assert np.allclose(column, expected, atol=1e-12) or np.allclose(
            column, -np.asarray(expected), atol=1e-12
        )


@given(st.integers(1, 8), st.integers(0, 10_000))
@settings(deadline=None)
def test_eigendecomposition_reconstructs(n, seed):
    g = Rng(seed).normal(n * n).reshape(n, n)
    m = (g + g.T) / 2.0
    vals, vecs = symmetric_eigendecomposition(m)
    assert np.allclose(vecs @ np.diag(vals) @ vecs.T, m, atol=1e-9)
    assert np.abs(vecs.T @ vecs - np.eye(n)).max() < 1e-9
    assert all(vals[i] >= vals[i + 1] - 1e-12 for i in range(n - 1))


def test_eigenvalues_match_library_oracle():
    g = Rng(11).normal(12 * 12).reshape(12, 12)
    m = (g + g.T) / 2.0
    vals, _ = symmetric_eigendecomposition(m)
    expected = np.sort(np.linalg.eigvalsh(m))[::-1]
    assert np.allclose(vals, expected, atol=1e-10)


def test_eigendecomposition_rejects_asymmetry():
    with pytest.raises(ValueError):
        symmetric_eigendecomposition(np.array([[1.0, 2.0], [0.5, 1.0]]))


def test_orthonormal_rows_shapes_and_identity():
    for k, v in ((3, 5), (4, 16)):
        e = orthonormal_rows(k, v, Rng(0))
        assert e.shape == (k, v)
        assert np.abs(e @ e.T - np.eye(k)).max() < 1e-10
