import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import crandn
from mosel.numkit import (
    DegenerateFitError, exchange_matrix, fit_line_least_squares, left_pi_real_matrix, singular_values, svd,
)


def charpoly_eigenvalues_3x3(g):
    """Eigenvalues of a 3x3 Hermitian matrix from its characteristic polynomial."""
    tr = np.trace(g).real
    c2 = (g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
          + g[0, 0] * g[2, 2] - g[0, 2] * g[2, 0]
          + g[1, 1] * g[2, 2] - g[1, 2] * g[2, 1]).real
    det = np.linalg.det(g).real
    # lambda^3 - tr lambda^2 + c2 lambda - det, solved in closed form (trigonometric)
    p = c2 - tr ** 2 / 3
    q = -2 * tr ** 3 / 27 + tr * c2 / 3 - det
    if abs(p) < 1e-14:
        roots = np.full(3, tr / 3)
    else:
        m = 2 * np.sqrt(-p / 3)
        arg = np.clip(3 * q / (p * m), -1, 1)
        phi = np.arccos(arg) / 3
        roots = tr / 3 + m * np.cos(phi - 2 * np.pi * np.arange(3) / 3)
    return np.sort(roots)[::-1]


def test_svd_identity_and_diagonal():
    np.testing.assert_allclose(svd(np.eye(3)).s, [1, 1, 1])
    np.testing.assert_allclose(svd(np.diag([3.0, 1.0, 2.0])).s, [3, 2, 1])


def test_svd_rank_one_matches_charpoly_oracle(rng):
    u = crandn(rng, 3)
    v = crandn(rng, 3)
    u *= 2 / np.linalg.norm(u)
    v *= 3 / np.linalg.norm(v)
    a = np.outer(u, v.conj())
    oracle = np.sqrt(np.maximum(charpoly_eigenvalues_3x3(a.conj().T @ a), 0))
    np.testing.assert_allclose(oracle, [6, 0, 0], atol=1e-6)
    np.testing.assert_allclose(svd(a).s, [6, 0, 0], atol=1e-12)


def test_svd_matches_charpoly_oracle_on_random_3x3(rng):
    a = crandn(rng, 3, 3)
    oracle = np.sqrt(charpoly_eigenvalues_3x3(a.conj().T @ a))
    np.testing.assert_allclose(svd(a).s, oracle, rtol=1e-9)


@pytest.mark.parametrize("shape", [(1, 1), (5, 3), (3, 5), (64, 64), (17, 40)])
def test_svd_reconstruction_and_orthonormality(rng, shape):
    a = crandn(rng, *shape)
    res = svd(a, full_matrices=False)
    rec = res.u @ np.diag(res.s) @ res.v.conj().T
    assert np.linalg.norm(a - rec) / np.linalg.norm(a) < 1e-10
    assert np.all(np.diff(res.s) <= 0) and np.all(res.s >= 0)
    k = min(shape)
    np.testing.assert_allclose(res.u.conj().T @ res.u, np.eye(k), atol=1e-10)
    np.testing.assert_allclose(res.v.conj().T @ res.v, np.eye(k), atol=1e-10)


def test_singular_values_invariant_under_adjoint_and_permutation(rng):
    a = crandn(rng, 6, 4)
    s = singular_values(a)
    np.testing.assert_allclose(singular_values(a.conj().T), s, rtol=1e-12)
    np.testing.assert_allclose(singular_values(exchange_matrix(6) @ a), s, rtol=1e-12)
    np.testing.assert_allclose(svd(a).s, s, rtol=1e-12)


def test_svd_rejects_non_finite():
    with pytest.raises(ValueError):
        svd(np.array([[1.0, np.nan]]))


@pytest.mark.parametrize("p,expected", [
    (1, [[1]]),
    (2, [[0, 1], [1, 0]]),
    (3, [[0, 0, 1], [0, 1, 0], [1, 0, 0]]),
])
def test_exchange_matrix(p, expected):
    np.testing.assert_array_equal(exchange_matrix(p), expected)


def test_left_pi_real_small_cases():
    np.testing.assert_allclose(left_pi_real_matrix(1), [[1]])
    np.testing.assert_allclose(left_pi_real_matrix(2), np.array([[1, 1j], [1, -1j]]) / np.sqrt(2))


@pytest.mark.parametrize("p", range(1, 17))
def test_left_pi_real_identities(p):
    q = left_pi_real_matrix(p)
    pi = exchange_matrix(p)
    assert np.linalg.norm(pi @ q.conj() - q) < 1e-12
    assert np.linalg.norm(q.conj().T @ q - np.eye(p)) < 1e-12


def test_fit_line_examples():
    assert fit_line_least_squares([0, 1], [0, 1]) == pytest.approx((1.0, 0.0))
    assert fit_line_least_squares([0, 1, 2], [5, 5, 5]) == pytest.approx((0.0, 5.0))
    assert fit_line_least_squares([0, 1, 2], [0, 1, 1]) == pytest.approx((0.5, 1 / 6))


def test_fit_line_degenerate():
    with pytest.raises(DegenerateFitError):
        fit_line_least_squares([1, 1, 1], [0, 1, 2])
    with pytest.raises(DegenerateFitError):
        fit_line_least_squares([1], [2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=3, max_size=20))
def test_fit_line_residual_is_orthogonal(points):
    xs, ys = map(np.array, zip(*points))
    if np.ptp(xs) < 1e-3:
        return
    slope, intercept = fit_line_least_squares(xs, ys)
    r = ys - (slope * xs + intercept)
    scale = 1 + np.abs(ys).max() * len(xs) * (1 + np.abs(xs).max())
    assert abs(r.sum()) < 1e-8 * scale
    assert abs((r * xs).sum()) < 1e-8 * scale * (1 + np.abs(xs).max())
