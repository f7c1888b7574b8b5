import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deeplinear.errors import DegenerateInputError
from deeplinear.linalg import frobenius_norm, matmul, spectral_norm, top_singular_triple
from oracles import jacobi_singular_values, jacobi_top_right_vector, naive_matmul

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def _matrices(max_dim=5):
    return st.tuples(st.integers(1, max_dim), st.integers(1, max_dim)).flatmap(
        lambda s: arrays(np.float64, s, elements=finite)
    )


def test_matmul_matches_loops(rng):
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((3, 5))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-13, atol=1e-13)


def test_matmul_rejects_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_rank_one_triple():
    u = np.array([3.0, 4.0]) / 5.0
    v = np.array([1.0, 2.0, 2.0]) / 3.0
    tr = top_singular_triple(7.0 * np.outer(u, v))
    assert tr.sigma1 == pytest.approx(7.0, rel=1e-12)
    assert tr.sigma2 == pytest.approx(0.0, abs=1e-10)
    assert not tr.degenerate
    np.testing.assert_allclose(np.outer(tr.u, tr.v) * tr.sigma1, 7.0 * np.outer(u, v), atol=1e-12)


def test_identity_is_degenerate():
    tr = top_singular_triple(np.eye(2))
    assert tr.sigma1 == pytest.approx(1.0)
    assert tr.sigma2 == pytest.approx(1.0)
    assert tr.degenerate


def test_zero_matrix_rejected():
    with pytest.raises(DegenerateInputError):
        top_singular_triple(np.zeros((3, 2)))
    assert spectral_norm(np.zeros((2, 2))) == 0.0


def test_sign_convention_is_reproducible(rng):
    m = rng.standard_normal((4, 4))
    a = top_singular_triple(m)
    b = top_singular_triple(-m)
    first = next(x for x in a.v if abs(x) > 1e-12)
    assert first > 0
    np.testing.assert_array_equal(a.v, b.v)
    np.testing.assert_allclose(a.u, -b.u, atol=1e-12)


def test_close_top_values_resolved():
    m = np.diag([1.0, 1.0 - 1e-6, 0.3])
    tr = top_singular_triple(m)
    assert tr.sigma1 == pytest.approx(1.0, rel=1e-12)
    assert abs(tr.v[0]) == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(_matrices())
def test_triple_matches_jacobi(m):
    if frobenius_norm(m) < 1e-6:
        return
    sv = jacobi_singular_values(m)
    tr = top_singular_triple(m)
    assert tr.sigma1 == pytest.approx(sv[0], rel=1e-9, abs=1e-12)
    if min(m.shape) > 1:
        assert tr.sigma2 == pytest.approx(sv[1], rel=1e-6, abs=1e-8 * sv[0])
    # residuals of the singular pair
    assert np.linalg.norm(m @ tr.v - tr.sigma1 * tr.u) <= 1e-8 * max(1.0, tr.sigma1)
    if sv[0] - (sv[1] if sv.size > 1 else 0.0) > 1e-4 * sv[0]:
        assert abs(tr.v @ jacobi_top_right_vector(m)) == pytest.approx(1.0, abs=1e-7)


@settings(max_examples=40, deadline=None)
@given(_matrices())
def test_frobenius_bounds_spectral(m):
    s = spectral_norm(m)
    f = frobenius_norm(m)
    assert s <= f * (1 + 1e-12) + 1e-300
    assert f <= math.sqrt(min(m.shape)) * s * (1 + 1e-9) + 1e-12
