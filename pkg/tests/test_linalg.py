import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kldwrm import linalg
from kldwrm.errors import DimensionError, SingularMatrixError, SizeCapError, SymmetryError

from conftest import KERNELS, random_spd


def test_backend_is_reported():
    assert linalg.BACKEND in ("compiled", "python")


@pytest.mark.parametrize("n", [1, 2, 5, 17, 40])
def test_jacobi_matches_lapack(jacobi_kernel, rng, n):
    m = random_spd(rng, n)
    w, v, sweeps = jacobi_kernel(np.ascontiguousarray(m))
    order = np.argsort(w)
    np.testing.assert_allclose(w[order], np.linalg.eigvalsh(m), rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, m, atol=1e-12)
    assert sweeps < 20


@pytest.mark.skipif("compiled" not in KERNELS, reason="extension not built")
@pytest.mark.parametrize("n", [3, 10, 33])
def test_compiled_and_python_kernels_agree_bitwise(rng, n):
    m = np.ascontiguousarray(random_spd(rng, n))
    wc, vc, sc = KERNELS["compiled"](m)
    wp, vp, sp = KERNELS["python"](m)
    assert sc == sp
    assert np.array_equal(wc, wp)
    assert np.array_equal(vc, vp)


def test_jacobi_diagonal_input_needs_no_sweeps(jacobi_kernel):
    w, v, sweeps = jacobi_kernel(np.diag([3.0, 1.0, 2.0]))
    assert sweeps == 0
    assert list(w) == [3.0, 1.0, 2.0]
    assert np.array_equal(v, np.eye(3))


def test_sym_eig_sorted_descending(rng):
    m = random_spd(rng, 6)
    for method in ("jacobi", "lapack", "auto"):
        w, q = linalg.sym_eig(m, method)
        assert np.all(np.diff(w) <= 0)
        np.testing.assert_allclose((q * w) @ q.T, m, atol=1e-12)


def test_sym_eig_rejects_bad_input():
    with pytest.raises(DimensionError):
        linalg.sym_eig(np.ones((2, 3)))
    with pytest.raises(SymmetryError):
        linalg.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        linalg.sym_eig(np.eye(2), "qr")


def test_damped_inverse(rng):
    m = random_spd(rng, 5)
    inv = linalg.damped_inverse(m, 0.3)
    np.testing.assert_allclose(inv @ (m + 0.3 * np.eye(5)), np.eye(5), atol=1e-12)


def test_damped_inverse_singular_without_damping():
    m = np.diag([1.0, 0.0])
    with pytest.raises(SingularMatrixError):
        linalg.damped_inverse(m, 0.0)
    np.testing.assert_allclose(linalg.damped_inverse(m, 0.5), np.diag([1 / 1.5, 2.0]))
    with pytest.raises(ValueError):
        linalg.damped_inverse(m, -1.0)


def test_vec_is_column_stacking():
    v = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    assert list(linalg.vec(v)) == [1, 3, 5, 2, 4, 6]
    assert np.array_equal(linalg.unvec(linalg.vec(v), 3, 2), v)
    with pytest.raises(DimensionError):
        linalg.unvec(np.zeros(5), 2, 3)


def test_kron_matvec_matches_dense(rng):
    a = rng.standard_normal((4, 3))
    g = rng.standard_normal((2, 5))
    v = rng.standard_normal(15)
    np.testing.assert_allclose(linalg.kron_matvec(a, g, v), np.kron(a, g) @ v, atol=1e-12)
    with pytest.raises(DimensionError):
        linalg.kron_matvec(a, g, np.zeros(7))


def test_dense_kron_cap():
    with pytest.raises(SizeCapError):
        linalg.dense_kron(np.eye(100), np.eye(100), cap=4096)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_kron_inverse_is_kron_of_inverses(na, ng, seed):
    rng = np.random.default_rng(seed)
    a = random_spd(rng, na)
    g = random_spd(rng, ng)
    lhs = np.linalg.inv(linalg.dense_kron(a, g))
    rhs = linalg.dense_kron(np.linalg.inv(a), np.linalg.inv(g))
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))


def test_spectral_norm_matches_svd(rng):
    m = rng.standard_normal((7, 7))
    assert linalg.spectral_norm(m) == pytest.approx(np.linalg.norm(m, 2), rel=1e-10)
    assert linalg.spectral_norm(np.zeros((3, 3))) == 0.0
