"""Dense linear algebra shared by every other module.

Vec convention: column stacking. A matrix ``V`` of shape ``(n, m)`` maps to
``vec(V) = V.ravel(order="F")`` and ``(A kron G) vec(V) = vec(G V A^T)`` for
``A`` of shape ``(m, m)`` and ``G`` of shape ``(n, n)``.

Symmetric eigendecompositions use a cyclic Jacobi solver. The compiled
kernel (``kldwrm._jacobi``) is selected at import when available, otherwise
the pure-Python version in ``kldwrm._jacobi_py`` is used. Setting
``KLDWRM_PURE_PYTHON=1`` forces the fallback. Matrices larger than
``JACOBI_MAX_DIM`` go to LAPACK (``numpy.linalg.eigh``) under
``method="auto"``.
"""
from __future__ import annotations

import os

import numpy as np

from . import _jacobi_py
from .errors import DimensionError, SingularMatrixError, SizeCapError, SymmetryError

if os.environ.get("KLDWRM_PURE_PYTHON"):
    _jacobi_kernel = _jacobi_py.jacobi_eigh
    BACKEND = "python"
else:
    try:
        from ._jacobi import jacobi_eigh as _jacobi_kernel

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _jacobi_kernel = _jacobi_py.jacobi_eigh
        BACKEND = "python"

SYMMETRY_RTOL = 1e-10
JACOBI_MAX_DIM = 160
DENSE_KRON_CAP = 4096


def check_symmetric(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    scale = 1.0 + (np.max(np.abs(m)) if m.size else 0.0)
    if m.size and np.max(np.abs(m - m.T)) > SYMMETRY_RTOL * scale:
        raise SymmetryError(f"{name} is not symmetric within {SYMMETRY_RTOL:g} relative")
    return m


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def sym_eig(m: np.ndarray, method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns. ``method`` is ``"jacobi"``, ``"lapack"`` or
    ``"auto"`` (Jacobi up to ``JACOBI_MAX_DIM``, LAPACK above).
    """
    m = symmetrize(check_symmetric(m))
    n = m.shape[0]
    if method == "auto":
        method = "jacobi" if n <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        w, q, _ = _jacobi_kernel(np.ascontiguousarray(m))
    elif method == "lapack":
        w, q = np.linalg.eigh(m)
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    order = np.argsort(-w, kind="stable")
    return w[order], np.ascontiguousarray(q[:, order])


def inverse_from_eig(w: np.ndarray, q: np.ndarray, gamma: float = 0.0, scale: float = 1.0) -> np.ndarray:
    """``(scale * M + gamma I)^{-1}`` from the eigendecomposition of ``M``."""
    d = 1.0 / (scale * w + gamma)
    inv = (q * d) @ q.T
    return symmetrize(inv)


def damped_inverse(m: np.ndarray, gamma: float, method: str = "auto") -> np.ndarray:
    """``(M + gamma I)^{-1}`` for symmetric PSD ``M`` via eigendecomposition."""
    if gamma < 0:
        raise ValueError("damping must be non-negative")
    w, q = sym_eig(m, method=method)
    if gamma == 0.0 and (w.size == 0 or w[-1] <= 1e-12):
        raise SingularMatrixError("matrix is numerically singular and no damping was given")
    if w.size and w[-1] + gamma <= 0.0:
        raise SingularMatrixError("damped matrix is not positive definite")
    return inverse_from_eig(w, q, gamma)


def vec(v: np.ndarray) -> np.ndarray:
    return np.asarray(v).ravel(order="F")


def unvec(x: np.ndarray, rows: int, cols: int) -> np.ndarray:
    x = np.asarray(x)
    if x.size != rows * cols:
        raise DimensionError(f"cannot reshape length {x.size} into ({rows}, {cols})")
    return x.reshape((rows, cols), order="F")


def kron_matvec(a: np.ndarray, g: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``(A kron G) v`` computed as ``vec(G V A^T)`` without forming the product."""
    a = np.asarray(a, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    m, n = a.shape[1], g.shape[1]
    if v.ndim != 1 or v.size != m * n:
        raise DimensionError(f"vector of length {v.size} does not match factors {a.shape} and {g.shape}")
    return vec(g @ unvec(v, n, m) @ a.T)


def dense_kron(a: np.ndarray, g: np.ndarray, cap: int = DENSE_KRON_CAP) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    rows = a.shape[0] * g.shape[0]
    cols = a.shape[1] * g.shape[1]
    if rows > cap or cols > cap:
        raise SizeCapError(f"dense Kronecker product {rows}x{cols} exceeds cap {cap}")
    return np.kron(a, g)


def spectral_norm(m: np.ndarray, method: str = "auto") -> float:
    """Largest singular value, from the top eigenvalue of ``M^T M``."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return 0.0
    w, _ = sym_eig(symmetrize(m.T @ m), method)
    return float(np.sqrt(max(float(w.max()), 0.0)))
