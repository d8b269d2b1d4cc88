"""Dense reference solutions of the wake-regularized quadratic models.

Each solver builds the linear and quadratic coefficients of its objective
term by term from the stored history (including the inner sums
``sum_{j=i}^{k-1} s_j``) and solves the resulting SPD system directly. None
of the closed-form recursions in :mod:`kldwrm.steps` are used here; that is
what makes these functions useful as test oracles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curvature import kappa
from .errors import DimensionError, NumericalError, SizeCapError

SIZE_CAP = 64


@dataclass
class WakeHistory:
    """Gradients, curvature matrices and steps of one dense trajectory.

    ``b`` holds the matrices of the quadratic model (``B_i``), ``f`` the
    Fisher matrices of the wake regularizer (``F_i``). For the plain wake
    model only ``b`` is used.
    """

    rho: float
    lam: float = 1.0
    g: list = field(default_factory=list)
    b: list = field(default_factory=list)
    f: list = field(default_factory=list)
    s: list = field(default_factory=list)
    cap: int = SIZE_CAP

    @property
    def dim(self) -> int:
        for seq in (self.g, self.b, self.f):
            if seq:
                return np.shape(seq[0])[0]
        raise DimensionError("history is empty")

    def check(self, k: int, need=("g",)):
        d = self.dim
        if d > self.cap:
            raise SizeCapError(f"oracle dimension {d} exceeds cap {self.cap}")
        if len(self.s) < k:
            raise DimensionError(f"steps s_0..s_{k - 1} must be recorded before solving step {k}")
        for name in need:
            seq = getattr(self, name)
            if len(seq) <= k:
                raise DimensionError(f"history {name!r} has no entry {k}")
            for m in seq[: k + 1]:
                if np.shape(m)[0] != d:
                    raise DimensionError(f"history {name!r} mixes dimensions")

    def record(self, k: int, s):
        if len(self.s) != k:
            self.s = self.s[:k]
        self.s.append(np.asarray(s, dtype=np.float64))


def _tail_sum(steps, i: int, k: int, d: int) -> np.ndarray:
    out = np.zeros(d)
    for j in range(i, k):
        out = out + steps[j]
    return out


def _solve(quad, lin) -> np.ndarray:
    try:
        c = np.linalg.cholesky(quad)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("quadratic coefficient is not positive definite") from exc
    y = np.linalg.solve(c, -lin)
    return np.linalg.solve(c.T, y)


def woqm_coefficients(h: WakeHistory, k: int, lam=None):
    """Linear and (full, not halved) quadratic coefficients of the plain wake model.

    ``sum_i rho^(k-i) (g_i + lam kappa(i) B_i sum_{j=i}^{k-1} s_j)`` and
    ``lam sum_i kappa(i) rho^(k-i) B_i``.
    """
    lam = h.lam if lam is None else lam
    d = h.dim
    lin = np.zeros(d)
    quad = np.zeros((d, d))
    for i in range(k + 1):
        w = h.rho ** (k - i)
        b = np.asarray(h.b[i], dtype=np.float64)
        lin = lin + w * (h.g[i] + lam * kappa(i, h.rho) * (b @ _tail_sum(h.s, i, k, d)))
        quad = quad + lam * kappa(i, h.rho) * w * b
    return lin, quad


def woqm_objective(h: WakeHistory, k: int, s) -> float:
    lin, quad = woqm_coefficients(h, k)
    s = np.asarray(s, dtype=np.float64)
    return float(lin @ s + 0.5 * s @ quad @ s)


def woqm_objective_grad(h: WakeHistory, k: int, s) -> np.ndarray:
    lin, quad = woqm_coefficients(h, k)
    return lin + quad @ np.asarray(s, dtype=np.float64)


def solve_woqm_dense(h: WakeHistory, k: int, record: bool = True) -> np.ndarray:
    h.check(k, ("g", "b"))
    lin, quad = woqm_coefficients(h, k)
    s = _solve(quad, lin)
    if record:
        h.record(k, s)
    return s


def _wake_fisher_terms(h: WakeHistory, k: int, lam: float):
    """``lam sum_{i<k} rho^(k-i) kappa(i) F_i sum_{j=i}^{k-1} s_j`` and ``sum_i kappa rho^(k-i) F_i``."""
    d = h.dim
    lin = np.zeros(d)
    fbar = np.zeros((d, d))
    for i in range(k + 1):
        w = h.rho ** (k - i)
        f = np.asarray(h.f[i], dtype=np.float64)
        if i < k:
            lin = lin + w * lam * kappa(i, h.rho) * (f @ _tail_sum(h.s, i, k, d))
        fbar = fbar + kappa(i, h.rho) * w * f
    return lin, fbar


def solve_so_dense(h: WakeHistory, k: int, record: bool = True) -> np.ndarray:
    h.check(k, ("g", "f"))
    lin, fbar = _wake_fisher_terms(h, k, h.lam)
    s = _solve(h.lam * fbar, h.g[k] + lin)
    if record:
        h.record(k, s)
    return s


def solve_q_dense_varlambda(h: WakeHistory, lam_sched, k: int, record: bool = True) -> np.ndarray:
    """Quadratic-model step with ``lam`` replaced by ``lam_sched(k)`` at step ``k``."""
    h.check(k, ("g", "f", "b"))
    lam = float(lam_sched(k))
    if lam <= 0:
        raise ValueError("lam schedule must be positive")
    lin, fbar = _wake_fisher_terms(h, k, lam)
    quad = lam * (fbar + np.asarray(h.b[k], dtype=np.float64) / lam)
    s = _solve(quad, h.g[k] + lin)
    if record:
        h.record(k, s)
    return s


def solve_q_dense(h: WakeHistory, k: int, record: bool = True) -> np.ndarray:
    return solve_q_dense_varlambda(h, lambda _k: h.lam, k, record)


def kld_form_grad(h: WakeHistory, k: int, s) -> np.ndarray:
    """Gradient of the wake model written with quadratic KL surrogates.

    ``[sum rho^(k-i) g_i]^T s + lam sum kappa(i) rho^(k-i) 1/2 (s + d_i)^T F_i (s + d_i)``
    with ``d_i = theta_k - theta_i = sum_{j=i}^{k-1} s_j`` and ``F_i = B_i``.
    """
    h.check(k, ("g", "b"))
    d = h.dim
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (d,):
        raise DimensionError("step does not match history dimension")
    out = np.zeros(d)
    for i in range(k + 1):
        w = h.rho ** (k - i)
        out = out + w * h.g[i]
        f = np.asarray(h.b[i], dtype=np.float64)
        out = out + h.lam * kappa(i, h.rho) * w * (f @ (s + _tail_sum(h.s, i, k, d)))
    return out


def random_spd(rng: np.random.Generator, d: int, shift: float = 0.1) -> np.ndarray:
    r = rng.standard_normal((d, d)) / np.sqrt(d)
    return r @ r.T + shift * np.eye(d)


def random_history(rng: np.random.Generator, d: int, n: int, rho: float, lam: float, with_b: bool = True) -> WakeHistory:
    """Random gradients and SPD matrices for ``n`` steps; ``f`` and ``b`` drawn independently."""
    h = WakeHistory(rho=rho, lam=lam)
    for _ in range(n):
        h.g.append(rng.standard_normal(d))
        h.f.append(random_spd(rng, d))
        h.b.append(random_spd(rng, d) if with_b else np.zeros((d, d)))
    return h


def ea_matrix(mats, rho: float, k: int) -> np.ndarray:
    """``sum_{i<=k} kappa(i) rho^(k-i) M_i``."""
    out = np.zeros_like(np.asarray(mats[0], dtype=np.float64))
    for i in range(k + 1):
        out = out + kappa(i, rho) * rho ** (k - i) * np.asarray(mats[i])
    return out
