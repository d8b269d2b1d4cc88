"""Closed-form step engines for the wake-of-models family.

All engines work on flat parameter vectors and talk to the curvature only
through an operator object with four methods:

``ea_solve(v)``
    ``Fbar^{-1} v`` with ``Fbar`` the exponentially averaged curvature.
``ea_apply(v)``
    ``Fbar v``.
``hat_solve(v)``
    ``(Fbar + B / lam)^{-1} v``.
``b_is_zero``
    ``True`` when ``B`` is identically zero; then ``hat_solve`` is
    ``ea_solve`` and the contraction ``Mhat`` is the identity exactly.

:class:`DenseCurvature` backs the operator with explicit small matrices (the
oracle tests use it); :class:`KronCurvature` backs it with per-layer
Kronecker factors (the trainer uses it). The recursions are shared.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .curvature import EAState, KronFactors
from .errors import DimensionError, NumericalError
from .linalg import damped_inverse, spectral_norm, unvec, vec

DIVERGENCE_RATIO = 1e6


class DenseCurvature:
    def __init__(self, f_bar, b=None, lam: float = 1.0, gamma: float = 0.0, eig_method: str = "auto"):
        self.f_bar = np.asarray(f_bar, dtype=np.float64)
        d = self.f_bar.shape[0]
        self.lam = float(lam)
        self.gamma = float(gamma)
        self.b = None if b is None or not np.any(b) else np.asarray(b, dtype=np.float64)
        self._f_damped = self.f_bar + self.gamma * np.eye(d)
        self._f_inv = damped_inverse(self.f_bar, self.gamma, eig_method)
        if self.b is None:
            self._hat_inv = self._f_inv
        else:
            self._hat_inv = damped_inverse(self.f_bar + self.b / self.lam, self.gamma, eig_method)

    @property
    def dim(self) -> int:
        return self.f_bar.shape[0]

    @property
    def b_is_zero(self) -> bool:
        return self.b is None

    def ea_solve(self, v):
        return self._f_inv @ v

    def ea_apply(self, v):
        return self._f_damped @ v

    def hat_solve(self, v):
        return self._hat_inv @ v


@dataclass
class HatFactors:
    """Reweighted factors whose Kronecker product stands in for ``Fbar + B / lam``."""

    A: list
    G: list

    def inverses(self, gamma: float, eig_method: str = "auto") -> list:
        return [(damped_inverse(a, gamma, eig_method), damped_inverse(g, gamma, eig_method)) for a, g in zip(self.A, self.G)]


def build_hat_factors(ea_prev: EAState, fresh: KronFactors, rho: float, lam: float) -> HatFactors:
    """``rho * Abar_{k-1} + ((1 - rho) lam + 1) / lam * A_k``, same for ``G``.

    Replaces the ``(1 - rho)`` weight of the newest factor in the running
    average by ``(1 - rho) + 1 / lam``.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if ea_prev.factors.shapes != fresh.shapes:
        raise DimensionError("previous averaged factors and fresh factors differ in shape")
    c = ((1.0 - rho) * lam + 1.0) / lam
    A = [rho * a + c * f for a, f in zip(ea_prev.A, fresh.A)]
    G = [rho * g + c * f for g, f in zip(ea_prev.G, fresh.G)]
    return HatFactors(A, G)


class KronCurvature:
    """Block-diagonal Kronecker operator over the layers of a network.

    ``shapes`` lists ``(out_dim, in_dim + 1)`` per layer. ``hat_inverses``
    may be ``None`` (no ``B`` term), in which case ``hat_solve`` is
    ``ea_solve``.
    """

    def __init__(self, ea: EAState, shapes, hat_inverses=None):
        self.ea = ea
        self.shapes = list(shapes)
        self._version = ea.version
        self._ea_inv = ea.inverses()
        self._ea_damped = ea.damped()
        self._hat_inv = hat_inverses
        for (rows, cols), (ainv, ginv) in zip(self.shapes, self._ea_inv):
            if ainv.shape[0] != cols or ginv.shape[0] != rows:
                raise DimensionError("layer shape does not match factor dimensions")
        self._slices = []
        off = 0
        for rows, cols in self.shapes:
            self._slices.append((slice(off, off + rows * cols), rows, cols))
            off += rows * cols
        self.dim = off

    @property
    def b_is_zero(self) -> bool:
        return self._hat_inv is None

    def _apply(self, pairs, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimensionError(f"vector of length {v.shape} does not match operator dimension {self.dim}")
        self.ea.check_current(self._version)
        out = np.empty_like(v)
        for (sl, rows, cols), (a, g) in zip(self._slices, pairs):
            # (A kron G) vec(V) = vec(G V A) for symmetric A
            out[sl] = vec(g @ unvec(v[sl], rows, cols) @ a)
        return out

    def ea_solve(self, v):
        return self._apply(self._ea_inv, v)

    def ea_apply(self, v):
        return self._apply(self._ea_damped, v)

    def hat_solve(self, v):
        if self._hat_inv is None:
            return self.ea_solve(v)
        return self._apply(self._hat_inv, v)


def hat_m_apply(curv, v):
    """``Mhat v = Fbar (Fbar + B / lam)^{-1} v``."""
    if curv.b_is_zero:
        return np.array(v, dtype=np.float64, copy=True)
    return curv.ea_apply(curv.hat_solve(v))


def hat_m_dense(f_bar, b, lam: float) -> np.ndarray:
    """``[I + (1/lam) B Fbar^{-1}]^{-1}`` assembled from its definition."""
    f_bar = np.asarray(f_bar, dtype=np.float64)
    d = f_bar.shape[0]
    if b is None:
        return np.eye(d)
    inner = np.eye(d) + (1.0 / lam) * (np.asarray(b) @ np.linalg.inv(f_bar))
    return np.linalg.inv(inner)


@dataclass(frozen=True)
class StepState:
    """Recursion state carried between steps.

    ``prev_g`` is the previous gradient (zero before the first step) and
    ``carry`` is ``ghat - g - Mhat ghat`` from the previous step, so the next
    modified gradient is ``g + (lam_next / lam_prev) rho carry``.
    """

    rho: float
    k: int
    prev_g: np.ndarray
    ghat: np.ndarray
    carry: np.ndarray
    prev_lam: float | None = None

    @classmethod
    def initial(cls, dim: int, rho: float) -> "StepState":
        z = np.zeros(dim)
        return cls(rho=float(rho), k=0, prev_g=z, ghat=z, carry=z, prev_lam=None)


def _scaled_step(lam, u):
    return -(1.0 / lam) * u


def woqm_step(curv, g, lam: float) -> np.ndarray:
    """Exponentially averaged natural-gradient step ``-(1/lam) Fbar^{-1} g``."""
    return _scaled_step(lam, curv.ea_solve(g))


def so_step(curv, g, state: StepState, lam: float):
    """``-(1/lam) Fbar^{-1} (g_k - rho g_{k-1})``; returns ``(s, state')``."""
    g = np.asarray(g, dtype=np.float64)
    modified = g - state.rho * state.prev_g
    s = woqm_step(curv, modified, lam)
    return s, replace(state, k=state.k + 1, prev_g=g, ghat=modified, prev_lam=float(lam))


def q_step_variable_lambda(curv, g, state: StepState, lam: float):
    """Modified-gradient recursion with a per-step ``lam``.

    ``ghat_0 = g_0`` and ``ghat_k = g_k + (lam_k / lam_{k-1}) rho
    (ghat_{k-1} - g_{k-1} - Mhat_{k-1} ghat_{k-1})``; the step is
    ``-(1/lam_k) (Fbar_k + B_k / lam_k)^{-1} ghat_k``. ``curv`` must be built
    with ``lam_k``. Returns ``(s, state')``.
    """
    g = np.asarray(g, dtype=np.float64)
    if state.k == 0:
        ghat = g.copy()
    else:
        ratio = 1.0 if lam == state.prev_lam else lam / state.prev_lam
        ghat = g + (ratio * state.rho) * state.carry
    gn = float(np.linalg.norm(ghat))
    if not np.isfinite(gn):
        raise NumericalError(f"non-finite modified gradient at step {state.k}", step=state.k, norm=gn)
    if gn > DIVERGENCE_RATIO * float(np.linalg.norm(g)) and gn > 0.0:
        raise NumericalError(f"modified gradient diverged at step {state.k} (norm {gn:.3e})", step=state.k, norm=gn)
    u = curv.hat_solve(ghat)
    s = _scaled_step(lam, u)
    m_ghat = ghat.copy() if curv.b_is_zero else curv.ea_apply(u)
    carry = (ghat - m_ghat) - g
    return s, replace(state, k=state.k + 1, prev_g=g, ghat=ghat, carry=carry, prev_lam=float(lam))


def q_step(curv, g, state: StepState, lam: float):
    """Fixed-``lam`` modified-gradient step; see :func:`q_step_variable_lambda`."""
    return q_step_variable_lambda(curv, g, state, lam)


def boundedness_margin(rho: float, m_hat) -> float:
    """``rho * ||I - Mhat||_2``; below one the modified gradients stay bounded."""
    m_hat = np.asarray(m_hat, dtype=np.float64)
    if m_hat.ndim != 2 or m_hat.shape[0] != m_hat.shape[1]:
        raise DimensionError("Mhat must be square")
    if rho == 0.0:
        return 0.0
    return float(rho * spectral_norm(np.eye(m_hat.shape[0]) - m_hat))


@dataclass(frozen=True)
class ClipPolicy:
    """Step clipping rule.

    ``global`` mode bounds the whole step: with ``norm="euclidean"`` it
    enforces ``||s||_2 <= clip_param``; with ``norm="fisher"`` it enforces
    ``s^T (Fbar + gamma I) s <= clip_param`` (the usual K-FAC norm
    constraint), which needs the curvature ``metric``. ``per_group`` mode
    bounds each group's root-mean-square entry by ``tau``.
    """

    mode: str = "global"  # "global", "per_group" or "none"
    clip_param: float = 0.1
    tau: float = 2.0
    norm: str = "euclidean"

    def __post_init__(self):
        if self.mode not in ("global", "per_group", "none"):
            raise ValueError(f"unknown clip mode {self.mode!r}")
        if self.norm not in ("euclidean", "fisher"):
            raise ValueError(f"unknown clip norm {self.norm!r}")
        if self.clip_param <= 0 or self.tau <= 0:
            raise ValueError("clip thresholds must be positive")


# slack so that a clipped step is not clipped again by rounding
_CLIP_SLACK = 1.0 + 1e-12


def clip_step(s, policy: ClipPolicy, groups=None, metric=None) -> np.ndarray:
    """Rescale a step according to ``policy``.

    ``groups`` is a list of index arrays partitioning the step (per-group
    mode); ``metric`` maps ``v`` to ``(Fbar + gamma I) v`` (Fisher norm).
    """
    s = np.array(s, dtype=np.float64, copy=True)
    if policy.mode == "none":
        return s
    if policy.mode == "global":
        if policy.norm == "fisher":
            if metric is None:
                raise ValueError("Fisher-norm clipping needs a curvature metric")
            sq = float(s @ metric(s))
            if sq > policy.clip_param * _CLIP_SLACK:
                s *= np.sqrt(policy.clip_param / sq)
            return s
        n = float(np.linalg.norm(s))
        if n > policy.clip_param * _CLIP_SLACK:
            s *= policy.clip_param / n
        return s
    if groups is None:
        groups = [np.arange(s.size)]
    for idx in groups:
        size = np.size(s[idx])
        if size == 0:
            raise ValueError("empty parameter group")
        n = float(np.linalg.norm(s[idx]))
        limit = policy.tau * np.sqrt(size)
        if n > limit * _CLIP_SLACK:
            s[idx] *= limit / n
    return s
