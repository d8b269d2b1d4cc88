"""Kronecker factors, their exponential averages, and refresh scheduling."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import count

import numpy as np

from .errors import ConfigError, DimensionError, StaleCacheError
from .linalg import damped_inverse, symmetrize
from .network import ForwardCache

_versions = count()


@dataclass
class KronFactors:
    """Per-layer input factors ``A`` and pre-activation-gradient factors ``G``."""

    A: list
    G: list

    def __post_init__(self):
        if len(self.A) != len(self.G):
            raise DimensionError("factor lists differ in length")

    @property
    def shapes(self):
        return [(a.shape[0], g.shape[0]) for a, g in zip(self.A, self.G)]

    def copy(self) -> "KronFactors":
        return KronFactors([a.copy() for a in self.A], [g.copy() for g in self.G])


def compute_factors(cache: ForwardCache, dzs: list) -> KronFactors:
    """Batch means of ``a_bar a_bar^T`` and ``dz dz^T`` per layer.

    ``dzs`` are per-sample pre-activation gradients of the loss evaluated
    with labels sampled from the model (see ``Network.sample_labels``), as
    returned by ``Network.backward`` for unscaled per-sample output grads.
    """
    if len(dzs) != len(cache.a_bar):
        raise DimensionError("gradient cache does not match forward cache")
    A, G = [], []
    for ab, dz in zip(cache.a_bar, dzs):
        if ab.shape[0] != dz.shape[0]:
            raise DimensionError("forward and backward caches come from different batches")
        b = ab.shape[0]
        A.append(symmetrize(ab.T @ ab) / b)
        G.append(symmetrize(dz.T @ dz) / b)
    return KronFactors(A, G)


class EAState:
    """Exponential averages of Kronecker factors with cached damped inverses.

    The first update stores the factors with weight one; later updates blend
    ``rho * old + (1 - rho) * new``. Any update invalidates the inverses.
    """

    def __init__(self, rho: float, gamma: float, eig_method: str = "auto"):
        if not 0.0 <= rho < 1.0:
            raise ConfigError("decay rho must lie in [0, 1)")
        if gamma < 0.0:
            raise ConfigError("damping must be non-negative")
        self.rho = float(rho)
        self.gamma = float(gamma)
        self.eig_method = eig_method
        self.A: list = []
        self.G: list = []
        self.count = 0
        self.version = next(_versions)
        self._inv = None
        self._inv_version = None

    @property
    def factors(self) -> KronFactors:
        return KronFactors(self.A, self.G)

    def copy(self) -> "EAState":
        out = EAState(self.rho, self.gamma, self.eig_method)
        out.A = [a.copy() for a in self.A]
        out.G = [g.copy() for g in self.G]
        out.count = self.count
        out.version = self.version
        out._inv = self._inv
        out._inv_version = self._inv_version
        return out

    def update(self, fresh: KronFactors) -> "EAState":
        if self.count and fresh.shapes != self.factors.shapes:
            raise DimensionError("fresh factors do not match the averaged factor shapes")
        if self.count == 0:
            self.A = [a.copy() for a in fresh.A]
            self.G = [g.copy() for g in fresh.G]
        else:
            r = self.rho
            self.A = [r * a + (1.0 - r) * f for a, f in zip(self.A, fresh.A)]
            self.G = [r * g + (1.0 - r) * f for g, f in zip(self.G, fresh.G)]
        self.count += 1
        self.version = next(_versions)
        self._inv = None
        return self

    def inverses(self) -> list:
        """Per-layer ``((A + gamma I)^{-1}, (G + gamma I)^{-1})``."""
        if not self.count:
            raise StaleCacheError("no factors have been accumulated yet")
        if self._inv is None or self._inv_version != self.version:
            self._inv = [
                (damped_inverse(a, self.gamma, self.eig_method), damped_inverse(g, self.gamma, self.eig_method))
                for a, g in zip(self.A, self.G)
            ]
            self._inv_version = self.version
        return self._inv

    def damped(self) -> list:
        """Per-layer ``(A + gamma I, G + gamma I)``."""
        return [
            (a + self.gamma * np.eye(a.shape[0]), g + self.gamma * np.eye(g.shape[0]))
            for a, g in zip(self.A, self.G)
        ]

    def check_current(self, version: int):
        if version != self.version or self._inv_version != self.version:
            raise StaleCacheError("curvature operator was built from an older averaged state")


def ea_update(state: EAState, fresh: KronFactors) -> EAState:
    """Return a new averaged state; ``state`` is left untouched."""
    return state.copy().update(fresh)


def kappa(i: int, rho: float) -> float:
    """Weight of entry ``i`` in an exponential average that starts at weight one."""
    return 1.0 if i == 0 else 1.0 - rho


def should_refresh(k: int, period: int) -> bool:
    if period <= 0:
        raise ConfigError("update period must be positive")
    return k % period == 0


def ea_dense_fisher(history, rho: float) -> np.ndarray:
    """``rho^k F_0 + (1 - rho) sum_{i>=1} rho^(k-i) F_i`` for ``history = [F_0..F_k]``."""
    history = [np.asarray(f, dtype=np.float64) for f in history]
    if not history:
        raise DimensionError("empty Fisher history")
    shape = history[0].shape
    if any(f.shape != shape for f in history):
        raise DimensionError("Fisher history has mixed dimensions")
    k = len(history) - 1
    out = rho**k * history[0]
    for i in range(1, k + 1):
        out = out + (1.0 - rho) * rho ** (k - i) * history[i]
    return out
