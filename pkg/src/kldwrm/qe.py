"""Exact symmetric-KL wake regularization solved by an inner gradient loop.

The objective over the step ``s`` at ``theta_k`` is

    g^T s + 1/2 s^T B s + lam * sum_i w_i * SKL(theta_i, theta_k + s)

where the sum runs over the current parameters (implicit) and the past
snapshots held in a :class:`SnapshotRing`. SKL terms are batch means of the
per-sample symmetric KL between output distributions, evaluated on the same
minibatch as the gradient.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .curvature import kappa
from .errors import ConfigError, DimensionError, NumericalError
from .linalg import unvec, vec
from .network import NetParams, Network, log_softmax, snapshot
from .steps import ClipPolicy, StepState, clip_step, q_step


def skl_gaussian(h1, h2) -> float:
    """``1/2 ||h1 - h2||^2``: symmetric KL of unit-covariance Gaussians."""
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    if h1.shape != h2.shape:
        raise DimensionError("mean vectors differ in length")
    d = h1 - h2
    return float(0.5 * np.sum(d * d))


def _skl_categorical_rows(z1, z2):
    lp1 = log_softmax(z1)
    lp2 = log_softmax(z2)
    p1 = np.exp(lp1)
    p2 = np.exp(lp2)
    return 0.5 * np.sum((p1 - p2) * (lp1 - lp2), axis=-1)


def skl_categorical(logits1, logits2) -> float:
    """Symmetric KL between ``softmax(logits1)`` and ``softmax(logits2)``."""
    z1 = np.asarray(logits1, dtype=np.float64)
    z2 = np.asarray(logits2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise DimensionError("logit vectors differ in length")
    if z1.ndim != 1 or z1.size < 2:
        raise DimensionError("need at least two classes")
    if not (np.all(np.isfinite(z1)) and np.all(np.isfinite(z2))):
        raise NumericalError("non-finite logits")
    return float(_skl_categorical_rows(z1, z2))


def skl_rows(head: str, out1, out2) -> np.ndarray:
    """Per-sample symmetric KL between two output batches."""
    if head == "categorical":
        return _skl_categorical_rows(out1, out2)
    d = out1 - out2
    return 0.5 * np.sum(d * d, axis=1)


def skl_rows_grad(head: str, out1, out2) -> np.ndarray:
    """Gradient of ``skl_rows`` with respect to ``out2``, row by row."""
    if head == "gaussian":
        return out2 - out1
    lp1 = log_softmax(out1)
    lp2 = log_softmax(out2)
    p1 = np.exp(lp1)
    p2 = np.exp(lp2)
    u = lp2 - lp1
    return 0.5 * (p2 - p1) + 0.5 * (p2 * u - p2 * np.sum(p2 * u, axis=1, keepdims=True))


def dataset_skl(net: Network, params_a: NetParams, params_b: NetParams, inputs) -> float:
    """Batch mean of the per-sample symmetric KL between two parameter sets."""
    out_a, _ = net.forward(params_a, inputs)
    out_b, _ = net.forward(params_b, inputs)
    return float(np.mean(skl_rows(net.head, out_a, out_b)))


class SnapshotRing:
    """Past parameter snapshots tagged with the refresh index they were taken at."""

    def __init__(self, cap: int):
        if cap < 0:
            raise ConfigError("snapshot cap must be non-negative")
        self.cap = int(cap)
        self._entries: deque = deque()

    def __len__(self):
        return len(self._entries)

    @property
    def entries(self) -> list:
        return list(self._entries)

    def push(self, params: NetParams, birth: int):
        if self._entries and birth <= self._entries[-1][1]:
            raise ValueError("snapshot birth indices must increase")
        if self.cap == 0:
            return
        self._entries.append((snapshot(params), int(birth)))
        while len(self._entries) > self.cap:
            self._entries.popleft()

    def weights(self, now: int, rho: float, zeta_scale: float) -> list:
        """``zeta_scale * kappa(i) * rho^(now - i)`` per stored snapshot."""
        return [zeta_scale * kappa(i, rho) * rho ** (now - i) for _, i in self._entries]


@dataclass(frozen=True)
class QEConfig:
    n_is: int = 10
    omega: float = 0.07
    n_cap: int = 4
    zeta_scale: float = 1.0 / 330.0

    def __post_init__(self):
        if self.n_is < 0 or self.n_cap < 0:
            raise ConfigError("inner step count and snapshot cap must be non-negative")
        if self.omega <= 0 or self.zeta_scale < 0:
            raise ConfigError("omega must be positive and zeta_scale non-negative")


def kron_operator(factors, shapes):
    """``v -> (A_l kron G_l) v`` blockwise over layers with shapes ``(out, in + 1)``."""
    blocks = []
    off = 0
    for (rows, cols), a, g in zip(shapes, factors.A, factors.G):
        if a.shape != (cols, cols) or g.shape != (rows, rows):
            raise DimensionError("factor shapes do not match layer shapes")
        blocks.append((slice(off, off + rows * cols), rows, cols, a, g))
        off += rows * cols

    def apply(v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (off,):
            raise DimensionError("vector does not match operator dimension")
        out = np.empty_like(v)
        for sl, rows, cols, a, g in blocks:
            out[sl] = vec(g @ unvec(v[sl], rows, cols) @ a)
        return out

    return apply


class QEProblem:
    """Value and gradient of the exact-SKL wake objective at a fixed iterate.

    ``anchors`` are ``(outputs, weight)`` pairs: network outputs of an
    anchor parameter set on ``inputs`` and its wake weight (without ``lam``).
    """

    def __init__(self, net: Network, theta, inputs, g, b_apply, lam: float, anchors):
        self.net = net
        self.theta = np.asarray(theta, dtype=np.float64)
        self.inputs = inputs
        self.g = np.asarray(g, dtype=np.float64)
        if self.g.shape != self.theta.shape:
            raise DimensionError("gradient does not match parameters")
        self.b_apply = b_apply
        self.lam = float(lam)
        self.anchors = [(np.asarray(o), float(w)) for o, w in anchors]

    @classmethod
    def build(cls, net, params: NetParams, inputs, g, b_apply, lam, ring: SnapshotRing | None,
              now: int, rho: float, zeta_scale: float, current_weight: float):
        outputs, _ = net.forward(params, inputs)
        anchors = [(outputs, current_weight)]
        if ring is not None:
            for (snap, _), w in zip(ring.entries, ring.weights(now, rho, zeta_scale)):
                out, _ = net.forward(snap, inputs)
                anchors.append((out, w))
        return cls(net, params.flatten(), inputs, g, b_apply, lam, anchors)

    def value_grad(self, s):
        s = np.asarray(s, dtype=np.float64)
        bs = self.b_apply(s)
        value = float(self.g @ s + 0.5 * (s @ bs))
        grad = self.g + bs
        if not any(w for _, w in self.anchors):
            return value, grad
        params = NetParams.from_flat(self.net.layers, self.theta + s)
        out, cache = self.net.forward(params, self.inputs)
        n = out.shape[0]
        d_out = np.zeros_like(out)
        for anchor_out, w in self.anchors:
            if w == 0.0:
                continue
            value += self.lam * w * float(np.mean(skl_rows(self.net.head, anchor_out, out)))
            d_out += (self.lam * w / n) * skl_rows_grad(self.net.head, anchor_out, out)
        grads, _ = self.net.backward(params, cache, d_out)
        grad = grad + NetParams(grads).flatten()
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite wake objective")
        return value, grad


def inner_descent(problem: QEProblem, s0, n_steps: int, lr: float, trace: list | None = None):
    """Plain gradient descent from ``s0``; raises if the objective blows up."""
    s = np.array(s0, dtype=np.float64, copy=True)
    if n_steps == 0:
        return s
    v0, grad = problem.value_grad(s)
    if trace is not None:
        trace.append(v0)
    limit = v0 + 10.0 * max(abs(v0), np.finfo(float).tiny)
    for t in range(n_steps):
        s = s - lr * grad
        v, grad = problem.value_grad(s)
        if trace is not None:
            trace.append(v)
        if not np.isfinite(v) or v > limit:
            raise NumericalError(f"inner solver diverged at iteration {t + 1} (objective {v:.3e})", step=t + 1)
    return s


def qe_step(curv, g, state: StepState, lam: float, problem: QEProblem, cfg: QEConfig,
            clip: ClipPolicy | None = None, groups=None, trace: list | None = None):
    """Q step as initial guess, refined by ``cfg.n_is`` inner gradient steps.

    The recursion state advances exactly as in :func:`kldwrm.steps.q_step`.
    """
    s0, new_state = q_step(curv, g, state, lam)
    s = inner_descent(problem, s0, cfg.n_is, cfg.omega / lam, trace)
    if clip is not None:
        s = clip_step(s, clip, groups, curv.ea_apply)
    return s, new_state
