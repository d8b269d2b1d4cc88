"""Fully-connected feed-forward networks with manual backpropagation.

Each layer holds an augmented weight matrix ``W_l`` of shape
``(out_dim, in_dim + 1)``; the last column is the bias, applied to a
constant 1 appended to the layer input. The flat parameter vector stacks
``vec(W_l)`` (column-major, see :mod:`kldwrm.linalg`) layer after layer, so
a layer block of a gradient lines up with its Kronecker factors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError

ACTIVATIONS = ("relu", "identity", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    @property
    def n_params(self) -> int:
        return self.out_dim * (self.in_dim + 1)


class NetParams:
    """Per-layer augmented weight matrices."""

    def __init__(self, weights):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]

    @property
    def size(self) -> int:
        return sum(w.size for w in self.weights)

    def flatten(self) -> np.ndarray:
        if not self.weights:
            return np.zeros(0)
        return np.concatenate([w.ravel(order="F") for w in self.weights])

    @classmethod
    def from_flat(cls, layers, theta) -> "NetParams":
        theta = np.asarray(theta, dtype=np.float64)
        expected = sum(l.n_params for l in layers)
        if theta.ndim != 1 or theta.size != expected:
            raise DimensionError(f"flat parameter vector has length {theta.size}, expected {expected}")
        weights, off = [], 0
        for l in layers:
            n = l.n_params
            weights.append(theta[off:off + n].reshape((l.out_dim, l.in_dim + 1), order="F").copy())
            off += n
        return cls(weights)

    def copy(self) -> "NetParams":
        return NetParams([w.copy() for w in self.weights])

    def __eq__(self, other):
        if not isinstance(other, NetParams) or len(self.weights) != len(other.weights):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))

    __hash__ = None


def snapshot(params: NetParams) -> NetParams:
    """Deep copy whose arrays are read-only."""
    out = params.copy()
    for w in out.weights:
        w.flags.writeable = False
    return out


@dataclass
class ForwardCache:
    a_bar: list  # augmented layer inputs, each (batch, in_dim + 1)
    z: list  # pre-activations, each (batch, out_dim)
    outputs: np.ndarray


def _augment(a: np.ndarray) -> np.ndarray:
    return np.hstack([a, np.ones((a.shape[0], 1))])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


class Network:
    """A chain of fully-connected layers with a categorical or Gaussian head.

    The head is ``"categorical"`` when the last layer uses the ``softmax``
    activation (outputs are logits) and ``"gaussian"`` when it is
    ``identity`` (outputs are means of a unit-covariance Gaussian).
    """

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise DimensionError("network needs at least one layer")
        for i, l in enumerate(layers):
            if l.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {l.activation!r}")
            if l.activation == "softmax" and i != len(layers) - 1:
                raise ValueError("softmax output is only allowed on the final layer")
            if i and layers[i - 1].out_dim != l.in_dim:
                raise DimensionError(f"layer {i} expects {l.in_dim} inputs, previous layer gives {layers[i - 1].out_dim}")
        if layers[-1].activation == "relu":
            raise ValueError("final layer must be softmax or identity")
        self.layers = layers

    @classmethod
    def from_sizes(cls, sizes, head="categorical") -> "Network":
        """Build ``sizes[0] -> ... -> sizes[-1]`` with ReLU hidden layers."""
        last = "softmax" if head == "categorical" else "identity"
        acts = ["relu"] * (len(sizes) - 2) + [last]
        return cls([LayerSpec(a, b, act) for a, b, act in zip(sizes[:-1], sizes[1:], acts)])

    @property
    def head(self) -> str:
        return "categorical" if self.layers[-1].activation == "softmax" else "gaussian"

    @property
    def n_params(self) -> int:
        return sum(l.n_params for l in self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def layer_slices(self) -> list:
        out, off = [], 0
        for l in self.layers:
            out.append(slice(off, off + l.n_params))
            off += l.n_params
        return out

    def init_params(self, rng: np.random.Generator) -> NetParams:
        """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
        weights = []
        for l in self.layers:
            bound = np.sqrt(6.0 / (l.in_dim + l.out_dim))
            w = np.zeros((l.out_dim, l.in_dim + 1))
            w[:, :-1] = rng.uniform(-bound, bound, size=(l.out_dim, l.in_dim))
            weights.append(w)
        return NetParams(weights)

    def zero_params(self) -> NetParams:
        return NetParams([np.zeros((l.out_dim, l.in_dim + 1)) for l in self.layers])

    def _check_params(self, params: NetParams):
        if len(params.weights) != len(self.layers):
            raise DimensionError("parameter set does not match the architecture")
        for l, w in zip(self.layers, params.weights):
            if w.shape != (l.out_dim, l.in_dim + 1):
                raise DimensionError(f"weight shape {w.shape} does not match layer {l}")

    def forward(self, params: NetParams, inputs: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        self._check_params(params)
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise DimensionError(f"input dimension {x.shape[1]} does not match {self.input_dim}")
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite network input")
        a_bar, zs = [], []
        a = x
        for i, (l, w) in enumerate(zip(self.layers, params.weights)):
            ab = _augment(a)
            with np.errstate(over="ignore", invalid="ignore"):
                z = ab @ w.T
            if not np.all(np.isfinite(z)):
                raise NumericalError(f"non-finite pre-activation in layer {i}", layer=i)
            a_bar.append(ab)
            zs.append(z)
            a = np.maximum(z, 0.0) if l.activation == "relu" else z
        return a, ForwardCache(a_bar=a_bar, z=zs, outputs=a)

    def backward(self, params: NetParams, cache: ForwardCache, d_out: np.ndarray) -> tuple[list, list]:
        """Backpropagate output gradients ``d_out`` (batch, out_dim).

        Returns per-layer weight gradients ``sum_b dz_b a_bar_b^T`` and the
        per-layer pre-activation gradients ``dz`` (batch, out_dim).
        """
        n = len(self.layers)
        grads = [None] * n
        dzs = [None] * n
        dz = np.asarray(d_out, dtype=np.float64)
        for i in range(n - 1, -1, -1):
            dzs[i] = dz
            grads[i] = dz.T @ cache.a_bar[i]
            if i:
                da = dz @ params.weights[i][:, :-1]
                # ReLU subgradient at exactly 0 is 0
                dz = da * (cache.z[i - 1] > 0.0)
        return grads, dzs

    def nll(self, outputs: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Per-sample negative log-likelihood."""
        if self.head == "categorical":
            labels = self._check_class_labels(labels, outputs.shape[0])
            return -log_softmax(outputs)[np.arange(outputs.shape[0]), labels]
        targets = self._check_targets(labels, outputs.shape)
        diff = outputs - targets
        return 0.5 * np.sum(diff * diff, axis=1) + 0.5 * outputs.shape[1] * np.log(2.0 * np.pi)

    def output_grad(self, outputs: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Per-sample gradient of the NLL with respect to the outputs."""
        if self.head == "categorical":
            labels = self._check_class_labels(labels, outputs.shape[0])
            d = softmax(outputs)
            d[np.arange(outputs.shape[0]), labels] -= 1.0
            return d
        return outputs - self._check_targets(labels, outputs.shape)

    def _check_class_labels(self, labels, batch):
        labels = np.asarray(labels)
        if labels.shape != (batch,) or not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("classification labels must be an integer vector, one per sample")
        if labels.size and (labels.min() < 0 or labels.max() >= self.output_dim):
            raise ValueError(f"class label out of range [0, {self.output_dim})")
        return labels

    @staticmethod
    def _check_targets(targets, shape):
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != shape:
            raise ValueError(f"regression targets must have shape {shape}, got {targets.shape}")
        return targets

    def loss_grad(self, params: NetParams, inputs: np.ndarray, labels: np.ndarray):
        """Mean NLL over the batch, its gradient (as ``NetParams``) and the cache."""
        outputs, cache = self.forward(params, inputs)
        losses = self.nll(outputs, labels)
        loss = float(np.mean(losses))
        if not np.isfinite(loss):
            raise NumericalError("non-finite loss", layer=len(self.layers) - 1)
        d_out = self.output_grad(outputs, labels) / outputs.shape[0]
        grads, _ = self.backward(params, cache, d_out)
        return loss, NetParams(grads), cache

    def loss(self, params: NetParams, inputs: np.ndarray, labels: np.ndarray) -> float:
        outputs, _ = self.forward(params, inputs)
        return float(np.mean(self.nll(outputs, labels)))

    def sample_labels(self, params: NetParams, inputs: np.ndarray, rng, outputs=None) -> np.ndarray:
        """Draw ``y ~ p_theta(y | x)`` for every input.

        ``rng`` is a ``numpy.random.Generator`` or an integer seed. Pass
        ``outputs`` to reuse a forward pass already computed at ``params``.
        """
        if rng is None or isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        if outputs is None:
            outputs, _ = self.forward(params, inputs)
        return sample_from_outputs(self.head, outputs, rng)


def sample_from_outputs(head: str, outputs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if head == "categorical":
        p = softmax(outputs)
        u = rng.random(outputs.shape[0])
        cdf = np.cumsum(p, axis=1)
        idx = np.sum(cdf < u[:, None], axis=1)
        return np.minimum(idx, outputs.shape[1] - 1).astype(np.int64)
    return outputs + rng.standard_normal(outputs.shape)
