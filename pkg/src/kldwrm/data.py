"""Datasets: IDX (MNIST) files, synthetic teacher problems and batching."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    CountMismatchError,
    DimensionError,
    EmptyDatasetError,
    TruncatedFileError,
)
from .network import Network

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "KLDWRM_DATA_DIR"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    kind: str  # "classification" or "regression"
    n_classes: int = 0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2:
            raise DimensionError("inputs must be a 2-d array")
        n = self.inputs.shape[0]
        if n == 0:
            raise EmptyDatasetError("dataset has no samples")
        if self.labels.shape[0] != n:
            raise CountMismatchError(f"{n} inputs but {self.labels.shape[0]} labels")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")
        if self.kind == "classification":
            if not self.n_classes:
                self.n_classes = int(self.labels.max()) + 1
            if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
                raise ValueError("class label out of range")
        elif self.kind != "regression":
            raise ValueError(f"unknown dataset kind {self.kind!r}")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.kind, self.n_classes)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: shorter than the magic number")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagicError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: header cut short")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    if dims[0] == 0:
        raise EmptyDatasetError(f"{path}: zero items")
    need = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < need:
        raise TruncatedFileError(f"{path}: {len(raw) - header} data bytes, header promises {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped) into a classification dataset.

    Pixels are scaled to [0, 1] by 1/255 and images flattened row-major.
    """
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), "classification", n_classes=10)


def write_idx(path, array: np.ndarray):
    """Write a uint8 array in IDX format (images if 3-d, labels if 1-d)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes(order="C"))


def find_mnist(data_dir=None) -> dict:
    """Locate the four MNIST files (plain or ``.gz``) under ``data_dir``.

    ``data_dir`` defaults to ``$KLDWRM_DATA_DIR``, then ``./data``.
    """
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV) or "data"
    out = {}
    for split, names in MNIST_FILES.items():
        paths = []
        for name in names:
            for cand in (name, name + ".gz", name.replace("-idx", ".idx")):
                p = os.path.join(data_dir, cand)
                if os.path.exists(p):
                    paths.append(p)
                    break
            else:
                raise FileNotFoundError(f"{name} not found in {data_dir}")
        out[split] = tuple(paths)
    return out


def load_mnist(data_dir=None) -> tuple[Dataset, Dataset]:
    files = find_mnist(data_dir)
    return load_idx(*files["train"]), load_idx(*files["test"])


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.batch_size <= 0:
            raise ConfigError("batch size must be positive")

    def permutation(self, n: int, epoch: int) -> np.ndarray:
        # an independent stream per (seed, epoch), so epochs can be replayed alone
        return np.random.default_rng([self.seed, epoch]).permutation(n)


def batches(ds: Dataset, plan: BatchPlan, epoch: int) -> list:
    """Index arrays for every batch of one epoch; the last may be partial."""
    perm = plan.permutation(len(ds), epoch)
    return [perm[i:i + plan.batch_size] for i in range(0, len(perm), plan.batch_size)]


def synth_regression(n: int, input_dim: int, out_dim: int, teacher_seed: int, noise_seed: int | None = None,
                     hidden=(16,), noise: float = 1.0) -> Dataset:
    """Inputs uniform in [0, 1]; targets from a random ReLU teacher plus Gaussian noise."""
    rng = np.random.default_rng(teacher_seed)
    teacher = Network.from_sizes([input_dim, *hidden, out_dim], head="gaussian")
    params = teacher.init_params(rng)
    x = rng.random((n, input_dim))
    y, _ = teacher.forward(params, x)
    if noise:
        nrng = np.random.default_rng(teacher_seed + 1 if noise_seed is None else noise_seed)
        y = y + noise * nrng.standard_normal(y.shape)
    return Dataset(x, y, "regression")


def synth_classification(n: int, input_dim: int, n_classes: int, seed: int, hidden=(16,)) -> Dataset:
    """Inputs uniform in [0, 1]; labels are the argmax of a random ReLU teacher."""
    rng = np.random.default_rng(seed)
    teacher = Network.from_sizes([input_dim, *hidden, n_classes])
    params = teacher.init_params(rng)
    x = rng.random((n, input_dim))
    # centred inputs keep the teacher from collapsing onto one class
    logits, _ = teacher.forward(params, x - 0.5)
    return Dataset(x, np.argmax(logits, axis=1).astype(np.int64), "classification", n_classes=n_classes)
