import gzip
import struct

import numpy as np
import pytest

from kldwrm.data import (
    BatchPlan,
    Dataset,
    batches,
    find_mnist,
    load_idx,
    synth_classification,
    synth_regression,
    write_idx,
)
from kldwrm.errors import (
    BadMagicError,
    ConfigError,
    CountMismatchError,
    EmptyDatasetError,
    TruncatedFileError,
)


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


def write(path, data):
    path.write_bytes(data)
    return str(path)


def test_hand_built_idx(tmp_path):
    imgs = write(tmp_path / "i", idx_bytes(0x803, (2, 2, 2), [0, 0, 0, 0, 255, 255, 255, 255]))
    labs = write(tmp_path / "l", idx_bytes(0x801, (2,), [3, 7]))
    ds = load_idx(imgs, labs)
    np.testing.assert_array_equal(ds.inputs, [[0, 0, 0, 0], [1, 1, 1, 1]])
    np.testing.assert_array_equal(ds.labels, [3, 7])
    assert ds.kind == "classification" and ds.input_dim == 4


def test_row_major_flattening(tmp_path):
    imgs = write(tmp_path / "i", idx_bytes(0x803, (1, 2, 3), [0, 51, 102, 153, 204, 255]))
    labs = write(tmp_path / "l", idx_bytes(0x801, (1,), [0]))
    np.testing.assert_allclose(load_idx(imgs, labs).inputs[0], [0, 0.2, 0.4, 0.6, 0.8, 1.0])


def test_bad_magic(tmp_path):
    imgs = write(tmp_path / "i", idx_bytes(0x803, (1, 1, 1), [0]))
    labs = write(tmp_path / "l", idx_bytes(0x803, (1, 1, 1), [0]))
    with pytest.raises(BadMagicError):
        load_idx(imgs, labs)


def test_truncated(tmp_path):
    labs = write(tmp_path / "l", idx_bytes(0x801, (2,), [0, 1]))
    short = write(tmp_path / "i", idx_bytes(0x803, (2, 2, 2), [0] * 7))
    with pytest.raises(TruncatedFileError):
        load_idx(short, labs)
    with pytest.raises(TruncatedFileError):
        load_idx(write(tmp_path / "h", struct.pack(">I", 0x803) + b"\0\0"), labs)
    with pytest.raises(TruncatedFileError):
        load_idx(write(tmp_path / "m", b"\0\0"), labs)


def test_count_mismatch(tmp_path):
    imgs = write(tmp_path / "i", idx_bytes(0x803, (2, 1, 1), [0, 1]))
    labs = write(tmp_path / "l", idx_bytes(0x801, (3,), [0, 1, 2]))
    with pytest.raises(CountMismatchError):
        load_idx(imgs, labs)


def test_empty(tmp_path):
    imgs = write(tmp_path / "i", idx_bytes(0x803, (0, 2, 2), []))
    labs = write(tmp_path / "l", idx_bytes(0x801, (0,), []))
    with pytest.raises(EmptyDatasetError):
        load_idx(imgs, labs)


def test_errors_are_distinct():
    kinds = {BadMagicError, TruncatedFileError, CountMismatchError, EmptyDatasetError}
    for a in kinds:
        for b in kinds - {a}:
            assert not issubclass(a, b)


def test_roundtrip_and_gzip(tmp_path, rng):
    imgs = rng.integers(0, 256, (5, 3, 4)).astype(np.uint8)
    labs = rng.integers(0, 10, 5).astype(np.uint8)
    write_idx(tmp_path / "i", imgs)
    write_idx(tmp_path / "l", labs)
    ds = load_idx(tmp_path / "i", tmp_path / "l")
    np.testing.assert_array_equal(np.round(ds.inputs * 255).astype(np.uint8).reshape(5, 3, 4), imgs)
    np.testing.assert_array_equal(ds.labels, labs)
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1
    with gzip.open(tmp_path / "i.gz", "wb") as fh:
        fh.write((tmp_path / "i").read_bytes())
    ds2 = load_idx(tmp_path / "i.gz", tmp_path / "l")
    np.testing.assert_array_equal(ds2.inputs, ds.inputs)


def test_find_mnist_uses_env(tmp_path, monkeypatch):
    for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte"):
        (tmp_path / name).write_bytes(b"")
    monkeypatch.setenv("KLDWRM_DATA_DIR", str(tmp_path))
    files = find_mnist()
    assert files["test"][0].endswith(".gz")
    monkeypatch.setenv("KLDWRM_DATA_DIR", str(tmp_path / "missing"))
    with pytest.raises(FileNotFoundError):
        find_mnist()


def test_batches_partition():
    ds = Dataset(np.zeros((5, 2)), np.zeros(5, dtype=int), "classification", 2)
    plan = BatchPlan(2, seed=3)
    bs = batches(ds, plan, 1)
    assert [len(b) for b in bs] == [2, 2, 1]
    assert sorted(np.concatenate(bs)) == list(range(5))
    assert all(np.array_equal(a, b) for a, b in zip(bs, batches(ds, plan, 1)))


def test_batches_differ_across_epochs():
    ds = Dataset(np.zeros((200, 1)), np.zeros(200, dtype=int), "classification", 1)
    plan = BatchPlan(50, seed=0)
    assert not np.array_equal(np.concatenate(batches(ds, plan, 1)), np.concatenate(batches(ds, plan, 2)))
    with pytest.raises(ConfigError):
        BatchPlan(0)


def test_dataset_validation():
    with pytest.raises(EmptyDatasetError):
        Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), "classification")
    with pytest.raises(CountMismatchError):
        Dataset(np.zeros((2, 2)), np.zeros(3, dtype=int), "classification")
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 5]), "classification", 3)
    with pytest.raises(ValueError):
        Dataset(np.full((1, 2), np.nan), np.zeros(1, dtype=int), "classification")


def test_synth_regression():
    a = synth_regression(50, 3, 2, teacher_seed=1)
    b = synth_regression(50, 3, 2, teacher_seed=1)
    np.testing.assert_array_equal(a.labels, b.labels)
    one = synth_regression(1, 3, 2, teacher_seed=1)
    assert len(one) == 1
    clean = synth_regression(20, 3, 2, teacher_seed=4, noise=0.0)
    from kldwrm.network import Network

    net = Network.from_sizes([3, 16, 2], head="gaussian")
    # same teacher construction: init then inputs from one stream
    rng = np.random.default_rng(4)
    p = net.init_params(rng)
    x = rng.random((20, 3))
    np.testing.assert_allclose(clean.labels, net.forward(p, x)[0])


def test_synth_regression_noise_variance():
    noisy = synth_regression(100000, 3, 1, teacher_seed=2)
    clean = synth_regression(100000, 3, 1, teacher_seed=2, noise=0.0)
    target = np.var(clean.labels) + 1.0
    assert abs(np.var(noisy.labels) - target) <= 0.05 * target


def test_synth_classification():
    ds = synth_classification(300, 5, 4, seed=0)
    assert ds.n_classes == 4 and len(np.unique(ds.labels)) > 1
