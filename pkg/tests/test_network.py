import numpy as np
import pytest

from kldwrm.errors import DimensionError, NumericalError
from kldwrm.network import LayerSpec, NetParams, Network, sample_from_outputs, snapshot


def central_diff(f, x, h=1e-5):
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


@pytest.fixture(params=["categorical", "gaussian"])
def net(request):
    return Network.from_sizes([4, 6, 5, 3], head=request.param)


def labels_for(net, rng, n):
    if net.head == "categorical":
        return rng.integers(0, net.output_dim, n)
    return rng.standard_normal((n, net.output_dim))


def test_param_count_and_slices():
    net = Network.from_sizes([784, 128, 64, 10])
    assert net.n_params == 785 * 128 + 129 * 64 + 65 * 10
    sl = net.layer_slices()
    assert sl[0] == slice(0, 785 * 128)
    assert sl[-1].stop == net.n_params


def test_flatten_roundtrip(net, rng):
    p = net.init_params(rng)
    flat = p.flatten()
    assert NetParams.from_flat(net.layers, flat) == p
    # column-major: first entries are the first column of the first layer
    np.testing.assert_array_equal(flat[:6], p.weights[0][:, 0])
    with pytest.raises(DimensionError):
        NetParams.from_flat(net.layers, flat[:-1])


def test_init_has_zero_bias(net, rng):
    for w in net.init_params(rng).weights:
        assert np.all(w[:, -1] == 0.0)


def test_loss_grad_matches_finite_differences(net, rng):
    p = net.init_params(rng)
    x = rng.random((5, 4))
    y = labels_for(net, rng, 5)
    _, grads, _ = net.loss_grad(p, x, y)
    g = grads.flatten()
    fd = central_diff(lambda t: net.loss(NetParams.from_flat(net.layers, t), x, y), p.flatten())
    assert np.linalg.norm(g - fd) <= 1e-7 * np.linalg.norm(fd)


def test_gaussian_nll_constant():
    net = Network([LayerSpec(1, 2, "identity")])
    p = net.zero_params()
    out, _ = net.forward(p, np.zeros((1, 1)))
    assert net.nll(out, np.zeros((1, 2)))[0] == pytest.approx(np.log(2 * np.pi))


def test_architecture_validation():
    with pytest.raises(DimensionError):
        Network([LayerSpec(3, 4), LayerSpec(5, 2, "softmax")])
    with pytest.raises(ValueError):
        Network([LayerSpec(3, 4, "softmax"), LayerSpec(4, 2, "softmax")])
    with pytest.raises(ValueError):
        Network([LayerSpec(3, 4, "relu")])
    with pytest.raises(DimensionError):
        Network([])


def test_forward_rejects_bad_inputs(rng):
    net = Network.from_sizes([3, 2])
    p = net.init_params(rng)
    with pytest.raises(DimensionError):
        net.forward(p, np.zeros((2, 4)))
    with pytest.raises(NumericalError):
        net.forward(p, np.array([[np.nan, 0, 0]]))
    big = NetParams([np.full((2, 4), 1e308)])
    with pytest.raises(NumericalError) as exc:
        net.forward(big, np.ones((1, 3)) * 10)
    assert exc.value.layer == 0


def test_label_validation(rng):
    net = Network.from_sizes([3, 2])
    p = net.init_params(rng)
    with pytest.raises(ValueError):
        net.loss(p, np.zeros((2, 3)), np.array([0, 2]))
    with pytest.raises(ValueError):
        net.loss(p, np.zeros((2, 3)), np.array([0.0, 1.0]))


def test_sampled_labels_follow_model(rng):
    net = Network.from_sizes([1, 3])
    p = NetParams([np.array([[0.0, np.log(1.0)], [0.0, np.log(2.0)], [0.0, np.log(5.0)]])])
    x = np.zeros((80000, 1))
    y = net.sample_labels(p, x, rng)
    freq = np.bincount(y, minlength=3) / y.size
    np.testing.assert_allclose(freq, [0.125, 0.25, 0.625], atol=0.01)


def test_sample_labels_accepts_seed_and_stub():
    class Stub:
        def random(self, n):
            return np.full(n, 0.99)

    out = sample_from_outputs("categorical", np.zeros((2, 4)), Stub())
    assert list(out) == [3, 3]
    net = Network.from_sizes([2, 2], head="gaussian")
    p = net.zero_params()
    a = net.sample_labels(p, np.zeros((3, 2)), 7)
    b = net.sample_labels(p, np.zeros((3, 2)), 7)
    np.testing.assert_array_equal(a, b)


def test_snapshot_is_read_only(rng):
    p = Network.from_sizes([2, 2]).init_params(rng)
    s = snapshot(p)
    with pytest.raises(ValueError):
        s.weights[0][0, 0] = 1.0
    p.weights[0][0, 0] = 123.0
    assert s.weights[0][0, 0] != 123.0
