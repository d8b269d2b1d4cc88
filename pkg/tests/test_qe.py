import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from kldwrm.curvature import KronFactors
from kldwrm.errors import ConfigError, DimensionError, NumericalError
from kldwrm.network import LayerSpec, NetParams, Network, softmax
from kldwrm.qe import (
    QEConfig,
    QEProblem,
    SnapshotRing,
    dataset_skl,
    inner_descent,
    kron_operator,
    qe_step,
    skl_categorical,
    skl_gaussian,
)
from kldwrm.steps import DenseCurvature, StepState, q_step

from conftest import random_spd


def test_skl_gaussian_examples():
    assert skl_gaussian([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert skl_gaussian([1.0, 0.0, 0.0], [0.0, 0.0, 0.0]) == 0.5
    assert skl_gaussian([1.0, 2.0], [0.0, 0.0]) == 2.5
    with pytest.raises(DimensionError):
        skl_gaussian([1.0], [1.0, 2.0])


@pytest.mark.parametrize("m1,m2", [(0.0, 0.0), (0.3, -0.2), (1.0, 2.5), (-1.5, 1.5)])
def test_skl_gaussian_matches_quadrature(m1, m2):
    def integrand(x):
        lp1 = -0.5 * (x - m1) ** 2
        lp2 = -0.5 * (x - m2) ** 2
        p1 = math.exp(lp1) / math.sqrt(2 * math.pi)
        p2 = math.exp(lp2) / math.sqrt(2 * math.pi)
        return 0.5 * (p1 - p2) * (lp1 - lp2)

    val, _ = integrate.quad(integrand, -30, 30, epsabs=1e-13, epsrel=1e-13, limit=200)
    assert abs(skl_gaussian([m1], [m2]) - val) <= 1e-6


def test_skl_categorical_hand_case():
    z1 = np.log([0.8, 0.2])
    z2 = np.log([0.2, 0.8])
    assert abs(skl_categorical(z1, z2) - 0.6 * np.log(4.0)) <= 1e-12


def test_skl_categorical_errors():
    with pytest.raises(DimensionError):
        skl_categorical([1.0], [1.0])
    with pytest.raises(DimensionError):
        skl_categorical([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(NumericalError):
        skl_categorical([np.inf, 0.0], [0.0, 0.0])


finite = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=8), finite)
def test_skl_categorical_properties(pairs, c):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    ab = skl_categorical(a, b)
    assert ab == pytest.approx(skl_categorical(b, a), abs=1e-12)
    assert ab >= -1e-15
    assert abs(skl_categorical(a, a + c)) <= 1e-12
    if np.allclose(softmax(a), softmax(b), atol=0, rtol=0):
        assert abs(ab) <= 1e-12


def test_dataset_skl_bias_shift(rng):
    net = Network.from_sizes([3, 4, 2], head="gaussian")
    p = net.init_params(rng)
    q = p.copy()
    bias = np.array([0.3, -1.2])
    q.weights[-1][:, -1] += bias
    x = rng.random((9, 3))
    assert dataset_skl(net, p, p, x) == 0.0
    assert dataset_skl(net, p, q, x) == pytest.approx(0.5 * bias @ bias, rel=1e-12)
    out_p, _ = net.forward(p, x[:1])
    out_q, _ = net.forward(q, x[:1])
    assert dataset_skl(net, p, q, x[:1]) == pytest.approx(skl_gaussian(out_p[0], out_q[0]))


def test_small_step_skl_matches_fisher_quadratic(rng):
    net = Network.from_sizes([3, 4, 3])
    p = net.init_params(rng)
    x = rng.random((20, 3))
    out, cache = net.forward(p, x)
    probs = softmax(out)
    # exact Fisher: average over inputs of E_y[grad grad^T] with y ~ model
    d = net.n_params
    fisher = np.zeros((d, d))
    for b in range(x.shape[0]):
        for c in range(3):
            d_out = np.zeros_like(out)
            d_out[b] = probs[b]
            d_out[b, c] -= 1.0
            grads, _ = net.backward(p, cache, d_out)
            gv = NetParams(grads).flatten()
            fisher += probs[b, c] * np.outer(gv, gv)
    fisher /= x.shape[0]
    for _ in range(5):
        s = rng.uniform(-1e-3, 1e-3, d)
        skl = dataset_skl(net, p, NetParams.from_flat(net.layers, p.flatten() + s), x)
        quad = 0.5 * s @ fisher @ s
        assert abs(skl - quad) <= 0.1 * quad


def test_ring_eviction_and_weights(rng):
    net = Network.from_sizes([2, 2])
    ring = SnapshotRing(2)
    for i in range(4):
        ring.push(net.init_params(rng), i)
    assert [b for _, b in ring.entries] == [2, 3]
    assert ring.weights(4, 0.5, 0.1) == pytest.approx([0.1 * 0.5 * 0.25, 0.1 * 0.5 * 0.5])
    with pytest.raises(ValueError):
        ring.push(net.init_params(rng), 3)
    empty = SnapshotRing(0)
    empty.push(net.init_params(rng), 0)
    assert len(empty) == 0
    with pytest.raises(ConfigError):
        SnapshotRing(-1)


def test_qe_config_validation():
    QEConfig(10, 0.07, 4)
    with pytest.raises(ConfigError):
        QEConfig(omega=0.0)
    with pytest.raises(ConfigError):
        QEConfig(n_is=-1)


def make_problem(rng, head, lam=3.0, weights=(0.5, 0.25), n_snap=1):
    net = Network.from_sizes([4, 5, 3], head=head)
    p = net.init_params(rng)
    x = rng.random((6, 4))
    shapes = [(l.out_dim, l.in_dim + 1) for l in net.layers]
    f = KronFactors([random_spd(rng, c) for _, c in shapes], [random_spd(rng, r) for r, _ in shapes])
    ring = SnapshotRing(4)
    for i in range(n_snap):
        ring.push(NetParams([w + 0.3 * rng.standard_normal(w.shape) for w in p.weights]), i)
    g = rng.standard_normal(net.n_params)
    prob = QEProblem.build(net, p, x, g, kron_operator(f, shapes), lam, ring, n_snap, 0.5, weights[1], weights[0])
    return prob, f, shapes


def fd_grad(prob, s, h=1e-5):
    out = np.empty_like(s)
    for i in range(s.size):
        e = np.zeros_like(s)
        e[i] = h
        out[i] = (prob.value_grad(s + e)[0] - prob.value_grad(s - e)[0]) / (2 * h)
    return out


@pytest.mark.parametrize("head", ["categorical", "gaussian"])
def test_objective_gradient_matches_finite_differences(rng, head):
    prob, _, _ = make_problem(rng, head, n_snap=2)
    s = 0.1 * rng.standard_normal(prob.theta.size)
    _, g = prob.value_grad(s)
    fd = fd_grad(prob, s)
    assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)


def test_zero_weights_give_quadratic_gradient(rng):
    prob, f, shapes = make_problem(rng, "categorical", weights=(0.0, 0.0))
    s = rng.standard_normal(prob.theta.size)
    _, g = prob.value_grad(s)
    np.testing.assert_allclose(g, prob.g + kron_operator(f, shapes)(s), rtol=1e-14)


def test_current_anchor_is_stationary_at_zero(rng):
    prob, _, _ = make_problem(rng, "categorical", n_snap=0)
    _, g = prob.value_grad(np.zeros(prob.theta.size))
    np.testing.assert_allclose(g, prob.g, atol=1e-15)


def test_zero_inner_steps_returns_q_step_bitwise(rng):
    prob, _, _ = make_problem(rng, "gaussian")
    d = prob.theta.size
    curv = DenseCurvature(random_spd(rng, d), random_spd(rng, d), 3.0)
    state = StepState.initial(d, 0.5)
    s_q, st_q = q_step(curv, prob.g, state, 3.0)
    s_e, st_e = qe_step(curv, prob.g, state, 3.0, prob, QEConfig(n_is=0))
    assert np.array_equal(s_q, s_e)
    assert np.array_equal(st_q.carry, st_e.carry)


def test_inner_descent_monotone_on_convex_instance(rng):
    # linear net with a Gaussian head: the objective is a convex quadratic in s
    net = Network([LayerSpec(3, 2, "identity")])
    p = net.init_params(rng)
    x = rng.random((10, 3))
    d = net.n_params
    b = random_spd(rng, d)
    lam = 2.0
    prob = QEProblem.build(net, p, x, rng.standard_normal(d), lambda v: b @ v, lam, None, 0, 0.5, 0.0, 0.7)
    # Hessian by differences of the (affine) gradient
    g0 = prob.value_grad(np.zeros(d))[1]
    hess = np.column_stack([prob.value_grad(e)[1] - g0 for e in np.eye(d)])
    v = rng.standard_normal(d)
    for _ in range(500):
        v = hess @ v
        v /= np.linalg.norm(v)
    lip = float(v @ hess @ v)
    omega = 0.9 * lam / lip
    trace = []
    inner_descent(prob, rng.standard_normal(d), 25, omega / lam, trace)
    assert all(b_ <= a_ + 1e-12 for a_, b_ in zip(trace, trace[1:]))


def test_inner_descent_divergence_raises(rng):
    prob, _, _ = make_problem(rng, "gaussian")
    with pytest.raises(NumericalError):
        inner_descent(prob, np.zeros(prob.theta.size), 50, 10.0)


def test_kron_operator_shape_checks(rng):
    f = KronFactors([np.eye(3)], [np.eye(2)])
    op = kron_operator(f, [(2, 3)])
    v = rng.standard_normal(6)
    np.testing.assert_array_equal(op(v), v)
    with pytest.raises(DimensionError):
        op(np.zeros(5))
    with pytest.raises(DimensionError):
        kron_operator(f, [(3, 2)])
