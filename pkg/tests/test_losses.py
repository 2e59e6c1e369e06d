import numpy as np
import pytest

from ipage import gradcore as gc
from ipage.flows import InvertibleNet
from ipage.losses import (
    DEFAULT_KERNEL,
    KernelSpec,
    boundary_loss,
    l2_forward_loss,
    latent_loss,
    ml_loss,
    mmd,
    total_loss,
    x_prior_loss,
)
from test_flows import random_net, small_config
from oracles import central_diff_grad, rel_err

IMQ1 = KernelSpec(bandwidths=(1.0,))


def mmd_double_sum(a, b, bandwidths):
    """Independent quadratic-time oracle for the biased V-statistic."""
    def k(u, v):
        return sum(c / (c + float(np.sum((u - v) ** 2))) for c in bandwidths)

    def s(xs, ys):
        return np.mean([[k(u, v) for v in ys] for u in xs])

    return max(s(a, a) + s(b, b) - 2 * s(a, b), 0.0)


# ---------------------------------------------------------------------------
# forward L2

def test_l2_zero_when_equal():
    p = np.array([[0.2, 0.4], [1.0, -1.0]])
    assert l2_forward_loss(p, p).item() == 0.0


def test_l2_single_residual():
    assert l2_forward_loss(np.array([[1.0, 1.0]]), np.zeros((1, 2))).item() == 2.0


def test_l2_hand_batch():
    pred = np.array([[0.0], [2.0]])
    truth = np.array([[1.0], [1.0]])
    assert l2_forward_loss(pred, truth).item() == pytest.approx(1.0, abs=0)


def test_l2_shape_mismatch():
    with pytest.raises(ValueError):
        l2_forward_loss(np.zeros((2, 1)), np.zeros((2, 2)))


# ---------------------------------------------------------------------------
# mmd

def test_mmd_identical_batches_exactly_zero():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(16, 3))
    assert mmd(a, a.copy()).item() == 0.0


def test_mmd_hand_two_point_value():
    a = np.array([[0.0], [0.0]])
    b = np.array([[10.0], [10.0]])
    expected = 1.0 + 1.0 - 2.0 / 101.0
    got = mmd(a, b, IMQ1).item()
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(1.9802, abs=1e-4)
    assert got == pytest.approx(mmd_double_sum(a, b, (1.0,)), abs=1e-12)


def test_mmd_matches_double_sum_oracle():
    rng = np.random.default_rng(12)
    a = rng.normal(size=(7, 2))
    b = rng.normal(loc=0.5, size=(5, 2))
    assert mmd(a, b).item() == pytest.approx(mmd_double_sum(a, b, DEFAULT_KERNEL.bandwidths),
                                             rel=1e-12)


def test_mmd_separates_shifted_gaussians():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(512, 1))
        same = rng.normal(size=(512, 1))
        shifted = rng.normal(loc=2.0, size=(512, 1))
        if mmd(a, same).item() < mmd(a, shifted).item():
            wins += 1
    assert wins >= 18


def test_mmd_symmetry_and_nonnegativity():
    rng = np.random.default_rng(5)
    for _ in range(5):
        a = rng.normal(size=(9, 2))
        b = rng.normal(loc=0.3, size=(6, 2))
        v1, v2 = mmd(a, b).item(), mmd(b, a).item()
        assert v1 >= 0.0
        assert v1 == pytest.approx(v2, rel=1e-12)


def test_mmd_rejects_bad_batches():
    with pytest.raises(ValueError):
        mmd(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        mmd(np.zeros((1, 2)), np.zeros((3, 2)))


def test_mmd_gradient_matches_finite_differences():
    rng = np.random.default_rng(21)
    a0 = rng.normal(size=(5, 2))
    b0 = rng.normal(loc=1.0, size=(4, 2))

    av = gc.Var(a0, requires_grad=True)
    bv = gc.Var(b0, requires_grad=True)
    out = mmd(av, bv)
    gc.backward(out)

    fd_a = central_diff_grad(lambda f: mmd(f.reshape(5, 2), b0).item(), a0.ravel())
    fd_b = central_diff_grad(lambda f: mmd(a0, f.reshape(4, 2)).item(), b0.ravel())
    assert rel_err(av.grad.ravel(), fd_a) < 1e-4
    assert rel_err(bv.grad.ravel(), fd_b) < 1e-4


# ---------------------------------------------------------------------------
# latent and prior MMD wrappers

def test_latent_loss_zero_on_product_sample():
    rng = np.random.default_rng(2)
    y = rng.normal(size=(8, 1))
    z = rng.normal(size=(8, 2))
    joint = np.concatenate([y, z], axis=1)
    assert latent_loss(joint, y, z).item() == 0.0


def test_latent_loss_detects_dependence():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=(256, 1))
        z_indep = rng.normal(size=(256, 1))
        y_marg = rng.permutation(y)
        z_fresh = rng.normal(size=(256, 1))
        dependent = latent_loss(np.concatenate([y, y], axis=1), y_marg, z_fresh).item()
        independent = latent_loss(np.concatenate([y, z_indep], axis=1), y_marg, z_fresh).item()
        if dependent > independent:
            wins += 1
    assert wins >= 15


def test_latent_loss_hand_batch():
    joint = np.array([[0.1, 0.3], [-0.2, 0.5]])
    y_m = np.array([[0.0], [0.4]])
    z = np.array([[1.0], [-0.3]])
    product = np.concatenate([y_m, z], axis=1)
    assert latent_loss(joint, y_m, z).item() == pytest.approx(
        mmd_double_sum(joint, product, DEFAULT_KERNEL.bandwidths), rel=1e-12)


def test_x_prior_loss_shapes_and_separation():
    rng = np.random.default_rng(8)
    prior = rng.normal(size=(64, 2))
    assert x_prior_loss(prior, prior.copy()).item() == 0.0
    near = rng.normal(scale=1.1, size=(64, 2))
    far = rng.normal(loc=4.0, size=(64, 2))
    assert x_prior_loss(far, prior).item() > x_prior_loss(near, prior).item()
    two_point = x_prior_loss(np.array([[0.0], [0.0]]), np.array([[10.0], [10.0]]), IMQ1).item()
    assert two_point == pytest.approx(2.0 - 2.0 / 101.0, abs=1e-12)


# ---------------------------------------------------------------------------
# max-likelihood loss

def test_ml_loss_identity_net_exact_values():
    net = InvertibleNet.identity(small_config(2, 1))
    x = np.array([[0.7, 0.0]])
    y = np.array([[0.7]])
    assert ml_loss(net, x, y, sigma=0.1).item() == 0.0
    x2 = np.array([[0.7, 1.0]])
    assert ml_loss(net, x2, y, sigma=0.1).item() == pytest.approx(0.5, abs=0)


def test_ml_loss_matches_formula_reimplementation():
    from ipage.flows import log_det_jacobian, net_forward

    net = random_net(4, 2, seed=3)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(6, 4))
    y = rng.normal(size=(6, 2))
    sigma = 0.3
    y_hat, z_hat = net_forward(net, x)
    expected = np.mean(
        0.5 * (((y_hat - y) ** 2).sum(axis=1) / sigma**2 + (z_hat**2).sum(axis=1))
        - log_det_jacobian(net, x)
    )
    assert ml_loss(net, x, y, sigma=sigma).item() == pytest.approx(expected, abs=1e-10)


def test_ml_loss_rejects_bad_sigma():
    net = InvertibleNet.identity(small_config(2, 1))
    with pytest.raises(ValueError):
        ml_loss(net, np.zeros((1, 2)), np.zeros((1, 1)), sigma=0.0)


def test_ml_loss_decreases_under_gradient_descent():
    net = random_net(2, 1, seed=9, scale=0.3)
    rng = np.random.default_rng(10)
    x = rng.uniform(-1, 1, size=(16, 2))
    y = np.sin(x[:, :1])
    params = net.params.copy()
    history = []
    for _ in range(50):
        live = net.with_params(params)
        phi = gc.Var(params, requires_grad=True)
        loss = ml_loss(live, x, y, sigma=0.1, phi=phi)
        gc.backward(loss)
        history.append(loss.item())
        params = params - 1e-3 * phi.grad
    increases = sum(b > a for a, b in zip(history, history[1:]))
    assert increases <= 0.05 * len(history)
    assert history[-1] < history[0]


# ---------------------------------------------------------------------------
# boundary loss

def test_boundary_loss_zero_at_center_and_edge():
    mu = np.array([0.5, -0.5])
    r = np.array([2.0, 4.0])
    assert boundary_loss(mu, mu, r).item() == 0.0
    edge = mu + r / 2
    assert boundary_loss(edge, mu, r).item() == 0.0


def test_boundary_loss_hand_value():
    assert boundary_loss(np.array([1.5]), np.zeros(1), np.array([2.0])).item() == 0.5


def test_boundary_loss_zero_iff_inside_box():
    rng = np.random.default_rng(6)
    mu = np.zeros(3)
    r = np.array([2.0, 1.0, 4.0])
    for _ in range(100):
        x = rng.uniform(-3, 3, size=3)
        inside = np.all(np.abs(x - mu) <= r / 2)
        val = boundary_loss(x, mu, r).item()
        assert (val == 0.0) == inside


def test_boundary_loss_zero_gradient_strictly_inside():
    mu = np.zeros(2)
    r = np.array([2.0, 2.0])
    xv = gc.Var(np.array([0.3, -0.8]), requires_grad=True)
    gc.backward(boundary_loss(xv, mu, r))
    assert np.array_equal(xv.grad, np.zeros(2))


def test_boundary_loss_rejects_bad_range():
    with pytest.raises(ValueError):
        boundary_loss(np.zeros(2), np.zeros(2), np.array([1.0, 0.0]))


# ---------------------------------------------------------------------------
# total loss

def test_total_loss_values():
    assert total_loss((0.0, 1.0, 0.0), 9.9, 0.7, 3.3) == pytest.approx(0.7)
    assert total_loss((1.0, 1.0, 1.0), 1.0, 2.0, 3.0) == pytest.approx(6.0)


def test_total_loss_linearity_in_weights():
    rng = np.random.default_rng(1)
    lx, ly, lz = rng.uniform(0, 2, size=3)
    w = rng.uniform(0, 3, size=3)
    base = total_loss(tuple(w), lx, ly, lz)
    assert total_loss(tuple(2.5 * w), lx, ly, lz) == pytest.approx(2.5 * base)


def test_total_loss_rejects_negative_weights():
    with pytest.raises(ValueError):
        total_loss((-0.1, 1.0, 1.0), 1.0, 1.0, 1.0)


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(bandwidths=())
    with pytest.raises(ValueError):
        KernelSpec(bandwidths=(0.1, -0.2))
    with pytest.raises(ValueError):
        KernelSpec(family="rbf")
