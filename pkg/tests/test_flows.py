import numpy as np
import pytest

from ipage import gradcore as gc
from ipage.flows import (
    FlowConfig,
    InvertibleNet,
    load_checkpoint,
    log_det_jacobian,
    log_det_jacobian_inverse,
    log_posterior_density,
    net_forward,
    net_inverse,
    save_checkpoint,
)
from oracles import central_diff_grad, numeric_jacobian, rel_err

TASK_DIMS = [(2, 1), (4, 2), (4, 1)]


def small_config(dim_x, dim_y, n_blocks=3, activation="tanh", perm_seed=0):
    return FlowConfig(dim_x=dim_x, dim_y=dim_y, dim_z=dim_x - dim_y, n_blocks=n_blocks,
                      subnet_layers=2, subnet_width=8, activation=activation,
                      perm_seed=perm_seed)


def random_net(dim_x, dim_y, seed, scale=0.5, **kw):
    net = InvertibleNet.create(small_config(dim_x, dim_y, perm_seed=seed, **kw), seed=seed)
    rng = np.random.default_rng(seed + 1000)
    net.params = net.params + rng.normal(scale=scale, size=net.params.shape)
    return net


def hand_block_net(scale_value=1.0, shift_value=2.0):
    # one 2-D block, identity permutation, constant subnets: the post-clamp
    # scale equals scale_value exactly (raw output = a*atanh(s/a))
    cfg = small_config(2, 1, n_blocks=1)
    net = InvertibleNet.identity(cfg)
    raw = cfg.scale_clamp * np.arctanh(scale_value / cfg.scale_clamp)
    net.params[net.param_slice(0, "scale", cfg.subnet_layers - 1, "b")] = raw
    net.params[net.param_slice(0, "shift", cfg.subnet_layers - 1, "b")] = shift_value
    return net


def test_config_invalid_dims_rejected():
    with pytest.raises(ValueError):
        FlowConfig(dim_x=2, dim_y=2, dim_z=0)
    with pytest.raises(ValueError):
        FlowConfig(dim_x=4, dim_y=1, dim_z=2)
    with pytest.raises(ValueError):
        FlowConfig(dim_x=4, dim_y=2, dim_z=2, activation="gelu")


def test_identity_net_is_identity():
    net = InvertibleNet.identity(small_config(4, 2))
    x = np.array([0.3, -1.2, 0.5, 2.0])
    y, z = net_forward(net, x)
    assert np.array_equal(np.concatenate([y, z]), x)
    assert net_inverse(net, y, z) == pytest.approx(x, abs=0)


def test_hand_set_block_forward():
    net = hand_block_net()
    y, z = net_forward(net, np.array([3.0, 1.0]))
    assert y[0] == pytest.approx(3.0, abs=1e-14)
    assert z[0] == pytest.approx(1.0 * np.e + 2.0, rel=1e-14)


def test_hand_set_block_inverse_recovers_input():
    net = hand_block_net()
    x = net_inverse(net, np.array([3.0]), np.array([np.e + 2.0]))
    assert x == pytest.approx(np.array([3.0, 1.0]), rel=1e-14)


@pytest.mark.parametrize("dim_x,dim_y", TASK_DIMS)
def test_round_trip_random_nets(dim_x, dim_y):
    rng = np.random.default_rng(17)
    for seed in range(10):
        net = random_net(dim_x, dim_y, seed)
        x = rng.normal(size=(8, dim_x))
        y, z = net_forward(net, x)
        back = net_inverse(net, y, z)
        assert np.max(np.abs(back - x)) < 1e-6
        yz2 = np.concatenate(net_forward(net, back), axis=-1)
        assert np.max(np.abs(yz2 - np.concatenate([y, z], axis=-1))) < 1e-6


def test_dimension_mismatch_errors():
    net = InvertibleNet.identity(small_config(4, 2))
    with pytest.raises(ValueError):
        net_forward(net, np.zeros(3))
    with pytest.raises(ValueError):
        net_inverse(net, np.zeros(1), np.zeros(2))


def test_log_det_zero_for_identity():
    net = InvertibleNet.identity(small_config(4, 1))
    assert log_det_jacobian(net, np.zeros(4)) == 0.0


def test_log_det_constant_scale_counts_active_lanes():
    cfg = small_config(4, 2, n_blocks=1)
    net = InvertibleNet.identity(cfg)
    c = 0.7
    raw = cfg.scale_clamp * np.arctanh(c / cfg.scale_clamp)
    net.params[net.param_slice(0, "scale", cfg.subnet_layers - 1, "b")] = raw
    # two active lanes, each contributing c
    assert log_det_jacobian(net, np.array([0.1, 0.2, 0.3, 0.4])) == pytest.approx(2 * c, rel=1e-12)


def test_log_det_matches_numeric_jacobian():
    for seed in range(5):
        net = random_net(2, 1, seed)
        x = np.random.default_rng(seed).normal(size=2)
        jac = numeric_jacobian(lambda u: np.concatenate(net_forward(net, u)), x)
        expected = np.log(abs(np.linalg.det(jac)))
        assert log_det_jacobian(net, x) == pytest.approx(expected, abs=1e-4)


def test_log_det_forward_plus_inverse_is_zero():
    rng = np.random.default_rng(3)
    for seed in range(5):
        net = random_net(4, 2, seed)
        x = rng.normal(size=(6, 4))
        y, z = net_forward(net, x)
        total = log_det_jacobian(net, x) + log_det_jacobian_inverse(net, y, z)
        assert np.max(np.abs(total)) < 1e-6


def test_log_posterior_density_identity_origin():
    net = InvertibleNet.identity(small_config(4, 1))
    x = np.array([2.5, 0.0, 0.0, 0.0])  # z-part zero
    assert log_posterior_density(net, x) == pytest.approx(-1.5 * np.log(2 * np.pi), rel=1e-12)


def test_log_posterior_density_monotone_in_latent():
    net = InvertibleNet.identity(small_config(2, 1))
    zs = np.linspace(0.5, 4.0, 12)
    vals = [log_posterior_density(net, np.array([0.3, z])) for z in zs]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_posterior_density_integrates_to_one_on_slice():
    # change-of-variables certificate: (1/eps) * integral over the band
    # |f_y(x) - y*| < eps/2 of exp(log density) -> 1 for any bijection
    net = random_net(2, 1, seed=5, scale=0.3)
    lo, hi, n = -7.0, 7.0, 1200
    cell = (hi - lo) / n
    axis = lo + (np.arange(n) + 0.5) * cell
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    grid = np.column_stack([xx.ravel(), yy.ravel()])
    ypred, _ = net_forward(net, grid)
    eps = 0.05
    y_star = 0.0
    band = np.abs(ypred[:, 0] - y_star) < eps / 2
    logp = log_posterior_density(net, grid[band])
    mass = np.exp(logp).sum() * cell * cell / eps
    assert abs(mass - 1.0) < 0.05


def test_gradients_wrt_input_and_params_match_fd():
    net = random_net(4, 2, seed=2)
    rng = np.random.default_rng(0)
    x = rng.normal(size=4)
    r = rng.normal(size=4)

    xv = gc.Var(x, requires_grad=True)
    out, _ = net.forward_graph(xv, gc.Var(net.params))
    gc.backward(gc.vsum(gc.mul(out, r)))
    fd_x = central_diff_grad(lambda u: float(np.concatenate(net_forward(net, u)) @ r), x)
    assert rel_err(xv.grad, fd_x) < 1e-5

    pv = gc.Var(net.params, requires_grad=True)
    out, _ = net.forward_graph(gc.Var(x), pv)
    gc.backward(gc.vsum(gc.mul(out, r)))

    def f(p):
        other = net.with_params(p)
        return float(np.concatenate(net_forward(other, x)) @ r)

    fd_p = central_diff_grad(f, net.params.copy(), h=1e-5)
    assert rel_err(pv.grad, fd_p) < 1e-4


def test_permutations_mix_across_split_boundary():
    for seed in range(20):
        cfg = small_config(2, 1, perm_seed=seed)
        net = InvertibleNet.create(cfg, seed=seed)
        for perm in net.permutations:
            assert list(perm) == [1, 0]
    cfg = small_config(4, 1, n_blocks=6, perm_seed=1)
    net = InvertibleNet.create(cfg, seed=1)
    for perm in net.permutations:
        assert set(perm[:2]) != {0, 1}


def test_checkpoint_round_trip_and_reproducible_bytes(tmp_path):
    net = random_net(4, 2, seed=8)
    stats = {"x_mean": [0.0, 0.1, 0.2, 0.3], "x_std": [1.0, 1.0, 2.0, 1.0],
             "y_mean": [0.5, -0.5], "y_std": [1.5, 0.7]}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    for p in (p1, p2):
        save_checkpoint(p, net.config, {"phi_final": net.params, "phi_star": net.params * 0.5},
                        norm_stats=stats, meta={"task": "demo", "seed": 8},
                        permutations=net.permutations)
    assert p1.read_bytes() == p2.read_bytes()

    loaded = load_checkpoint(p1)
    assert loaded["config"] == net.config
    assert [list(p) for p in loaded["permutations"]] == [list(p) for p in net.permutations]
    assert np.array_equal(loaded["arrays"]["phi_final"], net.params)
    assert np.array_equal(loaded["arrays"]["phi_star"], net.params * 0.5)
    assert loaded["norm_stats"] == stats
    rebuilt = InvertibleNet(loaded["config"], loaded["permutations"], loaded["arrays"]["phi_final"])
    x = np.linspace(-1, 1, 4)
    assert np.array_equal(np.concatenate(net_forward(rebuilt, x)),
                          np.concatenate(net_forward(net, x)))


def test_checkpoint_rejects_foreign_files(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(p)
