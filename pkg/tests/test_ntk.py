import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conelab import ntk

DELTA = math.radians(50)


def mode_image(m, z1, z2):
    j = np.arange(m) / m
    X1, X2 = np.meshgrid(j, j)
    return np.cos(2 * np.pi * (z1 * X1 + z2 * X2))


@pytest.fixture(scope="module")
def tiny():
    data = ntk.band_limited_dataset(3, count=3, m=32, B=8)
    return data


def test_mode_count():
    assert ntk.mode_count(1) == 4
    assert ntk.mode_count(2) == 12


def test_kernel_hermitian_and_real():
    k = ntk.sample_kernel_field(1, B=6)
    assert np.array_equal(k.coef, np.conj(k.coef[::-1, ::-1]))
    assert k.coef[6, 6] == 0
    spec = k.spectrum(32)
    assert np.max(np.abs(np.fft.ifft2(spec).imag)) < 1e-15


def test_kernel_field_mean_is_zero():
    f = ntk.sample_kernel_field(2).field(64)
    assert abs(f.mean()) < 1e-15


def test_kernel_determinism():
    a, b = ntk.sample_kernel_field(9), ntk.sample_kernel_field(9)
    assert np.array_equal(a.coef, b.coef)
    assert not np.array_equal(a.coef, ntk.sample_kernel_field(10).coef)


def test_kernel_variance():
    B, sigma = 16, 0.5
    M = ntk.mode_count(B)
    rng = np.random.default_rng(0)
    count = 10_000
    vals = np.array([ntk._kernel_from_rng(rng, B, sigma).field(64)[5, 7] for _ in range(count)])
    target = sigma**2 * M
    se = target * math.sqrt(2.0 / count)
    assert abs(vals.var() - target) < 3 * se


def test_kernel_rejects_band():
    with pytest.raises(ValueError):
        ntk.sample_kernel_field(0, B=0)
    with pytest.raises(ValueError):
        ntk.sample_kernel_field(0, B=16).spectrum(32)


def test_leaky_relu():
    assert ntk.leaky_relu(2.0, 0.01) == 2.0
    assert ntk.leaky_relu(-2.0, 0.01) == pytest.approx(-0.02)
    x = np.linspace(-3, 3, 13)
    assert np.array_equal(ntk.leaky_relu(x, 1.0), x)


def test_cone_project_full_angle_is_identity():
    g = np.random.default_rng(0).standard_normal((32, 32))
    assert np.allclose(ntk.cone_project(g, math.pi / 2), g, atol=1e-13)


def test_cone_project_kills_vertical_mode():
    assert np.max(np.abs(ntk.cone_project(mode_image(32, 0, 1), DELTA))) < 1e-14


def test_cone_project_idempotent_and_self_adjoint():
    rng = np.random.default_rng(1)
    f, g = rng.standard_normal((2, 32, 32))
    pf = ntk.cone_project(f, DELTA)
    assert np.allclose(ntk.cone_project(pf, DELTA), pf, atol=1e-13)
    lhs = np.sum(pf * g)
    rhs = np.sum(f * ntk.cone_project(g, DELTA))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_forward_zero_readout():
    net = ntk.make_net(0, n_units=8, B=6)
    g = np.random.default_rng(0).standard_normal((32, 32))
    assert np.all(ntk.forward(net, g) == 0)


def test_forward_linear_support():
    net = ntk.make_net(0, n_units=8, B=6, alpha=1.0)
    net.a = np.random.default_rng(1).standard_normal(8)
    g = mode_image(32, 2, 1) + mode_image(32, 9, 0)  # the second mode lies beyond B
    out = ntk.coefficients(ntk.forward(net, g))
    allowed = np.zeros((32, 32), bool)
    for z1, z2 in ((2, 1), (-2, -1)):
        allowed[z2 % 32, z1 % 32] = True
    assert np.max(np.abs(out[~allowed])) < 1e-14
    assert np.max(np.abs(out[allowed])) > 1e-3


def test_forward_linear_obstruction():
    net = ntk.make_net(4, n_units=16, B=8, alpha=1.0, delta=DELTA)
    net.a = np.random.default_rng(2).standard_normal(16)
    f = np.random.default_rng(3).standard_normal((32, 32))
    out = ntk.forward(net, ntk.cone_project(f, DELTA))
    assert ntk.outside_energy(out, DELTA) <= 1e-24 * np.mean(out**2)


def test_forward_nonlinear_leaves_cone():
    net = ntk.make_net(4, n_units=16, B=8, alpha=0.01, delta=DELTA)
    net.a = np.ones(16)
    # both modes are visible; their difference (0, 2) is not
    g = mode_image(32, 3, 1) + mode_image(32, 3, -1)
    out = ntk.forward(net, ntk.cone_project(g, DELTA))
    assert ntk.outside_energy(out, DELTA) > 1e-6 * np.mean(out**2)


def test_forward_dimension_mismatch():
    net = ntk.make_net(0, n_units=2, B=6)
    with pytest.raises(ValueError):
        ntk.forward(net, np.zeros((8, 8)))  # grid too coarse for the band
    with pytest.raises(ValueError):
        ntk.forward(net, np.zeros((32, 31)))


def test_train_on_zero_dataset():
    net = ntk.make_net(0, n_units=8, B=6)
    tr = ntk.train_readout(net, [np.zeros((32, 32))], lr=0.1, steps=5)
    assert np.all(tr.losses == 0)
    assert np.all(tr.a == 0)


def test_linear_arm_stays_in_cone_every_step(tiny):
    net = ntk.make_net(1, n_units=32, B=8, alpha=1.0, delta=DELTA)
    tr = ntk.train_readout(net, tiny, ntk.safe_lr(net, tiny), 50)
    assert np.max(tr.outside) < 1e-12
    for f in tiny:
        out = ntk.forward(net, ntk.cone_project(f, DELTA))
        assert ntk.outside_energy(out, DELTA) < 1e-12 * np.mean(out**2)


def test_loss_non_increasing(tiny):
    net = ntk.make_net(1, n_units=32, B=8, alpha=0.01, delta=DELTA)
    tr = ntk.train_readout(net, tiny, ntk.safe_lr(net, tiny), 100)
    assert np.all(np.diff(tr.losses) <= 1e-12 * tr.losses[0])
    assert tr.losses[-1] < tr.losses[0]


def test_loss_matches_direct_evaluation(tiny):
    net = ntk.make_net(1, n_units=16, B=8, alpha=0.01, delta=DELTA)
    tr = ntk.train_readout(net, tiny, ntk.safe_lr(net, tiny), 10)
    direct = np.mean([np.mean((ntk.forward(net, ntk.cone_project(f, DELTA)) - f) ** 2)
                      for f in tiny])
    assert tr.losses[-1] == pytest.approx(direct, rel=1e-9)


def test_step_size_check(tiny):
    net = ntk.make_net(1, n_units=16, B=8, delta=DELTA)
    lr = ntk.safe_lr(net, tiny, 1.0)
    with pytest.raises(ntk.StepSizeError):
        ntk.train_readout(net, tiny, lr * 1.01, 5)


def test_divergence_detected(tiny):
    net = ntk.make_net(1, n_units=16, B=8, delta=DELTA)
    lr = ntk.safe_lr(net, tiny, 1.0) * 3
    with pytest.raises(ntk.DivergenceError):
        ntk.train_readout(net, tiny, lr, 20, check_step=False)


def test_train_rejects_arguments(tiny):
    net = ntk.make_net(1, n_units=4, B=8)
    with pytest.raises(ValueError):
        ntk.train_readout(net, tiny, 0.0, 5)
    with pytest.raises(ValueError):
        ntk.train_readout(net, tiny, 0.1, 0)


def test_make_net_deterministic():
    a, b = ntk.make_net(5, n_units=4, B=6), ntk.make_net(5, n_units=4, B=6)
    assert all(np.array_equal(x.coef, y.coef) for x, y in zip(a.kernels, b.kernels))


def test_rho_transform_values():
    assert ntk.rho_transform(1.0, 0.01) == 1.0
    assert ntk.rho_transform(0.0, 0.0) == pytest.approx(1 / math.pi)
    assert ntk.rho_transform(0.0, 0.01) == pytest.approx(0.99**2 / (math.pi * 1.0001))
    assert ntk.rho_transform(-1.0, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_rho_transform_rejects():
    with pytest.raises(ValueError):
        ntk.rho_transform(1.01, 0.0)


@settings(max_examples=50)
@given(st.floats(-1, 1), st.floats(0, 0.99))
def test_rho_transform_dominates(rho, alpha):
    out = ntk.rho_transform(rho, alpha)
    assert out >= rho - 1e-15
    if rho < 1 - 1e-6:
        assert out > rho


@settings(max_examples=50)
@given(st.floats(-1, 1))
def test_rho_transform_identity_arm(rho):
    assert ntk.rho_transform(rho, 1.0) == rho


def test_mc_corr_check_matches():
    r, se = ntk.mc_corr_check(0.5, 0.01, 10**6, seed=1)
    assert abs(r - ntk.rho_transform(0.5, 0.01)) < 3 * se


def test_mc_corr_identity_and_one():
    r, se = ntk.mc_corr_check(0.3, 1.0, 10**6, seed=2)
    assert abs(r - 0.3) < 3 * se
    r, se = ntk.mc_corr_check(1.0, 0.01, 10**4, seed=3)
    assert r == 1.0


def test_mc_corr_rejects():
    with pytest.raises(ValueError):
        ntk.mc_corr_check(0.2, 0.0, 100)


def test_rho_delta_at_zero_offset():
    f = ntk.band_limited_dataset(1, 1, 32, 8)[0]
    assert ntk.rho_delta(f, f, np.zeros(2), DELTA, 8) == pytest.approx(1.0, abs=1e-14)


def test_rho_delta_bounded():
    f, h = ntk.band_limited_dataset(2, 2, 32, 8)
    s = np.random.default_rng(0).uniform(-1, 1, (200, 2))
    assert np.all(np.abs(ntk.rho_delta(f, h, s, DELTA, 8)) <= 1 + 1e-12)


def test_rho_delta_single_mode():
    z0 = (3, 1)
    f = mode_image(32, *z0)
    s = np.random.default_rng(1).uniform(-1, 1, (50, 2))
    got = ntk.rho_delta(f, f, s, DELTA, 8)
    assert np.allclose(got, np.cos(2 * np.pi * (s @ np.array(z0))), atol=1e-12)


def test_rho_delta_grid_matches_pointwise():
    f, h = ntk.band_limited_dataset(4, 2, 32, 8)
    grid_vals = ntk.rho_delta_grid(f, h, DELTA, 8)
    s = np.array([[5 / 32, 2 / 32], [0.0, 0.0], [31 / 32, 17 / 32]])
    point = ntk.rho_delta(f, h, s, DELTA, 8)
    assert np.allclose([grid_vals[2, 5], grid_vals[0, 0], grid_vals[17, 31]], point, atol=1e-12)


def test_rho_delta_degenerate():
    with pytest.raises(ValueError):
        ntk.rho_delta(mode_image(32, 0, 3), mode_image(32, 0, 3), np.zeros(2), DELTA, 8)


def test_c_zeta_single_image():
    f = ntk.band_limited_dataset(1, 1, 32, 8)[0]
    rep = ntk.c_zeta_check([f], DELTA, 8, [(0, 0), (1, 0)])
    mean = ntk.rho_transform(ntk.rho_delta_grid(f, f, DELTA, 8), ntk.DEFAULT_ALPHA).mean()
    assert rep.min_eigenvalues[0] == pytest.approx(mean, rel=1e-12)
    assert rep.min_eigenvalues[0] > 0
    assert rep.max_imag < 1e-10


def test_c_zeta_linear_arm_vanishes_outside_cone():
    data = ntk.band_limited_dataset(7, 3, 32, 8)
    rep = ntk.c_zeta_check(data, DELTA, 8, [(0, 5), (1, 6), (10, 0)], alpha=1.0)
    assert np.max(np.abs(rep.min_eigenvalues)) < 1e-12


def test_c_zeta_rejects_large_dataset():
    with pytest.raises(ValueError):
        ntk.c_zeta_check([np.zeros((8, 8))] * 17, DELTA, 2)


def test_small_s_fit():
    f = ntk.band_limited_dataset(11, 1)[0]
    fit = ntk.small_s_fit(f, DELTA)
    assert fit.A > 0
    assert fit.relative_error < 0.10
