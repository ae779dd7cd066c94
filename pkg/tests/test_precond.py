import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcdse import precond, sde
from rcdse.errors import ArgumentError
from rcdse.network import Network, NetworkSpec
from rcdse.numerics import Rng, finite_diff_gradient, rel_error
from rcdse.precond import ScalingFns

from conftest import crandn


def zero_net(x, y, t):
    return np.zeros_like(x)


def test_scalings_boundary_exact(sde_params):
    for fns in (precond.denoiser_fns(sde_params), ScalingFns(0.5, "consistency", 0.0, sde_params)):
        skip, out, _ = precond.scalings(0.0, fns)
        assert skip == 1.0 and out == 0.0
    skip, out, inp = precond.scalings(sde_params.t_min, precond.consistency_fns(sde_params))
    assert skip == 1.0 and out == 0.0 and inp == 1.0


@pytest.mark.parametrize("sd", [0.5, 0.2, 1.3])
def test_scalings_formulas(sde_params, sd):
    fns = precond.denoiser_fns(sde_params, sd)
    for t in (0.1, 0.6, 1.0):
        s = math.sqrt(sde.kernel_var(t, sde_params))
        skip, out, inp = precond.scalings(t, fns)
        assert skip == pytest.approx(sd ** 2 / (s ** 2 + sd ** 2), rel=1e-14)
        assert out == pytest.approx(s * sd / math.sqrt(s ** 2 + sd ** 2), rel=1e-14)
        assert inp == pytest.approx(1 / math.sqrt(s ** 2 + sd ** 2), rel=1e-14)


def test_sigma_equals_sigma_data_gives_half(sde_params):
    # choose sigma_data = sigma(t) so the substitution example applies
    t = 0.4
    sd = float(sde.kernel_std(t, sde_params))
    skip, out, _ = precond.scalings(t, precond.denoiser_fns(sde_params, sd))
    assert skip == pytest.approx(0.5, rel=1e-14)
    assert out == pytest.approx(sd / math.sqrt(2), rel=1e-14)


def test_large_sigma_limit():
    fns = precond.denoiser_fns(sde.SdeParams(c=5.0, k=50.0), 1e-3)
    assert precond.scalings(1.0, fns)[0] < 1e-6


def test_consistency_mode_shifted(sde_params):
    fns = precond.consistency_fns(sde_params, 0.5)
    t = 0.7
    s = sde.kernel_std(t, sde_params) - sde.kernel_std(sde_params.t_min, sde_params)
    skip, out, inp = precond.scalings(t, fns)
    assert skip == pytest.approx(0.25 / (s * s + 0.25), rel=1e-14)
    assert inp == 1.0


@pytest.mark.parametrize("mode", ["denoiser", "consistency"])
def test_scalings_dt_matches_fd(sde_params, mode):
    fns = ScalingFns(0.5, mode, sde_params.t_min if mode == "consistency" else 0.0, sde_params)
    h = 1e-6
    for t in np.linspace(sde_params.t_min + 0.01, sde_params.t_max - 0.01, 7):
        ana = precond.scalings_dt(t, fns)
        lo, hi = precond.scalings(t - h, fns), precond.scalings(t + h, fns)
        for a, l, u in zip(ana, lo, hi):
            assert abs(a - (u - l) / (2 * h)) < 1e-6 * max(1.0, abs(a))


def test_wrappers_boundary_return_input(sde_params, nprng):
    x, y = crandn(nprng, 5, 3), crandn(nprng, 5, 3)

    def nan_net(a, b, t):
        return np.full_like(a, np.nan)

    out = precond.consistency_forward(nan_net, x, y, 0.0, precond.consistency_fns(sde_params))
    assert np.array_equal(out, x) and out is not x
    assert np.array_equal(precond.denoiser_forward(nan_net, x, y, 0.0, precond.denoiser_fns(sde_params)), x)


def test_zero_stub_gives_skip_times_x(sde_params, nprng):
    x, y = crandn(nprng, 4, 6), crandn(nprng, 4, 6)
    for fns in (precond.denoiser_fns(sde_params), precond.consistency_fns(sde_params)):
        skip, _, _ = precond.scalings(0.5, fns)
        np.testing.assert_array_equal(precond.denoiser_forward(zero_net, x, y, 0.5, fns)
                                      if fns.mode == "denoiser" else
                                      precond.consistency_forward(zero_net, x, y, 0.5, fns), skip * x)


def test_denoiser_elementwise_oracle(sde_params, nprng):
    x, y = crandn(nprng, 2, 3), crandn(nprng, 2, 3)
    seen = {}

    def stub(a, b, t):
        seen["a"], seen["b"] = a, b
        return 0.3 * a - 2j * b + 1.0

    fns = precond.denoiser_fns(sde_params)
    t = 0.35
    out = precond.denoiser_forward(stub, x, y, t, fns)
    skip, cout, cin = precond.scalings(t, fns)
    for i in range(2):
        for j in range(3):
            f = 0.3 * (cin * x[i, j]) - 2j * (cin * y[i, j]) + 1.0
            assert abs(out[i, j] - (skip * x[i, j] + cout * f)) < 1e-14
    np.testing.assert_array_equal(seen["b"], cin * y)


def test_consistency_passes_unscaled_inputs(sde_params, nprng):
    x, y = crandn(nprng, 2, 3), crandn(nprng, 2, 3)
    seen = {}

    def stub(a, b, t):
        seen["a"], seen["b"] = a, b
        return a

    precond.consistency_forward(stub, x, y, 0.8, precond.consistency_fns(sde_params))
    assert np.array_equal(seen["a"], x) and np.array_equal(seen["b"], y)


def test_shape_mismatch(sde_params, nprng):
    with pytest.raises(ArgumentError):
        precond.denoiser_forward(zero_net, crandn(nprng, 2, 3), crandn(nprng, 3, 2), 0.5,
                                 precond.denoiser_fns(sde_params))


@given(st.floats(0.05, 1.0), st.integers(0, 2**31))
def test_denoiser_score_duality(t, seed):
    p = sde.SdeParams()
    rng = np.random.default_rng(seed)
    x, y = crandn(rng, 3, 2), crandn(rng, 3, 2)

    def stub(a, b, tt):
        return np.tanh(a.real) + 1j * np.sin(b.imag)

    d = precond.denoiser_forward(stub, x, y, t, precond.denoiser_fns(p))
    s = precond.denoiser_to_score(d, x, t, p)
    np.testing.assert_allclose(x + sde.kernel_var(t, p) * s, d, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("mode", ["denoiser", "consistency"])
def test_wrapper_backprop_matches_fd(sde_params, mode):
    spec = NetworkSpec(n_freq=4, hidden_dim=5, n_layers=1, time_embed_dim=4)
    net = Network.init(spec, Rng(2), out_scale=1.0)
    r = np.random.default_rng(3)
    x, y = crandn(r, 2, 4, 3), crandn(r, 2, 4, 3)
    w = crandn(r, 2, 4, 3)
    t = np.array([0.3, 0.8])
    fns = precond.denoiser_fns(sde_params) if mode == "denoiser" else precond.consistency_fns(sde_params)

    def loss(theta):
        net.params.assign(theta)
        out = precond.denoiser_forward(net, x, y, t, fns)
        return float(np.sum((np.conj(w) * out).real))

    theta0 = net.params.theta.copy()
    fd = finite_diff_gradient(loss, theta0, 1e-6)
    net.params.assign(theta0)
    out, cache = precond.wrapped_forward(net, x, y, t, fns)
    g = precond.wrapped_backward(net, w, cache)
    assert rel_error(g, fd) < 1e-4
