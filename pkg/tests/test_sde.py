import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from rcdse import sde
from rcdse.errors import ArgumentError
from rcdse.numerics import Rng, finite_diff_gradient
from rcdse.sde import SdeParams

from conftest import crandn


def var_by_quadrature(t, p):
    # v(t) = int_0^t exp(-2 gamma (t - s)) g(s)^2 ds, the variance ODE solved by quadrature
    return quad(lambda s: math.exp(-2 * p.gamma * (t - s)) * p.c * p.k ** (2 * s), 0.0, t,
                epsabs=0, epsrel=1e-13)[0]


def test_params_validation():
    for bad in (dict(gamma=0), dict(c=-1), dict(k=1.0), dict(t_min=0.0), dict(t_min=0.5, t_max=0.4),
                dict(t_max=1.5)):
        with pytest.raises(ArgumentError):
            SdeParams(**bad)


def test_drift_examples(sde_params, nprng):
    x = crandn(nprng, 3, 4)
    assert np.all(sde.drift(x, x, sde_params) == 0)
    assert sde.drift(np.array(0.0), np.array(1.0), SdeParams(gamma=2.0)) == 2.0
    y = crandn(nprng, 3, 4)
    d = sde.drift(x, y, sde_params)
    for i in range(3):
        for j in range(4):
            assert d[i, j] == sde_params.gamma * (y[i, j] - x[i, j])
    with pytest.raises(ArgumentError):
        sde.drift(x, y[:2], sde_params)


def test_diffusion_examples(sde_params):
    assert sde.diffusion_coeff(0.0, sde_params) == pytest.approx(math.sqrt(sde_params.c), rel=1e-15)
    p = SdeParams(c=1.0, k=10.0)
    assert sde.diffusion_coeff(0.5, p) == pytest.approx(3.16227766016838, rel=1e-12)
    ts = np.linspace(0, 1, 50)
    assert np.all(np.diff(sde.diffusion_coeff(ts, sde_params)) > 0)
    with pytest.raises(ArgumentError):
        sde.diffusion_coeff(1.2, sde_params)
    with pytest.raises(ArgumentError):
        sde.diffusion_coeff(-0.1, sde_params)


def test_kernel_mean_examples(sde_params, nprng):
    x0, y = crandn(nprng, 5), crandn(nprng, 5)
    assert np.array_equal(sde.kernel_mean(x0, y, 0.0, sde_params), x0)
    far = SdeParams(gamma=30.0)
    assert math.exp(-30.0) < 1e-12
    np.testing.assert_allclose(sde.kernel_mean(x0, y, 1.0, far), y, atol=1e-12)
    assert sde.kernel_mean(np.array(1.0), np.array(0.0), 0.4, SdeParams()) == pytest.approx(
        0.548811636094026, rel=1e-13)


def test_kernel_mean_convex_weight_monotone(sde_params):
    ts = np.linspace(0, 1, 40)
    w = sde.kernel_mean(np.ones(40), np.zeros(40), ts, sde_params)
    assert np.all((w > 0) & (w <= 1)) and np.all(np.diff(w) < 0)


@pytest.mark.parametrize("t", [1e-6, 0.03, 0.25, 0.5, 1.0])
def test_kernel_var_matches_quadrature(sde_params, t):
    assert sde.kernel_var(t, sde_params) == pytest.approx(var_by_quadrature(t, sde_params), rel=1e-9)


def test_kernel_std_zero_and_positive(sde_params):
    assert sde.kernel_std(0.0, sde_params) == 0.0
    assert np.all(sde.kernel_std(np.linspace(1e-4, 1, 30), sde_params) > 0)


def test_default_sigma_values():
    p = SdeParams()
    assert sde.kernel_std(1.0, p) == pytest.approx(math.sqrt(var_by_quadrature(1.0, p)), rel=1e-10)
    assert sde.kernel_std(p.t_min, p) > 0


def test_kernel_std_dt_finite_difference(sde_params):
    for t in (0.05, 0.3, 0.9):
        h = 1e-6
        fd = (sde.kernel_std(t + h, sde_params) - sde.kernel_std(t - h, sde_params)) / (2 * h)
        assert sde.kernel_std_dt(t, sde_params) == pytest.approx(fd, rel=1e-6)


def test_sample_perturbed_zero_time_exact(sde_params, nprng):
    x0, y = crandn(nprng, 6), crandn(nprng, 6)
    assert np.array_equal(sde.sample_perturbed(x0, y, 0.0, sde_params, Rng(0)), x0)


def test_sample_perturbed_moments(sde_params):
    n, t = 10_000, 0.4
    x0 = np.full(n, 0.7 - 0.2j)
    y = np.full(n, -0.3 + 0.5j)
    xt = sde.sample_perturbed(x0, y, t, sde_params, Rng(11))
    mean = sde.kernel_mean(x0[:1], y[:1], t, sde_params)[0]
    var = sde.kernel_var(t, sde_params)
    se = math.sqrt(var / 2 / n)
    assert abs(xt.mean().real - mean.real) < 3 * se
    assert abs(xt.mean().imag - mean.imag) < 3 * se
    assert np.mean(np.abs(xt - mean) ** 2) == pytest.approx(var, rel=0.05)


def test_per_item_times(sde_params, nprng):
    x0, y = crandn(nprng, 3, 2, 4), crandn(nprng, 3, 2, 4)
    ts = np.array([0.1, 0.5, 0.9])
    m = sde.kernel_mean(x0, y, ts, sde_params)
    for i, t in enumerate(ts):
        np.testing.assert_array_equal(m[i], sde.kernel_mean(x0[i], y[i], t, sde_params))


def test_analytic_score_examples(sde_params, nprng):
    x0, y = crandn(nprng, 4), crandn(nprng, 4)
    mu = sde.kernel_mean(x0, y, 0.3, sde_params)
    assert np.all(sde.analytic_score(mu, x0, y, 0.3, sde_params) == 0)
    # scalar case x - mu = 0.2 at the time where sigma^2 = 0.04
    t4 = brentq(lambda t: sde.kernel_var(t, sde_params) - 0.04, 1e-6, 1.0, xtol=1e-15)
    mu1 = sde.kernel_mean(x0[:1], y[:1], t4, sde_params)
    assert sde.analytic_score(mu1 + 0.2, x0[:1], y[:1], t4, sde_params)[0] == pytest.approx(-5.0, rel=1e-9)
    with pytest.raises(ArgumentError):
        sde.analytic_score(mu, x0, y, 0.0, sde_params)


def test_analytic_score_is_log_density_gradient(sde_params):
    x0, y, t = np.array([0.4 + 0.1j]), np.array([-0.2 + 0.3j]), 0.35
    var = sde.kernel_var(t, sde_params)
    mu = sde.kernel_mean(x0, y, t, sde_params)[0]

    def logp(p):
        # circular complex normal: log p = -|x - mu|^2 / var + const
        return -((p[0] - mu.real) ** 2 + (p[1] - mu.imag) ** 2) / var

    x = np.array([0.1, -0.05])
    g = finite_diff_gradient(logp, x, 1e-6)
    # packed convention: d/dRe + i d/dIm = 2 * score for the complex density above
    score = sde.analytic_score(np.array([x[0] + 1j * x[1]]), x0, y, t, sde_params)[0]
    assert abs(g[0] + 1j * g[1] - 2 * score) / abs(2 * score) < 1e-6


@given(st.floats(0.05, 1.0), st.integers(0, 2**32))
def test_score_oracle_identity(t, seed):
    p = SdeParams()
    rng = np.random.default_rng(seed)
    x0, y, z = (rng.standard_normal(5) + 1j * rng.standard_normal(5) for _ in range(3))
    xt = sde.sample_perturbed(x0, y, t, p, None, z=z)
    np.testing.assert_allclose(sde.analytic_score(xt, x0, y, t, p), -z / sde.kernel_std(t, p),
                               rtol=1e-9, atol=1e-9)


def test_em_deterministic_limit():
    p = SdeParams(c=1e-30)
    x0, y = np.array([1.0 + 0j]), np.array([0.0 + 0j])
    exact = sde.kernel_mean(x0, y, 1.0, p)[0]
    errs = []
    for n in (50, 100, 200, 400):
        errs.append(abs(sde.euler_maruyama_forward(x0, y, p, n, Rng(0))[0] - exact))
    slopes = -np.diff(np.log(errs)) / np.log(2)
    assert np.all(np.abs(slopes - 1.0) < 0.3)
    assert errs[-1] < 5 * p.gamma ** 2 / 400


def test_em_moments_match_kernel(sde_params):
    n = 10_000
    x0 = np.full(n, 0.5 + 0.5j)
    y = np.full(n, -0.5 + 0.0j)
    for t in (0.25, 1.0):
        xt = sde.euler_maruyama_forward(x0, y, sde_params, 1000, Rng(5), t_end=t)
        mu = sde.kernel_mean(x0[:1], y[:1], t, sde_params)[0]
        assert abs(xt.mean() - mu) / abs(mu) < 0.01 + 3 * math.sqrt(sde.kernel_var(t, sde_params) / n) / abs(mu)
        assert np.var(xt) == pytest.approx(sde.kernel_var(t, sde_params), rel=0.05)


def test_em_consumes_documented_counters():
    r = Rng(3)
    sde.euler_maruyama_forward(np.zeros(7, complex), np.zeros(7, complex), SdeParams(), 10, r)
    assert r.counter == 2 * 10 * 7
    with pytest.raises(ArgumentError):
        sde.euler_maruyama_forward(np.zeros(2), np.zeros(2), SdeParams(), 0, r)
