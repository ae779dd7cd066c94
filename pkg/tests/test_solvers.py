import math

import numpy as np
import pytest

from rcdse import precond, sde, solvers
from rcdse.errors import ArgumentError
from rcdse.numerics import Rng
from rcdse.solvers import EULER, HEUN, TimeGrid

from conftest import crandn


def oracle(x0, params):
    return lambda x, y, t: sde.analytic_score(x, x0, y, t, params)


def exact_flow(x_from, x0, y, t_from, t_to, params):
    # the PF-ODE of a point mass maps mu + sigma z at one time to mu + sigma z at another
    mu_f = sde.kernel_mean(x0, y, t_from, params)
    mu_t = sde.kernel_mean(x0, y, t_to, params)
    return mu_t + sde.kernel_std(t_to, params) / sde.kernel_std(t_from, params) * (x_from - mu_f)


def test_grid():
    g = TimeGrid.for_sde(sde.SdeParams(), 30)
    assert g.n == 30 and g[1] == 0.03 and g[30] == 1.0
    assert np.all(np.diff(g.nodes) > 0)
    with pytest.raises(ArgumentError):
        TimeGrid.make(0.1, 1.0, 1)
    with pytest.raises(ArgumentError):
        TimeGrid((0.5, 0.5))
    sq = TimeGrid.make(0.0, 1.0, 5, spacing=lambda n: np.linspace(0, 1, n) ** 2)
    assert sq.nodes == (0.0, 0.0625, 0.25, 0.5625, 1.0)


def test_rhs_examples(sde_params, nprng):
    x, y = crandn(nprng, 3, 4), crandn(nprng, 3, 4)
    zero = lambda x, y, t: np.zeros_like(x)
    np.testing.assert_allclose(solvers.pf_ode_rhs(x, y, 0.5, zero, sde_params),
                               sde_params.gamma * (y - x), rtol=1e-15)
    a = lambda x, y, t: 2.0 * x
    b = lambda x, y, t: y - 1j
    ab = lambda x, y, t: 2.0 * x + y - 1j
    r = lambda f: solvers.pf_ode_rhs(x, y, 0.5, f, sde_params)
    np.testing.assert_allclose(r(ab), r(a) + r(b) - r(zero), atol=1e-12)


def test_rhs_scalar_linear_coefficient(sde_params):
    # with the kernel score, rhs = (-gamma + g^2 / (2 s^2)) (x - mu) + gamma (y - mu)
    x0, y, t, x = np.array([0.3 + 0.1j]), np.array([1.0 - 0.5j]), 0.6, np.array([0.9 + 0.2j])
    g2 = sde.diffusion_coeff(t, sde_params) ** 2
    s2 = sde.kernel_var(t, sde_params)
    mu = sde.kernel_mean(x0, y, t, sde_params)
    want = (-sde_params.gamma + g2 / (2 * s2)) * (x - mu) + sde_params.gamma * (y - mu)
    np.testing.assert_allclose(solvers.pf_ode_rhs(x, y, t, oracle(x0, sde_params), sde_params), want,
                               rtol=1e-13)


def test_step_fixed_point_and_errors(sde_params, nprng):
    y = crandn(nprng, 2, 3)
    zero = lambda x, y, t: np.zeros_like(x)
    for kind in (EULER, HEUN):
        assert np.array_equal(solvers.ode_step(y, y, 0.8, 0.5, zero, kind, sde_params), y)
        with pytest.raises(ArgumentError):
            solvers.ode_step(y, y, 0.5, 0.5, zero, kind, sde_params)
    with pytest.raises(ArgumentError):
        solvers.ode_step(y, y, 0.8, 0.5, zero, "rk4", sde_params)


def test_heun_is_trapezoid_on_linear_rhs(sde_params, nprng):
    # score linear in x: rhs(x, t) = A(t) x + b(t); Heun = x + h/2 (A0 x + b0 + A1 (x + h (A0 x + b0)) + b1)
    y = crandn(nprng, 2, 2)
    x = crandn(nprng, 2, 2)
    score = lambda x, y, t: -3.0 * t * x + 0.5 * y
    t0, t1 = 0.9, 0.6
    h = t1 - t0

    def coeffs(t):
        g2 = sde.diffusion_coeff(t, sde_params) ** 2
        return -sde_params.gamma + 1.5 * g2 * t, sde_params.gamma * y - 0.25 * g2 * y

    a0, b0 = coeffs(t0)
    a1, b1 = coeffs(t1)
    want = x + 0.5 * h * (a0 * x + b0 + a1 * (x + h * (a0 * x + b0)) + b1)
    got = solvers.ode_step(x, y, t0, t1, score, HEUN, sde_params)
    np.testing.assert_allclose(got, want, rtol=1e-13)


@pytest.mark.parametrize("kind,order", [(EULER, 1.0), (HEUN, 2.0)])
def test_convergence_order(sde_params, kind, order):
    x0, y = np.array([0.4 - 0.2j]), np.array([-0.3 + 0.8j])
    t_lo, t_hi = 0.3, 1.0
    x_start = sde.kernel_mean(x0, y, t_hi, sde_params) + sde.kernel_std(t_hi, sde_params) * (0.7 + 0.4j)
    exact = exact_flow(x_start, x0, y, t_hi, t_lo, sde_params)
    errs = []
    ns = [8, 16, 32, 64]
    for n in ns:
        nodes = np.linspace(t_lo, t_hi, n + 1)
        x = x_start
        for i in range(n, 0, -1):
            x = solvers.ode_step(x, y, nodes[i], nodes[i - 1], oracle(x0, sde_params), kind, sde_params)
        errs.append(abs(x[0] - exact[0]))
    slope = -np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert abs(slope - order) < 0.3, (slope, errs)


def test_robust_step_degenerate_and_moments(sde_params):
    x0, y = np.array([0.2 + 0.1j]), np.array([0.5 - 0.5j])
    x = np.full((1, 10000), 0.3 + 0.3j)
    yy = np.broadcast_to(y, x.shape)
    score = oracle(np.broadcast_to(x0, x.shape), sde_params)
    t0, t1 = 0.7, 0.5
    det = solvers.ode_step(x, yy, t0, t1, score, HEUN, sde_params)
    assert np.array_equal(solvers.robust_ode_step(x, yy, t0, t1, score, HEUN, sde_params, None,
                                                  eps=np.zeros_like(x)), det)
    out = solvers.robust_ode_step(x, yy, t0, t1, score, HEUN, sde_params, Rng(5))
    inj = out - det
    var = sde.diffusion_coeff(t0, sde_params) ** 2 * (t0 - t1)
    se = math.sqrt(var / x.size / 2)
    assert abs(inj.real.mean()) < 3 * se and abs(inj.imag.mean()) < 3 * se
    assert np.mean(np.abs(inj) ** 2) == pytest.approx(var, rel=0.05)


def test_teacher_sample_n2_is_one_step(sde_params, nprng):
    y = crandn(nprng, 2, 3)
    x0 = crandn(nprng, 2, 3)
    grid = TimeGrid.for_sde(sde_params, 2)
    out = solvers.teacher_sample(y, grid, oracle(x0, sde_params), HEUN, sde_params, Rng(3))
    x_t = solvers.prior_sample(y, sde_params, Rng(3))
    want = solvers.ode_step(x_t, y, sde_params.t_max, sde_params.t_min, oracle(x0, sde_params), HEUN,
                            sde_params)
    np.testing.assert_array_equal(out, want)


def test_teacher_sample_reaches_closed_form(sde_params, nprng):
    y = crandn(nprng, 4, 5)
    x0 = crandn(nprng, 4, 5)
    p = sde_params
    x_t = solvers.prior_sample(y, p, Rng(9))
    # with the point-mass score the flow ends at mu_delta + sigma_delta/sigma_T (x_T - mu_T)
    want = exact_flow(x_t, x0, y, p.t_max, p.t_min, p)
    for kind, order in ((EULER, 1), (HEUN, 2)):
        errs = [np.max(np.abs(solvers.teacher_sample(y, TimeGrid.for_sde(p, n), oracle(x0, p), kind, p,
                                                     Rng(9)) - want)) for n in (31, 61, 121)]
        # the error shrinks by 2^order per halving of the step
        for a, b in zip(errs, errs[1:]):
            assert abs(math.log2(a / b) - order) < 0.3, (kind, errs)
        if kind == HEUN:
            assert errs[-1] < 1e-3
    again = solvers.teacher_sample(y, TimeGrid.for_sde(p, 31), oracle(x0, p), HEUN, p, Rng(9))
    assert np.max(np.abs(again - want)) == errs[0]


def test_rhs_eval_count(sde_params, nprng):
    y = crandn(nprng, 1, 2)
    for kind, per in ((EULER, 1), (HEUN, 2)):
        calls = []

        def score(x, y, t):
            calls.append(t)
            return np.zeros_like(x)

        solvers.teacher_sample(y, TimeGrid.for_sde(sde_params, 7), score, kind, sde_params, Rng(0))
        assert len(calls) == 6 * per == solvers.rhs_evals(kind, 7)


class CountingZero:
    def __init__(self):
        self.calls = 0

    def apply(self, x, y, t):
        self.calls += 1
        return np.zeros_like(x)


def test_one_step_enhance(sde_params, nprng):
    y = crandn(nprng, 2, 3, 4)
    net = CountingZero()
    # huge sigma_data forces c_skip(T) to 1 up to rounding, so the wrapper passes x_T through
    fns = precond.consistency_fns(sde_params, 1e9)
    out = solvers.one_step_enhance(net, y, fns, Rng(11))
    assert net.calls == 1
    np.testing.assert_allclose(out, solvers.prior_sample(y, sde_params, Rng(11)), rtol=1e-12)
    assert np.array_equal(out, solvers.one_step_enhance(net, y, fns, Rng(11)))


def test_reverse_sde_sample_shape_and_determinism(sde_params, nprng):
    y = crandn(nprng, 2, 3)
    x0 = crandn(nprng, 2, 3)
    g = TimeGrid.for_sde(sde_params, 10)
    a = solvers.reverse_sde_sample(y, g, oracle(x0, sde_params), sde_params, Rng(1))
    b = solvers.reverse_sde_sample(y, g, oracle(x0, sde_params), sde_params, Rng(1))
    assert a.shape == y.shape and np.array_equal(a, b)
