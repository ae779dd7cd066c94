"""Probability-flow ODE integration for the teacher and one-step student sampling.

``score_fn(x, y, t)`` is any callable returning the score; the learned
teacher is wrapped by :func:`teacher_score`, tests use ``sde.analytic_score``.
"""
from dataclasses import dataclass

import numpy as np

from . import precond, sde
from .errors import ArgumentError
from .numerics import complex_gaussian_like

EULER = "euler"
HEUN = "heun"
SOLVERS = (EULER, HEUN)


def uniform_spacing(n):
    return np.linspace(0.0, 1.0, n)


@dataclass(frozen=True)
class TimeGrid:
    nodes: tuple

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        if nodes.size < 2:
            raise ArgumentError("time grid needs at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ArgumentError("time grid must be strictly increasing")

    @classmethod
    def make(cls, t_min, t_max, n, spacing=uniform_spacing):
        """Grid on ``[t_min, t_max]`` with exact endpoints; ``spacing(n)`` maps onto [0, 1]."""
        if n < 2:
            raise ArgumentError(f"need n >= 2, got {n}")
        frac = np.asarray(spacing(n), dtype=np.float64)
        nodes = t_min + (t_max - t_min) * frac
        nodes[0], nodes[-1] = t_min, t_max
        return cls(tuple(float(v) for v in nodes))

    @classmethod
    def for_sde(cls, params, n, spacing=uniform_spacing):
        return cls.make(params.t_min, params.t_max, n, spacing)

    @property
    def n(self):
        return len(self.nodes)

    def __getitem__(self, i):
        """1-based node access: ``grid[1] == t_min``, ``grid[n] == t_max``."""
        return np.asarray(self.nodes)[np.asarray(i) - 1]


def pf_ode_rhs(x, y, t, score_fn, params):
    """``gamma (y - x) - 0.5 g(t)^2 score(x, y, t)``."""
    g2 = sde.expand_t(sde.diffusion_coeff(t, params) ** 2, np.ndim(x))
    return sde.drift(x, y, params) - 0.5 * g2 * score_fn(x, y, t)


def ode_step(x, y, t_from, t_to, score_fn, kind, params):
    """One reverse-time step from ``t_from`` down to ``t_to``."""
    t_from = np.asarray(t_from, dtype=np.float64)
    t_to = np.asarray(t_to, dtype=np.float64)
    if np.any(t_to >= t_from):
        raise ArgumentError("ode_step integrates backwards: need t_to < t_from")
    if kind not in SOLVERS:
        raise ArgumentError(f"unknown solver {kind!r}")
    h = sde.expand_t(t_to - t_from, np.ndim(x))
    d1 = pf_ode_rhs(x, y, t_from, score_fn, params)
    if kind == EULER:
        return x + h * d1
    x_pred = x + h * d1
    d2 = pf_ode_rhs(x_pred, y, t_to, score_fn, params)
    return x + 0.5 * h * (d1 + d2)


def injected_noise_std(t_from, t_to, params):
    """``g(t_from) sqrt(t_from - t_to)``; the diffusion coefficient is taken at the step start."""
    t_from = np.asarray(t_from, dtype=np.float64)
    return sde.diffusion_coeff(t_from, params) * np.sqrt(t_from - np.asarray(t_to))


def robust_ode_step(x, y, t_from, t_to, score_fn, kind, params, rng, eps=None):
    """:func:`ode_step` plus ``g(t) sqrt(dt) eps`` with circular complex ``eps``."""
    out = ode_step(x, y, t_from, t_to, score_fn, kind, params)
    if eps is None:
        eps = complex_gaussian_like(rng, np.shape(out))
    std = sde.expand_t(injected_noise_std(t_from, t_to, params), np.ndim(out))
    return out + std * eps


def prior_sample(y, params, rng):
    """``x_T ~ N_C(y, sigma(T)^2 I)``."""
    return y + sde.kernel_std(params.t_max, params) * complex_gaussian_like(rng, np.shape(y))


def teacher_sample(y, grid, score_fn, kind, params, rng):
    """Integrate the PF-ODE from the prior at ``grid[n]`` down to ``grid[1]``."""
    y = np.asarray(y, dtype=np.complex128)
    x = prior_sample(y, params, rng)
    nodes = grid.nodes
    for i in range(len(nodes) - 1, 0, -1):
        x = ode_step(x, y, nodes[i], nodes[i - 1], score_fn, kind, params)
    return x


def reverse_sde_sample(y, grid, score_fn, params, rng):
    """Predictor-only Euler-Maruyama on the reverse SDE (no corrector)."""
    y = np.asarray(y, dtype=np.complex128)
    x = prior_sample(y, params, rng)
    nodes = grid.nodes
    for i in range(len(nodes) - 1, 0, -1):
        t, dt = nodes[i], nodes[i] - nodes[i - 1]
        g = sde.diffusion_coeff(t, params)
        rev = sde.drift(x, y, params) - g * g * score_fn(x, y, t)
        x = x - rev * dt + g * np.sqrt(dt) * complex_gaussian_like(rng, x.shape)
    return x


def one_step_enhance(model, y, fns, rng):
    """Single consistency-model evaluation at ``t = T`` from a prior draw."""
    y = np.asarray(y, dtype=np.complex128)
    x_t = prior_sample(y, fns.sde, rng)
    return precond.consistency_forward(model, x_t, y, fns.sde.t_max, fns)


def teacher_score(net, fns):
    """Score implied by a denoiser-parameterized network."""

    def score(x, y, t):
        d = precond.denoiser_forward(net, x, y, t, fns)
        return precond.denoiser_to_score(d, x, t, fns.sde)

    return score


def rhs_evals(kind, n_nodes):
    return (n_nodes - 1) * (1 if kind == EULER else 2)
