"""Conditional forward SDE ``dx = gamma (y - x) dt + sqrt(c) k^t dw``.

Times may be a scalar or a 1-d array with one entry per leading-axis item
of the state; the helpers broadcast them over the remaining axes.
"""
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import ArgumentError
from .numerics import check_same_shape, complex_gaussian_like


@dataclass(frozen=True)
class SdeParams:
    gamma: float = 1.5
    c: float = 0.51
    k: float = 10.0
    t_min: float = 0.03
    t_max: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ArgumentError(f"gamma must be positive, got {self.gamma}")
        if not self.c > 0:
            raise ArgumentError(f"c must be positive, got {self.c}")
        if not self.k > 1:
            raise ArgumentError(f"k must exceed 1, got {self.k}")
        if not 0 < self.t_min < self.t_max <= 1:
            raise ArgumentError(
                f"need 0 < t_min < t_max <= 1, got t_min={self.t_min}, t_max={self.t_max}"
            )

    def to_dict(self):
        return asdict(self)


def _check_t(t, params, lo=0.0):
    t = np.asarray(t, dtype=np.float64)
    eps = 1e-12
    if np.any(t < lo - eps) or np.any(t > params.t_max + eps) or not np.all(np.isfinite(t)):
        raise ArgumentError(f"time outside [{lo}, {params.t_max}]: {t}")
    return t


def expand_t(t, ndim):
    """Reshape a scalar or per-item time vector to broadcast over an ndim array."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    return t.reshape(t.shape + (1,) * (ndim - t.ndim))


def drift(x, y, params):
    check_same_shape(x, y)
    return params.gamma * (np.asarray(y) - np.asarray(x))


def diffusion_coeff(t, params):
    t = _check_t(t, params)
    return math.sqrt(params.c) * params.k ** t


def kernel_mean(x0, y, t, params):
    check_same_shape(x0, y, ("x0", "y"))
    t = _check_t(t, params)
    w = expand_t(np.exp(-params.gamma * t), np.ndim(x0))
    return w * x0 + (1.0 - w) * y


def kernel_var(t, params):
    t = _check_t(t, params)
    g, k, c = params.gamma, params.k, params.c
    # k^{2t} - e^{-2 gamma t} = e^{-2 gamma t} expm1(2t(gamma + log k)), stable near 0
    a = 2.0 * t * (g + math.log(k))
    return c * np.exp(-2.0 * g * t) * np.expm1(a) / (2.0 * (g + math.log(k)))


def kernel_std(t, params):
    return np.sqrt(kernel_var(t, params))


def kernel_std_dt(t, params):
    """d sigma / dt, for t > 0."""
    t = _check_t(t, params)
    g, k, c = params.gamma, params.k, params.c
    dvar = c * (2.0 * math.log(k) * k ** (2 * t) + 2.0 * g * np.exp(-2.0 * g * t))
    dvar /= 2.0 * (g + math.log(k))
    return dvar / (2.0 * kernel_std(t, params))


def sample_perturbed(x0, y, t, params, rng, z=None):
    """Draw ``x_t = mean + sigma(t) z``; pass ``z`` to reuse a noise draw."""
    mean = kernel_mean(x0, y, t, params)
    if z is None:
        z = complex_gaussian_like(rng, mean.shape)
    std = expand_t(kernel_std(t, params), mean.ndim)
    return mean + std * z


def analytic_score(x, x0, y, t, params):
    """Exact score ``-(x - mean) / sigma^2`` of the Gaussian perturbation kernel."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ArgumentError("score is singular at t <= 0 (sigma = 0)")
    mean = kernel_mean(x0, y, t, params)
    check_same_shape(x, mean, ("x", "mean"))
    return -(x - mean) / expand_t(kernel_var(t, params), mean.ndim)


def euler_maruyama_forward(x0, y, params, n_steps, rng, t_end=None):
    """Simulate the forward SDE from 0 to ``t_end`` (default ``t_max``); returns the endpoint.

    Runs on the active kernel backend and consumes ``2 * n_steps * x0.size``
    counters of ``rng``.
    """
    if n_steps < 1:
        raise ArgumentError(f"n_steps must be >= 1, got {n_steps}")
    x0 = np.asarray(x0, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    check_same_shape(x0, y, ("x0", "y"))
    t_end = params.t_max if t_end is None else float(_check_t(t_end, params))
    start = rng._take(2 * n_steps * x0.size)
    out = kernels.em_forward(
        x0, y, params.gamma, params.c, params.k, t_end, int(n_steps), rng.seed, start
    )
    return out.reshape(x0.shape)
