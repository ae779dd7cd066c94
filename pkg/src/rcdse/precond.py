"""Skip-connection parameterizations around the raw network.

Denoiser::

    D(x, y, t) = c_skip x + c_out F(c_in x, c_in y, t)
    c_skip = sd^2 / (s^2 + sd^2),  c_out = s sd / sqrt(s^2 + sd^2),
    c_in = 1 / sqrt(s^2 + sd^2),   s = sigma(t)

Consistency model::

    f(x, y, t) = d_skip x + d_out F(x, y, t)

with the same family evaluated at ``s = max(sigma(t) - sigma(t_boundary), 0)``
and no input scaling. With ``t_boundary = t_min`` the boundary holds both at
t = 0 and on the first grid node.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .sde import SdeParams, expand_t, kernel_std, kernel_std_dt, kernel_var

DENOISER = "denoiser"
CONSISTENCY = "consistency"


@dataclass(frozen=True)
class ScalingFns:
    sigma_data: float = 0.5
    mode: str = DENOISER
    t_boundary: float = 0.0
    sde: SdeParams = SdeParams()

    def __post_init__(self):
        if self.mode not in (DENOISER, CONSISTENCY):
            raise ArgumentError(f"unknown scaling mode {self.mode!r}")
        if not self.sigma_data > 0:
            raise ArgumentError("sigma_data must be positive")


def denoiser_fns(sde, sigma_data=0.5):
    return ScalingFns(sigma_data, DENOISER, 0.0, sde)


def consistency_fns(sde, sigma_data=0.5):
    return ScalingFns(sigma_data, CONSISTENCY, sde.t_min, sde)


def _effective_sigma(t, fns):
    s = kernel_std(t, fns.sde)
    if fns.mode == CONSISTENCY and fns.t_boundary > 0:
        s = np.maximum(s - kernel_std(fns.t_boundary, fns.sde), 0.0)
    return s


def scalings(t, fns):
    """Return ``(skip, out, inp)`` at time(s) ``t``."""
    s = _effective_sigma(t, fns)
    sd = fns.sigma_data
    norm = np.sqrt(s * s + sd * sd)
    skip = sd * sd / (s * s + sd * sd)
    out = s * sd / norm
    if fns.mode == DENOISER:
        inp = 1.0 / norm
    else:
        inp = np.ones_like(s)
    return skip, out, inp


def scalings_dt(t, fns):
    """Analytic d/dt of ``(skip, out, inp)``; valid where the shift is active (t > t_boundary)."""
    s = _effective_sigma(t, fns)
    ds = kernel_std_dt(t, fns.sde)
    sd = fns.sigma_data
    n2 = s * s + sd * sd
    dskip = -2.0 * sd * sd * s * ds / n2 ** 2
    dout = sd * sd * sd * ds / n2 ** 1.5
    if fns.mode == DENOISER:
        dinp = -s * ds / n2 ** 1.5
    else:
        dinp = np.zeros_like(s)
    return dskip, dout, dinp


def _call_net(net, x, y, t, with_cache):
    if with_cache:
        return net.forward(x, y, t)
    if hasattr(net, "apply"):
        return net.apply(x, y, t), None
    return net(x, y, t), None


def _wrap(net, x, y, t, fns, with_cache):
    x = np.asarray(x, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if x.shape != y.shape:
        raise ArgumentError(f"shape mismatch: x{x.shape} vs y{y.shape}")
    skip, out, inp = scalings(t, fns)
    if np.all(out == 0.0):
        # exact boundary: the network does not contribute
        return x.copy(), None
    nd = x.ndim
    skip_b, out_b, inp_b = (expand_t(v, nd) for v in (skip, out, inp))
    if fns.mode == DENOISER:
        f, cache = _call_net(net, inp_b * x, inp_b * y, t, with_cache)
    else:
        f, cache = _call_net(net, x, y, t, with_cache)
    return skip_b * x + out_b * f, (out_b, cache)


def denoiser_forward(net, x, y, t, fns):
    return _wrap(net, x, y, t, fns, False)[0]


def consistency_forward(net, x, y, t, fns):
    return _wrap(net, x, y, t, fns, False)[0]


def wrapped_forward(net, x, y, t, fns):
    """Forward through either wrapper keeping what :func:`wrapped_backward` needs."""
    return _wrap(net, x, y, t, fns, True)


def wrapped_backward(net, grad_out, cache):
    """Parameter gradient given dLoss/dOutput (packed as Re + i Im)."""
    if cache is None:
        return np.zeros(net.n_params)
    out_b, net_cache = cache
    return net.backward(out_b * grad_out, net_cache)


def denoiser_to_score(denoised, x, t, sde):
    """Score implied by a denoiser output: ``(D - x) / sigma(t)^2``."""
    return (denoised - x) / expand_t(kernel_var(t, sde), np.ndim(x))
