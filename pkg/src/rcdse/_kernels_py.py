"""Pure numpy implementation of the hot kernels.

Mirrors ``_kernels.pyx`` draw-for-draw: both backends consume the same
counter indices, so integer streams and uniforms are bit-identical and
Gaussian/EM outputs agree to libm rounding.
"""
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 2.0 ** -53
_TWO_PI = 2.0 * np.pi


def splitmix64(seed, counter, n):
    """Counter-based SplitMix64: draw i is ``mix(seed + (counter + i + 1) * GOLDEN)``."""
    idx = np.arange(n, dtype=np.uint64) + np.uint64(counter + 1)
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + idx * GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform(seed, counter, n):
    # 53 high bits, shifted into (0, 1] so log() never sees zero
    z = splitmix64(seed, counter, n)
    return ((z >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_M53


def complex_normal(seed, counter, n):
    """n unit circular complex normals (E|z|^2 = 1) from 2n uniforms."""
    u = uniform(seed, counter, 2 * n)
    r = np.sqrt(-np.log(u[0::2]))
    phase = _TWO_PI * u[1::2]
    out = np.empty(n, dtype=np.complex128)
    out.real = r * np.cos(phase)
    out.imag = r * np.sin(phase)
    return out


def em_forward(x0, y, gamma, c, k, t_max, n_steps, seed, counter):
    """Euler-Maruyama for dx = gamma (y - x) dt + sqrt(c) k^t dw, from t=0 to t_max.

    Step s draws its M normals at counters ``counter + 2 * s * M``.
    """
    x0 = np.ascontiguousarray(x0, dtype=np.complex128).ravel()
    y = np.ascontiguousarray(y, dtype=np.complex128).ravel()
    m = x0.size
    dt = t_max / n_steps
    sq_dt = np.sqrt(dt)
    sq_c = np.sqrt(c)
    xr = x0.real.copy()
    xi = x0.imag.copy()
    for s in range(n_steps):
        t = s * dt
        g = sq_c * k ** t
        z = complex_normal(seed, counter + 2 * s * m, m)
        xr = xr + gamma * (y.real - xr) * dt + g * sq_dt * z.real
        xi = xi + gamma * (y.imag - xi) * dt + g * sq_dt * z.imag
    return xr + 1j * xi
