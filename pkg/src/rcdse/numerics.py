"""Seeded randomness, complex-array validation and finite differences.

Random streams
--------------
Every stochastic draw in the package goes through :class:`Rng`, a
counter-based generator:

* draw ``i`` of a stream with key ``seed`` is the 64-bit integer
  ``splitmix64_mix(seed + (i + 1) * 0x9E3779B97F4A7C15)`` (all arithmetic
  mod 2**64, ``mix`` = the SplitMix64 finalizer with shifts 30/27/31 and
  multipliers 0xBF58476D1CE4E5B9 / 0x94D049BB133111EB);
* a uniform is ``((draw >> 11) + 1) * 2**-53``, which lies in (0, 1];
* a unit circular complex normal consumes two consecutive uniforms
  ``u1, u2`` and equals ``sqrt(-ln u1) * exp(2j*pi*u2)``, so
  ``E|z|^2 = 1`` and real/imag parts are independent N(0, 1/2);
* child streams are keyed ``splitmix64_mix(seed ^ splitmix64_mix(key + G))``.

The integer stream and uniforms are bit-reproducible on any platform; the
Gaussian transforms are reproducible up to libm rounding.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ArgumentError, NumericalError

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z):
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


@dataclass
class Rng:
    """Counter-based random stream. Not thread-safe; use :meth:`spawn` per worker."""

    seed: int
    counter: int = 0

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK

    def _take(self, n):
        start = self.counter
        self.counter += n
        return start

    def uniform(self, n):
        return kernels.uniform(self.seed, self._take(n), n)

    def complex_normal(self, n):
        return kernels.complex_normal(self.seed, self._take(2 * n), n)

    def normal(self, n):
        """n independent real N(0, 1) draws."""
        z = self.complex_normal((n + 1) // 2)
        return (np.sqrt(2.0) * z.view(np.float64))[:n]

    def integers(self, low, high, n):
        """n integers uniform on ``[low, high]`` inclusive."""
        if high < low:
            raise ArgumentError(f"empty integer range [{low}, {high}]")
        span = high - low + 1
        u = self.uniform(n)
        # u is in (0, 1]; ceil maps it onto 1..span exactly
        return low - 1 + np.ceil(u * span).astype(np.int64)

    def spawn(self, key):
        """Independent child stream derived from this stream's seed and ``key``."""
        return Rng(_mix64(self.seed ^ _mix64(int(key) + _GOLDEN)))

    def state(self):
        return {"seed": self.seed, "counter": self.counter}


def as_complex(a, name="array"):
    """Validate and return ``a`` as a finite complex128 array."""
    a = np.asarray(a, dtype=np.complex128)
    if a.size == 0:
        raise ArgumentError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name} has non-finite entries")
    return a


def check_same_shape(a, b, names=("x", "y")):
    if np.shape(a) != np.shape(b):
        raise ArgumentError(
            f"shape mismatch: {names[0]}{np.shape(a)} vs {names[1]}{np.shape(b)}"
        )


def sample_complex_gaussian(rng, rows, cols, std=1.0):
    """rows x cols matrix of circular complex normals with ``E|z|^2 = std**2``."""
    if std < 0:
        raise ArgumentError(f"std must be non-negative, got {std}")
    if rows * cols < 1:
        raise ArgumentError(f"need at least one entry, got {rows}x{cols}")
    z = rng.complex_normal(rows * cols).reshape(rows, cols)
    return std * z


def complex_gaussian_like(rng, shape, std=1.0):
    """Like :func:`sample_complex_gaussian` for an arbitrary shape."""
    n = int(np.prod(shape))
    return sample_complex_gaussian(rng, 1, n, std).reshape(shape)


def finite_diff_gradient(f, p, h=1e-5):
    """Central-difference gradient of scalar ``f`` at the real vector ``p``."""
    p = np.array(p, dtype=np.float64)
    grad = np.empty_like(p)
    flat = p.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(p)
        flat[i] = orig - h
        fm = f(p)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value at index {i}")
        out[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(a, b):
    """Max-norm relative error, guarded against all-zero references."""
    a = np.asarray(a)
    b = np.asarray(b)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-30)
    return float(np.max(np.abs(a - b)) / scale)
