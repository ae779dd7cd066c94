# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: counter-based RNG streams and Euler-Maruyama paths.

Draw-for-draw twin of ``_kernels_py``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, cos, sin, pow, M_PI
from libc.stdint cimport uint64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_M53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t seed, uint64_t i) noexcept nogil:
    return (<double>(_mix(seed + (i + 1) * GOLDEN) >> 11) + 1.0) * TWO_M53


def splitmix64(uint64_t seed, uint64_t counter, Py_ssize_t n):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = _mix(seed + (counter + <uint64_t>i + 1) * GOLDEN)
    return out


def uniform(uint64_t seed, uint64_t counter, Py_ssize_t n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = _uniform(seed, counter + <uint64_t>i)
    return out


cdef inline void _cnormal(uint64_t seed, uint64_t j, double* re, double* im) noexcept nogil:
    cdef double r = sqrt(-log(_uniform(seed, j)))
    cdef double ph = 2.0 * M_PI * _uniform(seed, j + 1)
    re[0] = r * cos(ph)
    im[0] = r * sin(ph)


def complex_normal(uint64_t seed, uint64_t counter, Py_ssize_t n):
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(n, dtype=np.complex128)
    cdef double[::1] flat = out.view(np.float64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            _cnormal(seed, counter + 2 * <uint64_t>i, &flat[2 * i], &flat[2 * i + 1])
    return out


def em_forward(x0, y, double gamma, double c, double k, double t_max,
               Py_ssize_t n_steps, uint64_t seed, uint64_t counter):
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.complex128).ravel().view(np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.complex128).ravel().view(np.float64)
    cdef Py_ssize_t m = x0v.shape[0] // 2
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(m, dtype=np.complex128)
    cdef double[::1] xv = out.view(np.float64)
    cdef double dt = t_max / n_steps
    cdef double sq_dt = sqrt(dt)
    cdef double sq_c = sqrt(c)
    cdef double t, g, zr, zi
    cdef Py_ssize_t s, j
    cdef uint64_t base
    with nogil:
        for j in range(2 * m):
            xv[j] = x0v[j]
        for s in range(n_steps):
            t = s * dt
            g = sq_c * pow(k, t)
            base = counter + 2 * <uint64_t>s * <uint64_t>m
            for j in range(m):
                _cnormal(seed, base + 2 * <uint64_t>j, &zr, &zi)
                xv[2 * j] = xv[2 * j] + gamma * (yv[2 * j] - xv[2 * j]) * dt + g * sq_dt * zr
                xv[2 * j + 1] = xv[2 * j + 1] + gamma * (yv[2 * j + 1] - xv[2 * j + 1]) * dt + g * sq_dt * zi
    return out
