# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; must agree bit for bit with ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t
from libc.math cimport fabs, INFINITY

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t C1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t C2 = 0x94D049BB133111EBULL


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * C1
    z = (z ^ (z >> 27)) * C2
    return z ^ (z >> 31)


def counter_uniforms(uint64_t seed, Py_ssize_t path_start, Py_ssize_t n_paths, Py_ssize_t n_draws):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n_paths, n_draws), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t p, c
    cdef uint64_t key, h
    cdef double scale = 1.0 / 9007199254740992.0
    with nogil:
        for p in range(n_paths):
            key = mix64(seed + GOLDEN * <uint64_t>(path_start + p + 1))
            for c in range(n_draws):
                h = mix64(key ^ (<uint64_t>c * C1 + C2))
                o[p, c] = (<double>((h >> 11) + 1)) * scale
    return out


def fd_derivatives(double[:, ::1] v, double invdx, double inv2dx, double invdx2):
    cdef Py_ssize_t R = v.shape[0], K1 = v.shape[1], r, k
    vx_arr = np.zeros((R, K1), dtype=np.float64)
    vxx_arr = np.zeros((R, K1), dtype=np.float64)
    cdef double[:, ::1] vx = vx_arr
    cdef double[:, ::1] vxx = vxx_arr
    with nogil:
        for r in range(R):
            for k in range(1, K1 - 1):
                vx[r, k] = (v[r, k + 1] - v[r, k - 1]) * inv2dx
                vxx[r, k] = (v[r, k + 1] - 2.0 * v[r, k] + v[r, k - 1]) * invdx2
            vx[r, 0] = (v[r, 1] - v[r, 0]) * invdx
            vx[r, K1 - 1] = (v[r, K1 - 1] - v[r, K1 - 2]) * invdx
    return vx_arr, vxx_arr


def explicit_step(double[:, ::1] v, double[:, ::1] vxx, double[:, ::1] gen, double[::1] half_a, double dtau):
    cdef Py_ssize_t R = v.shape[0], K1 = v.shape[1], r, k
    out_arr = np.empty((R, K1), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double big = 0.0, a
    with nogil:
        for r in range(R):
            for k in range(1, K1 - 1):
                out[r, k] = v[r, k] + dtau * (half_a[k] * vxx[r, k] + gen[r, k])
            out[r, 0] = 2.0 * out[r, 1] - out[r, 2]
            out[r, K1 - 1] = 2.0 * out[r, K1 - 2] - out[r, K1 - 3]
            for k in range(K1):
                a = fabs(out[r, k])
                if a != a:
                    big = INFINITY
                elif a > big:
                    big = a
    return out_arr, big
