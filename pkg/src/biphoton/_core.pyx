# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics must match ``biphoton._pycore`` exactly."""
import numpy as np

cimport numpy as cnp
from libc.stdint cimport int64_t, uint8_t

cnp.import_array()


def correlate_counts(const int64_t[::1] a, const int64_t[::1] b,
                     int64_t bin_width, int64_t half_bins, int64_t offset):
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0]
    cdef int64_t nbins = 2 * half_bins + 1
    cdef int64_t edge = nbins * bin_width          # doubled half-span
    cdef int64_t two_w = 2 * bin_width
    cdef cnp.ndarray[int64_t, ndim=1] out = np.zeros(nbins, dtype=np.int64)
    cdef int64_t[::1] counts = out
    cdef Py_ssize_t i, j, lo = 0
    cdef int64_t d2
    for i in range(na):
        while lo < nb and 2 * (b[lo] - a[i] - offset) < -edge:
            lo += 1
        j = lo
        while j < nb:
            d2 = 2 * (b[j] - a[i] - offset)
            if d2 >= edge:
                break
            counts[(d2 + edge) // two_w] += 1
            j += 1
    return out


def dead_time_mask(const double[::1] t, double dead_time):
    cdef Py_ssize_t n = t.shape[0], i
    cdef cnp.ndarray[uint8_t, ndim=1] out = np.zeros(n, dtype=np.uint8)
    cdef uint8_t[::1] keep = out
    cdef double last
    if n == 0:
        return out.astype(bool)
    keep[0] = 1
    last = t[0]
    for i in range(1, n):
        if t[i] - last >= dead_time:
            keep[i] = 1
            last = t[i]
    return out.astype(bool)


def ar1_complex(double complex x0, double a, const double complex[::1] noise):
    cdef Py_ssize_t n = noise.shape[0], i
    cdef cnp.ndarray[double complex, ndim=1] out = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] x = out
    cdef double complex prev = x0
    for i in range(n):
        prev = a * prev + noise[i]
        x[i] = prev
    return out
