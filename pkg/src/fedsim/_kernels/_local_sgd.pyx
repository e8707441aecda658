# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled local-SGD kernels; semantics mirror ``_reference`` exactly."""

from libc.math cimport sin

import numpy as np


def quad_local_sgd(double[:, ::1] hessian, double[::1] center, double[::1] w0,
                   double eta, int n_steps, double[:, ::1] noise):
    cdef Py_ssize_t dim = w0.shape[0]
    w_arr = np.array(w0, dtype=np.float64, copy=True)
    total_arr = np.zeros(dim, dtype=np.float64)
    g_arr = np.empty(dim, dtype=np.float64)
    cdef double[::1] w = w_arr
    cdef double[::1] total = total_arr
    cdef double[::1] g = g_arr
    cdef Py_ssize_t i, j, k
    cdef double acc
    for k in range(n_steps):
        for i in range(dim):
            acc = 0.0
            for j in range(dim):
                acc += hessian[i, j] * (w[j] - center[j])
            g[i] = acc + noise[k, i]
        for i in range(dim):
            total[i] += g[i]
            w[i] -= eta * g[i]
    return total_arr, w_arr


def trig_local_sgd(double[::1] center, double curvature, double amplitude,
                   double[::1] w0, double eta, int n_steps, double[:, ::1] noise):
    cdef Py_ssize_t dim = w0.shape[0]
    w_arr = np.array(w0, dtype=np.float64, copy=True)
    total_arr = np.zeros(dim, dtype=np.float64)
    cdef double[::1] w = w_arr
    cdef double[::1] total = total_arr
    cdef Py_ssize_t i, k
    cdef double g
    for k in range(n_steps):
        for i in range(dim):
            g = curvature * (w[i] - center[i]) - amplitude * sin(w[i]) + noise[k, i]
            total[i] += g
            w[i] -= eta * g
    return total_arr, w_arr
