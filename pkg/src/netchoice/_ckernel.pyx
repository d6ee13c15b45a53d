# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-draw sequence log-probabilities and scores."""

from libc.math cimport exp, log
from libc.stdlib cimport malloc, free

import numpy as np


def seq_loglik_grad(const double[:, ::1] X,
                    const long long[::1] sit_ptr,
                    const long long[::1] seq_ptr,
                    const long long[::1] chosen,
                    const double[:, :, ::1] betas,
                    double[:, ::1] log_s,
                    double[:, :, ::1] grad,
                    Py_ssize_t lo,
                    Py_ssize_t hi,
                    bint want_grad=True):
    """Fill ``log_s[n, r]`` and ``grad[n, r, :]`` for sequences ``lo <= n < hi``.

    ``log_s`` is the log of the product of chosen-alternative logit
    probabilities under coefficient draw ``betas[n, r]``; ``grad`` is its
    derivative with respect to that coefficient vector.
    """
    cdef Py_ssize_t K = X.shape[1]
    cdef Py_ssize_t R = betas.shape[1]
    cdef Py_ssize_t n, r, t, j, k, r0, r1, J, maxj = 1
    cdef double vmax, denom, ls, p, v
    cdef double *util
    cdef double *ex
    cdef double *acc
    cdef Py_ssize_t nsit = sit_ptr.shape[0] - 1

    for t in range(nsit):
        if sit_ptr[t + 1] - sit_ptr[t] > maxj:
            maxj = sit_ptr[t + 1] - sit_ptr[t]

    util = <double *> malloc(maxj * sizeof(double))
    ex = <double *> malloc(maxj * sizeof(double))
    acc = <double *> malloc(K * sizeof(double))
    if util == NULL or ex == NULL or acc == NULL:
        free(util)
        free(ex)
        free(acc)
        raise MemoryError()
    try:
        with nogil:
            for n in range(lo, hi):
                for r in range(R):
                    ls = 0.0
                    if want_grad:
                        for k in range(K):
                            grad[n, r, k] = 0.0
                    for t in range(seq_ptr[n], seq_ptr[n + 1]):
                        r0 = sit_ptr[t]
                        r1 = sit_ptr[t + 1]
                        J = r1 - r0
                        vmax = -1.0e308
                        for j in range(J):
                            v = 0.0
                            for k in range(K):
                                v = v + X[r0 + j, k] * betas[n, r, k]
                            util[j] = v
                            if v > vmax:
                                vmax = v
                        denom = 0.0
                        for j in range(J):
                            ex[j] = exp(util[j] - vmax)
                            denom = denom + ex[j]
                        ls = ls + (util[chosen[t] - r0] - vmax) - log(denom)
                        if want_grad:
                            for k in range(K):
                                acc[k] = 0.0
                            for j in range(J):
                                p = ex[j] / denom
                                for k in range(K):
                                    acc[k] = acc[k] + p * X[r0 + j, k]
                            for k in range(K):
                                grad[n, r, k] = grad[n, r, k] + X[chosen[t], k] - acc[k]
                    log_s[n, r] = ls
    finally:
        free(util)
        free(ex)
        free(acc)
