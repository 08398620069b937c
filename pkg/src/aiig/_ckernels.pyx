# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled single-sample kernels used inside rollouts and the belief filter.

Every function here has a numpy twin in ``_pykernels`` with the same
signature; ``aiig.kernels`` picks one at import time.
"""
import numpy as np

from libc.math cimport exp, tanh


def dense_forward_one(const double[::1] x, list weights, list biases):
    """ReLU MLP forward for one input vector; returns the final pre-activation."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t layer, i, j, n_in, n_out
    cdef const double[:, ::1] W
    cdef const double[::1] b
    cdef double[::1] cur = np.array(x, dtype=np.float64)
    cdef double[::1] out
    cdef double xi
    for layer in range(n_layers):
        W = weights[layer]
        b = biases[layer]
        n_in = W.shape[0]
        n_out = W.shape[1]
        if cur.shape[0] != n_in:
            raise ValueError(f"layer {layer}: expected {n_in} inputs, got {cur.shape[0]}")
        out = np.empty(n_out, dtype=np.float64)
        for j in range(n_out):
            out[j] = 0.0
        for i in range(n_in):
            xi = cur[i]
            for j in range(n_out):
                out[j] += xi * W[i, j]
        for j in range(n_out):
            out[j] += b[j]
            if layer < n_layers - 1 and out[j] < 0.0:
                out[j] = 0.0
        cur = out
    return np.asarray(cur)


cdef inline double _sigmoid(double v) nogil:
    if v >= 0.0:
        return 1.0 / (1.0 + exp(-v))
    cdef double e = exp(v)
    return e / (1.0 + e)


def gru_step_one(const double[::1] x, const double[::1] h,
                 const double[:, ::1] Wz, const double[:, ::1] Wr, const double[:, ::1] Wn,
                 const double[:, ::1] Uz, const double[:, ::1] Ur, const double[:, ::1] Un,
                 const double[::1] bz, const double[::1] br, const double[::1] bn):
    """One gated-recurrent step for a single input; returns the new hidden state."""
    cdef Py_ssize_t n_in = Wz.shape[0], H = Wz.shape[1]
    cdef Py_ssize_t i, j
    if x.shape[0] != n_in or h.shape[0] != H:
        raise ValueError("gru_step_one: shape mismatch")
    cdef double[::1] az = np.empty(H), ar = np.empty(H), an = np.empty(H)
    cdef double[::1] rh = np.empty(H)
    cdef double[::1] out = np.empty(H)
    cdef double v
    for j in range(H):
        az[j] = 0.0
        ar[j] = 0.0
        an[j] = 0.0
    for i in range(n_in):
        v = x[i]
        for j in range(H):
            az[j] += v * Wz[i, j]
            ar[j] += v * Wr[i, j]
            an[j] += v * Wn[i, j]
    cdef double[::1] uz = np.zeros(H), ur = np.zeros(H)
    for i in range(H):
        v = h[i]
        for j in range(H):
            uz[j] += v * Uz[i, j]
            ur[j] += v * Ur[i, j]
    for j in range(H):
        az[j] = _sigmoid(az[j] + uz[j] + bz[j])
        ar[j] = _sigmoid(ar[j] + ur[j] + br[j])
    for i in range(H):
        rh[i] = ar[i] * h[i]
    cdef double[::1] un = np.zeros(H)
    for i in range(H):
        v = rh[i]
        for j in range(H):
            un[j] += v * Un[i, j]
    for j in range(H):
        v = tanh(an[j] + un[j] + bn[j])
        out[j] = (1.0 - az[j]) * v + az[j] * h[j]
    return np.asarray(out)


def bayes_filter(const double[::1] prior, const double[:, ::1] likelihoods, double floor):
    """Sequential posterior over hidden types.

    Row ``t`` of the result is the belief after absorbing likelihood rows
    ``0..t-1``; row 0 is the prior.
    """
    cdef Py_ssize_t T = likelihoods.shape[0], M = likelihoods.shape[1]
    cdef Py_ssize_t t, m
    if prior.shape[0] != M:
        raise ValueError("bayes_filter: prior/likelihood width mismatch")
    post_arr = np.empty((T + 1, M), dtype=np.float64)
    cdef double[:, ::1] post = post_arr
    cdef double total, lik
    for m in range(M):
        post[0, m] = prior[m]
    for t in range(T):
        total = 0.0
        for m in range(M):
            lik = likelihoods[t, m]
            if lik < floor:
                lik = floor
            post[t + 1, m] = post[t, m] * lik
            total += post[t + 1, m]
        for m in range(M):
            post[t + 1, m] /= total
    return post_arr
