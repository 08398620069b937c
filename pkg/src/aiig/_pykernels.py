"""Numpy implementations of the rollout kernels (fallback for ``_ckernels``)."""

from __future__ import annotations

import numpy as np


def dense_forward_one(x, weights, biases):
    cur = np.asarray(x, dtype=np.float64)
    last = len(weights) - 1
    for layer, (W, b) in enumerate(zip(weights, biases)):
        if cur.shape[0] != W.shape[0]:
            raise ValueError(
                f"layer {layer}: expected {W.shape[0]} inputs, got {cur.shape[0]}"
            )
        cur = cur @ W + b
        if layer < last:
            cur = np.maximum(cur, 0.0)
    return cur


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def gru_step_one(x, h, Wz, Wr, Wn, Uz, Ur, Un, bz, br, bn):
    if x.shape[0] != Wz.shape[0] or h.shape[0] != Wz.shape[1]:
        raise ValueError("gru_step_one: shape mismatch")
    z = _sigmoid(x @ Wz + h @ Uz + bz)
    r = _sigmoid(x @ Wr + h @ Ur + br)
    n = np.tanh(x @ Wn + (r * h) @ Un + bn)
    return (1.0 - z) * n + z * h


def bayes_filter(prior, likelihoods, floor):
    prior = np.asarray(prior, dtype=np.float64)
    likelihoods = np.maximum(np.asarray(likelihoods, dtype=np.float64), floor)
    if likelihoods.ndim != 2 or likelihoods.shape[1] != prior.shape[0]:
        raise ValueError("bayes_filter: prior/likelihood width mismatch")
    post = np.empty((likelihoods.shape[0] + 1, prior.shape[0]))
    post[0] = prior
    for t, lik in enumerate(likelihoods):
        unnorm = post[t] * lik
        post[t + 1] = unnorm / unnorm.sum()
    return post
