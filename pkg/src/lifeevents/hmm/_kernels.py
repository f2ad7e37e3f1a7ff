"""Compiled message-passing kernels.

All kernels take per-step emission log-likelihoods ``ll`` of shape ``(T, K)``
(rows of zeros encode missing steps) and a row-stochastic ``P`` of shape
``(K, K)`` restricted to the states that are allowed.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def forward_loglik(ll, P, pi0):
    T, K = ll.shape
    alpha = np.empty(K)
    m = ll[0].max()
    c = 0.0
    for k in range(K):
        alpha[k] = pi0[k] * np.exp(ll[0, k] - m)
        c += alpha[k]
    total = np.log(c) + m
    for k in range(K):
        alpha[k] /= c
    nxt = np.empty(K)
    for t in range(1, T):
        m = ll[t].max()
        c = 0.0
        for j in range(K):
            s = 0.0
            for i in range(K):
                s += alpha[i] * P[i, j]
            nxt[j] = s * np.exp(ll[t, j] - m)
            c += nxt[j]
        total += np.log(c) + m
        for j in range(K):
            alpha[j] = nxt[j] / c
    return total


@njit(cache=True)
def forward_backward_sample(ll, P, pi0, u):
    """Draw a state path from its posterior (forward filtering, backward sampling).

    ``u`` holds ``T`` uniforms so that the draw is reproducible from the caller's RNG.
    """
    T, K = ll.shape
    alpha = np.empty((T, K))
    m = ll[0].max()
    c = 0.0
    for k in range(K):
        alpha[0, k] = pi0[k] * np.exp(ll[0, k] - m)
        c += alpha[0, k]
    for k in range(K):
        alpha[0, k] /= c
    for t in range(1, T):
        m = ll[t].max()
        c = 0.0
        for j in range(K):
            s = 0.0
            for i in range(K):
                s += alpha[t - 1, i] * P[i, j]
            alpha[t, j] = s * np.exp(ll[t, j] - m)
            c += alpha[t, j]
        for j in range(K):
            alpha[t, j] /= c
    z = np.empty(T, dtype=np.int64)
    w = np.empty(K)
    for k in range(K):
        w[k] = alpha[T - 1, k]
    z[T - 1] = _categorical(w, u[T - 1])
    for t in range(T - 2, -1, -1):
        nxt = z[t + 1]
        for k in range(K):
            w[k] = alpha[t, k] * P[k, nxt]
        z[t] = _categorical(w, u[t])
    return z


@njit(cache=True)
def _categorical(w, u):
    total = 0.0
    for k in range(w.shape[0]):
        total += w[k]
    target = u * total
    acc = 0.0
    for k in range(w.shape[0]):
        acc += w[k]
        if acc > target:
            return k
    for k in range(w.shape[0] - 1, -1, -1):
        if w[k] > 0:
            return k
    return w.shape[0] - 1


@njit(cache=True)
def viterbi(ll, logP, logpi0):
    T, K = ll.shape
    delta = np.empty(K)
    nxt = np.empty(K)
    back = np.empty((T, K), dtype=np.int64)
    for k in range(K):
        delta[k] = logpi0[k] + ll[0, k]
    for t in range(1, T):
        for j in range(K):
            best = -np.inf
            arg = 0
            for i in range(K):
                v = delta[i] + logP[i, j]
                if v > best:
                    best = v
                    arg = i
            nxt[j] = best + ll[t, j]
            back[t, j] = arg
        for j in range(K):
            delta[j] = nxt[j]
    path = np.empty(T, dtype=np.int64)
    best = -np.inf
    arg = 0
    for k in range(K):
        if delta[k] > best:
            best = delta[k]
            arg = k
    path[T - 1] = arg
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


@njit(cache=True)
def transition_counts(z, K):
    counts = np.zeros((K, K))
    for t in range(1, z.shape[0]):
        counts[z[t - 1], z[t]] += 1.0
    return counts


@njit(cache=True)
def gaussian_resid_loglik(Y, X, W, Linv, logdet):
    """log N(y_t; W_k x_t, Sigma_k) for all t, k given inverse Cholesky factors."""
    n, d = Y.shape
    K = W.shape[0]
    p = X.shape[1]
    c = d * np.log(2 * np.pi)
    out = np.empty((n, K))
    r = np.empty(d)
    for k in range(K):
        for t in range(n):
            for i in range(d):
                acc = Y[t, i]
                for j in range(p):
                    acc -= W[k, i, j] * X[t, j]
                r[i] = acc
            q = 0.0
            for i in range(d):
                w = 0.0
                for j in range(i + 1):
                    w += Linv[k, i, j] * r[j]
                q += w * w
            out[t, k] = -0.5 * (q + logdet[k] + c)
    return out
