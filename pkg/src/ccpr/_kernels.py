"""Compiled coupled density-evolution loop for D-fold-family receivers.

Mirrors ``evolution._CoupledKernel`` operation by operation (same window
order, same scale factors) so both paths agree to rounding.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _fold_prob(x, folds, weights):
    # sum_D pi_D * P(Poisson(x) <= D - 1)
    e = np.exp(-x)
    out = 0.0
    for m in range(folds.size):
        term = 1.0
        acc = 1.0
        for t in range(1, folds[m]):
            term = term * x / t
            acc += term
        out += weights[m] * (e * acc)
    return out


@njit(cache=True)
def _horner(c, x):
    acc = c[c.size - 1]
    for i in range(c.size - 2, -1, -1):
        acc = c[i] + acc * x
    return acc


@njit(cache=True)
def run_batch(G, mean, load_scale, succ_scale, folds, fold_w, fold_n, lam_c, w, max_iter, tol):
    """Iterate every batch member of ``G`` (shape ``(B, K, L)``) from all-ones.

    ``load_scale``/``succ_scale`` are ``(J, K)``; receiver class ``j`` uses
    ``folds[j, :fold_n[j]]`` with weights ``fold_w[j, :fold_n[j]]``.
    """
    B, K, L = G.shape
    J = load_scale.shape[0]
    q_out = np.ones((B, K, L))
    p_out = np.ones((B, K, L))
    iters = np.zeros(B, dtype=np.int64)
    conv = np.zeros(B, dtype=np.bool_)
    q = np.empty((K, L))
    a = np.empty((K, L))
    S = np.empty((K, L))
    T = np.empty((K, L))
    p = np.empty((K, L))
    for b in range(B):
        q[:, :] = 1.0
        it = 0
        while it < max_iter:
            for k in range(K):
                for l in range(L):
                    a[k, l] = q[k, l] * G[b, k, l] * mean[k]
            for k in range(K):
                for l in range(L):
                    s = a[k, l]
                    for t in range(1, w):
                        s += a[k, (l - t) % L]
                    S[k, l] = s
            T[:, :] = 0.0
            for j in range(J):
                nf = fold_n[j]
                for l in range(L):
                    x = 0.0
                    for k in range(K):
                        x += S[k, l] * load_scale[j, k]
                    P = _fold_prob(x, folds[j, :nf], fold_w[j, :nf])
                    for k in range(K):
                        T[k, l] += succ_scale[j, k] * P
            delta = 0.0
            for k in range(K):
                for l in range(L):
                    s = T[k, l]
                    for t in range(1, w):
                        s += T[k, (l + t) % L]
                    v = 1.0 - s
                    if v < 0.0:
                        v = 0.0
                    elif v > 1.0:
                        v = 1.0
                    p[k, l] = v
                    qn = _horner(lam_c[k], v)
                    if qn < 0.0:
                        qn = 0.0
                    elif qn > 1.0:
                        qn = 1.0
                    d = abs(qn - q[k, l])
                    if d > delta:
                        delta = d
                    q[k, l] = qn
            it += 1
            if delta < tol:
                conv[b] = True
                break
        q_out[b] = q
        p_out[b] = p
        iters[b] = it
    return q_out, p_out, conv, iters
