"""Shared test oracles: naive loop implementations and finite differences.

These stay deliberately independent of the library code paths they check.
"""

import numpy as np


def matmul_oracle(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def conv2d_oracle(x, kernels, bias, pad):
    """Direct six-loop cross-correlation on a single (C,H,W) image."""
    c, h, w = x.shape
    f = kernels.shape[0]
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad))
    xp[:, pad:pad + h, pad:pad + w] = x
    ho, wo = h + 2 * pad - 2, w + 2 * pad - 2
    out = np.zeros((f, ho, wo))
    for fi in range(f):
        for i in range(ho):
            for j in range(wo):
                s = 0.0
                for ci in range(c):
                    for u in range(3):
                        for v in range(3):
                            s += xp[ci, i + u, j + v] * kernels[fi, ci, u, v]
                out[fi, i, j] = s + bias[fi]
    return out


def maxpool2_oracle(x):
    """Explicit window scan on a single (C,H,W) image."""
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ci in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ci, i, j] = x[ci, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
    return out


def central_diff(f, arr, h=1e-5):
    """Central finite-difference gradient of scalar f() w.r.t. arr in place."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        dn = f()
        flat[i] = old
        gf[i] = (up - dn) / (2 * h)
    return g


def assert_grad_close(ad, fd, rel=1e-4, abs_near_zero=1e-7):
    ad = np.asarray(ad).reshape(-1)
    fd = np.asarray(fd).reshape(-1)
    err = np.abs(ad - fd)
    ok = err <= abs_near_zero + rel * np.abs(fd)
    assert ok.all(), (
        f"gradient mismatch at {np.argmax(~ok)}: ad={ad[~ok][:5]} fd={fd[~ok][:5]}")
