"""Shared test oracles, all independent of the library's fast paths."""

import math

import numpy as np


def finite_diff(f, x, step=1e-5):
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2 * step)
    return g


def rel_err(approx, exact, floor=1e-8):
    """Max relative error with an absolute floor for near-zero entries."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    return float(np.max(np.abs(approx - exact) / (np.abs(exact) + floor)))


def naive_matmul(a, b):
    a, b = np.asarray(a), np.asarray(b)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


def naive_conv2d(x, w, b=None, stride=1, padding=0):
    """Quadruple-loop cross-correlation, float64 throughout."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, oh, ow))
    for ni in range(n):
        for fi in range(f):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[
                        ni, :, i * stride : i * stride + kh, j * stride : j * stride + kw
                    ]
                    out[ni, fi, i, j] = float((patch * w[fi]).sum())
            if b is not None:
                out[ni, fi] += float(b[fi])
    return out


def naive_dft2(grid):
    """Direct O(N^4) two-dimensional DFT, unnormalized forward transform."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            s = 0.0 + 0.0j
            for m in range(h):
                for n in range(w):
                    ang = -2.0 * math.pi * (u * m / h + v * n / w)
                    s += grid[m, n] * complex(math.cos(ang), math.sin(ang))
            out[u, v] = s
    return out


def naive_dft2_rows(grid):
    """Direct DFT vectorized over pixels per bin; still independent of any
    radix decomposition. Use for the larger oracle comparisons."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    m = np.arange(h)[:, None]
    n = np.arange(w)[None, :]
    out = np.empty((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            ang = -2.0 * np.pi * (u * m / h + v * n / w)
            out[u, v] = np.sum(grid * np.exp(1j * ang))
    return out


def log_softmax_64(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy_64(logits, labels):
    ls = log_softmax_64(logits)
    rows = np.arange(len(labels))
    return float(-ls[rows, labels].mean())


def kl_64(p_logits, q_logits):
    lp = log_softmax_64(p_logits)
    lq = log_softmax_64(q_logits)
    return float((np.exp(lp) * (lp - lq)).sum(axis=-1).mean())
