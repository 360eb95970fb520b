"""Shared oracles and checkers, independent of the library's own fast paths."""

from __future__ import annotations

import numpy as np

from ftta import tensor as T


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def numerical_grads(func, arrays, h=1e-4):
    """Central-difference gradients of a scalar function of in-place arrays."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            f_plus = func()
            arr[idx] = orig - h
            f_minus = func()
            arr[idx] = orig
            g[idx] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-2):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(build, leaves, h=1e-4, floor=1e-2):
    """Compare backward() gradients of build() against central differences.

    ``build`` re-runs the forward graph from the (mutated-in-place) leaf
    tensors and returns the scalar loss tensor. Returns the worst relative
    error across all leaves.
    """
    T.zero_grads(leaves)
    loss = build()
    T.backward(loss)
    analytic = [leaf.grad.copy() for leaf in leaves]
    T.zero_grads(leaves)

    numeric = numerical_grads(lambda: float(build().data), [leaf.data for leaf in leaves], h=h)
    return max(max_relative_error(a, n, floor=floor) for a, n in zip(analytic, numeric))


# ---------------------------------------------------------------------------
# independent spectral oracles (no np.fft)
# ---------------------------------------------------------------------------

def direct_dft2(image):
    """Plain DFT summation in matrix form: W_h @ x @ W_w."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    rows = np.arange(h)
    cols = np.arange(w)
    w_h = np.exp(-2j * np.pi * np.outer(rows, rows) / h)
    w_w = np.exp(-2j * np.pi * np.outer(cols, cols) / w)
    return w_h @ image @ w_w


def dft2_quad_loops(image):
    """Literal quadruple-loop DFT for very small grids."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for m in range(h):
                for n in range(w):
                    acc += image[m, n] * np.exp(-2j * np.pi * (u * m / h + v * n / w))
            out[u, v] = acc
    return out


def shift_center(spectrum):
    """Move DC to (H//2, W//2) by index rolling (no np.fft.fftshift)."""
    h, w = spectrum.shape
    return np.roll(np.roll(spectrum, h // 2, axis=0), w // 2, axis=1)


# ---------------------------------------------------------------------------
# naive network-layer oracles
# ---------------------------------------------------------------------------

def conv2d_loops(x, k, b, stride=1, padding=0):
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = b[fi]
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[ni, ci, i * stride + u, j * stride + v] * k[fi, ci, u, v]
                    out[ni, fi, i, j] = acc
    return out


def matmul_loops(x, w, b):
    n, d = x.shape
    k = w.shape[0]
    out = np.zeros((n, k))
    for ni in range(n):
        for ki in range(k):
            acc = b[ki]
            for di in range(d):
                acc += x[ni, di] * w[ki, di]
            out[ni, ki] = acc
    return out


def global_avg_pool_loops(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c))
    for ni in range(n):
        for ci in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[ni, ci, i, j]
            out[ni, ci] = acc / (h * w)
    return out
