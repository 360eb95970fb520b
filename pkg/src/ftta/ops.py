"""Network-level differentiable operations built on the tensor engine."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeMismatchError, Tensor, _make, div_scalar, exp, tsum


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of [N,C,H,W] with [F,C,kh,kw] plus per-filter bias.

    Output spatial extent is floor((H + 2*padding - kh) / stride) + 1.
    Differentiable with respect to input, kernel and bias.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d: expected 4-d input and kernel, got {x.data.shape} and {kernel.data.shape}")
    n, c, h, w = x.data.shape
    f, ck, kh, kw = kernel.data.shape
    if ck != c:
        raise ShapeMismatchError(
            f"conv2d: input shape {x.data.shape} has {c} channels but kernel shape "
            f"{kernel.data.shape} expects {ck}")
    if bias.data.shape != (f,):
        raise ShapeMismatchError(
            f"conv2d: bias shape {bias.data.shape} does not match {f} filters")
    stride = int(stride)
    padding = int(padding)
    if stride < 1:
        raise ValueError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be nonnegative, got {padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeMismatchError(
            f"conv2d: kernel {kernel.data.shape} larger than padded input "
            f"({hp}x{wp} from input shape {x.data.shape})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    # contract per image so a row's arithmetic never depends on its batch
    # position (batched gemm remainder kernels break duplicated-row
    # bit-equality, which the zero-loss fixed point relies on)
    out = np.empty((n, f, ho, wo))
    for i in range(n):
        out[i] = np.einsum("chwuv,fcuv->fhw", windows[i], kernel.data, optimize=True)
    out = out + bias.data[None, :, None, None]

    def backward(g):
        grad_x = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for a in range(kh):
                for b in range(kw):
                    contrib = np.einsum("nfhw,fc->nchw", g, kernel.data[:, :, a, b],
                                        optimize=True)
                    gxp[:, :, a: a + stride * ho: stride,
                        b: b + stride * wo: stride] += contrib
            grad_x = gxp[:, :, padding: padding + h, padding: padding + w]
        grad_k = None
        if kernel.requires_grad:
            grad_k = np.einsum("nchwuv,nfhw->fcuv", windows, g, optimize=True)
        grad_b = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return (grad_x, grad_k, grad_b)

    return _make(out, "conv2d", (x, kernel, bias), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: out[n, k] = sum_d x[n, d] * weight[k, d] + bias[k]."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeMismatchError(
            f"dense: expected 2-d input and weight, got {x.data.shape} and {weight.data.shape}")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeMismatchError(
            f"dense: inner dimensions disagree, input {x.data.shape} vs weight {weight.data.shape}")
    if bias.data.shape != (weight.data.shape[0],):
        raise ShapeMismatchError(
            f"dense: bias shape {bias.data.shape} does not match {weight.data.shape[0]} outputs")
    # unoptimized einsum keeps the per-row accumulation order independent of the
    # row's batch position (BLAS gemm remainder kernels break duplicated-row
    # bit-equality, which the zero-loss fixed point relies on)
    out = np.einsum("nd,kd->nk", x.data, weight.data, optimize=False) + bias.data

    def backward(g):
        grad_x = g @ weight.data if x.requires_grad else None
        grad_w = g.T @ x.data if weight.requires_grad else None
        grad_b = g.sum(axis=0) if bias.requires_grad else None
        return (grad_x, grad_w, grad_b)

    return _make(out, "dense", (x, weight, bias), backward)


def combine_channels(act: Tensor, weights: np.ndarray) -> Tensor:
    """Weighted sum of channel maps: [C, h, w] with constant weights [C] -> [h, w]."""
    weights = np.asarray(weights, dtype=np.float64)
    if act.data.ndim != 3 or weights.shape != (act.data.shape[0],):
        raise ShapeMismatchError(
            f"combine_channels: activation shape {act.data.shape} incompatible with "
            f"weights shape {weights.shape}")
    out = np.einsum("chw,c->hw", act.data, weights)

    def backward(g):
        return (weights[:, None, None] * g[None, :, :],)

    return _make(out, "combine_channels", (act,), backward)


def cross_entropy_mean(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of [N, K] logits against integer labels [N]."""
    labels = np.asarray(labels)
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise ShapeMismatchError(
            f"cross_entropy_mean: {n} logit rows but labels shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"cross_entropy_mean: labels out of range for {k} classes")
    shift = logits.data.max(axis=1, keepdims=True)
    z = logits.data - shift
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    log_probs = z - np.log(sez)
    loss = -log_probs[np.arange(n), labels].mean()

    def backward(g):
        probs = ez / sez
        probs[np.arange(n), labels] -= 1.0
        return (g * probs / n,)

    return _make(np.asarray(loss), "cross_entropy_mean", (logits,), backward)


def softmax1d(t: Tensor) -> Tensor:
    """Softmax of a 1-d tensor, composed from primitive ops."""
    if t.data.ndim != 1:
        raise ShapeMismatchError(f"softmax1d: expected 1-d input, got shape {t.data.shape}")
    e = exp(t)
    return div_scalar(e, tsum(e))
