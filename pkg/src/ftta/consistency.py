"""Multi-level consistency losses over paired restyled views.

Three families: global feature agreement (L2 + cosine), local activation-map
agreement (L2 + Jensen-Shannon), and logit-space interpolation consistency
(each interpolated view's logits should match the same interpolation of the
endpoint logits). Groups of four interpolated views are blended by learnable
softmax weights before comparison, which smooths the consistency signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .ops import softmax1d

COSINE_EPS = 1e-8
JS_EPS = 1e-12
GROUP_SIZE = 4


class ConsistencyError(ValueError):
    """Invalid input to a consistency loss."""


@dataclass
class ConsistencyWeights:
    """Learnable blending logits for the two interpolation groups.

    Softmax keeps the effective weights positive and sum-1. Zero logits give
    the uniform blend.
    """

    u: T.Tensor
    v: T.Tensor

    @classmethod
    def zeros(cls) -> "ConsistencyWeights":
        return cls(u=T.Tensor(np.zeros(GROUP_SIZE), requires_grad=True, name="u"),
                   v=T.Tensor(np.zeros(GROUP_SIZE), requires_grad=True, name="v"))

    def parameters(self) -> list[T.Tensor]:
        return [self.u, self.v]

    def effective(self) -> tuple[np.ndarray, np.ndarray]:
        with T.no_grad():
            return softmax1d(self.u).data, softmax1d(self.v).data


@dataclass
class LossBreakdown:
    """Scalar loss components of one adaptation step and their weighted total."""

    loss_global: float
    loss_local: float
    loss_style: float
    total: float
    w_global: float
    w_local: float
    w_style: float
    flags: tuple[str, ...] = ()


def integrate_group(items: Sequence[T.Tensor], logits: T.Tensor) -> T.Tensor:
    """Blend four same-shape tensors with softmax(logits) coefficients."""
    if len(items) != GROUP_SIZE:
        raise ConsistencyError(f"integration group must have {GROUP_SIZE} items, got {len(items)}")
    if logits.data.shape != (GROUP_SIZE,):
        raise ConsistencyError(f"integration logits must have shape ({GROUP_SIZE},), "
                               f"got {logits.data.shape}")
    shapes = {item.data.shape for item in items}
    if len(shapes) != 1:
        raise ConsistencyError(f"integration items disagree in shape: {sorted(shapes)}")
    weights = softmax1d(logits)
    out = T.scale(items[0], T.index(weights, 0))
    for j in range(1, GROUP_SIZE):
        out = T.add(out, T.scale(items[j], T.index(weights, j)))
    return out


def loss_global(f1: T.Tensor, f2: T.Tensor) -> tuple[T.Tensor, list[str]]:
    """Mean squared difference plus one minus cosine similarity.

    The cosine denominator carries a small epsilon. Zero-norm inputs make the
    cosine term a constant 1 and raise a flag; bit-identical nonzero inputs
    short-circuit the term to its exact limit 0 (the colinear minimum, where
    the true gradient vanishes).
    """
    if f1.data.shape != f2.data.shape:
        raise ConsistencyError(f"loss_global: shapes {f1.data.shape} and {f2.data.shape} differ")
    flags: list[str] = []
    diff = T.sub(f1, f2)
    l2 = T.mean(T.mul(diff, diff))

    n1 = float(np.sqrt(np.sum(f1.data * f1.data)))
    n2 = float(np.sqrt(np.sum(f2.data * f2.data)))
    if n1 == 0.0 or n2 == 0.0:
        flags.append("zero_norm_features")
        cosine_term = T.Tensor(1.0)
    elif np.array_equal(f1.data, f2.data):
        cosine_term = T.Tensor(0.0)
    else:
        dot = T.tsum(T.mul(f1, f2))
        denom = T.scalar_add(T.mul(T.norm2(f1), T.norm2(f2)), COSINE_EPS)
        cosine = T.div(dot, denom)
        cosine_term = T.scalar_add(T.scalar_mul(cosine, -1.0), 1.0)
    return T.add(l2, cosine_term), flags


def loss_local(c1: T.Tensor, c2: T.Tensor) -> T.Tensor:
    """Sum-of-squares difference plus Jensen-Shannon divergence of two sum-1 maps."""
    if c1.data.shape != c2.data.shape:
        raise ConsistencyError(f"loss_local: shapes {c1.data.shape} and {c2.data.shape} differ")
    for name, c in (("first", c1), ("second", c2)):
        if abs(float(c.data.sum()) - 1.0) > 1e-6:
            raise ConsistencyError(
                f"loss_local: {name} map is not normalized (sum {float(c.data.sum()):.6g})")
        if (c.data < 0).any():
            raise ConsistencyError(f"loss_local: {name} map has negative mass")

    diff = T.sub(c1, c2)
    l2 = T.tsum(T.mul(diff, diff))

    mid = T.scalar_mul(T.add(c1, c2), 0.5)
    log_mid = T.log(T.scalar_add(mid, JS_EPS))
    kl1 = T.tsum(T.mul(c1, T.sub(T.log(T.scalar_add(c1, JS_EPS)), log_mid)))
    kl2 = T.tsum(T.mul(c2, T.sub(T.log(T.scalar_add(c2, JS_EPS)), log_mid)))
    js = T.scalar_mul(T.add(kl1, kl2), 0.5)
    return T.add(l2, js)


def loss_style(y_t: T.Tensor, y_t1: T.Tensor, y_t2: T.Tensor,
               group1: Sequence[T.Tensor], group2: Sequence[T.Tensor],
               lambdas: Sequence[float]) -> T.Tensor:
    """Interpolation consistency in logit space, averaged over the 8 pairs.

    For each endpoint i and coefficient lambda_j the target is
    (1 - lambda_j) * y(x_t) + lambda_j * y(x_ti); the penalty is the euclidean
    distance to the logits of the correspondingly interpolated image.
    """
    if len(lambdas) != GROUP_SIZE:
        raise ConsistencyError(f"expected {GROUP_SIZE} interpolation coefficients, "
                               f"got {len(lambdas)}")
    if len(group1) != GROUP_SIZE or len(group2) != GROUP_SIZE:
        raise ConsistencyError(
            f"expected two groups of {GROUP_SIZE} logit vectors, "
            f"got {len(group1)} and {len(group2)}")
    acc = None
    for endpoint, group in ((y_t1, group1), (y_t2, group2)):
        for lam, y_ij in zip(lambdas, group):
            # (1-lam)*y_t + lam*endpoint, grouped so equal endpoints are exact
            mix = T.add(y_t, T.scalar_mul(T.sub(endpoint, y_t), lam))
            dist = T.norm2(T.sub(mix, y_ij))
            acc = dist if acc is None else T.add(acc, dist)
    return T.scalar_mul(acc, 1.0 / (2 * GROUP_SIZE))


def total_loss(l_f: T.Tensor, l_c: T.Tensor | None, l_s: T.Tensor,
               w_global: float, w_local: float, w_style: float,
               flags: Sequence[str] = ()) -> tuple[T.Tensor, LossBreakdown]:
    """Weighted sum of the three components; a skipped local term counts as 0."""
    for name, w in (("w_global", w_global), ("w_local", w_local), ("w_style", w_style)):
        if w < 0:
            raise ConsistencyError(f"total_loss: {name} must be nonnegative, got {w}")
    total = T.scalar_mul(l_f, w_global)
    local_value = 0.0
    if l_c is not None:
        total = T.add(total, T.scalar_mul(l_c, w_local))
        local_value = float(l_c.data)
    total = T.add(total, T.scalar_mul(l_s, w_style))
    breakdown = LossBreakdown(
        loss_global=float(l_f.data),
        loss_local=local_value,
        loss_style=float(l_s.data),
        total=float(total.data),
        w_global=float(w_global),
        w_local=float(w_local),
        w_style=float(w_style),
        flags=tuple(flags),
    )
    return total, breakdown
