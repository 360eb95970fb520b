"""Small convolutional classifier with feature and class-activation access.

Three conv/relu/pool blocks (widths 8/16/32) feed a global-average-pool head,
so the penultimate feature vector is 32-d regardless of input size. Because
the head is GAP followed by a dense layer, the spatially averaged gradient of
a class logit with respect to the last conv activations has the closed form
``head_weight[class, c] / (h * w)``; the adaptation loop uses that identity to
build differentiable activation maps without extra backward passes, while
``grad_cam`` computes the same quantity with an explicit gradient pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .container import load_tensors, save_tensors
from .ops import combine_channels, conv2d, dense

CAM_EPS = 1e-8


@dataclass
class ForwardPass:
    """Graph tensors produced by one forward evaluation."""

    logits: T.Tensor     # [N, K]
    features: T.Tensor   # [N, 32]
    last_act: T.Tensor   # [N, 32, h, w], post-relu, pre-pool


@dataclass
class CamMap:
    """Nonnegative activation map at last-conv resolution, normalized to sum 1."""

    grid: np.ndarray
    normalized: bool
    degenerate: bool


class ChannelCountError(ValueError):
    """Input batch does not have the single channel the model expects."""


class MicroCnn:
    """Classifier over single-channel images in [0, 1], inputs at least 8x8."""

    WIDTHS = (8, 16, 32)

    def __init__(self, num_classes: int, seed: int = 0, input_size: int | None = None):
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        self.num_classes = int(num_classes)
        self.seed = int(seed)
        self.input_size = input_size
        rng = np.random.default_rng(seed)
        w1, w2, w3 = self.WIDTHS
        self.params: dict[str, T.Tensor] = {}

        def param(name, array):
            t = T.Tensor(array, requires_grad=True, name=name)
            self.params[name] = t
            return t

        def he(shape, fan_in):
            return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

        param("conv1_w", he((w1, 1, 3, 3), 9))
        param("conv1_b", np.zeros(w1))
        param("conv2_w", he((w2, w1, 3, 3), 9 * w1))
        param("conv2_b", np.zeros(w2))
        param("conv3_w", he((w3, w2, 3, 3), 9 * w2))
        param("conv3_b", np.zeros(w3))
        param("head_w", rng.standard_normal((num_classes, w3)) * np.sqrt(1.0 / w3))
        param("head_b", np.zeros(num_classes))

    def parameters(self) -> list[T.Tensor]:
        return list(self.params.values())

    # ------------------------------------------------------------------
    # forward paths
    # ------------------------------------------------------------------

    def _check_batch(self, data: np.ndarray) -> np.ndarray:
        if data.ndim == 3:
            data = data[:, None, :, :]
        if data.ndim != 4:
            raise T.ShapeMismatchError(f"expected [N, 1, H, W] batch, got shape {data.shape}")
        if data.shape[1] != 1:
            raise ChannelCountError(
                f"model expects 1 input channel, batch has {data.shape[1]}")
        if data.shape[2] < 8 or data.shape[3] < 8:
            raise T.ShapeMismatchError(
                f"input spatial extent must be >= 8, got shape {data.shape}")
        return data

    def forward_full(self, batch) -> ForwardPass:
        """Forward a batch, returning logits, pooled features and last conv maps."""
        if not isinstance(batch, T.Tensor):
            batch = T.Tensor(self._check_batch(np.asarray(batch, dtype=np.float64)))
        else:
            self._check_batch(batch.data)
        p = self.params
        x = T.relu(conv2d(batch, p["conv1_w"], p["conv1_b"], stride=1, padding=1))
        x = T.max_pool2x2(x)
        x = T.relu(conv2d(x, p["conv2_w"], p["conv2_b"], stride=1, padding=1))
        x = T.max_pool2x2(x)
        last_act = T.relu(conv2d(x, p["conv3_w"], p["conv3_b"], stride=1, padding=1))
        pooled = T.max_pool2x2(last_act)
        features = T.global_avg_pool(pooled)
        logits = dense(features, p["head_w"], p["head_b"])
        return ForwardPass(logits=logits, features=features, last_act=last_act)

    def predict(self, images) -> np.ndarray:
        """Logits (pre-softmax) for an [N, H, W] or [N, 1, H, W] array, no graph."""
        with T.no_grad():
            return self.forward_full(np.asarray(images, dtype=np.float64)).logits.data

    def features(self, images) -> np.ndarray:
        """Pooled 32-d feature vectors, no graph."""
        with T.no_grad():
            return self.forward_full(np.asarray(images, dtype=np.float64)).features.data

    # ------------------------------------------------------------------
    # activation maps
    # ------------------------------------------------------------------

    def cam_weights(self, class_index: int, spatial: tuple[int, int]) -> np.ndarray:
        """Closed-form per-channel weights: spatial mean of d logit / d last_act."""
        if not 0 <= class_index < self.num_classes:
            raise ValueError(f"class_index {class_index} out of range")
        h, w = spatial
        return self.params["head_w"].data[class_index] / float(h * w)

    def save(self, path: str | Path) -> None:
        """Write parameters to the tensor container plus a JSON sidecar."""
        save_tensors(path, {name: t.data for name, t in self.params.items()})
        meta = {"num_classes": self.num_classes, "input_size": self.input_size,
                "seed": self.seed}
        Path(f"{path}.json").write_text(json.dumps(meta, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "MicroCnn":
        meta = json.loads(Path(f"{path}.json").read_text())
        model = cls(num_classes=meta["num_classes"], seed=meta.get("seed", 0),
                    input_size=meta.get("input_size"))
        model.load_state(load_tensors(path))
        return model

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if name not in state:
                raise KeyError(f"checkpoint missing parameter {name!r}")
            if state[name].shape != t.data.shape:
                raise T.ShapeMismatchError(
                    f"checkpoint parameter {name!r} has shape {state[name].shape}, "
                    f"expected {t.data.shape}")
            t.data = state[name].copy()
            t.grad = None


def normalize_cam(raw: np.ndarray) -> tuple[np.ndarray, bool]:
    """Rectified map -> sum-1 map; epsilon added before the division.

    An all-zero rectified map normalizes to the uniform map and is flagged
    degenerate.
    """
    rectified = np.maximum(raw, 0.0)
    degenerate = bool(rectified.max() == 0.0)
    shifted = rectified + CAM_EPS
    return shifted / shifted.sum(), degenerate


def cam_ops(act_row: T.Tensor, channel_weights: np.ndarray) -> tuple[T.Tensor, bool]:
    """Differentiable activation map for one image's last-conv tensor [C, h, w].

    ``channel_weights`` enter as constants (first-order treatment); gradients
    flow through the activations only. Returns the sum-1 map tensor and the
    degenerate flag.
    """
    raw = T.relu(combine_channels(act_row, channel_weights))
    degenerate = bool(raw.data.max() == 0.0)
    shifted = T.scalar_add(raw, CAM_EPS)
    return T.div_scalar(shifted, T.tsum(shifted)), degenerate


def grad_cam(model, image, class_index: int) -> CamMap:
    """Gradient-weighted activation map for a single image.

    Runs its own fresh forward graph: channel weights are the spatial mean of
    d logit[class] / d last_act, the map is the rectified weighted channel
    sum, normalized to sum 1. Parameter gradients are left untouched.
    """
    data = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if data.ndim == 2:
        data = data[None, None, :, :]
    elif data.ndim == 3:
        data = data[None, :, :, :]
    if not 0 <= class_index < model.num_classes:
        raise ValueError(f"class_index {class_index} out of range "
                         f"for {model.num_classes} classes")

    params = model.parameters()
    saved = [p.grad for p in params]
    fwd = model.forward_full(T.Tensor(data))
    target = T.index(T.take_row(fwd.logits, 0), class_index)
    T.backward(target)
    act_grad = fwd.last_act.grad[0]
    for p, g in zip(params, saved):
        p.grad = g

    weights = act_grad.mean(axis=(1, 2))
    activations = fwd.last_act.data[0]
    raw = np.einsum("chw,c->hw", activations, weights)
    grid, degenerate = normalize_cam(raw)
    return CamMap(grid=grid, normalized=True, degenerate=degenerate)
