"""Source training and the test-time adaptation loop.

Per test image: build the 11-image batch (the raw image, its two fully
restyled views, and two 4-image interpolation groups), run one shared forward
pass, assemble the three consistency losses, take exactly one gradient step
on the network parameters and the blending logits, then predict from the mean
post-update logits of the two restyled views. Episodic mode resets to the
source checkpoint after every image; online mode carries the adapted state
down the stream.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .classifier import MicroCnn, cam_ops
from .consistency import (ConsistencyWeights, LossBreakdown, integrate_group,
                          loss_global, loss_local, loss_style, total_loss)
from .data import LabeledImageSet, augment_batch
from .ops import cross_entropy_mean
from .spectral import stylize
from .style_bank import StyleBank

PREDICT_CHUNK = 256


class AdaptationError(ValueError):
    """Invalid adaptation request."""


@dataclass
class AdaptationConfig:
    lr: float = 5e-3
    lambdas: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    beta: float = 0.1
    k: int = 5
    w_global: float = 1.0
    w_local: float = 1.0
    w_style: float = 1.0
    mode: str = "episodic"          # episodic | online
    seed: int = 0
    full_style_lambda: float = 1.0  # lambda for the two fully restyled views
    update: bool = True             # False = input adaptation only

    def validate(self) -> "AdaptationConfig":
        if len(self.lambdas) != 4:
            raise AdaptationError(f"lambdas must have 4 entries, got {len(self.lambdas)}")
        if any(not 0.0 < l < 1.0 for l in self.lambdas):
            raise AdaptationError(f"lambdas must lie strictly inside (0, 1): {self.lambdas}")
        if any(a >= b for a, b in zip(self.lambdas, self.lambdas[1:])):
            raise AdaptationError(f"lambdas must be strictly increasing: {self.lambdas}")
        if self.mode not in ("online", "episodic"):
            raise AdaptationError(f"mode must be 'online' or 'episodic', got {self.mode!r}")
        if not 0.0 < self.beta < 1.0:
            raise AdaptationError(f"beta must lie in (0, 1), got {self.beta}")
        if self.lr < 0:
            raise AdaptationError(f"lr must be nonnegative, got {self.lr}")
        if not 0.0 <= self.full_style_lambda <= 1.0:
            raise AdaptationError(
                f"full_style_lambda must lie in [0, 1], got {self.full_style_lambda}")
        if min(self.w_global, self.w_local, self.w_style) < 0:
            raise AdaptationError("loss weights must be nonnegative")
        if self.k < 2:
            raise AdaptationError(f"k must be at least 2, got {self.k}")
        return self


@dataclass
class AdaptationBatch:
    """One test image with its restyled views and interpolation groups."""

    x_t: np.ndarray
    x_t1: np.ndarray
    x_t2: np.ndarray
    groups: list[list[np.ndarray]]   # [2][4], group i uses style i at each lambda
    lambdas: tuple[float, ...]

    def stacked(self) -> np.ndarray:
        """[11, 1, H, W]: raw image, two restyled views, then the 8 interpolants."""
        flat = [self.x_t, self.x_t1, self.x_t2] + self.groups[0] + self.groups[1]
        return np.stack(flat)[:, None, :, :]


def build_adaptation_batch(x_t: np.ndarray, style_a: np.ndarray, style_b: np.ndarray,
                           config: AdaptationConfig) -> AdaptationBatch:
    x_t = np.asarray(x_t, dtype=np.float64)
    full = config.full_style_lambda
    x_t1 = stylize(x_t, style_a, full, config.beta)
    x_t2 = stylize(x_t, style_b, full, config.beta)
    groups = [[stylize(x_t, style, lam, config.beta) for lam in config.lambdas]
              for style in (style_a, style_b)]
    return AdaptationBatch(x_t=x_t, x_t1=x_t1, x_t2=x_t2, groups=groups,
                           lambdas=tuple(config.lambdas))


@dataclass
class StepRecord:
    image_id: int
    label: int | None
    pre_pred: int
    post_pred: int
    breakdown: LossBreakdown


@dataclass
class StreamReport:
    records: list[StepRecord] = field(default_factory=list)
    metrics: dict | None = None                  # from post-adaptation predictions
    pre_adaptation_metrics: dict | None = None   # from predictions before each update
    flags: list[str] = field(default_factory=list)


def adaptation_loss(model: MicroCnn, weights: ConsistencyWeights, batch: AdaptationBatch,
                    config: AdaptationConfig,
                    channel_weights: np.ndarray | None = None
                    ) -> tuple[T.Tensor, LossBreakdown, int]:
    """Assemble the multi-level consistency loss on one shared forward pass.

    Returns the total loss tensor, the breakdown, and the prediction on the
    raw test image from the same pass. ``channel_weights`` fixes the
    activation-map weights (they always enter the graph as constants; the
    default derives them from the current head for the shared target class).
    """
    flags: list[str] = []
    fwd = model.forward_full(T.Tensor(batch.stacked()))
    logits = fwd.logits
    pre_pred = int(np.argmax(logits.data[0]))

    if channel_weights is None:
        cam_class = int(np.argmax((logits.data[1] + logits.data[2]) / 2.0))
        channel_weights = model.cam_weights(cam_class, fwd.last_act.data.shape[2:])

    feats = [T.take_row(fwd.features, i) for i in range(3, 11)]
    cams, degenerate = [], []
    for i in range(3, 11):
        cam, is_deg = cam_ops(T.take_row(fwd.last_act, i), channel_weights)
        cams.append(cam)
        degenerate.append(is_deg)

    f1 = integrate_group(feats[0:4], weights.u)
    f2 = integrate_group(feats[4:8], weights.v)
    l_f, global_flags = loss_global(f1, f2)
    flags += global_flags

    group1_dead = all(degenerate[0:4])
    group2_dead = all(degenerate[4:8])
    if group1_dead and group2_dead:
        l_c = None
        flags.append("local_consistency_skipped")
    else:
        if group1_dead:
            flags.append("degenerate_cam_group1")
        if group2_dead:
            flags.append("degenerate_cam_group2")
        c1 = integrate_group(cams[0:4], weights.u)
        c2 = integrate_group(cams[4:8], weights.v)
        l_c = loss_local(c1, c2)

    logit_rows = [T.take_row(logits, i) for i in range(11)]
    l_s = loss_style(logit_rows[0], logit_rows[1], logit_rows[2],
                     logit_rows[3:7], logit_rows[7:11], config.lambdas)

    total, breakdown = total_loss(l_f, l_c, l_s, config.w_global, config.w_local,
                                  config.w_style, flags)
    return total, breakdown, pre_pred


def adapt_single(model: MicroCnn, weights: ConsistencyWeights, x_t: np.ndarray,
                 bank: StyleBank, config: AdaptationConfig,
                 image_id: int = 0, label: int | None = None) -> StepRecord:
    """One adaptation step: 11 forward image evaluations, at most one backward."""
    style_a, style_b = bank.pair_amplitudes()
    batch = build_adaptation_batch(x_t, style_a, style_b, config)
    total, breakdown, pre_pred = adaptation_loss(model, weights, batch, config)

    if config.update:
        T.backward(total)
        T.sgd_step(model.parameters() + weights.parameters(), config.lr)

    with T.no_grad():
        pair = np.stack([batch.x_t1, batch.x_t2])[:, None, :, :]
        post_logits = model.forward_full(T.Tensor(pair)).logits.data
    post_pred = int(np.argmax(post_logits.mean(axis=0)))
    return StepRecord(image_id=image_id, label=label, pre_pred=pre_pred,
                      post_pred=post_pred, breakdown=breakdown)


def run_stream(model: MicroCnn, images, labels, bank: StyleBank,
               config: AdaptationConfig) -> StreamReport:
    """Adapt over an ordered stream of test images.

    Episodic mode restores the source checkpoint and fresh blending logits
    before every image (and leaves the model at the source state afterward);
    online mode carries the adapted state forward.
    """
    config.validate()
    images = np.asarray(images, dtype=np.float64)
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (images.shape[0],):
            raise AdaptationError(
                f"{images.shape[0]} stream images but labels shape {labels.shape}")
    report = StreamReport()
    if images.shape[0] == 0:
        report.flags += ["empty_stream", "metrics_undefined"]
        return report

    episodic = config.mode == "episodic"
    source_state = model.snapshot() if episodic else None
    weights = ConsistencyWeights.zeros()
    for idx in range(images.shape[0]):
        if episodic:
            model.load_state(source_state)
            weights = ConsistencyWeights.zeros()
        label = int(labels[idx]) if labels is not None else None
        record = adapt_single(model, weights, images[idx], bank, config,
                              image_id=idx, label=label)
        report.records.append(record)
    if episodic:
        model.load_state(source_state)

    if labels is None:
        report.flags.append("metrics_undefined")
    else:
        post = np.array([r.post_pred for r in report.records])
        pre = np.array([r.pre_pred for r in report.records])
        report.metrics = compute_metrics(labels, post, model.num_classes)
        report.pre_adaptation_metrics = compute_metrics(labels, pre, model.num_classes)
    return report


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def compute_metrics(y_true, y_pred, num_classes: int) -> dict:
    """Accuracy plus macro-averaged precision/recall/F1 over all classes.

    A class with no predicted (respectively true) instances contributes 0 to
    precision (recall); F1 is 0 when precision + recall is 0.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise AdaptationError(f"metric shapes differ: {y_true.shape} vs {y_pred.shape}")
    accuracy = float((y_true == y_pred).mean())
    precisions, recalls, f1s = [], [], []
    for c in range(num_classes):
        tp = float(((y_pred == c) & (y_true == c)).sum())
        fp = float(((y_pred == c) & (y_true != c)).sum())
        fn = float(((y_pred != c) & (y_true == c)).sum())
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    return {"accuracy": accuracy,
            "precision": float(np.mean(precisions)),
            "recall": float(np.mean(recalls)),
            "f1": float(np.mean(f1s))}


def predict_labels(model: MicroCnn, images) -> np.ndarray:
    """Frozen-model argmax predictions, chunked to bound memory."""
    images = np.asarray(images, dtype=np.float64)
    preds = []
    for start in range(0, images.shape[0], PREDICT_CHUNK):
        logits = model.predict(images[start: start + PREDICT_CHUNK])
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# source training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    state: dict[str, np.ndarray]
    best_val_accuracy: float | None
    history: list[dict]


def train_source(model: MicroCnn, train_set: LabeledImageSet, val_set: LabeledImageSet,
                 epochs: int, lr: float = 0.02, batch_size: int = 64,
                 augment: bool = True, seed: int = 0, momentum: float = 0.9) -> TrainResult:
    """Cross-entropy training with flip/rotate/contrast augmentation.

    Minibatch SGD with a momentum buffer (plain SGD oscillates badly on this
    backbone). Keeps (and loads back) the parameter state with the best
    validation accuracy; zero epochs returns the initialization untouched.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise AdaptationError("train_source: empty dataset")
    if int(train_set.labels.max()) >= model.num_classes:
        raise AdaptationError(
            f"label {int(train_set.labels.max())} out of range for "
            f"{model.num_classes}-class model")
    rng = np.random.default_rng(seed)
    params = model.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    best_state = model.snapshot()
    best_acc = None
    history: list[dict] = []
    n = len(train_set)
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch_size):
            take = order[start: start + batch_size]
            images = train_set.images[take]
            if augment:
                images = augment_batch(images, rng)
            batch = T.Tensor(images[:, None, :, :])
            logits = model.forward_full(batch).logits
            loss = cross_entropy_mean(logits, train_set.labels[take])
            T.backward(loss)
            for p, v in zip(params, velocity):
                v *= momentum
                v += p.grad
                p.data = p.data - lr * v
                p.grad = None
            epoch_losses.append(float(loss.data))
        val_acc = compute_metrics(val_set.labels, predict_labels(model, val_set.images),
                                  model.num_classes)["accuracy"]
        history.append({"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                        "val_accuracy": val_acc})
        if best_acc is None or val_acc > best_acc:
            best_acc = val_acc
            best_state = model.snapshot()
    model.load_state(best_state)
    return TrainResult(state=best_state, best_val_accuracy=best_acc, history=history)


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def run_id(config: AdaptationConfig, report: StreamReport) -> str:
    digest = hashlib.sha256()
    digest.update(json.dumps(asdict(config), sort_keys=True).encode())
    for r in report.records:
        digest.update(f"{r.image_id},{r.label},{r.pre_pred},{r.post_pred}".encode())
    return digest.hexdigest()[:16]


def write_report(report: StreamReport, config: AdaptationConfig, out_dir: str | Path,
                 tag: str = "", baseline_metrics: dict | None = None) -> tuple[Path, Path]:
    """Write the per-image CSV and the aggregate JSON; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = f"{tag}_" if tag else ""
    csv_path = out_dir / f"{prefix}report.csv"
    json_path = out_dir / f"{prefix}report.json"

    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "label", "pre_pred", "post_pred",
                         "loss_global", "loss_local", "loss_style", "loss_total", "flags"])
        for r in report.records:
            b = r.breakdown
            writer.writerow([r.image_id, "" if r.label is None else r.label,
                             r.pre_pred, r.post_pred,
                             repr(b.loss_global), repr(b.loss_local),
                             repr(b.loss_style), repr(b.total),
                             ";".join(sorted(b.flags))])

    payload = {
        "run_id": run_id(config, report),
        "config": asdict(config),
        "count": len(report.records),
        "metrics": report.metrics,
        "pre_adaptation_metrics": report.pre_adaptation_metrics,
        "baseline_metrics": baseline_metrics,
        "flags": sorted(report.flags),
    }
    json_path.write_text(json.dumps(payload, sort_keys=True, indent=1))
    return csv_path, json_path
