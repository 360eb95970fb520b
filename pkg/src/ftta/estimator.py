"""Estimator-style facade so the pipeline composes with the wider ecosystem.

``FTTAClassifier`` follows the familiar fit/predict contract: ``fit`` trains
the source classifier and builds the style bank from labeled clean images;
``predict`` runs the test-time adaptation stream over new images.
Constructor arguments round-trip through ``get_params``/``set_params``.
"""

from __future__ import annotations

import inspect

import numpy as np

from .adapt import AdaptationConfig, predict_labels, run_stream, train_source
from .classifier import MicroCnn
from .data import LabeledImageSet
from .style_bank import build_bank, score_styles, select_pair


def check_image_array(X) -> np.ndarray:
    """Validate an [N, H, W] float image stack with intensities in [0, 1]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected images shaped [N, H, W], got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty image array")
    if not np.isfinite(X).all():
        raise ValueError("images contain non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(
            f"image intensities must lie in [0, 1], got range [{X.min()}, {X.max()}]")
    return X


def check_label_array(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise ValueError(f"expected {n_samples} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == y.astype(np.int64)):
            raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    if y.min() < 0:
        raise ValueError("labels must be nonnegative")
    return y


class FTTAClassifier:
    """Source-trained classifier that re-styles and self-corrects at test time."""

    def __init__(self, epochs: int = 25, train_lr: float = 0.02, batch_size: int = 64,
                 augment: bool = True, val_fraction: float = 0.2, bank_size: int = 32,
                 lr: float = 5e-3, lambdas: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8),
                 beta: float = 0.1, k: int = 5, w_global: float = 1.0,
                 w_local: float = 1.0, w_style: float = 1.0, mode: str = "episodic",
                 update: bool = True, seed: int = 0):
        self.epochs = epochs
        self.train_lr = train_lr
        self.batch_size = batch_size
        self.augment = augment
        self.val_fraction = val_fraction
        self.bank_size = bank_size
        self.lr = lr
        self.lambdas = lambdas
        self.beta = beta
        self.k = k
        self.w_global = w_global
        self.w_local = w_local
        self.w_style = w_style
        self.mode = mode
        self.update = update
        self.seed = seed

    # -- sklearn-style parameter plumbing ---------------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        signature = inspect.signature(cls.__init__)
        return [name for name in signature.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "FTTAClassifier":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}; "
                    f"valid parameters are {sorted(valid)}")
            setattr(self, name, value)
        return self

    def _adaptation_config(self) -> AdaptationConfig:
        return AdaptationConfig(
            lr=self.lr, lambdas=tuple(self.lambdas), beta=self.beta, k=self.k,
            w_global=self.w_global, w_local=self.w_local, w_style=self.w_style,
            mode=self.mode, seed=self.seed, update=self.update).validate()

    # -- estimator API ------------------------------------------------------

    def fit(self, X, y) -> "FTTAClassifier":
        """Train the source model on clean images, then build the style bank."""
        X = check_image_array(X)
        y = check_label_array(y, X.shape[0])
        self._adaptation_config()
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        n = X.shape[0]
        n_val = max(1, int(round(n * self.val_fraction)))
        if n - n_val < 2:
            raise ValueError(f"not enough samples to split: {n} with val_fraction "
                             f"{self.val_fraction}")
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(n)
        val_idx, train_idx = order[:n_val], order[n_val:]
        train_set = LabeledImageSet(X[train_idx], y[train_idx], split="train")
        val_set = LabeledImageSet(X[val_idx], y[val_idx], split="val")

        self.classes_ = np.arange(int(y.max()) + 1)
        model = MicroCnn(num_classes=len(self.classes_), seed=self.seed,
                         input_size=X.shape[1])
        result = train_source(model, train_set, val_set, epochs=self.epochs,
                              lr=self.train_lr, batch_size=self.batch_size,
                              augment=self.augment, seed=self.seed)
        self.model_ = model
        self.val_accuracy_ = result.best_val_accuracy
        self.history_ = result.history

        picks = np.sort(rng.choice(len(train_set), size=min(self.bank_size, len(train_set)),
                                   replace=False))
        bank = build_bank(train_set.images[picks], self.beta,
                          sources=[f"fit[{int(i)}]" for i in picks])
        score_styles(bank, model, val_set.images, val_set.labels)
        select_pair(bank, min(self.k, len(bank.entries)))
        self.bank_ = bank
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise RuntimeError("this FTTAClassifier instance is not fitted yet; call fit first")

    def predict(self, X) -> np.ndarray:
        """Adapted predictions for an ordered stream of test images."""
        X = check_image_array(X)
        self._check_fitted()
        source_state = self.model_.snapshot()
        report = run_stream(self.model_, X, None, self.bank_, self._adaptation_config())
        self.model_.load_state(source_state)
        self.last_report_ = report
        return np.array([r.post_pred for r in report.records], dtype=np.int64)

    def predict_baseline(self, X) -> np.ndarray:
        """Frozen source-model predictions (no input adaptation, no updates)."""
        X = check_image_array(X)
        self._check_fitted()
        return predict_labels(self.model_, X)

    def score(self, X, y) -> float:
        X = check_image_array(X)
        y = check_label_array(y, X.shape[0])
        return float((self.predict(X) == y).mean())
