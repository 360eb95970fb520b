"""Fourier test-time adaptation for small image classifiers.

Restyles each unseen test image into the source domain by low-frequency
amplitude transfer, then refines the classifier online with one gradient step
per image on multi-level consistency losses (global features, local
activation maps, logit-space style interpolation).
"""

from .adapt import (AdaptationBatch, AdaptationConfig, StreamReport, adapt_single,
                    compute_metrics, run_stream, train_source)
from .classifier import CamMap, MicroCnn, grad_cam
from .config import RunConfig
from .consistency import (ConsistencyWeights, LossBreakdown, integrate_group,
                          loss_global, loss_local, loss_style, total_loss)
from .data import LabeledImageSet, load_idx, make_digits, synth_shift
from .estimator import FTTAClassifier
from .spectral import (ComplexSpectrum, LowPassMask, fft2, ifft2, make_mask,
                       stylize, transfer_amplitude)
from .style_bank import StyleBank, build_bank, score_styles, select_pair
from .tensor import Tensor, backward, no_grad, sgd_step

__version__ = "0.1.0"

__all__ = [
    "AdaptationBatch", "AdaptationConfig", "CamMap", "ComplexSpectrum",
    "ConsistencyWeights", "FTTAClassifier", "LabeledImageSet", "LossBreakdown",
    "LowPassMask", "MicroCnn", "RunConfig", "StreamReport", "StyleBank", "Tensor",
    "adapt_single", "backward", "build_bank", "compute_metrics", "fft2", "grad_cam",
    "ifft2", "integrate_group", "load_idx", "loss_global", "loss_local", "loss_style",
    "make_digits", "make_mask", "no_grad", "run_stream", "score_styles", "select_pair",
    "sgd_step", "stylize", "synth_shift", "total_loss", "train_source",
    "transfer_amplitude",
]
