"""Centered 2-d spectra, circular low-pass masks, and amplitude style transfer.

Style transfer blends the low-frequency amplitude of a content image toward a
source-domain amplitude while keeping the content phase, then inverts the
transform. All functions here are pure and operate on plain float64 arrays;
gradients never flow through input adaptation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .container import load_tensors, save_tensors

IMAG_RESIDUE_WARN = 1e-6


class SpectralError(ValueError):
    """Invalid input to a spectral operation."""


@dataclass
class ComplexSpectrum:
    """Center-shifted frequency grid stored as amplitude and phase.

    The DC bin sits at (H // 2, W // 2). Amplitude is nonnegative; phase is
    in (-pi, pi].
    """

    amplitude: np.ndarray
    phase: np.ndarray

    @property
    def height(self) -> int:
        return self.amplitude.shape[0]

    @property
    def width(self) -> int:
        return self.amplitude.shape[1]


@dataclass(frozen=True)
class LowPassMask:
    """Binary disc of radius ``beta * min(H, W) / 2`` around the DC bin."""

    beta: float
    radius: float
    grid: np.ndarray

    @property
    def ones_count(self) -> int:
        return int(self.grid.sum())


def _as_image(x) -> np.ndarray:
    data = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if data.ndim != 2:
        raise SpectralError(f"expected a 2-d image, got shape {data.shape}")
    return data


def fft2(image) -> ComplexSpectrum:
    """Unnormalized forward DFT of a 2-d image, center-shifted."""
    data = _as_image(image)
    h, w = data.shape
    if h < 2 or w < 2:
        raise SpectralError(f"image too small for fft2: shape {data.shape}")
    if not np.isfinite(data).all():
        raise SpectralError("fft2: image contains non-finite pixels")
    spectrum = np.fft.fftshift(np.fft.fft2(data))
    return ComplexSpectrum(amplitude=np.abs(spectrum), phase=np.angle(spectrum))


def ifft2(spec: ComplexSpectrum, return_residue: bool = False):
    """Real part of the normalized inverse transform.

    The discarded imaginary residue is available via ``return_residue``; a
    residue above ``IMAG_RESIDUE_WARN`` raises a warning because it signals a
    spectrum that is no longer conjugate-symmetric.
    """
    if spec.amplitude.shape != spec.phase.shape:
        raise SpectralError(
            f"ifft2: amplitude shape {spec.amplitude.shape} != phase shape {spec.phase.shape}")
    grid = spec.amplitude * np.exp(1j * spec.phase)
    out = np.fft.ifft2(np.fft.ifftshift(grid))
    residue = float(np.abs(out.imag).max())
    if residue > IMAG_RESIDUE_WARN:
        warnings.warn(f"ifft2: imaginary residue {residue:.3g} exceeds {IMAG_RESIDUE_WARN:g}",
                      RuntimeWarning, stacklevel=2)
    image = out.real.copy()
    if return_residue:
        return image, residue
    return image


@lru_cache(maxsize=64)
def _mask_grid(h: int, w: int, beta: float) -> tuple[float, np.ndarray]:
    radius = beta * min(h, w) / 2.0
    rows = np.arange(h)[:, None] - h // 2
    cols = np.arange(w)[None, :] - w // 2
    grid = (np.hypot(rows, cols) < radius).astype(np.float64)
    grid.setflags(write=False)
    return radius, grid


def make_mask(h: int, w: int, beta: float) -> LowPassMask:
    """Circular low-pass mask; a bin is kept iff its distance to DC is < radius."""
    if not 0.0 < beta < 1.0:
        raise SpectralError(f"make_mask: beta must lie in (0, 1), got {beta}")
    radius, grid = _mask_grid(int(h), int(w), float(beta))
    return LowPassMask(beta=float(beta), radius=radius, grid=grid)


def transfer_amplitude(amp_content: np.ndarray, amp_style: np.ndarray,
                       lam: float, mask: LowPassMask) -> np.ndarray:
    """Blend the masked low band of ``amp_content`` toward ``amp_style``.

    Inside the mask the result is (1 - lam) * content + lam * style; outside
    it is the content amplitude untouched. Computed as content + lam * delta
    so that lam = 0 and style == content are bit-exact identities; lam = 1 is
    a bit-exact replacement.
    """
    amp_content = np.asarray(amp_content, dtype=np.float64)
    amp_style = np.asarray(amp_style, dtype=np.float64)
    if amp_content.shape != amp_style.shape:
        raise SpectralError(
            f"transfer_amplitude: shapes {amp_content.shape} and {amp_style.shape} differ")
    if amp_content.shape != mask.grid.shape:
        raise SpectralError(
            f"transfer_amplitude: amplitude shape {amp_content.shape} != mask shape {mask.grid.shape}")
    if not 0.0 <= lam <= 1.0:
        raise SpectralError(f"transfer_amplitude: lambda must lie in [0, 1], got {lam}")
    if (amp_content < 0).any() or (amp_style < 0).any():
        raise SpectralError("transfer_amplitude: amplitudes must be nonnegative")
    if lam == 1.0:
        return np.where(mask.grid > 0, amp_style, amp_content)
    delta = (amp_style - amp_content) * mask.grid
    return amp_content + lam * delta


def stylize(image, style_amplitude: np.ndarray, lam: float, beta: float,
            clamp: bool = True) -> np.ndarray:
    """Re-style an image by low-band amplitude transfer, preserving its phase.

    The output is clamped to [0, 1] (the classifier's expected intensity
    range) unless ``clamp`` is disabled. When the transfer leaves the
    amplitude bit-identical the inverse transform is skipped, so identity
    transfers are exact.
    """
    data = _as_image(image)
    spec = fft2(data)
    mask = make_mask(data.shape[0], data.shape[1], beta)
    new_amp = transfer_amplitude(spec.amplitude, style_amplitude, lam, mask)
    if np.array_equal(new_amp, spec.amplitude):
        out = data.copy()
    else:
        out = ifft2(ComplexSpectrum(amplitude=new_amp, phase=spec.phase))
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out


def masked_low_band(image, beta: float) -> np.ndarray:
    """Amplitude of an image inside the low-pass mask, zero elsewhere."""
    data = _as_image(image)
    spec = fft2(data)
    mask = make_mask(data.shape[0], data.shape[1], beta)
    return spec.amplitude * mask.grid


def save_style_amplitude(path: str | Path, amplitude: np.ndarray, beta: float) -> None:
    """Write one style amplitude in the shared tensor container format."""
    amplitude = np.asarray(amplitude, dtype=np.float64)
    save_tensors(path, {
        "amplitude": amplitude,
        "height": np.asarray(float(amplitude.shape[0])),
        "width": np.asarray(float(amplitude.shape[1])),
        "beta": np.asarray(float(beta)),
    })


def load_style_amplitude(path: str | Path) -> tuple[np.ndarray, float]:
    tensors = load_tensors(path)
    amplitude = tensors["amplitude"]
    beta = float(tensors["beta"])
    h, w = int(tensors["height"]), int(tensors["width"])
    if amplitude.shape != (h, w):
        raise SpectralError(
            f"{path}: amplitude shape {amplitude.shape} does not match metadata ({h}, {w})")
    return amplitude, beta
