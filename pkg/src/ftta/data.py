"""Dataset ingestion, synthetic domain shifts, and image artifact export.

Images are single-channel float64 grids in [0, 1]. IDX is the ingestion
format; a built-in stroke-based digit renderer provides a self-contained
desk-scale corpus, and ``synth_shift`` manufactures a frequency-space domain
gap (low-band amplitude scaling, mid-band phase jitter, contrast remap).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import CamMap
from .spectral import ComplexSpectrum, fft2, ifft2, make_mask

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SHIFT_LOW_BETA = 0.1
SHIFT_MID_BETA = 0.5
MAX_PHASE_NOISE = 0.3


class IdxError(ValueError):
    """Malformed IDX file."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass
class LabeledImageSet:
    images: np.ndarray          # [N, H, W] float64 in [0, 1]
    labels: np.ndarray          # [N] int64
    split: str = ""
    domain: str = ""
    num_classes: int | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3:
            raise ValueError(f"images must be [N, H, W], got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self) -> int:
        return self.images.shape[0]


# ---------------------------------------------------------------------------
# IDX format
# ---------------------------------------------------------------------------

def _read_idx_array(path: str | Path, expected_magic: int) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise IdxTruncatedError(f"{path}: file too short for magic")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise IdxTruncatedError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    count = int(np.prod(dims))
    if len(blob) - header < count:
        raise IdxTruncatedError(
            f"{path}: payload has {len(blob) - header} bytes, expected {count}")
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path,
             split: str = "", domain: str = "") -> LabeledImageSet:
    """Read an IDX image/label pair; pixels are scaled to [0, 1]."""
    raw_images = _read_idx_array(images_path, IDX_IMAGES_MAGIC)
    raw_labels = _read_idx_array(labels_path, IDX_LABELS_MAGIC)
    if raw_images.shape[0] != raw_labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images_path} holds {raw_images.shape[0]} images but "
            f"{labels_path} holds {raw_labels.shape[0]} labels")
    return LabeledImageSet(images=raw_images.astype(np.float64) / 255.0,
                           labels=raw_labels.astype(np.int64),
                           split=split, domain=domain)


def load_idx_images(images_path: str | Path) -> np.ndarray:
    """Read just an IDX image file into a [N, H, W] float array in [0, 1]."""
    return _read_idx_array(images_path, IDX_IMAGES_MAGIC).astype(np.float64) / 255.0


def save_idx(images_path: str | Path, labels_path: str | Path,
             dataset: LabeledImageSet) -> None:
    """Write a dataset as an IDX pair (u8 quantization)."""
    n, h, w = dataset.images.shape
    pixels = np.clip(np.round(dataset.images * 255.0), 0, 255).astype(np.uint8)
    Path(images_path).write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + pixels.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# synthetic digit corpus
# ---------------------------------------------------------------------------

def _ellipse(cx, cy, rx, ry, n=16):
    angles = np.linspace(0.0, 2 * np.pi, n + 1)
    return list(zip(cx + rx * np.cos(angles), cy + ry * np.sin(angles)))

_DIGIT_STROKES: dict[int, list[list[tuple[float, float]]]] = {
    0: [_ellipse(0.5, 0.5, 0.17, 0.27)],
    1: [[(0.38, 0.33), (0.52, 0.22), (0.52, 0.78)]],
    2: [[(0.33, 0.36), (0.4, 0.24), (0.6, 0.24), (0.67, 0.36), (0.64, 0.48),
         (0.35, 0.72), (0.33, 0.78)], [(0.33, 0.78), (0.68, 0.78)]],
    3: [[(0.34, 0.26), (0.62, 0.26), (0.64, 0.45), (0.47, 0.5)],
        [(0.47, 0.5), (0.66, 0.55), (0.64, 0.74), (0.34, 0.74)]],
    4: [[(0.6, 0.78), (0.6, 0.22), (0.32, 0.58), (0.72, 0.58)]],
    5: [[(0.66, 0.24), (0.36, 0.24), (0.36, 0.48), (0.58, 0.48), (0.66, 0.6),
         (0.58, 0.76), (0.34, 0.76)]],
    6: [[(0.6, 0.24), (0.42, 0.42), (0.38, 0.6)], _ellipse(0.5, 0.62, 0.14, 0.15)],
    7: [[(0.32, 0.24), (0.68, 0.24), (0.46, 0.78)]],
}


def _rasterize_strokes(strokes, size: int, width: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    px = (xs + 0.5) / size
    py = (ys + 0.5) / size
    fieldv = np.zeros((size, size))
    for poly in strokes:
        pts = np.asarray(poly)
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            dx, dy = x1 - x0, y1 - y0
            seg_len2 = dx * dx + dy * dy
            if seg_len2 == 0:
                t = np.zeros_like(px)
            else:
                t = np.clip(((px - x0) * dx + (py - y0) * dy) / seg_len2, 0.0, 1.0)
            dist = np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))
            fieldv = np.maximum(fieldv, np.exp(-(dist / width) ** 2))
    return fieldv


def _jitter_strokes(strokes, rng) -> list:
    angle = rng.uniform(-0.17, 0.17)
    scale = rng.uniform(0.85, 1.1)
    dx, dy = rng.uniform(-0.07, 0.07, size=2)
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    out = []
    for poly in strokes:
        moved = []
        for x, y in poly:
            u, v = x - 0.5, y - 0.5
            u, v = scale * (cos_a * u - sin_a * v), scale * (sin_a * u + cos_a * v)
            moved.append((u + 0.5 + dx, v + 0.5 + dy))
        out.append(moved)
    return out


def _illumination_field(rng, size: int) -> np.ndarray:
    """Smooth low-frequency gain field, the kind of nuisance a scanner adds."""
    ys, xs = np.mgrid[0:size, 0:size] / size
    angle = rng.uniform(0.0, 2 * np.pi)
    freq = rng.uniform(0.6, 1.4)
    phase = rng.uniform(0.0, 2 * np.pi)
    wave = np.cos(2 * np.pi * freq * (np.cos(angle) * xs + np.sin(angle) * ys) + phase)
    return rng.uniform(0.05, 0.12) * wave


def make_digits(n: int, num_classes: int = 5, size: int = 28, seed: int = 0,
                split: str = "", domain: str = "clean") -> LabeledImageSet:
    """Render n stroke-based digit images with per-sample geometric jitter.

    Digits are dark strokes on a bright field (scanner-like polarity), and
    each sample rides on a smooth random illumination wave, so appearance has
    genuine low-frequency content for amplitude transfer to act on and
    brightness shifts interact with saturation the way over-gained imaging
    does.
    """
    if not 2 <= num_classes <= len(_DIGIT_STROKES):
        raise ValueError(f"num_classes must be in [2, {len(_DIGIT_STROKES)}], got {num_classes}")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    images = np.empty((n, size, size))
    for i, label in enumerate(labels):
        strokes = _jitter_strokes(_DIGIT_STROKES[int(label)], rng)
        width = rng.uniform(0.035, 0.055)
        fieldv = _rasterize_strokes(strokes, size, width)
        fg = rng.uniform(0.25, 0.4)
        bg = rng.uniform(0.75, 0.9)
        img = bg + (fg - bg) * fieldv + _illumination_field(rng, size)
        img = img + rng.normal(0.0, 0.015, size=(size, size))
        images[i] = np.clip(img, 0.0, 1.0)
    return LabeledImageSet(images=images, labels=labels, split=split, domain=domain,
                           num_classes=num_classes)


# ---------------------------------------------------------------------------
# synthetic domain shift
# ---------------------------------------------------------------------------

def _mirror_indices(n: int) -> np.ndarray:
    # conjugate bin of shifted index p lives at (2 * (n // 2) - p) mod n
    return (2 * (n // 2) - np.arange(n)) % n


def _antisymmetric_noise(rng, h: int, w: int, sigma: float) -> np.ndarray:
    noise = rng.normal(0.0, sigma, size=(h, w))
    mirrored = noise[np.ix_(_mirror_indices(h), _mirror_indices(w))]
    return 0.5 * (noise - mirrored)


def synth_shift(dataset: LabeledImageSet, amplitude_scale: float = 1.0,
                phase_noise: float = 0.0, contrast: float = 1.0,
                seed: int = 0, domain: str = "shifted") -> LabeledImageSet:
    """Frequency-space domain shift: labels survive, appearance moves.

    Low-band amplitudes are scaled by ``amplitude_scale``, mid-band phases are
    jittered by antisymmetric gaussian noise (keeps the spectrum conjugate
    symmetric, hence the image real), and intensities are remapped by the
    ``contrast`` exponent.
    """
    for name, value in (("amplitude_scale", amplitude_scale),
                        ("phase_noise", phase_noise), ("contrast", contrast)):
        if not np.isfinite(value):
            raise ValueError(f"synth_shift: {name} must be finite")
    if amplitude_scale <= 0 or contrast <= 0:
        raise ValueError("synth_shift: amplitude_scale and contrast must be positive")
    if not 0.0 <= phase_noise <= MAX_PHASE_NOISE:
        raise ValueError(
            f"synth_shift: phase_noise must lie in [0, {MAX_PHASE_NOISE}], got {phase_noise}")

    rng = np.random.default_rng(seed)
    n, h, w = dataset.images.shape
    low = make_mask(h, w, SHIFT_LOW_BETA).grid
    mid = make_mask(h, w, SHIFT_MID_BETA).grid * (1.0 - low)
    amp_gain = 1.0 + (amplitude_scale - 1.0) * low

    out = np.empty_like(dataset.images)
    for i in range(n):
        spec = fft2(dataset.images[i])
        amplitude = spec.amplitude * amp_gain
        phase = spec.phase
        if phase_noise > 0.0:
            phase = phase + _antisymmetric_noise(rng, h, w, phase_noise) * mid
        img = ifft2(ComplexSpectrum(amplitude=amplitude, phase=phase))
        img = np.clip(img, 0.0, 1.0)
        out[i] = np.power(img, contrast) if contrast != 1.0 else img
    return LabeledImageSet(images=out, labels=dataset.labels.copy(), split=dataset.split,
                           domain=domain, num_classes=dataset.num_classes)


# ---------------------------------------------------------------------------
# training-time augmentation
# ---------------------------------------------------------------------------

def rotate_image(img: np.ndarray, degrees: float) -> np.ndarray:
    """Bilinear rotation about the image center.

    Samples falling outside the frame take the border median, a polarity-
    agnostic background estimate.
    """
    h, w = img.shape
    theta = np.deg2rad(degrees)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    ys, xs = np.mgrid[0:h, 0:w]
    yc, xc = (h - 1) / 2.0, (w - 1) / 2.0
    xr = cos_t * (xs - xc) + sin_t * (ys - yc) + xc
    yr = -sin_t * (xs - xc) + cos_t * (ys - yc) + yc
    inside = (xr >= 0) & (xr <= w - 1) & (yr >= 0) & (yr <= h - 1)
    x0 = np.clip(np.floor(xr).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(yr).astype(int), 0, h - 2)
    fx = np.clip(xr - x0, 0.0, 1.0)
    fy = np.clip(yr - y0, 0.0, 1.0)
    top = img[y0, x0] * (1 - fx) + img[y0, x0 + 1] * fx
    bottom = img[y0 + 1, x0] * (1 - fx) + img[y0 + 1, x0 + 1] * fx
    out = top * (1 - fy) + bottom * fy
    border = np.concatenate([img[0, :], img[-1, :], img[:, 0], img[:, -1]])
    return np.where(inside, out, np.median(border))


def augment_batch(images: np.ndarray, rng: np.random.Generator,
                  rotate_deg: float = 8.0, flip_prob: float = 0.15,
                  contrast_range: tuple[float, float] = (0.85, 1.2)) -> np.ndarray:
    """Random flip / small rotation / contrast gamma, one draw per image."""
    out = images.copy()
    for i in range(out.shape[0]):
        if rng.random() < flip_prob:
            out[i] = out[i][:, ::-1]
        angle = rng.uniform(-rotate_deg, rotate_deg)
        if abs(angle) > 1e-9:
            out[i] = rotate_image(out[i], angle)
        gamma = rng.uniform(*contrast_range)
        out[i] = np.power(np.clip(out[i], 0.0, 1.0), gamma)
    return out


# ---------------------------------------------------------------------------
# image artifact export
# ---------------------------------------------------------------------------

def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    """8-bit binary PGM from a [0, 1] float grid (deterministic bytes)."""
    u8 = np.clip(np.round(np.asarray(gray) * 255.0), 0, 255).astype(np.uint8)
    h, w = u8.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + u8.tobytes())


def _upscale_nearest(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    src_h, src_w = grid.shape
    rows = (np.arange(h) * src_h) // h
    cols = (np.arange(w) * src_w) // w
    return grid[np.ix_(rows, cols)]


def export_cam(cam: CamMap, base_image: np.ndarray, path: str | Path) -> list[Path]:
    """Write the heat map PGM plus a side-by-side composite with the image."""
    if not cam.normalized:
        raise ValueError("export_cam: expected a normalized activation map")
    base = np.asarray(base_image, dtype=np.float64)
    h, w = base.shape
    heat = cam.grid / cam.grid.max()
    heat_big = _upscale_nearest(heat, h, w)
    path = Path(path)
    write_pgm(path, heat_big)
    composite_path = path.with_name(f"{path.stem}_composite{path.suffix}")
    write_pgm(composite_path, np.hstack([np.clip(base, 0.0, 1.0), heat_big]))
    return [path, composite_path]
