import hashlib
import struct

import numpy as np
import pytest

from ftta.classifier import CamMap
from ftta.data import (IdxCountMismatchError, IdxMagicError, IdxTruncatedError,
                       LabeledImageSet, augment_batch, export_cam, load_idx,
                       load_idx_images, make_digits, rotate_image, save_idx,
                       synth_shift, write_pgm)
from ftta.spectral import fft2, make_mask

# frozen from the first verified run
CAM_PGM_SHA = "e3759754bff67d8b06dfe8d9d4bab31acc094c422e415cfd468f16589edf2f17"
CAM_COMPOSITE_SHA = "ed9718045d9c45ef4afb313c1deffa77d763e83aac9c8b02e06db20f9c8ac5f9"


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

def write_idx_pair(tmp_path, pixels, labels):
    n, h, w = pixels.shape
    images_path = tmp_path / "images.idx"
    labels_path = tmp_path / "labels.idx"
    images_path.write_bytes(struct.pack(">IIII", 0x803, n, h, w) + pixels.tobytes())
    labels_path.write_bytes(struct.pack(">II", 0x801, len(labels)) + bytes(labels))
    return images_path, labels_path


def test_load_idx_handcrafted_single_image(tmp_path):
    pixels = np.zeros((1, 2, 3), dtype=np.uint8)
    pixels[0, 0, 0] = 255
    pixels[0, 1, 2] = 51
    images_path, labels_path = write_idx_pair(tmp_path, pixels, [4])
    ds = load_idx(images_path, labels_path)
    assert len(ds) == 1
    assert ds.images[0, 0, 0] == 1.0
    assert abs(ds.images[0, 1, 2] - 0.2) < 1e-12
    assert ds.labels[0] == 4


def test_load_idx_count_mismatch(tmp_path):
    pixels = np.zeros((2, 2, 2), dtype=np.uint8)
    images_path, labels_path = write_idx_pair(tmp_path, pixels, [0, 1, 2])
    with pytest.raises(IdxCountMismatchError):
        load_idx(images_path, labels_path)


def test_load_idx_magic_mismatch(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_bytes(struct.pack(">IIII", 0x805, 1, 2, 2) + b"\x00" * 4)
    with pytest.raises(IdxMagicError):
        load_idx_images(path)


def test_load_idx_truncated(tmp_path):
    path = tmp_path / "short.idx"
    path.write_bytes(struct.pack(">IIII", 0x803, 2, 4, 4) + b"\x00" * 10)
    with pytest.raises(IdxTruncatedError):
        load_idx_images(path)


def test_load_idx_checksum_against_independent_reader(tmp_path, rng):
    pixels = rng.integers(0, 256, size=(100, 8, 8), dtype=np.uint8)
    labels = list(rng.integers(0, 5, size=100))
    images_path, labels_path = write_idx_pair(tmp_path, pixels, labels)
    ds = load_idx(images_path, labels_path)

    # independent byte-level reader: skip the 16-byte header, walk pixel by pixel
    blob = images_path.read_bytes()[16:]
    total = 0.0
    for byte in blob:
        total += byte / 255.0
    assert abs(ds.images.sum() - total) < 1e-9
    assert ds.images.shape == (100, 8, 8)


def test_idx_roundtrip_lossless_at_u8(tmp_path, rng):
    original = LabeledImageSet(images=rng.integers(0, 256, (5, 6, 6)) / 255.0,
                               labels=rng.integers(0, 3, 5))
    save_idx(tmp_path / "i.idx", tmp_path / "l.idx", original)
    loaded = load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
    assert np.array_equal(loaded.images, original.images)
    assert np.array_equal(loaded.labels, original.labels)
    # second trip is byte-identical
    save_idx(tmp_path / "i2.idx", tmp_path / "l2.idx", loaded)
    assert (tmp_path / "i.idx").read_bytes() == (tmp_path / "i2.idx").read_bytes()


# ---------------------------------------------------------------------------
# synth_shift
# ---------------------------------------------------------------------------

@pytest.fixture
def smooth_set(rng):
    """Smooth, mid-gray blobs: little high-band energy, no clipping headroom issues."""
    ys, xs = np.mgrid[0:24, 0:24]
    images = []
    for _ in range(4):
        cy, cx = rng.uniform(8, 16, size=2)
        blob = np.exp(-(((ys - cy) ** 2 + (xs - cx) ** 2) / 40.0))
        images.append(0.25 + 0.3 * blob)
    return LabeledImageSet(images=np.stack(images), labels=np.arange(4), num_classes=4)


def test_synth_shift_identity_parameters(smooth_set):
    out = synth_shift(smooth_set, amplitude_scale=1.0, phase_noise=0.0, contrast=1.0, seed=0)
    assert np.abs(out.images - smooth_set.images).max() < 1e-9
    assert np.array_equal(out.labels, smooth_set.labels)


def test_synth_shift_deterministic(smooth_set):
    a = synth_shift(smooth_set, 1.3, 0.1, 1.2, seed=9)
    b = synth_shift(smooth_set, 1.3, 0.1, 1.2, seed=9)
    assert a.images.tobytes() == b.images.tobytes()


def test_synth_shift_scales_low_band_amplitude(smooth_set):
    gamma = 1.5
    out = synth_shift(smooth_set, amplitude_scale=gamma, phase_noise=0.0, contrast=1.0, seed=0)
    assert out.images.min() > 0.0 and out.images.max() < 1.0  # the oracle needs no clipping
    mask = make_mask(24, 24, 0.1).grid > 0
    for before, after in zip(smooth_set.images, out.images):
        ratio = fft2(after).amplitude[mask].mean() / fft2(before).amplitude[mask].mean()
        assert abs(ratio - gamma) < 1e-6


def test_synth_shift_output_stays_real_and_in_range(smooth_set):
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("error")  # an asymmetric spectrum would warn in ifft2
        out = synth_shift(smooth_set, 1.4, 0.25, 1.3, seed=2)
    assert out.images.min() >= 0.0 and out.images.max() <= 1.0


def test_synth_shift_preserves_labels_and_count(smooth_set):
    out = synth_shift(smooth_set, 1.6, 0.15, 1.4, seed=1)
    assert len(out) == len(smooth_set)
    assert np.array_equal(np.sort(out.labels), np.sort(smooth_set.labels))


def test_synth_shift_parameter_validation(smooth_set):
    with pytest.raises(ValueError):
        synth_shift(smooth_set, amplitude_scale=-1.0)
    with pytest.raises(ValueError):
        synth_shift(smooth_set, phase_noise=0.5)
    with pytest.raises(ValueError):
        synth_shift(smooth_set, contrast=np.inf)


# ---------------------------------------------------------------------------
# digit corpus
# ---------------------------------------------------------------------------

def test_make_digits_shapes_and_range():
    ds = make_digits(20, num_classes=5, size=28, seed=0)
    assert ds.images.shape == (20, 28, 28)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    assert set(np.unique(ds.labels)).issubset(set(range(5)))
    assert ds.num_classes == 5


def test_make_digits_deterministic():
    a = make_digits(10, 4, 28, seed=3)
    b = make_digits(10, 4, 28, seed=3)
    assert a.images.tobytes() == b.images.tobytes()
    assert np.array_equal(a.labels, b.labels)


def test_make_digits_classes_are_distinct():
    ds = make_digits(200, 5, 28, seed=1)
    means = [ds.images[ds.labels == c].mean(axis=0) for c in range(5)]
    for i in range(5):
        for j in range(i + 1, 5):
            assert np.abs(means[i] - means[j]).max() > 0.05


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def test_rotate_zero_degrees_is_identity(rng):
    img = rng.random((9, 9))
    assert np.abs(rotate_image(img, 0.0) - img).max() < 1e-12


def test_augment_batch_shape_and_range(rng):
    images = rng.random((6, 12, 12))
    out = augment_batch(images, rng)
    assert out.shape == images.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


# ---------------------------------------------------------------------------
# PGM export
# ---------------------------------------------------------------------------

def test_write_pgm_header_and_payload(tmp_path):
    img = np.array([[0.0, 1.0], [0.5, 0.25]])
    path = tmp_path / "img.pgm"
    write_pgm(path, img)
    blob = path.read_bytes()
    assert blob.startswith(b"P5\n2 2\n255\n")
    assert blob[-4:] == bytes([0, 255, 128, 64])


def test_export_cam_uniform_is_constant_gray(tmp_path):
    cam = CamMap(grid=np.full((3, 3), 1.0 / 9), normalized=True, degenerate=True)
    paths = export_cam(cam, np.zeros((9, 9)), tmp_path / "u.pgm")
    payload = paths[0].read_bytes().split(b"\n", 3)[3]
    assert payload == bytes([255]) * 81


def test_export_cam_one_hot_bright_block(tmp_path):
    grid = np.zeros((2, 2))
    grid[0, 1] = 1.0
    cam = CamMap(grid=grid, normalized=True, degenerate=False)
    paths = export_cam(cam, np.zeros((4, 4)), tmp_path / "h.pgm")
    payload = np.frombuffer(paths[0].read_bytes().split(b"\n", 3)[3], dtype=np.uint8)
    img = payload.reshape(4, 4)
    assert np.array_equal(img[:2, 2:], np.full((2, 2), 255))
    assert img[2:, :].max() == 0


def test_export_cam_golden_bytes(tmp_path):
    img = make_digits(1, 5, 16, seed=3).images[0]
    grid = np.zeros((4, 4))
    grid[1, 2] = 0.7
    grid[2, 1] = 0.3
    cam = CamMap(grid=grid, normalized=True, degenerate=False)
    heat_path, composite_path = export_cam(cam, img, tmp_path / "cam.pgm")
    assert hashlib.sha256(heat_path.read_bytes()).hexdigest() == CAM_PGM_SHA
    assert hashlib.sha256(composite_path.read_bytes()).hexdigest() == CAM_COMPOSITE_SHA
