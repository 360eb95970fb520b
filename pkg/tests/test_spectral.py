import numpy as np
import pytest

from ftta.spectral import (ComplexSpectrum, SpectralError, fft2, ifft2,
                           load_style_amplitude, make_mask, masked_low_band,
                           save_style_amplitude, stylize, transfer_amplitude)

from helpers import dft2_quad_loops, direct_dft2, shift_center


def test_fft2_2x2_known_values():
    spec = fft2(np.array([[1.0, 2.0], [3.0, 4.0]]))
    # unshifted DFT is F(0,0)=10, F(0,1)=-2, F(1,0)=-4, F(1,1)=0
    oracle = dft2_quad_loops([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(oracle, [[10, -2], [-4, 0]], atol=1e-12)
    assert sorted(spec.amplitude.ravel()) == [0.0, 2.0, 4.0, 10.0]
    # DC amplitude sits at the shifted center
    assert spec.amplitude[1, 1] == 10.0


def test_fft2_constant_image_is_dc_only():
    c = 0.37
    spec = fft2(np.full((8, 6), c))
    dc = spec.amplitude[4, 3]
    assert abs(dc - c * 48) < 1e-9
    rest = spec.amplitude.copy()
    rest[4, 3] = 0.0
    assert np.abs(rest).max() < 1e-9


def test_fft2_matches_direct_dft(rng):
    image = rng.random((8, 8))
    spec = fft2(image)
    oracle = shift_center(direct_dft2(image))
    assert np.abs(spec.amplitude - np.abs(oracle)).max() < 1e-9


def test_fft2_rejects_non_finite():
    img = np.ones((4, 4))
    img[1, 2] = np.nan
    with pytest.raises(SpectralError):
        fft2(img)


def test_fft2_rejects_tiny_images():
    with pytest.raises(SpectralError):
        fft2(np.ones((1, 5)))


def test_ifft2_roundtrip_16x16(rng):
    image = rng.random((16, 16))
    assert np.abs(ifft2(fft2(image)) - image).max() < 1e-9


def test_ifft2_dc_only_gives_constant():
    h, w, c = 6, 10, 1.25
    amp = np.zeros((h, w))
    amp[h // 2, w // 2] = c * h * w
    out = ifft2(ComplexSpectrum(amplitude=amp, phase=np.zeros((h, w))))
    assert np.abs(out - c).max() < 1e-9


def test_ifft2_shape_mismatch():
    with pytest.raises(SpectralError):
        ifft2(ComplexSpectrum(amplitude=np.ones((4, 4)), phase=np.zeros((4, 5))))


def test_ifft2_warns_on_large_imag_residue():
    # an asymmetric spectrum is not a real image's transform
    amp = np.zeros((4, 4))
    amp[1, 2] = 8.0
    phase = np.zeros((4, 4))
    with pytest.warns(RuntimeWarning, match="residue"):
        _, residue = ifft2(ComplexSpectrum(amplitude=amp, phase=phase), return_residue=True)
    assert residue > 1e-6


@pytest.mark.parametrize("size", [4, 8, 16, 28, 32, 64])
def test_roundtrip_all_required_sizes(rng, size):
    image = rng.random((size, size))
    assert np.abs(ifft2(fft2(image)) - image).max() < 1e-9


def test_parseval(rng):
    for size in (4, 8, 28, 32):
        image = rng.random((size, size))
        spec = fft2(image)
        lhs = np.sum(spec.amplitude ** 2)
        rhs = size * size * np.sum(image ** 2)
        assert abs(lhs - rhs) / rhs < 1e-9


# ---------------------------------------------------------------------------
# mask
# ---------------------------------------------------------------------------

def test_mask_tiny_beta_keeps_only_dc():
    mask = make_mask(28, 28, 1e-6)
    assert mask.ones_count == 1
    assert mask.grid[14, 14] == 1.0


def test_mask_beta_099_on_4x4():
    mask = make_mask(4, 4, 0.99)
    # radius 1.98 around center (2, 2): strictly-inside bins only
    expected = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            if np.hypot(i - 2, j - 2) < 1.98:
                expected[i, j] = 1.0
    assert np.array_equal(mask.grid, expected)


def test_mask_count_matches_disc_rasterization():
    mask = make_mask(64, 64, 0.1)
    count = 0
    for i in range(64):
        for j in range(64):
            if np.hypot(i - 32, j - 32) < 0.1 * 32:
                count += 1
    assert mask.ones_count == count


def test_mask_count_monotone_in_beta():
    counts = [make_mask(32, 32, b).ones_count for b in (0.05, 0.1, 0.3, 0.5, 0.9)]
    assert counts == sorted(counts)


def test_mask_symmetry_about_center():
    grid = make_mask(16, 16, 0.4).grid
    mirror = (2 * 8 - np.arange(16)) % 16
    assert np.array_equal(grid, grid[np.ix_(mirror, mirror)])


def test_mask_beta_out_of_range():
    for beta in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(SpectralError):
            make_mask(8, 8, beta)


# ---------------------------------------------------------------------------
# transfer_amplitude
# ---------------------------------------------------------------------------

def test_transfer_lambda_zero_is_bit_exact_identity(rng):
    a_t = rng.random((8, 8)) * 10
    a_s = rng.random((8, 8)) * 10
    mask = make_mask(8, 8, 0.5)
    out = transfer_amplitude(a_t, a_s, 0.0, mask)
    assert np.array_equal(out, a_t)


def test_transfer_lambda_one_full_mask_replaces(rng):
    a_t = rng.random((8, 8)) * 10
    a_s = rng.random((8, 8)) * 10
    mask = make_mask(8, 8, 0.99)
    out = transfer_amplitude(a_t, a_s, 1.0, mask)
    inside = mask.grid > 0
    assert np.array_equal(out[inside], a_s[inside])
    assert np.array_equal(out[~inside], a_t[~inside])


def test_transfer_midpoint_value():
    a_t = np.full((8, 8), 4.0)
    a_s = np.full((8, 8), 8.0)
    mask = make_mask(8, 8, 0.5)
    out = transfer_amplitude(a_t, a_s, 0.5, mask)
    inside = mask.grid > 0
    assert np.all(out[inside] == 6.0)
    assert np.all(out[~inside] == 4.0)


def test_transfer_self_is_bit_exact_for_any_lambda(rng):
    a = rng.random((8, 8)) * 3
    mask = make_mask(8, 8, 0.5)
    for lam in (0.2, 0.4, 0.6, 0.8, 1.0):
        assert np.array_equal(transfer_amplitude(a, a.copy(), lam, mask), a)


def test_transfer_affine_in_lambda(rng):
    a_t = rng.random((16, 16)) * 5
    a_s = rng.random((16, 16)) * 5
    mask = make_mask(16, 16, 0.3)
    end0 = transfer_amplitude(a_t, a_s, 0.0, mask)
    end1 = transfer_amplitude(a_t, a_s, 1.0, mask)
    for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
        blended = transfer_amplitude(a_t, a_s, lam, mask)
        assert np.abs(blended - ((1 - lam) * end0 + lam * end1)).max() < 1e-9


def test_transfer_rejects_negative_amplitudes():
    mask = make_mask(4, 4, 0.5)
    bad = -np.ones((4, 4))
    with pytest.raises(SpectralError):
        transfer_amplitude(bad, np.ones((4, 4)), 0.5, mask)
    with pytest.raises(SpectralError):
        transfer_amplitude(np.ones((4, 4)), bad, 0.5, mask)


def test_transfer_rejects_bad_lambda():
    mask = make_mask(4, 4, 0.5)
    with pytest.raises(SpectralError):
        transfer_amplitude(np.ones((4, 4)), np.ones((4, 4)), 1.5, mask)


# ---------------------------------------------------------------------------
# stylize
# ---------------------------------------------------------------------------

def test_stylize_own_amplitude_is_identity(rng):
    image = rng.random((16, 16))
    own = fft2(image).amplitude
    for lam in (0.0, 0.3, 1.0):
        out = stylize(image, own, lam, beta=0.2)
        assert np.abs(out - image).max() < 1e-9


def test_stylize_lambda_zero_is_identity(rng):
    image = rng.random((16, 16))
    style = fft2(rng.random((16, 16))).amplitude
    assert np.array_equal(stylize(image, style, 0.0, beta=0.2), image)


def test_stylize_low_band_midpoint_amplitude(rng):
    image = 0.25 + 0.5 * rng.random((16, 16))
    style = fft2(0.25 + 0.5 * rng.random((16, 16))).amplitude
    beta = 0.3
    out_half = stylize(image, style, 0.5, beta, clamp=False)
    out_zero = stylize(image, style, 0.0, beta, clamp=False)
    out_one = stylize(image, style, 1.0, beta, clamp=False)
    assert np.abs(out_one - out_half).max() > 1e-8  # endpoints genuinely differ
    mask = make_mask(16, 16, beta).grid > 0
    amp_half = fft2(out_half).amplitude[mask]
    amp_mean = (fft2(out_zero).amplitude[mask] + fft2(out_one).amplitude[mask]) / 2
    assert np.abs(amp_half - amp_mean).max() < 1e-9


def test_stylize_preserves_phase(rng):
    image = rng.random((16, 16))
    style = fft2(rng.random((16, 16))).amplitude * 2.0
    out = stylize(image, style, 0.7, beta=0.3, clamp=False)
    before = fft2(image)
    after = fft2(out)
    significant = after.amplitude > 1e-9
    delta = np.angle(np.exp(1j * (after.phase - before.phase)))
    assert np.abs(delta[significant]).max() < 1e-6


def test_stylize_clamps_to_unit_range(rng):
    image = rng.random((16, 16))
    style = fft2(rng.random((16, 16))).amplitude * 50.0  # wildly bright style
    out = stylize(image, style, 1.0, beta=0.3)
    assert out.min() >= 0.0 and out.max() <= 1.0


# ---------------------------------------------------------------------------
# style amplitude files
# ---------------------------------------------------------------------------

def test_style_amplitude_roundtrip(tmp_path, rng):
    image = rng.random((12, 12))
    amp = masked_low_band(image, 0.25)
    path = tmp_path / "style.ftta"
    save_style_amplitude(path, amp, 0.25)
    loaded, beta = load_style_amplitude(path)
    assert beta == 0.25
    assert np.array_equal(loaded, amp)
