import math

import numpy as np
import pytest

from muffin.cube import ImageCube
from muffin.simulate import (
    NOISELESS_VARIANCE, SPECTRAL_A, SPECTRAL_B, SkyModel, add_noise, convolve_cube, gaussian_field,
    make_psf_cube, make_sky_cube, simulate, uv_mask, wavelength_grid, _symmetric_uniform,
)


def test_full_fill_gives_delta():
    psf = make_psf_cube((16, 16), 3, fill=1.0, seed=0)
    expected = np.zeros((16, 16))
    expected[0, 0] = 1
    for plane in psf.data:
        np.testing.assert_allclose(plane, expected, atol=1e-14)


def test_psfs_real_peak_normalized_and_deterministic():
    a = make_psf_cube((32, 32), 4, fill=0.15, seed=7)
    assert a == make_psf_cube((32, 32), 4, fill=0.15, seed=7)
    assert np.all(a.data[:, 0, 0] == 1.0)
    for plane in a.data:
        spec = np.fft.fft2(plane)
        assert set(np.round(np.abs(spec) / np.abs(spec).max(), 9).ravel()) <= {0.0, 1.0}


def test_masks_are_hermitian_so_psfs_are_real():
    rng = np.random.default_rng(3)
    field = _symmetric_uniform(rng, 32, 32)
    for scale in (1.0, 0.7, 0.5):
        mask = uv_mask((32, 32), 0.15, field, scale)
        np.testing.assert_array_equal(mask, np.roll(mask[::-1, ::-1], 1, axis=(0, 1)))
        assert np.max(np.abs(np.fft.ifft2(mask).imag)) < 1e-12


def test_coverage_fraction_and_band_variation():
    psf = make_psf_cube((32, 32), 4, fill=0.15, seed=1)
    masks = [np.abs(np.fft.fft2(p)) > 1e-9 for p in psf.data]
    for m in masks:
        assert abs(m.mean() - 0.15) < 0.02
    assert not np.array_equal(masks[0], masks[-1])


def test_bad_fill_and_dims():
    for fill in (0.0, 1.5):
        with pytest.raises(ValueError):
            make_psf_cube((16, 16), 2, fill=fill)
    with pytest.raises(ValueError):
        make_psf_cube((12, 16), 2)


def test_sky_power_law_cases():
    ref = np.array([[1.0, 2.0], [0.5, 3.0]])
    flat = SkyModel(ref, np.zeros((2, 2)))
    cube = make_sky_cube(flat, 3, (1.0, 1.5, 2.0))
    for plane in cube.data:
        np.testing.assert_array_equal(plane, ref)
    one = SkyModel(ref, np.ones((2, 2)))
    cube = make_sky_cube(one, 2, (2.0, 1.0))
    np.testing.assert_allclose(cube.data[1], 2 * ref)
    with pytest.raises(ValueError):
        make_sky_cube(one, 2, (1.0, -1.0))
    with pytest.raises(ValueError):
        SkyModel(-ref, np.zeros((2, 2)))


def test_synthetic_sky_positive_where_reference_is():
    sky = SkyModel.synthetic((32, 32), seed=3)
    cube = make_sky_cube(sky, 4)
    assert np.all(cube.data[:, sky.reference > 0] > 0)
    assert np.all(cube.data >= 0)
    ratio = cube.data[-1][sky.reference > 1e-3] / sky.reference[sky.reference > 1e-3]
    assert ratio.min() > 0.25 and ratio.max() < 2.5
    assert (SPECTRAL_A, SPECTRAL_B) == (0.3, 0.5)


def test_gaussian_field_standardized():
    g = gaussian_field((32, 32), 4.0, 0)
    assert abs(g.mean()) < 1e-12 and g.std() == pytest.approx(1.0)


def test_wavelength_grid_spans_two_to_one():
    wl = wavelength_grid(5)
    assert wl[0] == 1.0 and wl[-1] == 2.0 and len(wl) == 5
    assert np.allclose(np.diff(wl), 0.25)


def test_noise_snr_and_variance():
    ds = simulate((32, 32), 4, snr_db=10, seed=0)
    noise = ds.dirty.data - ds.clean.data
    realized = 10 * math.log10(np.sum(ds.clean.data ** 2) / np.sum(noise ** 2))
    assert 9.5 <= realized <= 10.5
    var = np.sum(ds.clean.data ** 2) / (ds.clean.data.size * 10.0)
    assert ds.noise.variances == (pytest.approx(var),) * 4


def test_noise_seeded_and_noiseless_warning():
    clean = ImageCube(np.ones((2, 4, 4)))
    a, _ = add_noise(clean, 10, seed=3)
    b, _ = add_noise(clean, 10, seed=3)
    assert a == b
    with pytest.warns(UserWarning):
        c, nm = add_noise(clean, math.inf, seed=3)
    assert c == clean and nm.variances == (NOISELESS_VARIANCE,) * 2 and NOISELESS_VARIANCE > 0
    with pytest.raises(ValueError):
        add_noise(ImageCube(np.zeros((1, 2, 2))), 10, seed=0)


def test_pipeline_consistency_and_determinism():
    ds = simulate((16, 16), 3, seed=4)
    rebuilt = convolve_cube(ds.sky, ds.psf)
    assert rebuilt == ds.clean
    noisy, _ = add_noise(ds.clean, 10.0, ds.manifest["seeds"]["noise"])
    assert noisy == ds.dirty
    again = simulate((16, 16), 3, seed=4)
    assert all(getattr(again, k) == getattr(ds, k) for k in ("sky", "psf", "clean", "dirty"))
    assert ds.manifest["variances"] == list(ds.noise.variances)
