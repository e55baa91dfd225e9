import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from muffin.transforms import (
    DEFAULT_WAVELETS, SpatialAnalysis, SpectralAnalysis, default_depth, power_iteration, spatial_adjoint,
    spatial_analyze, spectral_adjoint, spectral_analyze,
)

from oracles import dct2_matrix, rel


@pytest.fixture(scope="module")
def ws16():
    return SpatialAnalysis((16, 16))


def test_eight_daubechies_bases_by_default(ws16):
    assert DEFAULT_WAVELETS == tuple(f"db{k}" for k in range(1, 9))
    assert ws16.nbases == 8 and ws16.norm_sq == 8.0
    assert ws16.coeff_shape == (8, 16, 16)
    assert default_depth(32, 64) == 3 and default_depth(4, 4) == 1


def test_haar_constant_image_has_no_details():
    ws = SpatialAnalysis((8, 8), wavelets=("db1",), depth=3)
    c = ws.analyze(np.full((8, 8), 2.5))[0]
    mask = np.ones((8, 8), bool)
    mask[0, 0] = False
    assert np.max(np.abs(c[mask])) < 1e-12
    assert c[0, 0] == pytest.approx(2.5 * 8)


def test_parseval_over_union(ws16):
    img = np.random.default_rng(0).standard_normal((16, 16))
    c = ws16.analyze(img)
    assert np.sum(c * c) == pytest.approx(8 * np.sum(img * img), rel=1e-10)


def test_each_basis_is_orthonormal(ws16):
    img = np.random.default_rng(1).standard_normal((16, 16))
    per_basis = ws16.synthesize(ws16.analyze(img))
    for plane in per_basis:
        assert rel(plane, img) < 1e-10


def test_tight_frame_and_zero(ws16):
    img = np.random.default_rng(2).standard_normal((16, 16))
    assert rel(spatial_adjoint(ws16, spatial_analyze(ws16, img)), 8 * img) < 1e-10
    assert np.all(ws16.adjoint(np.zeros(ws16.coeff_shape)) == 0)


def test_spatial_adjoint_identity(ws16):
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.standard_normal((16, 16))
        u = rng.standard_normal(ws16.coeff_shape)
        lhs, rhs = np.vdot(ws16.analyze(x), u), np.vdot(x, ws16.adjoint(u))
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_rectangular_grid():
    ws = SpatialAnalysis((8, 32))
    x = np.random.default_rng(4).standard_normal((8, 32))
    assert rel(ws.adjoint(ws.analyze(x)), 8 * x) < 1e-10


@pytest.mark.parametrize("shape", [(12, 16), (16, 1), (1, 1)])
def test_non_power_of_two_rejected(shape):
    with pytest.raises(ValueError):
        SpatialAnalysis(shape)


def test_shape_errors(ws16):
    with pytest.raises(ValueError):
        ws16.analyze(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        ws16.adjoint(np.zeros((7, 16, 16)))
    with pytest.raises(ValueError):
        SpatialAnalysis((8, 8), depth=4)
    with pytest.raises(ValueError):
        SpectralAnalysis(4).analyze(np.zeros(3))


def test_spectral_constant_has_dc_only():
    wl = SpectralAnalysis(5)
    c = wl.analyze(np.full(5, 1.5))
    assert c[0] == pytest.approx(np.sqrt(5) * 1.5)
    assert np.max(np.abs(c[1:])) < 1e-14


def test_spectral_matches_matrix_oracle_and_transpose():
    rng = np.random.default_rng(5)
    s = rng.standard_normal(4)
    assert np.max(np.abs(spectral_analyze(SpectralAnalysis(4), s) - dct2_matrix(4) @ s)) < 1e-12
    c = rng.standard_normal(3)
    assert np.max(np.abs(spectral_adjoint(SpectralAnalysis(3), c) - dct2_matrix(3).T @ c)) < 1e-12


def test_spectral_is_orthonormal_along_band_axis():
    rng = np.random.default_rng(6)
    wl = SpectralAnalysis(6)
    x = rng.standard_normal((6, 4, 4))
    c = wl.analyze(x)
    assert np.linalg.norm(c) == pytest.approx(np.linalg.norm(x), rel=1e-12)
    assert rel(wl.adjoint(c), x) < 1e-12
    assert rel(wl.analyze(wl.adjoint(x)), x) < 1e-12
    np.testing.assert_allclose(c[:, 1, 2], dct2_matrix(6) @ x[:, 1, 2], atol=1e-12)


def test_power_iteration_certificates(ws16):
    est = power_iteration(ws16.analyze, ws16.adjoint, (16, 16), iters=30)
    assert est == pytest.approx(8.0, rel=1e-6)
    wl = SpectralAnalysis(5)
    assert power_iteration(wl.analyze, wl.adjoint, (5,), iters=30) == pytest.approx(1.0, rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    ws = SpatialAnalysis((8, 8))
    x, y = rng.standard_normal((2, 8, 8))
    lhs = ws.analyze(a * x + b * y)
    rhs = a * ws.analyze(x) + b * ws.analyze(y)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.max(np.abs(rhs)))
    wl = SpectralAnalysis(8)
    assert np.max(np.abs(wl.adjoint(a * x + b * y) - a * wl.adjoint(x) - b * wl.adjoint(y))) < 1e-10
