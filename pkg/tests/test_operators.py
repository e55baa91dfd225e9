import numpy as np
import pytest

from muffin.cube import ImageCube
from muffin.operators import BandOperator, PsfSet

from oracles import brute_circular_convolution, rel


def delta(shape):
    d = np.zeros(shape)
    d[0, 0] = 1.0
    return d


def test_delta_psf_is_identity():
    img = np.random.default_rng(0).standard_normal((8, 8))
    op = BandOperator(delta((8, 8)))
    np.testing.assert_allclose(op.apply(img), img, atol=1e-14)
    np.testing.assert_allclose(op.adjoint(img), img, atol=1e-14)


def test_delta_image_returns_psf():
    psf = np.random.default_rng(1).standard_normal((8, 8))
    np.testing.assert_allclose(BandOperator(psf).apply(delta((8, 8))), psf, atol=1e-14)


def test_matches_brute_force_convolution():
    rng = np.random.default_rng(2)
    img, psf = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    oracle = brute_circular_convolution(img, psf)
    assert np.max(np.abs(BandOperator(psf).apply(img) - oracle)) < 1e-12


def test_symmetric_psf_is_self_adjoint():
    rng = np.random.default_rng(3)
    psf = rng.standard_normal((8, 8))
    psf = 0.5 * (psf + np.roll(psf[::-1, ::-1], 1, axis=(0, 1)))
    op = BandOperator(psf)
    x = rng.standard_normal((8, 8))
    np.testing.assert_allclose(op.adjoint(x), op.apply(x), atol=1e-12)


def test_adjoint_identity_random_pairs():
    rng = np.random.default_rng(4)
    for _ in range(100):
        op = BandOperator(rng.standard_normal((16, 16)))
        x, y = rng.standard_normal((16, 16)), rng.standard_normal((16, 16))
        lhs = np.vdot(op.apply(x), y)
        rhs = np.vdot(x, op.adjoint(y))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


def test_norm_is_max_transfer_and_matches_dense_matrix():
    rng = np.random.default_rng(5)
    psf = rng.standard_normal((4, 4))
    op = BandOperator(psf)
    dense = np.stack([op.apply(e.reshape(4, 4)).ravel() for e in np.eye(16)], axis=1)
    top = np.linalg.svd(dense, compute_uv=False)[0] ** 2
    assert op.norm_sq == pytest.approx(top, rel=1e-12)
    assert op.norm_sq == pytest.approx(np.max(np.abs(np.fft.fft2(psf)) ** 2), rel=1e-12)


def test_gradient_cases():
    rng = np.random.default_rng(6)
    op = BandOperator(rng.standard_normal((8, 8)))
    x = rng.standard_normal((8, 8))
    y = op.apply(x)
    assert np.max(np.abs(op.gradient(x, y))) < 1e-12
    np.testing.assert_allclose(op.gradient(np.zeros((8, 8)), y), -op.adjoint(y), atol=1e-12)


def test_gradient_finite_difference():
    rng = np.random.default_rng(7)
    op = BandOperator(rng.standard_normal((8, 8)))
    x, y, d = (rng.standard_normal((8, 8)) for _ in range(3))

    def f(z):
        r = y - op.apply(z)
        return 0.5 * np.sum(r * r)

    h = 1e-6
    fd = (f(x + h * d) - f(x - h * d)) / (2 * h)
    assert fd == pytest.approx(np.vdot(op.gradient(x, y), d), rel=1e-6)


def test_gram_matches_composition():
    rng = np.random.default_rng(8)
    op = BandOperator(rng.standard_normal((8, 16)))
    x = rng.standard_normal((8, 16))
    assert rel(op.gram(x), op.adjoint(op.apply(x))) < 1e-12


def test_shape_mismatch_errors():
    op = BandOperator(np.zeros((8, 8)))
    for fn in (op.apply, op.adjoint):
        with pytest.raises(ValueError):
            fn(np.zeros((4, 8)))
    with pytest.raises(ValueError):
        op.gradient(np.zeros((8, 8)), np.zeros((8, 4)))
    with pytest.raises(ValueError):
        BandOperator(np.zeros(8))


def test_psf_set():
    rng = np.random.default_rng(9)
    planes = rng.standard_normal((3, 8, 8))
    ps = PsfSet(ImageCube(planes))
    assert len(ps) == 3 and ps.shape == (8, 8)
    assert ps.beta == max(op.norm_sq for op in ps)
    x = rng.standard_normal((3, 8, 8))
    np.testing.assert_allclose(ps.apply(x)[1], ps[1].apply(x[1]))
    with pytest.raises(ValueError):
        PsfSet([np.zeros((8, 8)), np.zeros((4, 4))])
    with pytest.raises(ValueError):
        PsfSet([])
