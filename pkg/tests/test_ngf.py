import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import smooth_image
from ngfreg.image import Image
from ngfreg.ngf import (
    NgfObjective,
    NgfParams,
    gauss_newton_system,
    ngf_gradient,
    ngf_value,
    parametric_system,
    reference_system,
    transformed_grid,
)
from ngfreg.transforms import AffineTransform, BSplineField, ComposedTransform, RigidTransform


def brute_force_ngf(R, Ty, h, eps):
    """Scalar loop over pixels; independent of the vectorized and compiled paths."""
    H, W = R.shape

    def d(f, i, j, axis):
        if axis == 0:
            lo, hi = max(j - 1, 0), min(j + 1, W - 1)
            return (f[i][hi] - f[i][lo]) / ((hi - lo) * h)
        lo, hi = max(i - 1, 0), min(i + 1, H - 1)
        return (f[hi][j] - f[lo][j]) / ((hi - lo) * h)

    total = 0.0
    for i in range(H):
        for j in range(W):
            gr = (d(R, i, j, 0), d(R, i, j, 1))
            gt = (d(Ty, i, j, 0), d(Ty, i, j, 1))
            num = (gr[0] * gt[0] + gr[1] * gt[1] + eps * eps) ** 2
            den = (gt[0] ** 2 + gt[1] ** 2 + eps * eps) * (gr[0] ** 2 + gr[1] ** 2 + eps * eps)
            total += 1.0 - num / den
    return h * h * total


def random_pair(seed, n=16, spacing=1.0):
    rng = np.random.default_rng(seed)
    return smooth_image(rng, n, spacing), smooth_image(rng, n, spacing)


def off_lattice_affine(rng, scale=0.02):
    # generic parameters keep sample points away from the bilinear kinks
    a = np.array([1.0, 0.0, 0.31, 0.0, 1.0, -0.23]) + rng.uniform(-scale, scale, 6)
    return AffineTransform(a)


def fd_gradient(fun, x, step=1e-5):
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g


# -- value


def test_identical_images_give_zero():
    R, _ = random_pair(0)
    p = NgfParams(0.1)
    assert ngf_value(R, R, AffineTransform(), p) == pytest.approx(0.0, abs=1e-12)
    assert ngf_value(R, R, RigidTransform(), p) == pytest.approx(0.0, abs=1e-12)


def test_single_edge_against_constant_template():
    data = np.zeros((3, 3))
    data[:, 2] = 0.8
    h, eps = 0.5, 0.3
    R = Image(data, h)
    T = Image(np.full((3, 3), 0.4), h)
    expected = 0.0
    for i in range(3):
        for j in range(3):
            lo, hi = max(j - 1, 0), min(j + 1, 2)
            g2 = ((data[i, hi] - data[i, lo]) / ((hi - lo) * h)) ** 2
            expected += g2 / (g2 + eps * eps)
    expected *= h * h
    assert ngf_value(R, T, AffineTransform(), NgfParams(eps)) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("seed", range(50))
def test_value_range_and_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    h = float(rng.uniform(0.1, 2.0))
    R = Image(rng.random((n, n)), h)
    T = Image(rng.random((n, n)), h)
    eps = float(rng.uniform(0.01, 1.0))
    y = AffineTransform(np.array([1, 0, 0, 0, 1, 0]) + rng.normal(0, 0.05, 6))
    obj = NgfObjective(R, T, eps)
    P = transformed_grid(y, obj.grid)
    v = obj.value(P)
    assert 0.0 <= v <= h * h * n * n
    assert v == pytest.approx(brute_force_ngf(R.data, obj.warped(P), h, eps), rel=1e-12, abs=1e-14)
    assert v == pytest.approx(obj.reference_value(P), rel=1e-12, abs=1e-14)


def test_matched_gradients_are_zero_for_every_epsilon():
    R, _ = random_pair(3)
    for eps in (0.01, 0.1, 1.0, 10.0):
        assert ngf_value(R, R, AffineTransform(), NgfParams(eps)) == pytest.approx(0.0, abs=1e-12)


def test_invalid_inputs():
    R, T = random_pair(1)
    with pytest.raises(ValueError):
        NgfParams(0.0)
    with pytest.raises(ValueError):
        ngf_value(R, T, AffineTransform(), NgfParams(0.1, spacing=2.0))
    obj = NgfObjective(R, T, 0.1)
    with pytest.raises(ValueError):
        obj.value(np.zeros((3, 3, 2)))
    P = obj.grid.copy()
    P[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        obj.value(P)


# -- gradient


def test_gradient_vanishes_at_identity_for_identical_images():
    R, _ = random_pair(2)
    g = ngf_gradient(R, R, AffineTransform(), NgfParams(0.1))
    assert np.linalg.norm(g) < 1e-8
    bf = BSplineField.zeros((5, 5), (0, 0, 16, 16))
    assert np.linalg.norm(ngf_gradient(R, R, bf, NgfParams(0.1))) < 1e-8


@pytest.mark.parametrize("seed", range(4))
def test_affine_gradient_matches_finite_differences(seed):
    R, T = random_pair(10 + seed)
    p = NgfParams(0.1)
    y = off_lattice_affine(np.random.default_rng(seed))
    g = ngf_gradient(R, T, y, p)
    fd = fd_gradient(lambda a: ngf_value(R, T, AffineTransform(a), p), y.params)
    assert g.shape == (6,)
    np.testing.assert_allclose(g, fd, rtol=1e-4)


@pytest.mark.parametrize("seed", range(4))
def test_rigid_gradient_matches_finite_differences(seed):
    R, T = random_pair(20 + seed)
    p = NgfParams(0.1)
    y = RigidTransform(0.03 * (seed + 1), (0.27, -0.41), (7.9, 8.3))
    g = ngf_gradient(R, T, y, p)
    fd = fd_gradient(lambda q: ngf_value(R, T, y.with_params(q), p), y.params)
    np.testing.assert_allclose(g, fd, rtol=1e-4)


@pytest.mark.parametrize("seed", range(4))
def test_bspline_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    R, T = random_pair(30 + seed)
    p = NgfParams(0.1)
    bf = BSplineField((5, 5), (0.0, 0.0, 16.0, 16.0), rng.uniform(-0.6, 0.6, (2, 5, 5)) + 0.137)
    g = ngf_gradient(R, T, bf, p)
    assert g.shape == (50,)
    fd = fd_gradient(lambda c: ngf_value(R, T, bf.with_params(c), p), bf.params)
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-9 * np.abs(fd).max())


def test_composed_gradient_matches_field_gradient():
    rng = np.random.default_rng(5)
    R, T = random_pair(40)
    p = NgfParams(0.2)
    at = off_lattice_affine(rng)
    bf = BSplineField((4, 4), (0.0, 0.0, 16.0, 16.0), rng.uniform(-0.3, 0.3, (2, 4, 4)))
    y = ComposedTransform(at, bf)
    g = ngf_gradient(R, T, y, p)
    fd = fd_gradient(lambda c: ngf_value(R, T, ComposedTransform(at, bf.with_params(c)), p), bf.params)
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-9 * np.abs(fd).max())


# -- Gauss-Newton system


@pytest.mark.parametrize("seed", range(20))
def test_gauss_newton_matrix_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    R, T = random_pair(100 + seed, n=12, spacing=float(rng.uniform(0.2, 2)))
    H, g = gauss_newton_system(R, T, off_lattice_affine(rng), NgfParams(0.1))
    assert H.shape == (6, 6)
    assert np.abs(H - H.T).max() == 0.0
    assert np.linalg.eigvalsh(H).min() >= -1e-10 * max(1.0, np.abs(H).max())


@pytest.mark.parametrize("seed", range(5))
def test_gauss_newton_gradient_equals_ngf_gradient(seed):
    rng = np.random.default_rng(seed)
    R, T = random_pair(200 + seed)
    p = NgfParams(0.1)
    for y in (off_lattice_affine(rng), RigidTransform(0.05, (0.2, 0.1), (8.0, 8.0))):
        _, g = gauss_newton_system(R, T, y, p)
        np.testing.assert_allclose(g, ngf_gradient(R, T, y, p), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_compiled_system_matches_explicit_jacobian(seed):
    rng = np.random.default_rng(seed)
    R, T = random_pair(300 + seed)
    obj = NgfObjective(R, T, 0.1)
    for y in (off_lattice_affine(rng), RigidTransform(-0.1, (0.3, -0.2), (7.0, 9.0))):
        v1, H1, g1 = parametric_system(obj, y)
        v2, H2, g2 = reference_system(obj, y)
        assert v1 == pytest.approx(v2, rel=1e-12)
        np.testing.assert_allclose(H1, H2, rtol=1e-10, atol=1e-12 * np.abs(H2).max())
        np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-12 * np.abs(g2).max())


def test_linear_value_matches_point_path():
    R, T = random_pair(7)
    obj = NgfObjective(R, T, 0.1)
    y = off_lattice_affine(np.random.default_rng(7), scale=0.1)
    assert obj.linear_value(y.matrix, y.offset) == pytest.approx(obj.value(y.apply(obj.grid)), rel=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 2.0))
def test_value_bounds_property(seed, eps):
    R, T = random_pair(seed, n=8)
    y = AffineTransform(np.array([1, 0, 0, 0, 1, 0]) + np.random.default_rng(seed).normal(0, 0.1, 6))
    v = ngf_value(R, T, y, NgfParams(eps))
    assert 0.0 <= v <= R.spacing**2 * R.data.size
