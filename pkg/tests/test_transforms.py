import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ngfreg.transforms import (
    AffineTransform,
    BSplineField,
    ComposedTransform,
    RigidTransform,
    apply_affine,
    apply_bspline,
    apply_rigid,
    compose_affine_bspline,
    min_jacobian_and_area_change,
    prolong,
    rigid_to_affine,
)

DOMAIN = (0.0, 0.0, 1.0, 1.0)


def test_rigid_examples():
    x = np.array([1.0, 0.0])
    np.testing.assert_array_equal(apply_rigid(RigidTransform(), x), x)
    np.testing.assert_allclose(apply_rigid(RigidTransform(np.pi), x), (-1, 0), atol=1e-15)
    np.testing.assert_allclose(apply_rigid(RigidTransform(np.pi / 2, (1, 2)), x), (1, 3), atol=1e-15)


def test_affine_examples():
    x = np.array([1.0, 1.0])
    np.testing.assert_array_equal(apply_affine(AffineTransform(), x), x)
    np.testing.assert_array_equal(apply_affine(AffineTransform([2, 0, 0, 0, 2, 0]), x), (2, 2))
    np.testing.assert_array_equal(apply_affine(AffineTransform([1, 0, 3, 0, 1, -1]), (0, 0)), (3, -1))


def test_rigid_to_affine_examples():
    a = rigid_to_affine(RigidTransform(0.0, (0.3, -0.2)))
    np.testing.assert_array_equal(a.matrix, np.eye(2))
    np.testing.assert_array_equal(a.offset, (0.3, -0.2))
    b = rigid_to_affine(RigidTransform(np.pi / 2))
    np.testing.assert_allclose(b.matrix, [[0, -1], [1, 0]], atol=1e-16)
    np.testing.assert_allclose(b.offset, 0, atol=1e-16)


@settings(max_examples=25, deadline=None)
@given(st.floats(-np.pi, np.pi), st.tuples(st.floats(-1, 1), st.floats(-1, 1)), st.tuples(st.floats(-1, 1), st.floats(-1, 1)))
def test_rigid_to_affine_pointwise(phi, t, c):
    rt = RigidTransform(phi, t, c)
    x = np.random.default_rng(0).uniform(-2, 2, (100, 2))
    assert np.abs(apply_rigid(rt, x) - apply_affine(rigid_to_affine(rt), x)).max() < 1e-12


def test_bspline_zero_constant_and_nodes(rng):
    x = rng.uniform(0, 1, (50, 2))
    bf = BSplineField.zeros((5, 4), DOMAIN)
    np.testing.assert_array_equal(apply_bspline(bf, x), x)
    const = BSplineField((5, 4), DOMAIN, np.stack([np.full((4, 5), 0.1), np.full((4, 5), -0.2)]))
    np.testing.assert_allclose(apply_bspline(const, x) - x, np.tile([0.1, -0.2], (50, 1)), atol=1e-15)
    coef = rng.normal(size=(2, 4, 5))
    bf = BSplineField((5, 4), DOMAIN, coef)
    nodes = bf.control_points()
    np.testing.assert_allclose(bf.displacement(nodes), np.moveaxis(coef, 0, -1), atol=1e-14)


def test_bspline_linear_reproduction(rng):
    bf0 = BSplineField.zeros((6, 5), DOMAIN)
    nodes = bf0.control_points()
    A = rng.normal(size=(2, 2))
    u = nodes @ A.T + [0.1, 0.2]
    bf = BSplineField((6, 5), DOMAIN, np.moveaxis(u, -1, 0))
    x = rng.uniform(0, 1, (100, 2))
    np.testing.assert_allclose(bf.displacement(x), x @ A.T + [0.1, 0.2], atol=1e-13)


def test_bspline_grid_matches_scattered(rng):
    bf = BSplineField((7, 5), (0.1, -0.2, 0.9, 1.3), rng.normal(size=(2, 5, 7)))
    xs = np.linspace(0, 1, 9)
    ys = np.linspace(-0.5, 1.5, 11)
    gx, gy = np.meshgrid(xs, ys)
    scattered = bf.displacement(np.stack([gx, gy], axis=-1))
    np.testing.assert_allclose(bf.displacement_on_grid(xs, ys), np.moveaxis(scattered, -1, 0), atol=1e-14)


def test_bspline_clamps_outside_domain(rng):
    bf = BSplineField((4, 4), DOMAIN, rng.normal(size=(2, 4, 4)))
    np.testing.assert_allclose(bf.displacement((1.5, 0.5)), bf.displacement((1.0, 0.5)), atol=1e-15)


def test_compose_examples(rng):
    at = AffineTransform([1.1, 0.2, 0.3, -0.1, 0.9, 0.05])
    x = rng.uniform(0, 1, (20, 2))
    zero = BSplineField.zeros((3, 3), DOMAIN)
    np.testing.assert_allclose(compose_affine_bspline(at, zero, x), apply_affine(at, x))
    bf = BSplineField((3, 3), DOMAIN, rng.normal(size=(2, 3, 3)))
    np.testing.assert_allclose(compose_affine_bspline(AffineTransform(), bf, x), apply_bspline(bf, x))
    # hand-picked point: the center node of a 3x3 grid
    p = np.array([0.5, 0.5])
    expected = at.matrix @ p + at.offset + bf.coefficients[:, 1, 1]
    np.testing.assert_allclose(ComposedTransform(at, bf).apply(p), expected, atol=1e-15)


def test_prolong_examples(rng):
    const = BSplineField((3, 3), DOMAIN, np.full((2, 3, 3), 0.4))
    np.testing.assert_allclose(prolong(const, (7, 9)).coefficients, 0.4)
    coarse = BSplineField((2, 2), DOMAIN, rng.normal(size=(2, 2, 2)))
    fine = prolong(coarse, (3, 3))
    np.testing.assert_allclose(fine.coefficients[:, 1, 1], coarse.coefficients.mean(axis=(1, 2)), atol=1e-15)
    bf = BSplineField((5, 6), DOMAIN, rng.normal(size=(2, 6, 5)))
    doubled = prolong(bf, (9, 11))
    x = rng.uniform(0, 1, (1000, 2))
    assert np.abs(doubled.displacement(x) - bf.displacement(x)).max() < 1e-12
    with pytest.raises(ValueError):
        prolong(bf, (3, 3))


def test_jacobian_examples():
    xs = ys = np.linspace(0, 1, 11)
    assert min_jacobian_and_area_change(AffineTransform(), xs, ys) == pytest.approx((1.0, 0.0), abs=1e-12)
    jac, change = min_jacobian_and_area_change(AffineTransform([1.1, 0, 0, 0, 1.1, 0]), xs, ys)
    assert jac == pytest.approx(1.21)
    assert change == pytest.approx(21.0)
    jac, _ = min_jacobian_and_area_change(AffineTransform([-1, 0, 0, 0, 1, 0]), xs, ys)
    assert jac <= 0


def test_invalid_parameters():
    with pytest.raises(ValueError):
        AffineTransform([1, 0, 0, 0, 1])
    with pytest.raises(ValueError):
        BSplineField((1, 3), DOMAIN)
    with pytest.raises(ValueError):
        BSplineField((3, 3), (0, 0, 0, 1))
