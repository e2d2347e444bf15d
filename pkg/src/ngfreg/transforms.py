"""Rigid, affine and piecewise-bilinear B-spline transforms.

All transforms map reference-image points ``x`` to template-image points
``y(x)`` and accept a single point ``(2,)`` or a stack of points ``(..., 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp


def _points(x) -> np.ndarray:
    pts = np.asarray(x, dtype=np.float64)
    if pts.shape[-1] != 2:
        raise ValueError(f"points must have a trailing dimension of 2, got {pts.shape}")
    return pts


def rotation_matrix(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class RigidTransform:
    """Rotation by ``phi`` about ``center`` followed by translation ``t``."""

    phi: float = 0.0
    t: np.ndarray = field(default_factory=lambda: np.zeros(2))
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        object.__setattr__(self, "phi", float(self.phi))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(2))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(2))
        if not (np.isfinite(self.phi) and np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.center))):
            raise ValueError("rigid transform parameters must be finite")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.phi, self.t[0], self.t[1]])

    def with_params(self, p) -> "RigidTransform":
        return RigidTransform(p[0], p[1:3], self.center)

    def apply(self, x) -> np.ndarray:
        return apply_rigid(self, x)


@dataclass(frozen=True)
class AffineTransform:
    """``y(x) = [[a1, a2], [a4, a5]] x + (a3, a6)``."""

    a: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]))

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).reshape(6)
        if not np.all(np.isfinite(a)):
            raise ValueError("affine parameters must be finite")
        object.__setattr__(self, "a", a)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls()

    @classmethod
    def from_matrix(cls, A, b) -> "AffineTransform":
        A = np.asarray(A, dtype=np.float64)
        return cls([A[0, 0], A[0, 1], b[0], A[1, 0], A[1, 1], b[1]])

    @property
    def matrix(self) -> np.ndarray:
        a = self.a
        return np.array([[a[0], a[1]], [a[3], a[4]]])

    @property
    def offset(self) -> np.ndarray:
        return np.array([self.a[2], self.a[5]])

    @property
    def params(self) -> np.ndarray:
        return self.a.copy()

    def with_params(self, p) -> "AffineTransform":
        return AffineTransform(p)

    def apply(self, x) -> np.ndarray:
        return apply_affine(self, x)


def apply_rigid(rt: RigidTransform, x) -> np.ndarray:
    x = _points(x)
    return rt.center + (x - rt.center) @ rotation_matrix(rt.phi).T + rt.t


def apply_affine(at: AffineTransform, x) -> np.ndarray:
    x = _points(x)
    a = at.a
    out = np.empty(np.broadcast_shapes(x.shape, (2,)))
    out[..., 0] = a[0] * x[..., 0] + a[1] * x[..., 1] + a[2]
    out[..., 1] = a[3] * x[..., 0] + a[4] * x[..., 1] + a[5]
    return out


def rigid_to_affine(rt: RigidTransform) -> AffineTransform:
    """Affine transform that is pointwise equal to ``rt`` (center folded into the offset)."""
    rot = rotation_matrix(rt.phi)
    offset = rt.center - rot @ rt.center + rt.t
    return AffineTransform.from_matrix(rot, offset)


def linear_basis(coords: np.ndarray, start: float, stop: float, m: int) -> sp.csr_matrix:
    """Sparse tent-function basis, shape ``(len(coords), m)``.

    Nodes are ``m`` equidistant points on ``[start, stop]``; coordinates
    outside are clamped to the nearest end.
    """
    coords = np.asarray(coords, dtype=np.float64).ravel()
    t = (coords - start) / (stop - start) * (m - 1)
    t = np.clip(t, 0.0, m - 1)
    i = np.minimum(np.floor(t).astype(np.intp), m - 2)
    f = t - i
    n = coords.size
    rows = np.repeat(np.arange(n), 2)
    cols = np.stack([i, i + 1], axis=1).ravel()
    vals = np.stack([1.0 - f, f], axis=1).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, m))


@dataclass(frozen=True)
class BSplineField:
    """Displacement on a uniform control grid with 1st-order (tent) B-splines.

    Attributes
    ----------
    grid_m : (m1, m2)
        Control points along x1 and x2.
    domain : (x1_min, x2_min, x1_max, x2_max)
        Physical rectangle spanned by the control grid.
    coefficients : (2, m2, m1) array
        Displacement components ``u1`` and ``u2`` at each control point.
    """

    grid_m: Tuple[int, int]
    domain: Tuple[float, float, float, float]
    coefficients: np.ndarray = None

    def __post_init__(self):
        m1, m2 = (int(v) for v in self.grid_m)
        if m1 < 2 or m2 < 2:
            raise ValueError(f"control grid needs at least 2 points per axis, got {self.grid_m}")
        dom = tuple(float(v) for v in self.domain)
        if not (dom[2] > dom[0] and dom[3] > dom[1]):
            raise ValueError(f"invalid control domain {self.domain}")
        if self.coefficients is None:
            c = np.zeros((2, m2, m1))
        else:
            c = np.asarray(self.coefficients, dtype=np.float64).reshape(2, m2, m1)
        if not np.all(np.isfinite(c)):
            raise ValueError("B-spline coefficients must be finite")
        object.__setattr__(self, "grid_m", (m1, m2))
        object.__setattr__(self, "domain", dom)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def zeros(cls, grid_m, domain) -> "BSplineField":
        return cls(grid_m, domain)

    @property
    def n_params(self) -> int:
        return 2 * self.grid_m[0] * self.grid_m[1]

    @property
    def params(self) -> np.ndarray:
        return self.coefficients.ravel().copy()

    def with_params(self, p) -> "BSplineField":
        return BSplineField(self.grid_m, self.domain, np.asarray(p).reshape(self.coefficients.shape))

    @property
    def cell_size(self) -> Tuple[float, float]:
        m1, m2 = self.grid_m
        x0, y0, x1, y1 = self.domain
        return (x1 - x0) / (m1 - 1), (y1 - y0) / (m2 - 1)

    def control_points(self) -> np.ndarray:
        """Control point positions, shape ``(m2, m1, 2)``."""
        m1, m2 = self.grid_m
        x0, y0, x1, y1 = self.domain
        gx, gy = np.meshgrid(np.linspace(x0, x1, m1), np.linspace(y0, y1, m2))
        return np.stack([gx, gy], axis=-1)

    def basis_x(self, xs) -> sp.csr_matrix:
        return linear_basis(xs, self.domain[0], self.domain[2], self.grid_m[0])

    def basis_y(self, ys) -> sp.csr_matrix:
        return linear_basis(ys, self.domain[1], self.domain[3], self.grid_m[1])

    def displacement(self, x) -> np.ndarray:
        """``u(x)`` at scattered points, same leading shape as ``x``."""
        x = _points(x)
        flat = x.reshape(-1, 2)
        bx = self.basis_x(flat[:, 0])
        by = self.basis_y(flat[:, 1])
        out = np.empty_like(flat)
        for c in range(2):
            out[:, c] = _rowdot(by @ self.coefficients[c], bx)
        return out.reshape(x.shape)

    def displacement_on_grid(self, xs, ys) -> np.ndarray:
        """``u`` on the tensor grid ``xs`` x ``ys``, shape ``(2, len(ys), len(xs))``."""
        bx = self.basis_x(xs)
        by = self.basis_y(ys)
        return np.stack([by @ (bx @ self.coefficients[c].T).T for c in range(2)])

    def apply(self, x) -> np.ndarray:
        return apply_bspline(self, x)


def _rowdot(dense: np.ndarray, sparse_rows: sp.csr_matrix) -> np.ndarray:
    """``out[k] = dense[k] . sparse_rows[k]`` for matching row counts."""
    coo = sparse_rows.tocoo()
    return np.bincount(coo.row, weights=coo.data * dense[coo.row, coo.col], minlength=dense.shape[0])


def apply_bspline(bf: BSplineField, x) -> np.ndarray:
    x = _points(x)
    return x + bf.displacement(x)


@dataclass(frozen=True)
class ComposedTransform:
    """Affine pre-transform plus an additive B-spline displacement: ``A x + b + u(x)``."""

    affine: AffineTransform = field(default_factory=AffineTransform)
    field: BSplineField = None

    def apply(self, x) -> np.ndarray:
        if self.field is None:
            return apply_affine(self.affine, x)
        return compose_affine_bspline(self.affine, self.field, x)


def compose_affine_bspline(at: AffineTransform, bf: BSplineField, x) -> np.ndarray:
    x = _points(x)
    return apply_affine(at, x) + bf.displacement(x)


def prolong(bf: BSplineField, new_m) -> BSplineField:
    """Re-express ``bf`` on a finer control grid over the same domain.

    Exact whenever ``new_m - 1`` is a multiple of ``m - 1`` on both axes.
    """
    new_m = tuple(int(v) for v in new_m)
    if new_m[0] < bf.grid_m[0] or new_m[1] < bf.grid_m[1]:
        raise ValueError(f"cannot prolong from {bf.grid_m} to smaller grid {new_m}")
    x0, y0, x1, y1 = bf.domain
    xs = np.linspace(x0, x1, new_m[0])
    ys = np.linspace(y0, y1, new_m[1])
    return BSplineField(new_m, bf.domain, bf.displacement_on_grid(xs, ys))


def min_jacobian_and_area_change(y, xs, ys, reference_det: float = 1.0) -> Tuple[float, float]:
    """Smallest cell area ratio and largest relative area change (percent).

    Each cell of the lattice ``xs`` x ``ys`` is mapped through ``y`` and the
    signed area of the image quadrilateral is compared with the cell area.
    A ratio ``<= 0`` means the transform folds. The area change is taken
    relative to ``reference_det`` (e.g. the determinant of an affine part).
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    mapped = np.asarray(y.apply(np.stack([gx, gy], axis=-1)) if hasattr(y, "apply") else y(np.stack([gx, gy], axis=-1)))
    p00 = mapped[:-1, :-1]
    p01 = mapped[:-1, 1:]
    p11 = mapped[1:, 1:]
    p10 = mapped[1:, :-1]
    # shoelace over the quad p00 -> p01 -> p11 -> p10
    d1 = p11 - p00
    d2 = p10 - p01
    area = 0.5 * (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])
    cell = np.outer(np.diff(ys), np.diff(xs))
    ratio = area / cell
    return float(ratio.min()), float(np.abs(ratio / reference_det - 1.0).max() * 100.0)
