"""Normalized Gradient Fields distance with analytic derivatives.

For reference gradients ``gR`` and gradients ``gT`` of the template warped
onto the reference grid::

    NGF = h^2 * sum_i 1 - r_i^2,
    r_i = (<gT_i, gR_i> + eps^2) / sqrt((|gT_i|^2 + eps^2) (|gR_i|^2 + eps^2))

The template is resampled at ``y(x_i)`` first and differentiated on the
reference grid afterwards, so ``gT = D T(y(x))`` with the same finite
difference operator ``D`` used for the reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import _kernels
from .image import BilinearSampler, Image, gradient
from .transforms import AffineTransform, BSplineField, ComposedTransform, RigidTransform


@dataclass(frozen=True)
class NgfParams:
    """Edge parameter and (optionally) the expected reference pixel size."""

    epsilon: float
    spacing: Optional[float] = None

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.spacing is not None and not (np.isfinite(self.spacing) and self.spacing > 0):
            raise ValueError(f"spacing must be positive, got {self.spacing}")


class NgfObjective:
    """NGF between a fixed reference grid and a template sampled at moving points.

    All methods take the sample points ``P = y(x)`` as an ``(height, width, 2)``
    array laid out on the reference grid.
    """

    def __init__(self, R: Image, T: Image, epsilon: float):
        if not (np.isfinite(epsilon) and epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        self.R = R
        self.T = T
        self.h = R.spacing
        self.eps2 = float(epsilon) ** 2
        self.xs, self.ys = R.pixel_centers()
        self.grid = R.grid_points()
        self.gR = np.empty((2,) + R.shape)
        _kernels.grad(np.ascontiguousarray(R.data, dtype=np.float64), self.h, self.gR)
        self.aR = self.gR[0] ** 2 + self.gR[1] ** 2 + self.eps2
        self.sampler = BilinearSampler(T)
        self._tpad = self.sampler.padded
        self._tox, self._toy = (float(v) for v in T.origin)
        self._ty = np.empty(R.shape)
        self._slope = np.empty(R.shape + (2,))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.R.shape

    def _check(self, P: np.ndarray) -> np.ndarray:
        P = np.asarray(P, dtype=np.float64)
        if P.shape != self.grid.shape:
            raise ValueError(f"sample points of shape {P.shape} do not match reference grid {self.grid.shape}")
        if not np.all(np.isfinite(P)):
            raise ValueError("non-finite transformed points")
        return P

    def _misfit(self, gT: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        gR = self.gR
        aT = gT[0] ** 2 + gT[1] ** 2 + self.eps2
        cross = gT[0] * gR[1] - gT[1] * gR[0]
        diff2 = (gT[0] - gR[0]) ** 2 + (gT[1] - gR[1]) ** 2
        denom = aT * self.aR
        # 1 - r^2 via the Lagrange identity; non-negative and exactly 0 for gT == gR
        misfit = (cross * cross + self.eps2 * diff2) / denom
        return misfit, aT, denom

    def _sample(self, P: np.ndarray):
        P = np.ascontiguousarray(self._check(P))
        _kernels.sample_points(self._tpad, self._tox, self._toy, self.T.spacing, P, self._ty, self._slope)
        return self._ty, self._slope

    def _sample_linear(self, A: np.ndarray, b: np.ndarray):
        A = np.ascontiguousarray(A, dtype=np.float64)
        b = np.ascontiguousarray(b, dtype=np.float64)
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite transform parameters")
        _kernels.sample_linear(
            self._tpad, self._tox, self._toy, self.T.spacing, self.xs, self.ys, A, b, self._ty, self._slope
        )
        return self._ty, self._slope

    def warped(self, P: np.ndarray) -> np.ndarray:
        return self._sample(P)[0].copy()

    def value(self, P: np.ndarray) -> float:
        Ty, _ = self._sample(P)
        return float(_kernels.ngf_value(Ty, self.gR, self.aR, self.eps2, self.h))

    def linear_value(self, A: np.ndarray, b: np.ndarray) -> float:
        """NGF for ``y(x) = A x + b`` without materializing the sample points."""
        Ty, _ = self._sample_linear(A, b)
        return float(_kernels.ngf_value(Ty, self.gR, self.aR, self.eps2, self.h))

    def linear_system(self, y) -> Tuple[float, np.ndarray, np.ndarray]:
        """Value, Gauss-Newton matrix and gradient for a rigid or affine ``y``."""
        if isinstance(y, AffineTransform):
            kind, c, phi = _kernels.AFFINE, (0.0, 0.0), 0.0
            A, b = y.matrix, y.offset
        elif isinstance(y, RigidTransform):
            kind, c, phi = _kernels.RIGID, y.center, y.phi
            A = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
            b = np.asarray(y.center) - A @ np.asarray(y.center) + np.asarray(y.t)
        else:
            raise TypeError(f"no parametric system for {type(y).__name__}")
        Ty, slope = self._sample_linear(A, b)
        value, H, g = _kernels.gauss_newton_system(
            Ty, slope, self.xs, self.ys, self.gR, self.aR, self.eps2, self.h, kind, float(c[0]), float(c[1]), float(phi)
        )
        return float(value), H, g

    def reference_value(self, P: np.ndarray) -> float:
        """Plain array implementation of :meth:`value`, kept as a cross-check."""
        Ty = self.sampler(self._check(P))
        misfit, _, _ = self._misfit(gradient(Ty, self.h))
        return float(self.h**2 * misfit.sum())

    def _alignment(self, gT, aT, denom):
        """r and dr/dgT, each of the latter shaped ``(2, height, width)``."""
        gR = self.gR
        n = gT[0] * gR[0] + gT[1] * gR[1] + self.eps2
        root = np.sqrt(denom)
        r = n / root
        dr = (gR - (n / aT) * gT) / root
        return r, dr

    def value_and_point_gradient(self, P: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        """NGF, ``dNGF/dTy`` on the grid, and the template slope at ``P``.

        ``dNGF/dP = dNGF/dTy[..., None] * slope``. The returned arrays are
        fresh copies.
        """
        Ty, slope = self._sample(P)
        d_Ty = np.empty(self.shape)
        f = _kernels.ngf_adjoint(Ty, self.gR, self.aR, self.eps2, self.h, d_Ty)
        return float(f), d_Ty, slope.copy()

    def residual_jacobian(self, P: np.ndarray, sensitivity):
        """Alignment ratios ``r`` and ``dr/dtheta`` (array implementation).

        ``sensitivity(slope)`` maps the template slope at ``P`` to
        ``dTy/dtheta`` of shape ``(K, height, width)``.
        Returns ``(value, r (N,), J (N, K))``.
        """
        Ty, slope = self.sampler(self._check(P), derivative=True)
        sensitivities = sensitivity(slope)
        gT = gradient(Ty, self.h)
        misfit, aT, denom = self._misfit(gT)
        r, dr = self._alignment(gT, aT, denom)
        K = sensitivities.shape[0]
        J = np.empty((r.size, K))
        for k in range(K):
            gk = gradient(sensitivities[k], self.h)
            J[:, k] = (dr[0] * gk[0] + dr[1] * gk[1]).ravel()
        return float(self.h**2 * misfit.sum()), r.ravel(), J


def parametric_sensitivities(y, grid: np.ndarray, slope: np.ndarray) -> np.ndarray:
    """``dT(y(x))/dtheta`` for rigid ``(phi, t1, t2)`` or affine ``(a1..a6)`` parameters."""
    s1 = slope[..., 0]
    s2 = slope[..., 1]
    if isinstance(y, AffineTransform):
        x1 = grid[..., 0]
        x2 = grid[..., 1]
        return np.stack([s1 * x1, s1 * x2, s1, s2 * x1, s2 * x2, s2])
    if isinstance(y, RigidTransform):
        d1 = grid[..., 0] - y.center[0]
        d2 = grid[..., 1] - y.center[1]
        c, s = np.cos(y.phi), np.sin(y.phi)
        dphi = s1 * (-s * d1 - c * d2) + s2 * (c * d1 - s * d2)
        return np.stack([dphi, s1, s2])
    raise TypeError(f"no parametric sensitivities for {type(y).__name__}")


def field_gradient(bf: BSplineField, xs: np.ndarray, ys: np.ndarray, point_grad: np.ndarray) -> np.ndarray:
    """Pull a per-pixel gradient ``(2, H, W)`` back onto the control coefficients."""
    bx = bf.basis_x(xs)
    by = bf.basis_y(ys)
    out = np.empty_like(bf.coefficients)
    for c in range(2):
        out[c] = (bx.T @ (by.T @ point_grad[c]).T).T
    return out.ravel()


def transformed_grid(y, grid: np.ndarray, xs=None, ys=None) -> np.ndarray:
    """``y`` evaluated on a reference grid, using the separable B-spline path when possible."""
    if isinstance(y, BSplineField):
        u = y.displacement_on_grid(xs, ys)
        return grid + np.moveaxis(u, 0, -1)
    if isinstance(y, ComposedTransform) and y.field is not None:
        u = y.field.displacement_on_grid(xs, ys)
        return y.affine.apply(grid) + np.moveaxis(u, 0, -1)
    return np.asarray(y.apply(grid))


def _setup(R: Image, T: Image, p: NgfParams) -> NgfObjective:
    if p.spacing is not None and not np.isclose(p.spacing, R.spacing, rtol=1e-12, atol=0):
        raise ValueError(f"NGF spacing {p.spacing} does not match reference spacing {R.spacing}")
    return NgfObjective(R, T, p.epsilon)


def ngf_value(R: Image, T: Image, y, p: NgfParams) -> float:
    obj = _setup(R, T, p)
    return obj.value(transformed_grid(y, obj.grid, obj.xs, obj.ys))


def ngf_gradient(R: Image, T: Image, y, p: NgfParams) -> np.ndarray:
    """Analytic NGF gradient with respect to the unknowns of ``y``.

    Rigid: ``(phi, t1, t2)``; affine: ``(a1, ..., a6)``; B-spline field or
    affine-plus-field: the flattened ``(2, m2, m1)`` coefficients.
    """
    obj = _setup(R, T, p)
    P = transformed_grid(y, obj.grid, obj.xs, obj.ys)
    _, d_Ty, slope = obj.value_and_point_gradient(P)
    if isinstance(y, (AffineTransform, RigidTransform)):
        sens = parametric_sensitivities(y, obj.grid, slope)
        return sens.reshape(sens.shape[0], -1) @ d_Ty.ravel()
    bf = y.field if isinstance(y, ComposedTransform) else y
    if not isinstance(bf, BSplineField):
        raise TypeError(f"cannot differentiate with respect to {type(y).__name__}")
    point_grad = np.moveaxis(d_Ty[..., None] * slope, -1, 0)
    return field_gradient(bf, obj.xs, obj.ys, point_grad)


def gauss_newton_system(R: Image, T: Image, y, p: NgfParams) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton Hessian ``2 h^2 J^T J`` and the exact gradient ``-2 h^2 J^T r``."""
    obj = _setup(R, T, p)
    return parametric_system(obj, y)[1:]


def parametric_system(obj: NgfObjective, y) -> Tuple[float, np.ndarray, np.ndarray]:
    """Value, Gauss-Newton matrix and gradient for a rigid or affine ``y``."""
    return obj.linear_system(y)


def reference_system(obj: NgfObjective, y) -> Tuple[float, np.ndarray, np.ndarray]:
    """:func:`parametric_system` assembled from an explicit Jacobian."""
    P = np.asarray(y.apply(obj.grid))
    value, r, J = obj.residual_jacobian(P, lambda slope: parametric_sensitivities(y, obj.grid, slope))
    scale = 2.0 * obj.h**2
    H = scale * (J.T @ J)
    H = 0.5 * (H + H.T)
    g = -scale * (J.T @ r)
    return value, H, g
