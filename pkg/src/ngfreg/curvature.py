"""Curvature regularizer ``1/2 (|Lap u1|^2 + |Lap u2|^2)`` on the control grid."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.fft
import scipy.sparse as sp

from .transforms import BSplineField


def _second_difference(m: int, step: float) -> sp.csr_matrix:
    """1D second difference with zero rows at both ends.

    Setting the end rows to zero is the same as a ghost node obtained by
    linear extrapolation, so linear functions have zero curvature everywhere.
    """
    main = np.full(m, -2.0)
    off = np.ones(m - 1)
    D = sp.diags([off, main, off], [-1, 0, 1], shape=(m, m), format="lil")
    D[0, :] = 0.0
    D[m - 1, :] = 0.0
    return sp.csr_matrix(D) / step**2


@lru_cache(maxsize=32)
def laplacian(m1: int, m2: int, hx: float, hy: float) -> sp.csr_matrix:
    """5-point Laplacian acting on a row-major ``(m2, m1)`` grid."""
    Dxx = _second_difference(m1, hx)
    Dyy = _second_difference(m2, hy)
    return sp.csr_matrix(sp.kron(sp.identity(m2), Dxx) + sp.kron(Dyy, sp.identity(m1)))


def _check(bf: BSplineField):
    if min(bf.grid_m) < 3:
        raise ValueError(f"curvature needs at least 3 control points per axis, got {bf.grid_m}")
    m1, m2 = bf.grid_m
    hx, hy = bf.cell_size
    return laplacian(m1, m2, hx, hy), hx * hy


def curv_value(bf: BSplineField) -> float:
    L, area = _check(bf)
    total = 0.0
    for c in range(2):
        lap = L @ bf.coefficients[c].ravel()
        total += lap @ lap
    return 0.5 * area * total


def curv_gradient(bf: BSplineField) -> np.ndarray:
    """Gradient over the flattened ``(2, m2, m1)`` coefficients: ``area * L^T L c``."""
    L, area = _check(bf)
    out = np.empty_like(bf.coefficients)
    for c in range(2):
        out[c] = (area * (L.T @ (L @ bf.coefficients[c].ravel()))).reshape(out[c].shape)
    return out.ravel()


_DENSE_DCT_MAX = 600


class CurvaturePreconditioner:
    """Initial inverse Hessian ``(alpha B + mu I)^-1`` for L-BFGS.

    ``B`` is the squared Neumann 5-point Laplacian (edge replication) times
    the cell area, a close SPD stand-in for the regularizer Hessian that the
    type-II DCT diagonalizes. ``mu`` approximates the data term curvature and
    is re-estimated from the newest curvature pair by removing the exact
    regularizer share from the Rayleigh quotient ``s.y / s.s``. Before the
    first pair exists it is set to the regularizer eigenvalue one eighth of
    the way up the frequency range.
    """

    def __init__(self, bf: BSplineField, alpha: float, floor: float = 1e-2):
        L, area = _check(bf)
        m1, m2 = bf.grid_m
        hx, hy = bf.cell_size
        lx = (2.0 - 2.0 * np.cos(np.pi * np.arange(m1) / m1)) / hx**2
        ly = (2.0 - 2.0 * np.cos(np.pi * np.arange(m2) / m2)) / hy**2
        self.eig = alpha * area * (ly[:, None] + lx[None, :]) ** 2
        self.L = L
        self.scale = alpha * area
        self.shape = bf.coefficients.shape
        self.floor = floor
        self.mu = None
        # dense transforms beat the FFT for the usual odd grid sizes
        self._dense = max(m1, m2) <= _DENSE_DCT_MAX
        if self._dense:
            self._cx = scipy.fft.dct(np.eye(m1), type=2, norm="ortho", axis=0)
            self._cy = scipy.fft.dct(np.eye(m2), type=2, norm="ortho", axis=0)

    def regularizer_curvature(self, s: np.ndarray) -> float:
        s = s.reshape(self.shape)
        total = 0.0
        for c in range(2):
            lap = self.L @ s[c].ravel()
            total += lap @ lap
        return self.scale * total

    def __call__(self, q: np.ndarray, pairs) -> np.ndarray:
        if pairs:
            s, y, _ = pairs[-1]
            ss = s @ s
            total = (s @ y) / ss
            self.mu = max(total - self.regularizer_curvature(s) / ss, self.floor * total)
        elif self.mu is None:
            # no curvature information yet: smooth on a scale of about 8 cells
            m2, m1 = self.eig.shape
            self.mu = float(self.eig[m2 // 8, m1 // 8])
        q = q.reshape(self.shape)
        if self._dense:
            qs = self._cy @ q @ self._cx.T
            qs /= self.eig + self.mu
            return (self._cy.T @ qs @ self._cx).ravel()
        qs = scipy.fft.dctn(q, type=2, axes=(1, 2), norm="ortho")
        qs /= self.eig + self.mu
        return scipy.fft.idctn(qs, type=2, axes=(1, 2), norm="ortho").ravel()
