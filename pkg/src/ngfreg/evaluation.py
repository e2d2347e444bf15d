"""Landmark-based registration error statistics.

Errors are relative target registration errors (rTRE): landmark distances
divided by the image diagonal ``|M|_2``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .transforms import AffineTransform, ComposedTransform, min_jacobian_and_area_change


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered physical points together with the physical image extent ``(width, height)``."""

    points: np.ndarray
    extent: Tuple[float, float]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmarks must be finite")
        ext = tuple(float(v) for v in self.extent)
        if len(ext) != 2 or not all(np.isfinite(v) and v > 0 for v in ext):
            raise ValueError(f"extent must be two positive numbers, got {self.extent}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "extent", ext)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def diagonal(self) -> float:
        return float(np.hypot(*self.extent))

    def with_points(self, points) -> "LandmarkSet":
        return LandmarkSet(points, self.extent)


def invert_points(y, z: np.ndarray, iterations: int = 100, tol: float = 1e-12) -> np.ndarray:
    """Solve ``y(x) = z`` for an affine or affine-plus-field transform.

    Fixed-point iteration ``x <- A^-1 (z - b - u(x))``; converges while the
    displacement is a contraction after the affine part is undone.
    """
    z = np.asarray(z, dtype=np.float64)
    if isinstance(y, ComposedTransform):
        affine, bf = y.affine, y.field
    elif isinstance(y, AffineTransform):
        affine, bf = y, None
    else:
        affine, bf = AffineTransform(), y
    Ainv = np.linalg.inv(affine.matrix)
    v = (z - affine.offset) @ Ainv.T
    if bf is None:
        return v
    x = v.copy()
    scale = max(1.0, float(np.abs(z).max()))
    for _ in range(iterations):
        x_new = v - bf.displacement(x) @ Ainv.T
        step = np.abs(x_new - x).max()
        x = x_new
        if step <= tol * scale:
            return x
    raise ValueError("landmark inversion did not converge")


def warp_landmarks(y, pts: LandmarkSet, direction: str = "forward") -> LandmarkSet:
    """Move landmarks through the registration transform.

    ``"forward"`` (default) pushes reference landmarks through ``y`` into the
    template frame; ``"inverse"`` pulls template landmarks back into the
    reference frame.
    """
    if direction == "forward":
        return pts.with_points(np.asarray(y.apply(pts.points)))
    if direction == "inverse":
        return pts.with_points(invert_points(y, pts.points))
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def _median(values: np.ndarray) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = v.size
    mid = n // 2
    return float(v[mid]) if n % 2 else float(0.5 * (v[mid - 1] + v[mid]))


def mrtre(warped: LandmarkSet, target: LandmarkSet) -> float:
    """Median landmark distance relative to the image diagonal."""
    if len(warped) != len(target):
        raise ValueError(f"landmark counts differ: {len(warped)} vs {len(target)}")
    if len(warped) == 0:
        raise ValueError("at least one landmark is required")
    if not np.allclose(warped.extent, target.extent, rtol=1e-12, atol=0):
        raise ValueError(f"extents differ: {warped.extent} vs {target.extent}")
    d = np.linalg.norm(warped.points - target.points, axis=1)
    return _median(d) / target.diagonal


def aggregate(values: Sequence[float]) -> Tuple[float, float]:
    """``(AMrTRE, MMrTRE)``: mean and median of per-pair MrTRE."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("aggregate needs at least one value")
    return float(v.mean()), _median(v)


def robustness(initial: Sequence[float], final: Sequence[float]) -> float:
    """Fraction of pairs whose error strictly decreased."""
    a = np.asarray(initial, dtype=np.float64).ravel()
    b = np.asarray(final, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("robustness needs at least one pair")
    return float(np.mean(b < a))


@dataclass
class PairMetrics:
    name: str
    initial: float
    final: float
    min_jacobian: Optional[float] = None
    max_area_change: Optional[float] = None


@dataclass
class MetricsReport:
    pairs: List[PairMetrics] = field(default_factory=list)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def summary(self) -> dict:
        out = {"n_pairs": self.n_pairs}
        if not self.pairs:
            return out
        final = [p.final for p in self.pairs]
        out["AMrTRE"], out["MMrTRE"] = aggregate(final)
        out["AMrTRE_initial"], out["MMrTRE_initial"] = aggregate([p.initial for p in self.pairs])
        out["robustness"] = robustness([p.initial for p in self.pairs], final)
        jac = [p.min_jacobian for p in self.pairs if p.min_jacobian is not None]
        area = [p.max_area_change for p in self.pairs if p.max_area_change is not None]
        if jac:
            out["min_jacobian"] = float(min(jac))
        if area:
            out["mean_max_area_change_percent"] = float(np.mean(area))
        return out

    def to_dict(self) -> dict:
        return {"summary": self.summary(), "pairs": [asdict(p) for p in self.pairs]}


def deformation_quality(y, reference_shape: Tuple[int, int], spacing: float, origin=(0.0, 0.0)) -> Tuple[float, float]:
    """Minimum Jacobian and maximum cell area change (percent) on the pixel grid.

    The Jacobian is that of the full transform (``<= 0`` means folding). The
    area change is measured relative to the affine part, so it reports what
    the deformable field adds.
    """
    height, width = reference_shape
    xs = origin[0] + (np.arange(width) + 0.5) * spacing
    ys = origin[1] + (np.arange(height) + 0.5) * spacing
    det = 1.0
    if isinstance(y, ComposedTransform):
        if y.field is None:
            return min_jacobian_and_area_change(y, xs, ys)[0], 0.0
        det = float(np.linalg.det(y.affine.matrix))
    return min_jacobian_and_area_change(y, xs, ys, reference_det=det)
