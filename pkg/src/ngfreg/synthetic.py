"""Synthetic tissue-like image pairs with known ground-truth correspondence.

A continuous scene ``S`` on the unit square is rendered through two different
monotone intensity maps. The reference shows ``f1(S(x))``; the template shows
``f2(S(x))`` at ``y(x)``, where ``y`` is a random similarity transform
composed with a smooth Gaussian-bump displacement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .image import Image


@dataclass
class Scene:
    center: np.ndarray
    radius: float
    harmonics: np.ndarray  # (k, 2) cosine/sine amplitudes of the outline
    blob_centers: np.ndarray
    blob_sigmas: np.ndarray
    blob_weights: np.ndarray
    edge_width: float = 0.004

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        d = pts - self.center
        rho = np.hypot(d[..., 0], d[..., 1])
        theta = np.arctan2(d[..., 1], d[..., 0])
        outline = np.ones_like(theta)
        for k, (a, b) in enumerate(self.harmonics, start=2):
            outline += a * np.cos(k * theta) + b * np.sin(k * theta)
        mask = 0.5 * (1.0 + np.tanh((self.radius * outline - rho) / self.edge_width))
        texture = np.zeros(pts.shape[:-1])
        x1 = pts[..., 0]
        x2 = pts[..., 1]
        for c, s, w in zip(self.blob_centers, self.blob_sigmas, self.blob_weights):
            texture += w * np.exp(((x1 - c[0]) ** 2 + (x2 - c[1]) ** 2) * (-0.5 / (s * s)))
        # sharp-ish gland structures give NGF something to lock onto
        glands = 0.5 * (1.0 + np.tanh((texture - 0.15) / 0.03))
        return mask * np.clip(0.35 + 0.45 * glands + 0.2 * np.tanh(texture), 0.0, 1.0)


def random_scene(rng: np.random.Generator, radius: float = 0.22) -> Scene:
    n_blobs = 40
    angle = rng.uniform(0, 2 * np.pi, n_blobs)
    dist = radius * np.sqrt(rng.uniform(0, 1, n_blobs))
    centers = 0.5 + np.stack([dist * np.cos(angle), dist * np.sin(angle)], axis=1)
    return Scene(
        center=np.array([0.5, 0.5]),
        radius=radius,
        harmonics=rng.normal(0, 0.06, (4, 2)),
        blob_centers=centers,
        blob_sigmas=rng.uniform(0.012, 0.04, n_blobs),
        blob_weights=rng.choice([-1.0, 1.0], n_blobs) * rng.uniform(0.2, 0.6, n_blobs),
    )


@dataclass
class BumpField:
    centers: np.ndarray
    sigmas: np.ndarray
    amplitudes: np.ndarray  # (k, 2)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        out = np.zeros(pts.shape)
        x1 = pts[..., 0]
        x2 = pts[..., 1]
        for c, s, a in zip(self.centers, self.sigmas, self.amplitudes):
            w = np.exp(((x1 - c[0]) ** 2 + (x2 - c[1]) ** 2) * (-0.5 / (s * s)))
            out[..., 0] += a[0] * w
            out[..., 1] += a[1] * w
        return out


def random_bump(rng: np.random.Generator, max_amplitude: float, n: int = 4) -> BumpField:
    """Sum of ``n`` Gaussian bumps whose displacement norm peaks in ``[max/2, max]``."""
    bump = BumpField(
        centers=rng.uniform(0.3, 0.7, (n, 2)),
        sigmas=rng.uniform(0.08, 0.14, n),
        amplitudes=rng.normal(0, 1, (n, 2)),
    )
    t = np.linspace(0, 1, 101)
    gx, gy = np.meshgrid(t, t)
    peak = np.linalg.norm(bump(np.stack([gx, gy], axis=-1)), axis=-1).max()
    bump.amplitudes *= rng.uniform(0.5, 1.0) * max_amplitude / max(peak, 1e-12)
    return bump


@dataclass
class GroundTruth:
    """``y(x) = c + s Rot(theta) (x + bump(x) - c) + t`` on the unit square."""

    theta: float
    scale: float
    translation: np.ndarray
    bump: Optional[BumpField] = None
    center: np.ndarray = None

    def __post_init__(self):
        if self.center is None:
            self.center = np.array([0.5, 0.5])

    @property
    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.theta), np.sin(self.theta)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        v = x + (self.bump(x) if self.bump is not None else 0.0)
        return self.center + (v - self.center) @ self.matrix.T + self.translation

    def inverse(self, z, iterations: int = 60, tol: float = 1e-14) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        v = (z - self.translation - self.center) @ np.linalg.inv(self.matrix).T + self.center
        if self.bump is None:
            return v
        x = v.copy()
        for _ in range(iterations):
            x_new = v - self.bump(x)
            done = np.abs(x_new - x).max() <= tol
            x = x_new
            if done:
                break
        return x


def intensity_map(rng: np.random.Generator):
    gamma = rng.uniform(0.6, 1.6)
    gain = rng.uniform(0.7, 1.0)
    return lambda s: gain * np.power(np.clip(s, 0.0, 1.0), gamma)


@dataclass
class SyntheticPair:
    reference: Image
    template: Image
    truth: GroundTruth
    landmarks: np.ndarray  # (L, 2) reference-frame points on the unit square

    @property
    def target(self) -> np.ndarray:
        return self.truth.apply(self.landmarks)


def render(fn, size: int, noise: float, rng: np.random.Generator) -> Image:
    h = 1.0 / size
    xs = (np.arange(size) + 0.5) * h
    gx, gy = np.meshgrid(xs, xs)
    vals = fn(np.stack([gx, gy], axis=-1))
    if noise > 0:
        vals = vals + rng.normal(0, noise, vals.shape)
    return Image(np.clip(vals, 0.0, 1.0), h)


def lattice(scene: Scene, n: int = 10, fraction: float = 0.6) -> np.ndarray:
    half = fraction * scene.radius
    t = np.linspace(-half, half, n)
    gx, gy = np.meshgrid(t, t)
    return scene.center + np.stack([gx.ravel(), gy.ravel()], axis=1)


def make_pair(
    seed: int,
    size: int = 400,
    rotation: Optional[float] = None,
    max_translation: float = 0.2,
    scale_range=(0.9, 1.1),
    max_warp: float = 0.02,
    noise: float = 0.02,
) -> SyntheticPair:
    """Random pair on a ``size`` x ``size`` grid (unit-square physical domain)."""
    rng = np.random.default_rng(seed)
    scene = random_scene(rng)
    theta = rng.uniform(0, 2 * np.pi) if rotation is None else rotation
    r = max_translation * np.sqrt(rng.uniform(0, 1))
    a = rng.uniform(0, 2 * np.pi)
    truth = GroundTruth(
        theta=theta,
        scale=rng.uniform(*scale_range),
        translation=r * np.array([np.cos(a), np.sin(a)]),
        bump=random_bump(rng, max_warp) if max_warp > 0 else None,
    )
    f1 = intensity_map(rng)
    f2 = intensity_map(rng)
    reference = render(lambda p: f1(scene(p)), size, noise, rng)
    template = render(lambda p: f2(scene(truth.inverse(p))), size, noise, rng)
    return SyntheticPair(reference, template, truth, lattice(scene))


def relative_errors(transform, pair: SyntheticPair) -> np.ndarray:
    """Landmark errors of ``transform`` relative to the unit-square diagonal."""
    est = np.asarray(transform.apply(pair.landmarks))
    return np.linalg.norm(est - pair.target, axis=1) / np.sqrt(2.0)
