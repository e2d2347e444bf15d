"""Batch runs of the pipeline on synthetic pairs with known ground truth."""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np
from PIL import Image as PILImage

from . import io
from .config import PipelineConfig
from .evaluation import LandmarkSet, PairMetrics, deformation_quality, mrtre, warp_landmarks
from .image import full_pyramid, preprocess
from .pipeline import run_pipeline
from .synthetic import make_pair, relative_errors
from .transforms import ComposedTransform


@dataclass
class SyntheticOutcome:
    """Median relative lattice errors of one pair before and after each stage."""

    seed: int
    initial: float
    step2: float
    final: float
    min_jacobian: float
    max_area_change: float
    cpu_seconds: float

    def to_dict(self) -> dict:
        return asdict(self)


def run_synthetic(seed: int, size: int = 400, cfg: Optional[PipelineConfig] = None, **pair_options) -> SyntheticOutcome:
    """Register the synthetic pair ``seed`` and score it against the ground truth.

    ``cfg`` defaults to the standard parameters capped at ``size``. The CPU
    time covers the registration only, not rendering the pair.
    """
    cfg = PipelineConfig().capped(size) if cfg is None else cfg
    pair = make_pair(seed, size=size, **pair_options)
    t0 = time.process_time()
    result = run_pipeline(pair.reference, pair.template, cfg)
    cpu = time.process_time() - t0
    jac, area = deformation_quality(result.transform, result.reference_shape, result.spacing)
    return SyntheticOutcome(
        seed=seed,
        initial=float(np.median(relative_errors(ComposedTransform(), pair))),
        step2=float(np.median(relative_errors(ComposedTransform(result.affine), pair))),
        final=float(np.median(relative_errors(result.transform, pair))),
        min_jacobian=jac,
        max_area_change=area,
        cpu_seconds=cpu,
    )


def _run_one(args) -> SyntheticOutcome:
    seed, size = args
    return run_synthetic(seed, size)


def run_many(seeds: Iterable[int], size: int = 400, workers: Optional[int] = None) -> List[SyntheticOutcome]:
    """Run :func:`run_synthetic` over ``seeds`` in a process pool, one pair per worker."""
    jobs = [(int(s), size) for s in seeds]
    workers = workers or os.cpu_count() or 1
    if workers == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def summarize(outcomes: List[SyntheticOutcome]) -> dict:
    initial = np.array([o.initial for o in outcomes])
    step2 = np.array([o.step2 for o in outcomes])
    final = np.array([o.final for o in outcomes])
    return {
        "n_pairs": len(outcomes),
        "robust_fraction": float(np.mean(final < initial)),
        "step3_better_fraction": float(np.mean(final < step2)),
        "median_initial": float(np.median(initial)),
        "median_step2": float(np.median(step2)),
        "median_final": float(np.median(final)),
        "min_jacobian": float(min(o.min_jacobian for o in outcomes)),
        "mean_max_area_change": float(np.mean([o.max_area_change for o in outcomes])),
        "cpu_seconds": float(sum(o.cpu_seconds for o in outcomes)),
    }


# -- cache benchmark


def stain_like_image(size: int) -> np.ndarray:
    """Smooth RGB test pattern, cheap to build at whole-slide sizes."""
    t = np.linspace(0.0, 40.0, size, dtype=np.float32)
    gray = 0.5 + 0.25 * np.sin(t)[None, :] * np.cos(0.7 * t)[:, None]
    rgb = np.stack([gray, 0.9 * gray, 0.8 * gray], axis=-1)
    return (rgb * 255).astype(np.uint8)


def benchmark_cache(workdir, size: int = 8000, repeats: int = 2) -> dict:
    """Best-of-``repeats`` seconds for decode+pyramid versus loading the cache."""
    workdir = Path(workdir)
    src = workdir / "bench.png"
    dst = workdir / "bench.ngfc"
    PILImage.fromarray(stain_like_image(size)).save(src)
    io.convert(src, dst)
    decode = load = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        full_pyramid(preprocess(io.read_image(src)))
        decode = min(decode, time.perf_counter() - t0)
        t0 = time.perf_counter()
        io.read_cache(dst)
        load = min(load, time.perf_counter() - t0)
    return {"size": size, "decode_seconds": decode, "cache_seconds": load, "speedup": decode / load}


# -- ANHIR training pairs (optional, needs the dataset on disk)


def read_anhir_landmarks(path) -> np.ndarray:
    """Pixel coordinates from an ANHIR landmark file (header ``,X,Y``)."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return np.array([[float(r["X"]), float(r["Y"])] for r in rows]).reshape(-1, 2)


def run_anhir(table, root, cfg: Optional[PipelineConfig] = None, limit: Optional[int] = None) -> List[PairMetrics]:
    """Register the training rows of an ANHIR pair table.

    The target image is the reference, so target landmarks are pushed
    forward and compared with the source landmarks. Errors are relative to
    the target image diagonal.
    """
    cfg = cfg or PipelineConfig()
    root = Path(root)
    with open(table, newline="") as f:
        rows = [r for r in csv.DictReader(f) if r.get("status", "training").strip() == "training"]
    out = []
    for row in rows[:limit]:
        R = io.load_input(root / row["Target image"])
        T = io.load_input(root / row["Source image"])
        result = run_pipeline(R, T, cfg)
        h = result.spacing
        height, width = result.reference_shape
        extent = (width * h, height * h)
        target = LandmarkSet(io.pixels_to_physical(read_anhir_landmarks(root / row["Target landmarks"]), h), extent)
        source = read_anhir_landmarks(root / row["Source landmarks"])
        n = min(len(target), len(source))
        target = target.with_points(target.points[:n])
        source = LandmarkSet(io.pixels_to_physical(source[:n], h), extent)
        warped = warp_landmarks(result.transform, target)
        jac, area = deformation_quality(result.transform, result.reference_shape, h)
        out.append(PairMetrics(row["Source image"], mrtre(target, source), mrtre(warped, source), jac, area))
    return out
