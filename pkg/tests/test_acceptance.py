"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The synthetic robustness run (criteria 3, 5 and 6) registers 200 pairs at
400 pixels and takes about half an hour on a single core.
"""

import os
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import random_config, random_result, smooth_image
from ngfreg.config import PipelineConfig
from ngfreg.curvature import curv_gradient, curv_value
from ngfreg.evaluation import LandmarkSet, aggregate, mrtre, robustness
from ngfreg.experiments import run_anhir, run_many, summarize
from ngfreg.image import Image, full_pyramid
from ngfreg.io import (
    format_config,
    parse_config,
    read_cache,
    read_config,
    read_landmarks,
    read_transform,
    write_cache,
    write_config,
    write_landmarks,
    write_transform,
)
from ngfreg.ngf import NgfParams, ngf_gradient, ngf_value
from ngfreg.pipeline import run_pipeline
from ngfreg.synthetic import make_pair, relative_errors
from ngfreg.transforms import AffineTransform, BSplineField, RigidTransform, apply_rigid, rigid_to_affine

SYNTHETIC_SEEDS = range(1000, 1200)
SYNTHETIC_SIZE = 400
DESKTOP_CORES = 4


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {k}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="session")
def synthetic_runs():
    t0 = time.perf_counter()
    outcomes = run_many(SYNTHETIC_SEEDS, SYNTHETIC_SIZE)
    return outcomes, time.perf_counter() - t0


def fd_gradient(fun, x, step=1e-5):
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g


def relative_error(g, fd):
    return float(np.linalg.norm(g - fd) / np.linalg.norm(fd))


def test_criterion_1_gradients(report):
    t0 = time.perf_counter()
    worst = {"affine": 0.0, "bspline": 0.0, "curvature": 0.0}
    p = NgfParams(0.1)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        R, T = smooth_image(rng), smooth_image(rng)
        # generic parameters keep sample points off the bilinear kinks
        a = np.array([1.0, 0.0, 0.31, 0.0, 1.0, -0.23]) + rng.uniform(-0.02, 0.02, 6)
        g = ngf_gradient(R, T, AffineTransform(a), p)
        # 1e-5 steps on the matrix entries can still cross a kink on a 16 pixel image
        fd = fd_gradient(lambda q: ngf_value(R, T, AffineTransform(q), p), a, step=1e-6)
        worst["affine"] = max(worst["affine"], relative_error(g, fd))

        bf = BSplineField((5, 5), (0.0, 0.0, 16.0, 16.0), rng.uniform(-0.6, 0.6, (2, 5, 5)) + 0.137)
        g = ngf_gradient(R, T, bf, p)
        fd = fd_gradient(lambda c: ngf_value(R, T, bf.with_params(c), p), bf.params, step=1e-6)
        worst["bspline"] = max(worst["bspline"], relative_error(g, fd))

        cf = BSplineField((16, 16), (0.0, 0.0, 1.0, 1.0), rng.normal(size=(2, 16, 16)))
        fd = fd_gradient(lambda c: curv_value(cf.with_params(c)), cf.params)
        worst["curvature"] = max(worst["curvature"], relative_error(curv_gradient(cf), fd))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 10.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(1, ok, f"max relative FD error {detail} (< 1e-4); {elapsed:.1f} s (< 10 s)")


def test_criterion_2_exact_zeros(report):
    rng = np.random.default_rng(2)
    ngf_max = 0.0
    curv_max = 0.0
    for _ in range(20):
        n = int(rng.integers(8, 64))
        R = smooth_image(rng, n, float(rng.uniform(0.01, 2)))
        ngf_max = max(ngf_max, ngf_value(R, R, AffineTransform(), NgfParams(float(rng.uniform(1e-3, 2)))))
        m1, m2 = (int(v) for v in rng.integers(3, 300, 2))
        domain = (float(rng.normal()), float(rng.normal()), float(rng.uniform(0.5, 5)), float(rng.uniform(0.5, 5)))
        bf = BSplineField.zeros((m1, m2), domain)
        nodes = bf.control_points()
        coef = np.stack([nodes @ rng.normal(size=2) + rng.normal() for _ in range(2)])
        curv_max = max(curv_max, curv_value(bf.with_params(coef.ravel())))
    rt = RigidTransform(float(rng.uniform(-np.pi, np.pi)), rng.normal(size=2), rng.normal(size=2))
    x = rng.normal(size=(100, 2))
    rigid_max = float(np.abs(rigid_to_affine(rt).apply(x) - apply_rigid(rt, x)).max())
    ok = ngf_max < 1e-12 and curv_max < 1e-12 and rigid_max < 1e-12
    report(2, ok, f"NGF(R,R,id) {ngf_max:.1e}, CURV(affine) {curv_max:.1e}, rigid_to_affine {rigid_max:.1e} (all < 1e-12)")


def test_criterion_3_synthetic_robustness(report, synthetic_runs):
    outcomes, wall = synthetic_runs
    s = summarize(outcomes)
    cores = os.cpu_count() or 1
    # with fewer cores than the reference desktop, divide the summed CPU time
    desktop = wall if cores >= DESKTOP_CORES else s["cpu_seconds"] / DESKTOP_CORES
    ok = s["n_pairs"] >= 200 and s["robust_fraction"] >= 0.99 and desktop < 600.0
    report(
        3,
        ok,
        f"{s['n_pairs']} pairs, final < initial in {100 * s['robust_fraction']:.1f}% (>= 99%); "
        f"{desktop / 60:.1f} min on {DESKTOP_CORES} cores (< 10 min; measured {wall / 60:.1f} min wall on {cores})",
    )


def half_turn_errors(**pair_options):
    cfg = PipelineConfig()
    errors = []
    for seed in range(20):
        pair = make_pair(2000 + seed, size=SYNTHETIC_SIZE, rotation=np.pi, **pair_options)
        phi = run_pipeline(pair.reference, pair.template, cfg, steps="1").rigid.phi
        errors.append(abs(np.remainder(phi, 2 * np.pi) - np.pi))
    return float(np.degrees(max(errors)))


def test_criterion_4_half_turn(report):
    # rigid ground truth: random translation, noise and intensity remapping, no scale or warp
    worst = half_turn_errors(scale_range=(1.0, 1.0), max_warp=0.0)
    # with scale and warp the rigid optimum itself moves away from 180 degrees
    distorted = half_turn_errors()
    report(
        4,
        worst < 2.0,
        f"worst angle error over 20 rigid pairs {worst:.3f} deg (< 2 deg); "
        f"with scale and warp {distorted:.3f} deg (informational)",
    )


def test_criterion_5_accuracy(report, synthetic_runs):
    s = summarize(synthetic_runs[0])
    ok = s["median_final"] <= 0.005 and s["step3_better_fraction"] >= 0.9
    report(
        5,
        ok,
        f"median error {100 * s['median_final']:.3f}% of diagonal (<= 0.5%); "
        f"step 3 beats step 2 in {100 * s['step3_better_fraction']:.1f}% (>= 90%)",
    )


def test_criterion_6_no_foldings(report, synthetic_runs):
    outcomes = synthetic_runs[0]
    s = summarize(outcomes)
    worst_area = max(o.max_area_change for o in outcomes)
    report(
        6,
        s["min_jacobian"] > 0,
        f"min Jacobian {s['min_jacobian']:.3f} (> 0); max cell area change mean {s['mean_max_area_change']:.2f}%, "
        f"worst {worst_area:.2f}% (informational)",
    )


def test_criterion_7_performance(report):
    pair = make_pair(7, size=2000)
    cfg = PipelineConfig().capped(2000)
    t0 = time.perf_counter()
    result = run_pipeline(pair.reference, pair.template, cfg)
    elapsed = time.perf_counter() - t0
    err = float(np.median(relative_errors(result.transform, pair)))
    steps = ", ".join(f"{k} {v:.1f} s" for k, v in result.times.items())
    report(7, elapsed < 60.0, f"2000x2000 pair in {elapsed:.1f} s (< 60 s; {steps}); median error {100 * err:.3f}%")


def brute_mrtre(a, b, extent):
    dists = [((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2) ** 0.5 for p, q in zip(a, b)]
    return statistics.median(dists) / (extent[0] ** 2 + extent[1] ** 2) ** 0.5


def test_criterion_8_metric_oracle(report):
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(8000 + seed)
        extent = tuple(rng.uniform(10, 1000, 2))
        initial, final = [], []
        for _ in range(int(rng.integers(1, 12))):
            n = int(rng.integers(1, 30))
            target = rng.uniform(0, 500, (n, 2))
            before = target + rng.normal(0, 20, (n, 2))
            after = target + rng.normal(0, 5, (n, 2))
            t = LandmarkSet(target, extent)
            initial.append(mrtre(LandmarkSet(before, extent), t))
            final.append(mrtre(LandmarkSet(after, extent), t))
            worst = max(worst, abs(final[-1] - brute_mrtre(after, target, extent)))
        mean, med = aggregate(final)
        worst = max(worst, abs(mean - sum(final) / len(final)), abs(med - statistics.median(final)))
        brute_rob = sum(1 for a, b in zip(initial, final) if b < a) / len(final)
        worst = max(worst, abs(robustness(initial, final) - brute_rob))
    report(8, worst <= 1e-12, f"max deviation from brute force over 50 configurations {worst:.1e} (<= 1e-12)")


def test_criterion_9_round_trips(report, tmp_path):
    failures = []
    for seed in range(20):
        rng = np.random.default_rng(9000 + seed)
        h, w = (int(v) for v in rng.integers(2, 120, 2))
        img = Image(rng.random((h, w)).astype(np.float32).astype(np.float64), float(rng.uniform(0.01, 3)))
        pyr = full_pyramid(img)
        write_cache(tmp_path / "p.ngfc", pyr)
        back = read_cache(tmp_path / "p.ngfc")
        if len(back) != len(pyr) or not all(
            np.array_equal(a.data.astype(np.float32), b.data) and a.spacing == b.spacing
            for a, b in zip(pyr.levels, back.levels)
        ):
            failures.append(f"cache {seed}")

        result = random_result(rng, with_field=seed % 4 != 0)
        write_transform(tmp_path / "t.ngft", result)
        stored = read_transform(tmp_path / "t.ngft")
        same_field = (result.field is None and stored.field is None) or (
            stored.field is not None and np.array_equal(stored.field.coefficients, result.field.coefficients)
        )
        if not (same_field and np.array_equal(stored.affine.a, result.affine.a) and stored.rigid.phi == result.rigid.phi):
            failures.append(f"transform {seed}")

        n = int(rng.integers(0, 50))
        ids = [str(i) for i in rng.permutation(n)]
        pts = rng.normal(scale=10 ** rng.uniform(-3, 4), size=(n, 2))
        write_landmarks(tmp_path / "l.csv", ids, pts)
        ids2, pts2 = read_landmarks(tmp_path / "l.csv")
        if ids2 != ids or not np.array_equal(pts2, pts.reshape(-1, 2)):
            failures.append(f"landmarks {seed}")

        cfg = random_config(rng)
        write_config(tmp_path / "c.ini", cfg)
        if read_config(tmp_path / "c.ini") != cfg or parse_config(format_config(cfg)) != cfg:
            failures.append(f"config {seed}")
    report(9, not failures, f"20 instances each of cache, transform, landmark and config files; failures: {failures or 'none'}")


def test_optional_anhir_accuracy(report, request):
    table = request.config.getoption("--anhir")
    if table is None:
        pytest.skip("ANHIR training data not given (--anhir TABLE.csv)")
    metrics = run_anhir(table, Path(table).parent)
    mmrtre = aggregate([m.final for m in metrics])[1]
    ok = abs(mmrtre - 0.0019) <= 0.0005
    report("5b", ok, f"ANHIR MMrTRE {100 * mmrtre:.3f}% over {len(metrics)} pairs (0.19% +- 0.05 points)")
