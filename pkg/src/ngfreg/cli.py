"""Command-line interface: ``register``, ``transform``, ``evaluate``, ``convert``.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io
from .config import PipelineConfig
from .evaluation import LandmarkSet, MetricsReport, PairMetrics, deformation_quality, mrtre, warp_landmarks
from .image import Image, ImagePyramid, interpolate
from .pipeline import RegistrationError, RegistrationResult, run_pipeline

logger = logging.getLogger("ngfreg")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad arguments or unusable input files."""


def _finest(img):
    return img.finest if isinstance(img, ImagePyramid) else img


def _load(path: str):
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    try:
        return io.load_input(path)
    except (OSError, io.FormatError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _landmarks(path: str):
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    try:
        return io.read_landmarks(path)
    except io.FormatError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------- register


def _report(result: RegistrationResult, cfg: PipelineConfig, args) -> str:
    lines = [
        "ngfreg registration report",
        f"reference: {args.reference} {result.reference_shape[1]}x{result.reference_shape[0]}",
        f"template:  {args.template} {result.template_shape[1]}x{result.template_shape[0]}",
        f"steps: {result.steps}",
        f"pixel size (normalized): {result.spacing!r}",
        "",
        "NGF on the common evaluation grid:",
    ]
    lines += [f"  {k:8s} {v:.8g}" for k, v in result.ngf.items()]
    lines += ["", "time [s]:"]
    lines += [f"  {k:8s} {v:.3f}" for k, v in result.times.items()]
    lines += ["", "stop reasons per level:"]
    for name, log in result.logs.items():
        if not log.levels and not log.notes:
            continue
        reasons = ", ".join(f"{shape[1]}x{shape[0]}:{d.stop_reason}({d.iterations})" for shape, d in log.levels)
        lines.append(f"  {name}: {reasons}")
        lines += [f"    note: {n}" for n in log.notes]
    r = result.rigid
    lines += [
        "",
        f"rigid: phi={r.phi:.10g} t=({r.t[0]:.10g}, {r.t[1]:.10g}) center=({r.center[0]:.10g}, {r.center[1]:.10g})",
        "affine: " + " ".join(f"{v:.10g}" for v in result.affine.params),
    ]
    if result.field is not None:
        lines.append(f"bspline grid: {result.field.grid_m[0]}x{result.field.grid_m[1]}")
    lines += ["", "configuration:", io.format_config(cfg)]
    return "\n".join(lines)


def cmd_register(args) -> int:
    cfg = PipelineConfig()
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"no such file: {args.config}")
        try:
            cfg = io.read_config(args.config)
        except io.FormatError as exc:
            raise UsageError(str(exc)) from exc
    R = _load(args.reference)
    T = _load(args.template)
    ref_lm = _landmarks(args.landmarks) if args.landmarks else None
    tgt_lm = _landmarks(args.target_landmarks) if args.target_landmarks else None
    if tgt_lm is not None and ref_lm is None:
        raise UsageError("--target-landmarks requires --landmarks")
    if ref_lm is not None and tgt_lm is not None and len(ref_lm[1]) != len(tgt_lm[1]):
        raise UsageError("landmark files differ in point count")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    result = run_pipeline(R, T, cfg, steps=args.steps)
    for name, log in result.logs.items():
        if log.stalled:
            print(f"warning: {name} line search stalled on at least one level", file=sys.stderr)
    io.write_transform(out / "transform.ngft", result)
    (out / "report.txt").write_text(_report(result, cfg, args) + "\n", encoding="utf-8")

    if ref_lm is not None:
        h = result.spacing
        ids, pix = ref_lm
        ref_shape = result.reference_shape
        tpl_shape = result.template_shape
        pts = LandmarkSet(io.pixels_to_physical(pix, h), (ref_shape[1] * h, ref_shape[0] * h))
        warped = warp_landmarks(result.transform, pts)
        io.write_landmarks(out / "warped_landmarks.csv", ids, io.physical_to_pixels(warped.points, h))
        if tgt_lm is not None:
            extent = (tpl_shape[1] * h, tpl_shape[0] * h)
            target = LandmarkSet(io.pixels_to_physical(tgt_lm[1], h), extent)
            warped = LandmarkSet(warped.points, extent)
            initial = LandmarkSet(pts.points, extent)
            jac, area = deformation_quality(result.transform, ref_shape, h)
            report = MetricsReport(
                [PairMetrics(Path(args.template).name, mrtre(initial, target), mrtre(warped, target), jac, area)]
            )
            io.write_metrics(out / "metrics.json", report.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------- transform


def _warp_image(stored: io.StoredTransform, T: Image) -> np.ndarray:
    """Template resampled onto the reference grid (inverted-gray intensities)."""
    h = stored.spacing
    height, width = stored.reference_shape
    xs = (np.arange(width) + 0.5) * h
    ys = (np.arange(height) + 0.5) * h
    gx, gy = np.meshgrid(xs, ys)
    pts = np.asarray(stored.transform.apply(np.stack([gx, gy], axis=-1)))
    return interpolate(Image(T.data, h), pts)


def checkerboard(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    """Alternate ``n`` x ``n`` tiles of ``a`` and ``b``."""
    if a.shape != b.shape:
        raise ValueError("checkerboard images must have equal shapes")
    rows = (np.arange(a.shape[0]) * n) // a.shape[0]
    cols = (np.arange(a.shape[1]) * n) // a.shape[1]
    mask = (rows[:, None] + cols[None, :]) % 2 == 0
    return np.where(mask, a, b)


def cmd_transform(args) -> int:
    if (args.image is None) == (args.landmarks is None):
        raise UsageError("give exactly one of --image / --landmarks")
    if not Path(args.transform).is_file():
        raise UsageError(f"no such file: {args.transform}")
    try:
        stored = io.read_transform(args.transform)
    except io.FormatError as exc:
        raise UsageError(str(exc)) from exc
    h = stored.spacing
    if args.landmarks:
        ids, pix = _landmarks(args.landmarks)
        height, width = stored.reference_shape
        pts = LandmarkSet(io.pixels_to_physical(pix, h), (width * h, height * h))
        moved = warp_landmarks(stored.transform, pts, direction="inverse" if args.inverse else "forward")
        io.write_landmarks(args.out, ids, io.physical_to_pixels(moved.points, h))
        return EXIT_OK
    T = _finest(_load(args.image))
    if T.shape != tuple(stored.template_shape):
        raise UsageError(f"image is {T.shape[1]}x{T.shape[0]} but the transform expects template {stored.template_shape[1]}x{stored.template_shape[0]}")
    warped = _warp_image(stored, T)
    if args.checkerboard:
        if not args.reference:
            raise UsageError("--checkerboard needs --reference")
        R = _finest(_load(args.reference))
        if R.shape != tuple(stored.reference_shape):
            raise UsageError("reference image does not match the transform's reference grid")
        warped = checkerboard(R.data, warped, args.checkerboard)
    io.write_image(args.out, 1.0 - warped)
    return EXIT_OK


# ---------------------------------------------------------------- evaluate


def _read_manifest(path: str):
    base = Path(path).parent
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        need = {"warped", "target", "width", "height"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise UsageError(f"{path}: manifest header must contain warped,target,width,height[,initial]")
        for number, row in enumerate(reader, start=2):
            try:
                extent = (float(row["width"]), float(row["height"]))
            except (TypeError, ValueError):
                raise UsageError(f"{path}:{number}: non-numeric extent") from None
            rows.append((number, row, extent))
    if not rows:
        raise UsageError(f"{path}: manifest lists no pairs")
    return base, rows


def cmd_evaluate(args) -> int:
    if not Path(args.pairs).is_file():
        raise UsageError(f"no such file: {args.pairs}")
    base, rows = _read_manifest(args.pairs)
    report = MetricsReport()
    for number, row, extent in rows:
        try:
            warped = LandmarkSet(_landmarks(str(base / row["warped"]))[1], extent)
            target = LandmarkSet(_landmarks(str(base / row["target"]))[1], extent)
            # without an initial configuration no improvement can be shown
            initial = LandmarkSet(_landmarks(str(base / row["initial"]))[1], extent) if row.get("initial") else warped
            report.pairs.append(PairMetrics(row["warped"], mrtre(initial, target), mrtre(warped, target)))
        except ValueError as exc:
            raise UsageError(f"{args.pairs}:{number}: {exc}") from exc
    data = report.to_dict()
    summary = data["summary"]
    lines = [f"{p.name}: MrTRE {p.final:.6g} (initial {p.initial:.6g})" for p in report.pairs]
    lines += [
        f"AMrTRE {summary['AMrTRE']:.6g}",
        f"MMrTRE {summary['MMrTRE']:.6g}",
        f"robustness {summary['robustness']:.6g}",
    ]
    print("\n".join(lines))
    if args.out:
        io.write_metrics(args.out, data)
    return EXIT_OK


# ---------------------------------------------------------------- convert


def cmd_convert(args) -> int:
    if not Path(args.input).is_file():
        raise UsageError(f"no such file: {args.input}")
    try:
        t0 = time.perf_counter()
        pyr = io.convert(args.input, args.output)
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    dims = ", ".join(f"{lv.width}x{lv.height}" for lv in reversed(pyr.levels))
    print(f"wrote {args.output}: {len(pyr)} levels ({dims}) in {time.perf_counter() - t0:.2f}s")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ngfreg", description="Multimodal NGF image registration")
    p.add_argument("-v", "--verbose", action="store_true", help="log optimizer progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("register", help="register a template image to a reference image")
    r.add_argument("--reference", required=True, help="reference image or pyramid cache")
    r.add_argument("--template", required=True, help="template image or pyramid cache")
    r.add_argument("--config", help="INI file overriding the default parameters")
    r.add_argument("--out", default=".", help="output directory (default: current)")
    r.add_argument("--landmarks", help="reference landmarks (id,x,y in pixels)")
    r.add_argument("--target-landmarks", help="template landmarks; enables metrics.json")
    r.add_argument("--steps", default="123", choices=["1", "12", "123"])
    r.set_defaults(func=cmd_register)

    t = sub.add_parser("transform", help="apply a stored transform")
    t.add_argument("--transform", required=True)
    t.add_argument("--image", help="template image to resample onto the reference grid")
    t.add_argument("--landmarks", help="reference landmarks to move into the template frame")
    t.add_argument("--inverse", action="store_true", help="move template landmarks into the reference frame instead")
    t.add_argument("--checkerboard", type=int, metavar="N", help="N x N composite with --reference")
    t.add_argument("--reference", help="reference image for --checkerboard")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_transform)

    e = sub.add_parser("evaluate", help="landmark error statistics over a manifest")
    e.add_argument("--pairs", required=True, help="CSV with columns warped,target,width,height[,initial]")
    e.add_argument("--out", help="metrics JSON output")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("convert", help="build a pyramid cache file")
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.set_defaults(func=cmd_convert)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if getattr(args, "checkerboard", None) is not None and args.checkerboard < 1:
        print("error: --checkerboard must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RegistrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # last-resort diagnostics
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
