"""File formats: image decoding, pyramid cache, transform, landmarks, config, metrics.

Pyramid cache layout (little-endian)::

    magic   8 bytes  b"NGFPYR1\\0"
    levels  uint32
    flags   uint32   bit 0 grayscaled, bit 1 inverted
    origin  2 x float64
    per level: width uint32, height uint32, spacing float64
    payloads: float32 row-major, finest level first

Transform file: UTF-8 text header terminated by ``end_header``, followed by
the B-spline coefficients as raw little-endian float64 (shape ``(2, m2, m1)``).
Floats in the header are written with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import configparser
import json
import struct
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from PIL import Image as PILImage

from .config import PipelineConfig, StepConfig
from .image import Image, ImagePyramid, full_pyramid, preprocess
from .optim import OptimizerSettings
from .transforms import AffineTransform, BSplineField, ComposedTransform, RigidTransform

PathLike = Union[str, Path]

CACHE_MAGIC = b"NGFPYR1\x00"
FLAG_GRAY = 1
FLAG_INVERTED = 2
TRANSFORM_MAGIC = "ngfreg-transform 1"


class FormatError(ValueError):
    """Malformed or inconsistent file content."""


# ---------------------------------------------------------------- images


def read_image(path: PathLike) -> np.ndarray:
    """Decode a PNG/TIFF/JPEG file into an array (gray, RGB or RGBA)."""
    try:
        with PILImage.open(path) as im:
            if im.mode in ("P", "CMYK", "YCbCr", "LAB", "HSV", "1"):
                im = im.convert("RGB")
            return np.asarray(im)
    except (OSError, PILImage.DecompressionBombError) as exc:
        raise OSError(f"cannot decode image {path}: {exc}") from exc


def write_image(path: PathLike, data: np.ndarray) -> None:
    """Write ``data`` in ``[0, 1]`` as an 8-bit gray image."""
    arr = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
    PILImage.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def load_input(path: PathLike) -> Union[Image, ImagePyramid]:
    """Preprocessed image or cached pyramid, depending on the file content."""
    with open(path, "rb") as f:
        head = f.read(len(CACHE_MAGIC))
    if head == CACHE_MAGIC:
        return read_cache(path)
    return preprocess(read_image(path))


# ---------------------------------------------------------------- pyramid cache


def write_cache(path: PathLike, pyramid: ImagePyramid, grayscaled: bool = True, inverted: bool = True) -> None:
    levels = list(reversed(pyramid.levels))  # finest first
    flags = (FLAG_GRAY if grayscaled else 0) | (FLAG_INVERTED if inverted else 0)
    origin = levels[0].origin
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<II2d", len(levels), flags, origin[0], origin[1]))
        for lv in levels:
            f.write(struct.pack("<IId", lv.width, lv.height, lv.spacing))
        for lv in levels:
            f.write(np.ascontiguousarray(lv.data, dtype="<f4").tobytes())


def read_cache_header(path: PathLike) -> Tuple[int, List[Tuple[int, int, float]], np.ndarray]:
    with open(path, "rb") as f:
        return _read_header(f, path)


def _read_header(f, path):
    if f.read(len(CACHE_MAGIC)) != CACHE_MAGIC:
        raise FormatError(f"{path}: not a pyramid cache")
    raw = f.read(struct.calcsize("<II2d"))
    if len(raw) != struct.calcsize("<II2d"):
        raise FormatError(f"{path}: truncated header")
    n, flags, ox, oy = struct.unpack("<II2d", raw)
    if n < 1:
        raise FormatError(f"{path}: no levels")
    dims = []
    for _ in range(n):
        raw = f.read(struct.calcsize("<IId"))
        if len(raw) != struct.calcsize("<IId"):
            raise FormatError(f"{path}: truncated level table")
        dims.append(struct.unpack("<IId", raw))
    return flags, dims, np.array([ox, oy])


def read_cache(path: PathLike) -> ImagePyramid:
    """Load a cache written by :func:`write_cache` (stored coarsest first in memory)."""
    with open(path, "rb") as f:
        flags, dims, origin = _read_header(f, path)
        levels = []
        for w, h, spacing in dims:
            count = w * h
            raw = np.fromfile(f, dtype="<f4", count=count)
            if raw.size != count:
                raise FormatError(f"{path}: payload shorter than header dimensions")
            data = raw.reshape(h, w).astype(np.float64)
            levels.append(Image(data, spacing, origin))
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return ImagePyramid(list(reversed(levels)))


def convert(src: PathLike, dst: PathLike) -> ImagePyramid:
    """Decode, preprocess and store the full pyramid of ``src``."""
    pyr = full_pyramid(preprocess(read_image(src)))
    write_cache(dst, pyr)
    return pyr


# ---------------------------------------------------------------- transforms


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_transform(path: PathLike, result) -> None:
    """Store a :class:`~ngfreg.pipeline.RegistrationResult` (or anything with the same fields)."""
    rigid: RigidTransform = result.rigid
    lines = [
        TRANSFORM_MAGIC,
        f"steps {result.steps}",
        f"spacing {repr(float(result.spacing))}",
        f"reference_shape {result.reference_shape[0]} {result.reference_shape[1]}",
        f"template_shape {result.template_shape[0]} {result.template_shape[1]}",
        f"rigid {_floats([rigid.phi, *rigid.t, *rigid.center])}",
        f"affine {_floats(result.affine.params)}",
    ]
    bf: Optional[BSplineField] = result.field
    if bf is None:
        lines.append("bspline none")
    else:
        lines.append(f"bspline {bf.grid_m[0]} {bf.grid_m[1]} {_floats(bf.domain)}")
        lines.append(f"payload float64-le {bf.coefficients.size}")
    lines.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("utf-8"))
        if bf is not None:
            f.write(np.ascontiguousarray(bf.coefficients, dtype="<f8").tobytes())


class StoredTransform:
    """Contents of a transform file."""

    def __init__(self, steps, spacing, reference_shape, template_shape, rigid, affine, field):
        self.steps = steps
        self.spacing = spacing
        self.reference_shape = reference_shape
        self.template_shape = template_shape
        self.rigid = rigid
        self.affine = affine
        self.field = field

    @property
    def transform(self) -> ComposedTransform:
        return ComposedTransform(self.affine, self.field)


def read_transform(path: PathLike) -> StoredTransform:
    raw = Path(path).read_bytes()
    marker = b"end_header\n"
    pos = raw.find(marker)
    if pos < 0:
        raise FormatError(f"{path}: missing end_header")
    header = raw[:pos].decode("utf-8").splitlines()
    payload = raw[pos + len(marker):]
    if not header or header[0] != TRANSFORM_MAGIC:
        raise FormatError(f"{path}: not a transform file")
    entries: Dict[str, List[str]] = {}
    for line in header[1:]:
        key, *vals = line.split()
        entries[key] = vals
    try:
        spacing = float(entries["spacing"][0])
        ref_shape = tuple(int(v) for v in entries["reference_shape"])
        tpl_shape = tuple(int(v) for v in entries["template_shape"])
        r = [float(v) for v in entries["rigid"]]
        rigid = RigidTransform(r[0], np.array(r[1:3]), np.array(r[3:5]))
        affine = AffineTransform(np.array([float(v) for v in entries["affine"]]))
        grid = entries["bspline"]
        steps = entries["steps"][0]
    except (KeyError, IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from exc
    field = None
    if grid != ["none"]:
        m1, m2 = int(grid[0]), int(grid[1])
        domain = tuple(float(v) for v in grid[2:6])
        count = 2 * m1 * m2
        if len(payload) != 8 * count:
            raise FormatError(f"{path}: expected {count} coefficients, found {len(payload) // 8}")
        coef = np.frombuffer(payload, dtype="<f8").reshape(2, m2, m1).astype(np.float64)
        field = BSplineField((m1, m2), domain, coef)
    elif payload:
        raise FormatError(f"{path}: unexpected payload without a B-spline section")
    return StoredTransform(steps, spacing, ref_shape, tpl_shape, rigid, affine, field)


# ---------------------------------------------------------------- landmarks


def read_landmarks(path: PathLike) -> Tuple[List[str], np.ndarray]:
    """Read an ``id,x,y`` CSV; coordinates are pixel units of the owning image."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or [c.strip() for c in lines[0].split(",")] != ["id", "x", "y"]:
        raise FormatError(f"{path}:1: expected header 'id,x,y'")
    ids, pts = [], []
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 3:
            raise FormatError(f"{path}:{number}: expected 3 columns, got {len(cells)}")
        try:
            x, y = float(cells[1]), float(cells[2])
        except ValueError:
            raise FormatError(f"{path}:{number}: non-numeric coordinate in {line!r}") from None
        if not (np.isfinite(x) and np.isfinite(y)):
            raise FormatError(f"{path}:{number}: non-finite coordinate in {line!r}")
        ids.append(cells[0])
        pts.append((x, y))
    return ids, np.array(pts, dtype=np.float64).reshape(-1, 2)


def write_landmarks(path: PathLike, ids, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(ids) != len(pts):
        raise ValueError("ids and points differ in length")
    rows = ["id,x,y"] + [f"{i},{repr(float(p[0]))},{repr(float(p[1]))}" for i, p in zip(ids, pts)]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def pixels_to_physical(pts: np.ndarray, spacing: float, origin=(0.0, 0.0)) -> np.ndarray:
    """Pixel ``(col, row)`` coordinates with pixel centers at integers to physical points."""
    return np.asarray(origin, dtype=np.float64) + (np.asarray(pts, dtype=np.float64) + 0.5) * spacing


def physical_to_pixels(pts: np.ndarray, spacing: float, origin=(0.0, 0.0)) -> np.ndarray:
    return (np.asarray(pts, dtype=np.float64) - np.asarray(origin, dtype=np.float64)) / spacing - 0.5


# ---------------------------------------------------------------- config

_STEP_KEYS = {f.name: f.type for f in fields(StepConfig)}
_OPT_KEYS = {f.name for f in fields(OptimizerSettings)}
_STEPS = ("step1", "step2", "step3")


def _parse_value(name: str, text: str, current):
    text = text.strip()
    if name == "grid_m":
        parts = text.lower().replace("x", " ").replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"grid_m must look like '257x257', got {text!r}")
        return (int(parts[0]), int(parts[1]))
    if name == "initial_step":
        return None if text.lower() == "none" else float(text)
    if isinstance(current, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name} must be a boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    return float(text)


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    """Parse an INI config; unknown sections or keys are errors.

    ``[step1]``..``[step3]`` hold step parameters. ``[optimizer]`` keys apply
    to all steps unless prefixed, e.g. ``step3.max_iterations = 200``.
    ``[pipeline]`` holds ``monotone_guard``.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise FormatError(f"{source}: {exc}") from exc
    cfg = PipelineConfig()
    for section in parser.sections():
        if section not in (*_STEPS, "optimizer", "pipeline"):
            raise FormatError(f"{source}: unknown section [{section}]")
    try:
        for step in _STEPS:
            if not parser.has_section(step):
                continue
            current = getattr(cfg, step)
            changes = {}
            for key, value in parser.items(step):
                if key not in _STEP_KEYS:
                    raise FormatError(f"{source}: unknown key {key!r} in [{step}]")
                changes[key] = _parse_value(key, value, getattr(current, key))
            cfg = cfg.replace(**{step: current.replace(**changes)})
        if parser.has_section("optimizer"):
            shared, per_step = {}, {s: {} for s in _STEPS}
            for key, value in parser.items("optimizer"):
                step, _, name = key.rpartition(".")
                if name not in _OPT_KEYS or (step and step not in _STEPS):
                    raise FormatError(f"{source}: unknown key {key!r} in [optimizer]")
                (per_step[step] if step else shared)[name] = value
            for i, step in enumerate(_STEPS, start=1):
                current = getattr(cfg, f"opt{i}")
                merged = {**shared, **per_step[step]}
                changes = {k: _parse_value(k, v, getattr(current, k)) for k, v in merged.items()}
                cfg = cfg.replace(**{f"opt{i}": current.replace(**changes)})
        if parser.has_section("pipeline"):
            for key, value in parser.items("pipeline"):
                if key != "monotone_guard":
                    raise FormatError(f"{source}: unknown key {key!r} in [pipeline]")
                cfg = cfg.replace(monotone_guard=_parse_value(key, value, cfg.monotone_guard))
    except FormatError:
        raise
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{source}: {exc}") from exc
    return cfg


def read_config(path: PathLike) -> PipelineConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), str(path))


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return "x".join(str(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: PipelineConfig) -> str:
    """INI text that :func:`parse_config` maps back to ``cfg``."""
    out = []
    for step in _STEPS:
        sc = getattr(cfg, step)
        out.append(f"[{step}]")
        out += [f"{name} = {_format_value(getattr(sc, name))}" for name in _STEP_KEYS]
        out.append("")
    out.append("[optimizer]")
    for i, step in enumerate(_STEPS, start=1):
        oc = getattr(cfg, f"opt{i}")
        out += [f"{step}.{f.name} = {_format_value(getattr(oc, f.name))}" for f in fields(OptimizerSettings)]
    out += ["", "[pipeline]", f"monotone_guard = {cfg.monotone_guard}", ""]
    return "\n".join(out)


def write_config(path: PathLike, cfg: PipelineConfig) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")


# ---------------------------------------------------------------- metrics


def write_metrics(path: PathLike, metrics: dict) -> None:
    Path(path).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_metrics(path: PathLike) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
