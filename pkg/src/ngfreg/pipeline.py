"""Three-step registration: rotation-sampled rigid pre-alignment, affine
Gauss-Newton, and B-spline L-BFGS with curvature regularization, each run
coarse-to-fine on image pyramids."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .config import PipelineConfig, StepConfig
from .curvature import CurvaturePreconditioner, curv_gradient, curv_value
from .image import (
    DegenerateMassError,
    Image,
    ImagePyramid,
    build_pyramid,
    center_of_mass,
    geometric_center,
    preprocess,
)
from .ngf import NgfObjective, field_gradient, parametric_system
from .optim import Diagnostics, OptimizerSettings, gauss_newton, lbfgs
from .transforms import (
    AffineTransform,
    BSplineField,
    ComposedTransform,
    RigidTransform,
    prolong,
    rigid_to_affine,
)

logger = logging.getLogger(__name__)


class RegistrationError(RuntimeError):
    """A registration step failed; ``step`` names which one."""

    def __init__(self, step: str, cause: Exception):
        super().__init__(f"{step} failed: {cause}")
        self.step = step
        self.cause = cause


@dataclass
class StepLog:
    """Per-level optimizer diagnostics of one step."""

    levels: List[Tuple[Tuple[int, int], Diagnostics]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def stop_reasons(self) -> List[str]:
        return [d.stop_reason for _, d in self.levels]

    @property
    def stalled(self) -> bool:
        return any(d.stalled for _, d in self.levels)


@dataclass
class RegistrationResult:
    rigid: RigidTransform
    affine: AffineTransform
    field: Optional[BSplineField]
    ngf: Dict[str, float]
    times: Dict[str, float]
    logs: Dict[str, StepLog]
    spacing: float
    reference_shape: Tuple[int, int]
    template_shape: Tuple[int, int]
    steps: str = "123"

    @property
    def transform(self) -> ComposedTransform:
        return ComposedTransform(self.affine, self.field)


class ParametricProblem:
    """NGF as a function of rigid or affine parameters on one pyramid level."""

    def __init__(self, obj: NgfObjective, template):
        self.obj = obj
        self.template = template

    def transform(self, x):
        return self.template.with_params(x)

    def value(self, x) -> float:
        y = self.transform(x)
        a = rigid_to_affine(y) if isinstance(y, RigidTransform) else y
        return self.obj.linear_value(a.matrix, a.offset)

    def system(self, x):
        return parametric_system(self.obj, self.transform(x))


class FieldProblem:
    """``NGF(R, T, affine + u) + alpha * CURV(u)`` over control coefficients."""

    def __init__(self, obj: NgfObjective, affine: AffineTransform, template: BSplineField, alpha: float):
        self.obj = obj
        self.template = template
        self.alpha = alpha
        self.base = affine.apply(obj.grid)
        self.bx = template.basis_x(obj.xs)
        self.by = template.basis_y(obj.ys)
        self.bxT = self.bx.T.tocsr()
        self.byT = self.by.T.tocsr()

    def points(self, c: np.ndarray) -> np.ndarray:
        coef = c.reshape(self.template.coefficients.shape)
        P = self.base.copy()
        for k in range(2):
            P[..., k] += self.by @ (self.bx @ coef[k].T).T
        return P

    def value(self, c) -> float:
        bf = self.template.with_params(c)
        return self.obj.value(self.points(c)) + self.alpha * curv_value(bf)

    def value_and_gradient(self, c):
        bf = self.template.with_params(c)
        f, d_Ty, slope = self.obj.value_and_point_gradient(self.points(c))
        grad = np.empty_like(bf.coefficients)
        for k in range(2):
            G = d_Ty * slope[..., k]
            grad[k] = (self.bxT @ (self.byT @ G).T).T
        f += self.alpha * curv_value(bf)
        grad = grad.ravel() + self.alpha * curv_gradient(bf)
        return f, grad


def level_epsilon(epsilon: float, level: Image) -> float:
    """Edge parameter in physical gradient units for a per-pixel ``epsilon``."""
    return epsilon / level.spacing


def _pyramids(R: Image, T: Image, cfg: StepConfig) -> Tuple[List[Image], List[Image]]:
    pR = build_pyramid(R, cfg.n_level, cfg.n_max)
    pT = build_pyramid(T, cfg.n_level, cfg.n_max)
    n = min(len(pR), len(pT))
    levels_R = list(pR.levels[-n:])
    levels_T = list(pT.levels[-n:])
    keep = [k for k in range(n) if max(levels_R[k].shape) >= cfg.min_level_dim or k == n - 1]
    return [levels_R[k] for k in keep], [levels_T[k] for k in keep]


def _center(img: Image) -> np.ndarray:
    try:
        return center_of_mass(img)
    except DegenerateMassError:
        return geometric_center(img)


def _wrap_angle(phi: float) -> float:
    return float(math.remainder(phi, 2.0 * math.pi))


def ara_start_angles(n_rot: int) -> np.ndarray:
    """Equidistant initial rotations ``2 pi k / n_rot``."""
    return 2.0 * np.pi * np.arange(n_rot) / n_rot


def step1_ara(
    R: Image,
    T: Image,
    cfg: StepConfig,
    opt: OptimizerSettings = OptimizerSettings(),
    log: Optional[StepLog] = None,
) -> RigidTransform:
    """Automatic rotation alignment.

    Translation starts from the reference-to-template center-of-mass offset;
    one multilevel rigid registration is run from each of ``n_rot`` start
    angles and the candidate with the smallest final NGF wins (ties go to the
    smaller angle index).
    """
    levels_R, levels_T = _pyramids(R, T, cfg)
    com_R = _center(levels_R[-1])
    com_T = _center(levels_T[-1])
    problems = [ParametricProblem(NgfObjective(r, t, level_epsilon(cfg.epsilon, r)), RigidTransform(0.0, (0, 0), com_R))
                for r, t in zip(levels_R, levels_T)]
    best = None
    for k, phi0 in enumerate(ara_start_angles(cfg.n_rot)):
        x = np.array([phi0, *(com_T - com_R)])
        for prob in problems:
            x, diag = gauss_newton(prob, x, opt)
        value = problems[-1].value(x)
        if best is None or value < best[0]:
            best = (value, k, x, diag)
    value, k, x, diag = best
    if log is not None:
        log.levels.append((levels_R[-1].shape, diag))
        log.notes.append(f"selected start angle index {k} of {cfg.n_rot} (NGF {value:.6g})")
    return RigidTransform(_wrap_angle(x[0]), x[1:], com_R)


def step2_affine(
    R: Image,
    T: Image,
    init: RigidTransform,
    cfg: StepConfig,
    opt: OptimizerSettings = OptimizerSettings(),
    log: Optional[StepLog] = None,
) -> AffineTransform:
    """Multilevel Gauss-Newton over the six affine parameters."""
    levels_R, levels_T = _pyramids(R, T, cfg)
    start = rigid_to_affine(init)
    x = start.params
    prob = None
    for r, t in zip(levels_R, levels_T):
        prob = ParametricProblem(NgfObjective(r, t, level_epsilon(cfg.epsilon, r)), start)
        x, diag = gauss_newton(prob, x, opt)
        if log is not None:
            log.levels.append((r.shape, diag))
    if prob.value(x) > prob.value(start.params):
        # coarse levels drifted into a worse basin than the initial guess
        if log is not None:
            log.notes.append("multilevel result worse than initialization at finest level; kept initialization")
        return start
    return AffineTransform(x)


def grid_schedule(grid_m: Tuple[int, int], n_levels: int, coarse: int) -> List[Tuple[int, int]]:
    """Control grid per level (coarsest first): halve the cell count per level, floored."""
    out = []
    for k in range(n_levels):
        halvings = n_levels - 1 - k
        m = tuple(max(min(coarse, g), (g - 1) // 2**halvings + 1) for g in grid_m)
        out.append(m)
    return out


def reference_domain(R: Union[Image, ImagePyramid]) -> Tuple[float, float, float, float]:
    if isinstance(R, ImagePyramid):
        R = R.finest
    x0, y0 = R.origin
    w, h = R.extent
    return (x0, y0, x0 + w, y0 + h)


def step3_nonparametric(
    R: Image,
    T: Image,
    init: AffineTransform,
    cfg: StepConfig,
    opt: OptimizerSettings = OptimizerSettings(max_iterations=100),
    log: Optional[StepLog] = None,
) -> BSplineField:
    """Multilevel L-BFGS over B-spline coefficients on top of ``init``.

    The control grid spans the reference domain and is prolonged from level
    to level until it reaches ``cfg.grid_m``.
    """
    levels_R, levels_T = _pyramids(R, T, cfg)
    domain = reference_domain(R)
    schedule = grid_schedule(cfg.grid_m, len(levels_R), cfg.coarse_grid_m)
    bf = BSplineField.zeros(schedule[0], domain)
    for (r, t), m in zip(zip(levels_R, levels_T), schedule):
        bf = prolong(bf, m)
        prob = FieldProblem(NgfObjective(r, t, level_epsilon(cfg.epsilon, r)), init, bf, cfg.alpha)
        if prob.value(np.zeros(bf.n_params)) < prob.value(bf.params):
            # the coarser levels' field does not pay off at this resolution
            bf = bf.with_params(np.zeros(bf.n_params))
            if log is not None:
                log.notes.append(f"level {r.width}x{r.height}: restarted from zero displacement")
        level_opt = opt if opt.initial_step is not None else opt.replace(initial_step=r.spacing)
        c, diag = lbfgs(prob, bf.params, level_opt, h0=CurvaturePreconditioner(bf, cfg.alpha))
        bf = bf.with_params(c)
        if log is not None:
            log.levels.append((r.shape, diag))
    return bf


def _finest(img) -> Image:
    return img.finest if isinstance(img, ImagePyramid) else img


def _rescaled(img: Union[Image, ImagePyramid], h: float):
    if isinstance(img, ImagePyramid):
        factor = h / img.finest.spacing
        return ImagePyramid([Image(lv.data, lv.spacing * factor) for lv in img.levels])
    return Image(img.data, h)


def normalize_pair(R, T) -> Tuple[Union[Image, ImagePyramid], Union[Image, ImagePyramid], float]:
    """Give both images the pixel size that makes the reference's longer side 1.

    Either argument may be a cached :class:`ImagePyramid`; all of its levels
    are rescaled consistently.
    """
    finest = R.finest if isinstance(R, ImagePyramid) else R
    h = 1.0 / max(finest.width, finest.height)
    return _rescaled(R, h), _rescaled(T, h), h


def evaluation_ngf(R: Image, T: Image, cfg: PipelineConfig):
    """NGF on the step-2 finest grid, used to compare the steps' results."""
    r = build_pyramid(R, 1, cfg.step2.n_max).finest
    t = build_pyramid(T, 1, cfg.step2.n_max).finest
    obj = NgfObjective(r, t, level_epsilon(cfg.step2.epsilon, r))

    def measure(y) -> float:
        if isinstance(y, ComposedTransform) and y.field is not None:
            prob = FieldProblem(obj, y.affine, y.field, 1.0)
            return obj.value(prob.points(y.field.params))
        return obj.value(y.apply(obj.grid))

    return measure


def run_pipeline(R_raw, T_raw, cfg: PipelineConfig = PipelineConfig(), steps: str = "123") -> RegistrationResult:
    """Preprocess both images and run the requested steps in order.

    ``R_raw``/``T_raw`` are raw arrays (converted to inverted gray) or
    already preprocessed :class:`Image` or :class:`ImagePyramid` objects.
    """
    if steps not in ("1", "12", "123"):
        raise ValueError(f"steps must be '1', '12' or '123', got {steps!r}")
    R = R_raw if isinstance(R_raw, (Image, ImagePyramid)) else preprocess(R_raw)
    T = T_raw if isinstance(T_raw, (Image, ImagePyramid)) else preprocess(T_raw)
    R, T, h = normalize_pair(R, T)
    measure = evaluation_ngf(R, T, cfg)
    identity = AffineTransform()
    ngf = {"initial": measure(identity)}
    times: Dict[str, float] = {}
    logs = {name: StepLog() for name in ("step1", "step2", "step3")}

    def timed(name, fn, *args):
        t0 = time.perf_counter()
        try:
            out = fn(*args)
        except Exception as exc:  # surfaced with the step name
            raise RegistrationError(name, exc) from exc
        times[name] = time.perf_counter() - t0
        return out

    rigid = timed("step1", step1_ara, R, T, cfg.step1, cfg.opt1, logs["step1"])
    affine = rigid_to_affine(rigid)
    ngf["step1"] = measure(affine)
    bf = None
    if "2" in steps:
        candidate = timed("step2", step2_affine, R, T, rigid, cfg.step2, cfg.opt2, logs["step2"])
        value = measure(candidate)
        if cfg.monotone_guard and value > ngf["step1"]:
            logs["step2"].notes.append(f"affine result raised evaluation NGF ({value:.6g}); kept pre-alignment")
            value = ngf["step1"]
        else:
            affine = candidate
        ngf["step2"] = value
    if "3" in steps:
        candidate = timed("step3", step3_nonparametric, R, T, affine, cfg.step3, cfg.opt3, logs["step3"])
        value = measure(ComposedTransform(affine, candidate))
        if cfg.monotone_guard and value > ngf["step2"]:
            logs["step3"].notes.append(f"deformable result raised evaluation NGF ({value:.6g}); kept affine")
            candidate = BSplineField.zeros(candidate.grid_m, candidate.domain)
            value = ngf["step2"]
        bf = candidate
        ngf["step3"] = value
    return RegistrationResult(
        rigid=rigid,
        affine=affine,
        field=bf,
        ngf=ngf,
        times=times,
        logs=logs,
        spacing=h,
        reference_shape=_finest(R).shape,
        template_shape=_finest(T).shape,
        steps=steps,
    )
