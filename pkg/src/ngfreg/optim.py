"""Gauss-Newton and L-BFGS drivers with Armijo backtracking.

Both solvers are monotone: every accepted step satisfies the Armijo
condition, so the objective trace never increases. A failed line search is
not an error; the solver stops and reports ``"stalled"``.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerSettings:
    max_iterations: int = 50
    gradient_tolerance: float = 1e-6
    objective_change_tolerance: float = 1e-6
    parameter_change_tolerance: float = 1e-6
    lbfgs_memory: int = 10
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 20
    # length (max-norm) of the very first L-BFGS step; None means plain -g
    initial_step: Optional[float] = None

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        for name in ("gradient_tolerance", "objective_change_tolerance", "parameter_change_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be >= 1")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if self.initial_step is not None and not self.initial_step > 0:
            raise ValueError("initial_step must be positive")

    def replace(self, **changes) -> "OptimizerSettings":
        return replace(self, **changes)


@dataclass
class Diagnostics:
    iterations: int = 0
    evaluations: int = 0
    stop_reason: str = ""
    trace: List[float] = field(default_factory=list)

    @property
    def stalled(self) -> bool:
        return self.stop_reason == "stalled"


def _armijo(fun, x, f, slope, d, s: OptimizerSettings, diag: Diagnostics):
    """Backtrack from step 1 until ``f(x + t d) <= f + c t slope``."""
    t = 1.0
    for _ in range(s.max_backtracks + 1):
        x_new = x + t * d
        out = fun(x_new)
        diag.evaluations += 1
        f_new = out[0] if isinstance(out, tuple) else out
        if np.isfinite(f_new) and f_new <= f + s.armijo_c * t * slope:
            return x_new, out
        t *= s.backtrack
    return None, None


def _converged(f_old, f_new, x_old, x_new, s: OptimizerSettings) -> Optional[str]:
    if abs(f_old - f_new) <= s.objective_change_tolerance * max(abs(f_old), np.finfo(float).tiny):
        return "objective_change"
    if np.linalg.norm(x_new - x_old) <= s.parameter_change_tolerance * (1.0 + np.linalg.norm(x_old)):
        return "parameter_change"
    return None


def _solve_damped(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = H.shape[0]
    lam = 0.0
    base = 1e-10 * np.trace(H) / n
    for _ in range(8):
        try:
            c = scipy.linalg.cho_factor(H + lam * np.eye(n))
            d = scipy.linalg.cho_solve(c, -g)
            if np.all(np.isfinite(d)):
                return d
        except (np.linalg.LinAlgError, ValueError):
            pass
        if not base > 0:
            break
        lam = base if lam == 0.0 else 10.0 * lam
    return -g


def gauss_newton(objective, x0, s: OptimizerSettings = OptimizerSettings()) -> Tuple[np.ndarray, Diagnostics]:
    """Minimize with Gauss-Newton steps ``H d = -g`` and Armijo backtracking.

    ``objective.system(x)`` returns ``(f, H, g)`` with ``H`` positive
    semidefinite; ``objective.value(x)`` returns ``f`` and is used by the
    line search.
    """
    x = np.array(x0, dtype=np.float64)
    diag = Diagnostics()
    f, H, g = objective.system(x)
    diag.evaluations += 1
    diag.trace.append(f)
    g0 = np.linalg.norm(g)
    while True:
        gn = np.linalg.norm(g)
        if gn <= s.gradient_tolerance or (diag.iterations > 0 and gn <= s.gradient_tolerance * g0):
            diag.stop_reason = "gradient"
            break
        if diag.iterations >= s.max_iterations:
            diag.stop_reason = "max_iterations"
            break
        d = _solve_damped(H, g)
        slope = g @ d
        if not slope < 0:
            d = -g
            slope = -(g @ g)
        x_new, f_new = _armijo(objective.value, x, f, slope, d, s, diag)
        if x_new is None:
            diag.stop_reason = "stalled"
            break
        diag.iterations += 1
        diag.trace.append(f_new)
        reason = _converged(f, f_new, x, x_new, s)
        x = x_new
        if reason is not None:
            f = f_new
            diag.stop_reason = reason
            break
        f, H, g = objective.system(x)
        diag.evaluations += 1
    return x, diag


def _two_loop(g: np.ndarray, pairs, h0=None) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s_k, y_k, rho in reversed(pairs):
        a = rho * (s_k @ q)
        q -= a * y_k
        alphas.append(a)
    if h0 is None:
        s_last, y_last, _ = pairs[-1]
        q *= (s_last @ y_last) / (y_last @ y_last)
    else:
        q = h0(q, pairs)
    for (s_k, y_k, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y_k @ q)
        q += (a - b) * s_k
    return -q


def lbfgs(
    objective,
    x0,
    s: OptimizerSettings = OptimizerSettings(max_iterations=100),
    h0: Optional[Callable] = None,
) -> Tuple[np.ndarray, Diagnostics]:
    """Limited-memory BFGS with the two-loop recursion.

    ``objective`` is either a callable ``x -> (f, g)`` or an object with a
    ``value_and_gradient`` method. ``h0(q, pairs)`` optionally applies the
    initial inverse Hessian; it must act as a symmetric positive definite
    matrix and is also used for the first step, when ``pairs`` is still
    empty. By default it is ``s.y / y.y`` times the identity.
    """
    fun: Callable = getattr(objective, "value_and_gradient", objective)
    x = np.array(x0, dtype=np.float64)
    diag = Diagnostics()
    f, g = fun(x)
    diag.evaluations += 1
    diag.trace.append(f)
    g0 = np.linalg.norm(g)
    pairs: deque = deque(maxlen=s.lbfgs_memory)
    while True:
        gn = np.linalg.norm(g)
        if gn <= s.gradient_tolerance or (diag.iterations > 0 and gn <= s.gradient_tolerance * g0):
            diag.stop_reason = "gradient"
            break
        if diag.iterations >= s.max_iterations:
            diag.stop_reason = "max_iterations"
            break
        if pairs:
            d = _two_loop(g, pairs, h0)
        else:
            d = -g if h0 is None else -h0(g, [])
            if s.initial_step is not None:
                d *= s.initial_step / np.abs(d).max()
        slope = g @ d
        if not slope < 0:
            pairs.clear()
            d = -g
            slope = -(g @ g)
        x_new, out = _armijo(fun, x, f, slope, d, s, diag)
        if x_new is None:
            diag.stop_reason = "stalled"
            break
        f_new, g_new = out
        diag.iterations += 1
        diag.trace.append(f_new)
        step = x_new - x
        dg = g_new - g
        sy = step @ dg
        if sy > 0:
            pairs.append((step, dg, 1.0 / sy))
        reason = _converged(f, f_new, x, x_new, s)
        x, f, g = x_new, f_new, g_new
        if reason is not None:
            diag.stop_reason = reason
            break
    return x, diag
