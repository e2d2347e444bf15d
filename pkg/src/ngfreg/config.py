"""Registration parameters (defaults are the published parameter table)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

from .optim import OptimizerSettings


@dataclass(frozen=True)
class StepConfig:
    """Per-step parameters.

    ``n_rot`` is only used by the pre-alignment, ``alpha``/``grid_m``/
    ``coarse_grid_m`` only by the non-parametric step. Pyramid levels whose
    longer side is below ``min_level_dim`` pixels are skipped (the finest
    level is always kept).
    """

    n_max: int
    n_level: int
    epsilon: float
    n_rot: int = 1
    alpha: float = 0.1
    grid_m: Tuple[int, int] = (257, 257)
    coarse_grid_m: int = 17
    min_level_dim: int = 16

    def __post_init__(self):
        object.__setattr__(self, "grid_m", tuple(int(v) for v in self.grid_m))
        if self.n_max < 2:
            raise ValueError("n_max must be >= 2")
        if self.n_level < 1:
            raise ValueError("n_level must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.n_rot < 1:
            raise ValueError("n_rot must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if len(self.grid_m) != 2 or min(self.grid_m) < 3:
            raise ValueError("grid_m needs at least 3 points per axis")
        if self.coarse_grid_m < 3:
            raise ValueError("coarse_grid_m must be >= 3")
        if self.min_level_dim < 2:
            raise ValueError("min_level_dim must be >= 2")

    def replace(self, **changes) -> "StepConfig":
        return replace(self, **changes)


def _default_step1() -> StepConfig:
    return StepConfig(n_max=200, n_level=4, epsilon=0.1, n_rot=32)


def _default_step2() -> StepConfig:
    return StepConfig(n_max=1000, n_level=5, epsilon=0.1)


def _default_step3() -> StepConfig:
    return StepConfig(n_max=8000, n_level=7, epsilon=1.0, alpha=0.1, grid_m=(257, 257))


@dataclass(frozen=True)
class PipelineConfig:
    step1: StepConfig = field(default_factory=_default_step1)
    step2: StepConfig = field(default_factory=_default_step2)
    step3: StepConfig = field(default_factory=_default_step3)
    opt1: OptimizerSettings = field(default_factory=lambda: OptimizerSettings(max_iterations=50))
    opt2: OptimizerSettings = field(default_factory=lambda: OptimizerSettings(max_iterations=50))
    opt3: OptimizerSettings = field(default_factory=lambda: OptimizerSettings(max_iterations=100))
    # keep the previous step's result if a step raises the NGF at the common evaluation grid
    monotone_guard: bool = True

    def replace(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)

    def capped(self, n_max: int) -> "PipelineConfig":
        """Same parameters with every step's ``n_max`` limited to ``n_max``."""
        return replace(
            self,
            step1=self.step1.replace(n_max=min(self.step1.n_max, n_max)),
            step2=self.step2.replace(n_max=min(self.step2.n_max, n_max)),
            step3=self.step3.replace(n_max=min(self.step3.n_max, n_max)),
        )
