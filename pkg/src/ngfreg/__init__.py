"""Multimodal 2D image registration with Normalized Gradient Fields.

Three steps, each coarse-to-fine: rotation-sampled rigid pre-alignment,
affine Gauss-Newton, and B-spline L-BFGS with curvature regularization.
"""

from .config import PipelineConfig, StepConfig
from .image import Image, ImagePyramid, build_pyramid, preprocess
from .optim import OptimizerSettings
from .pipeline import RegistrationError, RegistrationResult, run_pipeline
from .transforms import AffineTransform, BSplineField, ComposedTransform, RigidTransform

__all__ = [
    "AffineTransform",
    "BSplineField",
    "ComposedTransform",
    "Image",
    "ImagePyramid",
    "OptimizerSettings",
    "PipelineConfig",
    "RegistrationError",
    "RegistrationResult",
    "RigidTransform",
    "StepConfig",
    "build_pyramid",
    "preprocess",
    "run_pipeline",
]
