import numpy as np
import pytest

from ngfreg.image import Image


def smooth_image(rng, n=16, spacing=1.0, blobs=6):
    """Sum of Gaussian blobs scaled into [0, 1]; smooth enough for finite differences."""
    y, x = np.mgrid[0:n, 0:n].astype(float)
    f = np.zeros((n, n))
    for _ in range(blobs):
        cx, cy = rng.uniform(2, n - 3, 2)
        s = rng.uniform(1.5, 3.5)
        f += rng.uniform(0.3, 1.0) * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
    f /= f.max()
    return Image(0.9 * f, spacing)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_result(rng, with_field=True):
    """A registration result with random, finite contents for round-trip tests."""
    from ngfreg.pipeline import RegistrationResult
    from ngfreg.transforms import AffineTransform, BSplineField, RigidTransform

    h, w = (int(v) for v in rng.integers(5, 300, 2))
    spacing = float(rng.uniform(1e-3, 2.0))
    field = None
    if with_field:
        m1, m2 = (int(v) for v in rng.integers(2, 20, 2))
        field = BSplineField((m1, m2), (0.0, 0.0, w * spacing, h * spacing), rng.normal(size=(2, m2, m1)))
    return RegistrationResult(
        rigid=RigidTransform(rng.uniform(-np.pi, np.pi), rng.normal(size=2), rng.normal(size=2)),
        affine=AffineTransform(rng.normal(size=6)),
        field=field,
        ngf={},
        times={},
        logs={},
        spacing=spacing,
        reference_shape=(h, w),
        template_shape=(int(rng.integers(5, 300)), int(rng.integers(5, 300))),
        steps="123" if with_field else "12",
    )


def random_config(rng):
    from ngfreg.config import PipelineConfig

    cfg = PipelineConfig()
    steps = {}
    for i, name in enumerate(("step1", "step2", "step3"), start=1):
        sc = getattr(cfg, name)
        steps[name] = sc.replace(
            n_max=int(rng.integers(2, 10000)),
            n_level=int(rng.integers(1, 9)),
            epsilon=float(rng.uniform(1e-3, 5)),
            n_rot=int(rng.integers(1, 64)),
            alpha=float(rng.lognormal()),
            grid_m=(int(rng.integers(3, 300)), int(rng.integers(3, 300))),
            coarse_grid_m=int(rng.integers(3, 40)),
            min_level_dim=int(rng.integers(2, 64)),
        )
        opt = getattr(cfg, f"opt{i}")
        steps[f"opt{i}"] = opt.replace(
            max_iterations=int(rng.integers(0, 500)),
            gradient_tolerance=float(rng.uniform(1e-12, 1e-2)),
            lbfgs_memory=int(rng.integers(1, 30)),
            armijo_c=float(rng.uniform(1e-6, 0.5)),
            initial_step=None if rng.random() < 0.5 else float(rng.uniform(0.01, 2)),
        )
    return cfg.replace(monotone_guard=bool(rng.random() < 0.5), **steps)


def pytest_addoption(parser):
    parser.addoption("--anhir", default=None, help="ANHIR pair table (CSV); enables the optional accuracy check")
