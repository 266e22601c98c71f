import numpy as np
import pytest

from aled.synthetic import SceneSpec, generate_sequence
from aled.types import CameraModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def camera():
    return CameraModel(fx=50.0, fy=50.0, cx=32.0, cy=24.0, width=64, height=48, max_range=200.0)


def small_scene(seed=0, **overrides):
    """64x48, 0.2 s, GT 20 Hz, LiDAR 10 Hz: 4 records, scans on records 0 and 2."""
    kwargs = dict(width=64, height=48, fx=50.0, fy=50.0, cx=31.5, cy=23.5,
                  duration=0.2, gt_rate=20.0)
    kwargs.update(overrides)
    return SceneSpec.random(seed, **kwargs)


@pytest.fixture(scope="session")
def small_sequence():
    scene = small_scene(0)
    return scene, generate_sequence(scene)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
