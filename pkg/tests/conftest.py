import numpy as np
import pytest

from stereotraj.synth import NoiseConfig, SceneConfig, generate_scene, render_observations

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SceneConfig(n_frames=6, n_object_points=20, n_background_points=40), seed=5)


@pytest.fixture(scope="session")
def small_observations(small_scene):
    return render_observations(small_scene, NoiseConfig(), seed=5)
