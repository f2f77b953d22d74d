"""Shared fixtures: kernel backends, float64 helpers, small synthetic data."""
import numpy as np
import pytest

from dfast import kernels
from dfast.rng import make_rng

try:
    from dfast import _ckernels  # noqa: F401

    BACKENDS = ("python", "cython")
except ImportError:  # extension not built
    BACKENDS = ("python",)


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per available kernel backend."""
    previous = kernels.use_backend(request.param)
    try:
        yield request.param
    finally:
        kernels.use_backend(previous)


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def t64(rng):
    """Factory for random float64 tensors that require grad."""
    from dfast.tensor import Tensor

    def make(*shape, scale=1.0):
        return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)

    return make


@pytest.fixture(scope="session")
def small_samples():
    """Four synthetic subjects (24 trials) at a clearly separable severity."""
    from dfast.synthgen import GenParams, generate_samples

    return generate_samples(GenParams(delta=0.8, sigma=0.5, seed=3, n_subjects=4))


@pytest.fixture(scope="session")
def small_features(small_samples):
    from dfast.training import features_from_samples

    return features_from_samples(small_samples)


@pytest.fixture(scope="session")
def compact_config():
    from dfast.training import ModelConfig

    return ModelConfig(face_preset="compact", voice_preset="compact", pose_preset="compact")


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance pass/fail lines at the end of the run."""
    module = __import__("sys").modules.get("test_acceptance")
    lines = getattr(module, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
