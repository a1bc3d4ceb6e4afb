import pytest

from services.noise_robustness import noise_robustness
from services.quantum_core import quantum_core


@pytest.fixture(autouse=True)
def _reset_singletons():
    yield
    quantum_core.step_override = None
    noise_robustness.threads = 1
