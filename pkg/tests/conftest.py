import numpy as np
import pytest

from tinyreid import kernels, ptq, store


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # Pay any JIT compilation once, before timed tests run.
    kernels.warmup()


@pytest.fixture(scope="session")
def small_model():
    """Random-weight (alpha=0.35, N=7, d=128) model shared across tests."""
    return store.generate_random_model(0.35, 7, 128, seed=11)


@pytest.fixture(scope="session")
def calib_images():
    rng = np.random.default_rng(2024)
    return [rng.uniform(-1.0, 1.0, size=(64, 64, 3)).astype(np.float32)
            for _ in range(32)]


@pytest.fixture(scope="session")
def quantized_model(small_model, calib_images):
    stats = ptq.calibrate(small_model, calib_images)
    return ptq.quantize_model(small_model, stats)
