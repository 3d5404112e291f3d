import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(1234)))


def central_difference_grad(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Elementwise central finite differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return g


def assert_grads_close(actual: np.ndarray, expected: np.ndarray, rel: float, floor: float):
    """Relative comparison with an absolute floor for tiny entries."""
    actual = np.asarray(actual)
    expected = np.asarray(expected)
    denom = np.maximum(np.abs(expected), floor / rel)
    err = np.abs(actual - expected) / denom
    assert np.max(err) <= rel, f"max relative gradient error {np.max(err):.3e}"
