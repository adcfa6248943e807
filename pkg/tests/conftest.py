import numpy as np
import pytest

from filmflow.geometry import GridProfile, GridSpec


def band_limited(rng, n, kmax=4, decay=1.0):
    """Random smooth periodic field, normalized to unit max amplitude."""
    x = np.arange(n) / n
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    vals = np.zeros((n, n))
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            if k1 == 0 and k2 == 0:
                continue
            amp = rng.normal() / (1.0 + k1 * k1 + k2 * k2) ** decay
            phase = rng.uniform(0, 2 * np.pi)
            vals += amp * np.cos(2 * np.pi * (k1 * x1 + k2 * x2) + phase)
    return vals / np.abs(vals).max()


def random_admissible(rng, spec, base=0.3, amp=0.05):
    """Strictly positive random profile with moderate slopes."""
    return GridProfile(spec, base + amp * band_limited(rng, spec.n))


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def spec32():
    return GridSpec(1.0, 32)


@pytest.fixture
def spec16():
    return GridSpec(1.0, 16)
