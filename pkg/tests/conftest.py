import numpy as np
import pytest

from gaborprop.frames import Lattice, canonical_dual
from gaborprop.tfcore import Grid, SampledField, WindowSpec


@pytest.fixture(scope="session")
def grid():
    return Grid.default(1)


@pytest.fixture(scope="session")
def gauss():
    return WindowSpec.gaussian()


@pytest.fixture(scope="session")
def lattice():
    return Lattice(1.0, 0.5, 1)


@pytest.fixture(scope="session")
def frame(grid, gauss, lattice):
    """Gaussian frame on Z x Z/2 with its canonical dual on the default grid."""
    return gauss, canonical_dual(gauss, lattice, grid), lattice


def band_limited(grid, rng, kmax=3.0, n=8):
    """Random smooth field: Gaussian-windowed sum of ``n`` plane waves below ``kmax``."""
    x = grid.coords()
    vals = np.zeros(grid.shape, dtype=complex)
    for _ in range(n):
        k = rng.uniform(-kmax, kmax, grid.dim)
        x0 = rng.uniform(-2, 2, grid.dim)
        c = rng.standard_normal() + 1j * rng.standard_normal()
        vals += c * np.exp(2j * np.pi * x @ k - np.pi * np.sum((x - x0) ** 2, axis=-1) / 2)
    return SampledField(grid, vals)
