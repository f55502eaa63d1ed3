import math

import numpy as np
import pytest
from scipy import integrate

from conftest import band_limited
from gaborprop.tfcore import (Grid, PhaseGrid, SampledField, WindowSpec, apply_multiplier, field_from_bytes,
                              field_from_csv, field_to_bytes, field_to_csv, modulation_norm, stft, stft_invert,
                              stft_phase, tf_shift, wigner)


def ambiguity(x, xi):
    """<g, M_xi T_x g> for the normalised Gaussian, by hand."""
    return np.exp(-1j * np.pi * x * xi) * np.exp(-np.pi * (x * x + xi * xi) / 2)


def test_grid_rejects_odd_and_small():
    with pytest.raises(ValueError, match="even"):
        Grid(1, 16.0, 255)
    with pytest.raises(ValueError):
        Grid(1, 16.0, 6)
    with pytest.raises(ValueError):
        Grid(1, -1.0, 64)


def test_default_grids():
    assert [(Grid.default(d).extent, Grid.default(d).samples) for d in (1, 2, 3)] == [(16, 256), (12, 128), (8, 64)]


@pytest.mark.parametrize("dim", [1, 2])
def test_gaussian_unit_norm(dim):
    g = WindowSpec.gaussian().samples(Grid.default(dim))
    assert abs(g.norm() - 1) < 1e-10


def test_hermite_unit_norm(grid):
    assert abs(WindowSpec.hermite([0, 1, 0.5]).samples(grid).norm() - 1) < 1e-10


def test_gaussian_self_dual(grid, gauss):
    spec = gauss.samples(grid).spectrum()
    xi = grid.freq_coords()
    assert np.max(np.abs(spec - gauss.fourier(xi))) < 1e-12


def test_hermite_fourier_eigenfunction(grid):
    h = WindowSpec.hermite([0, 0, 0, 1])
    spec = h.samples(grid).spectrum()
    assert np.max(np.abs(spec - h.fourier(grid.freq_coords()))) < 1e-10
    # h_3 is an eigenfunction with eigenvalue (-i)^3 = i
    assert np.max(np.abs(spec - 1j * h.evaluate(grid.freq_coords()))) < 1e-10


def test_tf_shift_identity_and_translation(grid, gauss):
    g = gauss.samples(grid)
    assert np.max(np.abs(tf_shift(gauss, (0, 0), grid).values - g.values)) < 1e-15
    x = grid.coords()[..., 0]
    want = 2 ** 0.25 * np.exp(-np.pi * (x - 1) ** 2)
    assert np.max(np.abs(tf_shift(gauss, (1, 0), grid).values - want)) < 1e-15


def test_tf_shift_unit_norm(grid, gauss):
    assert abs(tf_shift(gauss, (0.5, 2.0), grid).norm() - 1) < 1e-10


def test_tf_shift_truncation_margin(grid, gauss):
    with pytest.raises(ValueError, match="truncation margin"):
        tf_shift(gauss, (7.5, 0), grid)


def test_stft_gaussian_values(grid, gauss):
    g = gauss.samples(grid)
    pts = [(0, 0), (1, 1), (0.3, -1.7), (-2.0, 0.25)]
    got = stft(g, gauss, pts)
    want = np.array([ambiguity(x, xi) for x, xi in pts])
    assert abs(got[0] - 1) < 1e-8
    assert abs(abs(got[1]) - math.exp(-math.pi)) < 1e-12
    assert abs(math.exp(-math.pi) - 0.0432139) < 1e-7
    assert np.max(np.abs(got - want)) < 1e-12


def test_stft_covariance(grid, gauss):
    rng = np.random.default_rng(3)
    f = band_limited(grid, rng)
    w = np.array([1.0, 0.5])
    shifted = SampledField(grid, np.exp(2j * np.pi * w[1] * grid.coords()[..., 0])
                           * np.roll(f.values, int(round(w[0] / grid.spacing))))
    z = rng.uniform(-3, 3, (30, 2))
    z[:, 1] = np.round(z[:, 1] * grid.extent) / grid.extent
    a = np.abs(stft(shifted, gauss, z))
    b = np.abs(stft(f, gauss, z - w))
    assert np.max(np.abs(a - b)) < 1e-8


def test_wigner_gaussian_origin(grid, gauss):
    W = wigner(gauss.samples(grid), gauss.samples(grid))
    i = int(np.argmin(np.abs(W.x_axis)))
    j = int(np.argmin(np.abs(W.xi_axis)))
    # independent quadrature of int g(t/2) conj g(-t/2) dt
    oracle, _ = integrate.quad(lambda t: math.sqrt(2) * math.exp(-math.pi * t * t / 2), -np.inf, np.inf)
    assert abs(oracle - 2) < 1e-12
    assert abs(W.values[i, j] - oracle) < 1e-10
    # the torus Wigner aliases near |x| = L/2; compare on the central half
    inner = np.abs(W.x_axis) <= grid.extent / 4
    X, K = np.meshgrid(W.x_axis[inner], W.xi_axis, indexing="ij")
    assert np.max(np.abs(W.values[inner] - 2 * np.exp(-2 * np.pi * (X ** 2 + K ** 2)))) < 1e-10


def test_wigner_stft_magnitude(grid, gauss):
    f = WindowSpec.hermite([0, 1]).samples(grid)
    W = wigner(f, gauss.samples(grid))
    xs = np.nonzero(np.abs(W.x_axis) <= 3)[0]
    ks = np.nonzero(np.abs(W.xi_axis) <= 3)[0]
    pts = [(2 * W.x_axis[i], 2 * W.xi_axis[j]) for i in xs for j in ks]
    V = stft(f, gauss, pts).reshape(len(xs), len(ks))
    assert np.max(np.abs(np.abs(W.values[np.ix_(xs, ks)]) - 2 * np.abs(V))) < 1e-6


def test_wigner_parity(grid, gauss):
    W = wigner(WindowSpec.hermite([0, 1]).samples(grid), gauss.samples(grid))
    i = int(np.argmin(np.abs(W.x_axis)))
    j = int(np.argmin(np.abs(W.xi_axis)))
    assert abs(W.values[i, j]) < 1e-12


@pytest.mark.parametrize("coeffs", [[1], [0, 1]])
def test_stft_roundtrip(grid, gauss, coeffs):
    f = WindowSpec.hermite(coeffs).samples(grid)
    back, quality, under = stft_invert(stft_phase(f, gauss), gauss, return_quality=True)
    assert not under
    assert (back - f).norm() / f.norm() < 1e-6


def test_stft_invert_zero(grid, gauss):
    back = stft_invert(stft_phase(SampledField.zeros(grid), gauss), gauss)
    assert np.all(back.values == 0)


def test_moyal(grid, gauss):
    rng = np.random.default_rng(7)
    pg = PhaseGrid.default(grid)
    for _ in range(20):
        f = band_limited(grid, rng)
        assert abs(modulation_norm(f, gauss, pg=pg) - f.norm()) < 1e-6 * f.norm()


def test_modulation_norm_trivial(grid, gauss):
    assert modulation_norm(SampledField.zeros(grid), gauss) == 0
    assert abs(modulation_norm(gauss.samples(grid), gauss, math.inf, math.inf) - 1) < 1e-12
    with pytest.raises(ValueError):
        modulation_norm(gauss.samples(grid), gauss, 0.5, 2)


def test_apply_multiplier_derivative(grid, gauss):
    # D = (2 pi i)^-1 d/dx has symbol xi; check against the analytic derivative
    g = gauss.samples(grid)
    out = apply_multiplier(g, lambda xi: 2j * np.pi * xi)
    x = grid.coords()[..., 0]
    want = -2 * np.pi * x * g.values
    assert np.max(np.abs(out.values - want)) < 1e-10


def test_serialization_roundtrip(grid):
    f = band_limited(grid, np.random.default_rng(1))
    assert np.array_equal(field_from_bytes(field_to_bytes(f)).values, f.values)
    assert np.array_equal(field_from_csv(field_to_csv(f), grid).values, f.values)
