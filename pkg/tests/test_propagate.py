import numpy as np
import pytest
from scipy.special import erf

from gaborprop.frames import Lattice, canonical_dual
from gaborprop.propagate import (CauchyData, build_sparse_propagator, default_data, gabor_solve, repeated_solve,
                                 spectral_solve, sweep)
from gaborprop.symbols import backward_heat, heat, wave
from gaborprop.tfcore import SampledField

from conftest import band_limited


@pytest.fixture(scope="module")
def wave_prop(frame):
    return build_sparse_propagator(wave(), 1.0, frame)


@pytest.fixture(scope="module")
def heat_prop(frame):
    return build_sparse_propagator(heat(), 0.5, frame)


def _gauss_field(grid, gauss):
    return SampledField(grid, gauss.evaluate(grid.coords()))


def test_wave_dalembert(grid, gauss):
    # u(0) = 0, u_t(0) = g: u(t, x) = (1/2) int_{x-t}^{x+t} g
    t = 0.75
    zero = SampledField(grid, np.zeros(grid.shape, complex))
    u = spectral_solve(wave(), CauchyData((zero, _gauss_field(grid, gauss))), t)
    x = grid.coords()[..., 0]
    want = 2 ** 0.25 / 4 * (erf(np.sqrt(np.pi) * (x + t)) - erf(np.sqrt(np.pi) * (x - t)))
    assert np.max(np.abs(u.values - want)) < 1e-12


def test_heat_gaussian_closed_form(grid, gauss):
    t = 0.3
    u = spectral_solve(heat(), CauchyData((_gauss_field(grid, gauss),)), t)
    x = grid.coords()[..., 0]
    s = 1 + 4 * np.pi * t
    want = 2 ** 0.25 * np.exp(-np.pi * x ** 2 / s) / np.sqrt(s)
    assert np.max(np.abs(u.values - want)) < 1e-12


def test_heat_time_zero(grid, gauss):
    f = _gauss_field(grid, gauss)
    u = spectral_solve(heat(), CauchyData((f,)), 0.0)
    assert np.max(np.abs(u.values - f.values)) < 1e-14


def test_wave_energy_conserved(grid):
    data = default_data(wave(), grid)
    k = 2j * np.pi * np.fft.fftfreq(grid.samples, grid.spacing)
    h = 1e-4

    def energy(u, ut):
        grad = np.fft.ifft(k * np.fft.fft(u))
        return np.sum(np.abs(ut) ** 2 + np.abs(grad) ** 2) * grid.spacing

    e0 = energy(data.fields[0].values, data.fields[1].values)
    for t in (1.0, 2.5):
        ut = (spectral_solve(wave(), data, t + h) - spectral_solve(wave(), data, t - h)).values / (2 * h)
        assert abs(energy(spectral_solve(wave(), data, t).values, ut) - e0) / e0 < 1e-6


def test_gabor_solve_matches_reference(wave_prop, heat_prop, grid):
    for prop, tol in ((wave_prop, 1e-5), (heat_prop, 1e-7)):
        _, rep = gabor_solve(prop, default_data(prop.spec, grid))
        assert rep.error < tol
        assert rep.threshold == 0 and rep.nnz == prop.nnz


def test_sparsity_at_threshold(wave_prop, heat_prop):
    w = wave_prop.with_pruning(1e-6)
    h = heat_prop.with_pruning(1e-6)
    rows = len(w.matrices[0].points)
    for M in w.matrices + h.matrices:
        assert np.max(np.bincount(M.rows, minlength=rows)) <= 200
    assert h.nnz < w.nnz


def test_linearity(wave_prop, grid):
    rng = np.random.default_rng(11)
    d1 = CauchyData((band_limited(grid, rng), band_limited(grid, rng)))
    d2 = CauchyData((band_limited(grid, rng), band_limited(grid, rng)))
    a, b = 0.7 - 0.2j, -1.3
    u1, _ = gabor_solve(wave_prop, d1)
    u2, _ = gabor_solve(wave_prop, d2)
    u, _ = gabor_solve(wave_prop, d1.combine(a, d2, b))
    assert (u - (u1 * a + u2 * b)).norm() / u.norm() < 1e-10


def test_heat_semigroup(heat_prop, grid):
    data = default_data(heat(), grid)
    u = repeated_solve(heat_prop, data, 2)
    ref = spectral_solve(heat(), data, 1.0)
    assert (u - ref).norm() / ref.norm() < 1e-6


def test_sweep_monotone(wave_prop, grid):
    rows = sweep(wave_prop, default_data(wave(), grid), thresholds=[1e-2, 1e-4, 1e-6], band_radii=[2, 4, 6])
    th = [r["error"] for r in rows[:3]]
    assert th[0] > th[1] > th[2]
    assert all(set(r) >= {"threshold", "band_radius", "nnz", "error", "time_ms", "truncation_error"} for r in rows)
    band = [r["truncation_error"] for r in rows[3:]]
    assert band[0] > band[1] > band[2]


def test_refusals(wave_prop, frame, grid):
    data = default_data(heat(), grid)
    with pytest.raises(ValueError, match="ill-posed"):
        spectral_solve(backward_heat(), data, 0.5)
    with pytest.raises(ValueError, match="nonnegative"):
        spectral_solve(heat(), data, -1.0)
    with pytest.raises(ValueError, match="initial fields"):
        spectral_solve(wave(), data, 1.0)
    with pytest.raises(ValueError, match="diagonal"):
        wave_prop.with_pruning(10.0)
    with pytest.raises(ValueError):
        build_sparse_propagator(heat(), 1.0, frame, threshold=-1)


def test_lattice_mismatch(frame, grid, gauss):
    other = Lattice(0.5, 0.5, 1)
    with pytest.raises(ValueError, match="different lattice"):
        build_sparse_propagator(heat(), 1.0, (gauss, frame[1], other))


def test_direct_assembly_agrees(frame, grid):
    a = build_sparse_propagator(heat(), 0.25, frame)
    b = build_sparse_propagator(heat(), 0.25, frame, method="direct")
    data = default_data(heat(), grid)
    ua, _ = gabor_solve(a, data)
    ub, _ = gabor_solve(b, data)
    assert (ua - ub).norm() / ua.norm() < 1e-8
