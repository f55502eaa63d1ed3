import numpy as np
import pytest

from gaborprop.analysis import (constants_convert, constants_inverse, decay_fit, rearranged_profile,
                                shell_envelope, sparsity_profile, synthetic_envelope, weight_convolution_ratio)
from gaborprop.frames import Lattice
from gaborprop.gabor_matrix import GaborMatrix, MatrixAssemblyConfig, multiplier_matrix
from gaborprop.symbols import propagator_symbol, wave

UNIT = Lattice(1.0, 1.0, 1, 20.0)


@pytest.fixture(scope="module")
def identity_matrix(grid, gauss):
    lat = Lattice(1.0, 0.5, 1, 6.0)
    return multiplier_matrix(lambda xi: np.ones_like(xi), gauss, lat, MatrixAssemblyConfig(drop_threshold=0), grid)


def _empty(M, keep):
    return GaborMatrix(M.points, M.rows[keep], M.cols[keep], M.values[keep] * 0, M.method, 0.0)


def test_identity_envelope(identity_matrix):
    env = shell_envelope(identity_matrix)
    assert env.shell_width == 1.0
    assert np.all(np.diff(env.rho) > 0) and np.all(env.magnitude >= 0)
    # the shell maximum sits at the innermost lattice offset of the shell
    k = np.arange(-13, 14)
    rad = np.hypot(*np.meshgrid(k * 1.0, k * 0.5)).ravel()
    for rho, a in zip(env.rho, env.magnitude):
        if a < 1e-12:
            continue
        inner = rad[(rad >= rho - 0.5) & (rad < rho + 0.5)].min()
        assert a == pytest.approx(np.exp(-np.pi / 2 * inner ** 2), abs=1e-12)


def test_zero_matrix(identity_matrix):
    M = identity_matrix
    with pytest.raises(ValueError, match="no entries"):
        shell_envelope(_empty(M, np.ones(M.nnz, bool)))


def test_diagonal_single_shell(identity_matrix):
    M = identity_matrix
    on = M.rows == M.cols
    D = GaborMatrix(M.points, M.rows[on], M.cols[on], M.values[on], M.method, 0.0)
    env = shell_envelope(D)
    assert env.rho.tolist() == [0.0]
    assert env.magnitude[0] == pytest.approx(1, abs=1e-12)


@pytest.mark.parametrize("eps", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("r", [1.0, 4 / 3, 1.5, 2.0])
def test_synthetic_recovery(eps, r):
    env = synthetic_envelope(eps, r, C=1.0, rho_max=min(10.0, (600 / eps) ** (1 / r)))
    fit = decay_fit(env)
    assert abs(fit.r - r) <= 0.02
    assert abs(fit.eps - eps) <= 0.05 * eps


def test_synthetic_exact():
    fit = decay_fit(synthetic_envelope(1.0, 1.5))
    assert fit.r == pytest.approx(1.5, abs=1e-9)
    assert fit.eps == pytest.approx(1.0, rel=1e-9)
    assert fit.C == pytest.approx(1.0, rel=1e-9)


def test_insufficient_range():
    env = synthetic_envelope(1.0, 2.0, rho_max=2.5)
    with pytest.raises(ValueError, match="insufficient dynamic range"):
        decay_fit(env)


def test_geometric_column():
    a = 2.0 ** -np.arange(1, 41)
    rng = np.random.default_rng(3)
    p = rearranged_profile(rng.permutation(a), column=(0, 0), s=0.5)
    assert np.array_equal(p.magnitudes, a)
    assert not p.degenerate and p.dominated
    # geometric decay is exactly the s = 1/2 law with eps = log 2
    assert p.eps == pytest.approx(np.log(2), rel=1e-9)
    assert p.residual < 1e-12


def test_banded_identity_degenerate():
    col = np.zeros(20)
    col[0] = 1
    p = rearranged_profile(col, s=0.5)
    assert p.degenerate and p.magnitudes[0] == 1 and not np.any(p.magnitudes[1:])


def test_short_column():
    with pytest.raises(ValueError, match="16"):
        rearranged_profile(np.ones(5))


def test_wave_column_profile(grid, gauss):
    M = multiplier_matrix(propagator_symbol(wave(), 1.0), gauss, Lattice(1.0, 0.5, 1, 5.0),
                          MatrixAssemblyConfig(drop_threshold=0), grid)
    p = sparsity_profile(M, (0, 0), s=0.5)
    assert np.all(np.diff(p.magnitudes) <= 0)
    assert p.exponent == 1.0 and p.dominated and p.eps > 0


def test_constants():
    assert constants_convert(1, 1, 1) == 1
    assert constants_convert(2, 2, 1) == 1
    for eps in (0.3, 1.0, 7.5):
        for r in (0.5, 1.0, 2.0):
            assert constants_inverse(constants_convert(eps, r, 1), r, 1) == pytest.approx(eps, rel=1e-14)
    with pytest.raises(ValueError):
        constants_convert(0, 1, 1)


def _direct_ratio(s, eps, R):
    # plain double loop over Z x Z inside radius R
    k = np.arange(-int(R), int(R) + 1)
    P = np.array([(a, b) for a in k for b in k if a * a + b * b <= R * R], dtype=float)
    w = np.exp(-eps * np.linalg.norm(P, axis=1) ** (1 / s))
    best = 0.0
    for lam in P[np.linalg.norm(P, axis=1) <= R / 2]:
        conv = np.sum(np.exp(-eps * np.linalg.norm(lam - P, axis=1) ** (1 / s)) * w)
        best = max(best, conv / np.exp(-eps * 2 ** (-1 / s) * np.linalg.norm(lam) ** (1 / s)))
    return best


def test_weight_ratio_matches_direct_sum():
    got = weight_convolution_ratio(0.5, 1.0, UNIT)
    assert np.isfinite(got)
    assert got == pytest.approx(_direct_ratio(0.5, 1.0, 20.0), rel=1e-10)
    assert got == pytest.approx(1.6163092660418823, rel=1e-9)


def test_weight_ratio_origin_term():
    # at the origin the ratio is the sum of w squared
    k = np.arange(-20, 21)
    X, Y = np.meshgrid(k, k)
    w = np.exp(-np.hypot(X, Y) ** 2)
    assert np.sum(w * w) <= weight_convolution_ratio(0.5, 1.0, UNIT) * (1 + 1e-14)


@pytest.mark.parametrize("s", [0.5, 1.0])
@pytest.mark.parametrize("eps", [0.5, 1.0, 2.0])
def test_weight_ratio_finite(s, eps):
    v = weight_convolution_ratio(s, eps, Lattice(1.0, 0.5, 1, 4.0))
    assert np.isfinite(v) and v > 0


def test_weight_ratio_validation():
    with pytest.raises(ValueError):
        weight_convolution_ratio(0.4, 1.0, UNIT)
