"""Decay analysis of Gabor matrices: shell envelopes, stretched-exponential fits,
sparsity profiles and weight-algebra checks."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .fitting import exponent_grid, fit_stretched_exponential
from .frames import Lattice
from .gabor_matrix import EPS, GaborMatrix, MatrixAssemblyConfig, multiplier_matrix
from .symbols import OperatorSpec, nu_estimate, propagator_symbol
from .tfcore import Grid, WindowSpec, fmt17

R_GRID = (0.8, 2.5)
MIN_SHELLS = 6
MIN_SPAN = 4.0
# shells closer than this factor to their floor are excluded from fits
FLOOR_MARGIN = 100.0
TINY = np.finfo(float).tiny


def _lattice_step(lat: Lattice) -> float:
    if lat.separable:
        return max(lat.alpha, lat.beta)
    return float(np.max(np.linalg.norm(lat.matrix, axis=0)))


@dataclass(frozen=True)
class ShellEnvelope:
    """Per-shell maxima ``a(rho)`` of ``|M|`` over offsets with ``|lambda - mu|`` in a shell.

    ``floor`` is the largest quadrature error estimate in each shell (or the
    rounding level of the largest entry when the matrix carries none).
    """

    shell_width: float
    rho: np.ndarray
    magnitude: np.ndarray
    floor: np.ndarray
    lattice_step: float = 1.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho", "magnitude"])
        for r, a in zip(self.rho, self.magnitude):
            w.writerow([fmt17(r), fmt17(a)])
        return buf.getvalue()


def shell_envelope(M: GaborMatrix, shell_width: float | None = None) -> ShellEnvelope:
    """Group entries into shells ``|rho - k w| < w/2`` and keep each shell's maximum.

    The default width is the lattice step, so every shell on a separable
    lattice contains a pure translation or pure modulation offset.
    """
    if shell_width is None:
        shell_width = _lattice_step(M.lattice)
    if not shell_width > 0:
        raise ValueError("shell_width must be positive")
    mag = np.abs(M.values)
    ok = np.isfinite(mag)
    if not np.any(mag[ok] > 0):
        raise ValueError("no entries")
    rho = np.linalg.norm(M.offsets()[ok], axis=-1)
    mag = mag[ok]
    if M.errors is not None:
        err = np.asarray(M.errors)[ok]
    else:
        err = np.full(mag.shape, EPS * mag.max())
    k = np.floor(rho / shell_width + 0.5).astype(int)
    shells = np.unique(k)
    top = np.full(shells.size, 0.0)
    flo = np.full(shells.size, 0.0)
    pos = np.searchsorted(shells, k)
    np.maximum.at(top, pos, mag)
    np.maximum.at(flo, pos, err)
    return ShellEnvelope(float(shell_width), shells * float(shell_width), top, np.maximum(flo, TINY),
                         _lattice_step(M.lattice))


@dataclass(frozen=True)
class DecayFit:
    """Fit of ``a(rho) ~ C exp(-eps rho**r)`` over ``usable_range``."""

    C: float
    eps: float
    r: float
    residual: float
    usable_range: tuple
    n_shells: int
    at_upper_bound: bool

    def to_dict(self) -> dict:
        return {"C": self.C, "eps": self.eps, "r": self.r, "residual": self.residual,
                "usable_range": list(self.usable_range), "n_shells": self.n_shells,
                "at_upper_bound": self.at_upper_bound}


def usable_shells(env: ShellEnvelope, min_rho: float | None = None) -> np.ndarray:
    """Mask of shells beyond two lattice steps and two decades above their floor."""
    lo = 2 * env.lattice_step if min_rho is None else min_rho
    return (env.rho >= lo - 1e-12) & (env.magnitude > FLOOR_MARGIN * env.floor)


def decay_fit(env: ShellEnvelope, min_rho: float | None = None, r_range=R_GRID) -> DecayFit:
    """Grid search over ``r`` with least squares in ``(log C, eps)`` on the usable shells.

    Raises
    ------
    ValueError
        "insufficient dynamic range" with fewer than six usable shells or a
        usable range spanning less than a factor four.
    """
    m = usable_shells(env, min_rho)
    rho, a = env.rho[m], env.magnitude[m]
    if rho.size < MIN_SHELLS or rho.max() < MIN_SPAN * rho.min():
        raise ValueError(f"insufficient dynamic range: {rho.size} usable shells"
                         + (f" over [{rho.min():.3g}, {rho.max():.3g}]" if rho.size else ""))
    fit = fit_stretched_exponential(rho, a, exponent_grid(*r_range))
    return DecayFit(fit.C, fit.eps, fit.r, fit.residual, (float(rho.min()), float(rho.max())),
                    int(rho.size), fit.at_upper_bound)


def synthetic_envelope(eps: float, r: float, C: float = 1.0, rho_max: float = 10.0,
                       width: float = 0.5) -> ShellEnvelope:
    """Envelope ``C exp(-eps rho**r)`` at shell midpoints, floored at the rounding level."""
    rho = width * np.arange(int(round(rho_max / width)) + 1)
    a = C * np.exp(-eps * rho ** r)
    return ShellEnvelope(width, rho, a, np.full(rho.shape, EPS * C * 1e-280), 1.0)


# ---------------------------------------------------------------- sparsity

@dataclass(frozen=True)
class SparsityProfile:
    """Rearranged column magnitudes and the law ``C exp(-eps n**(1/(2 d s)))``.

    ``C`` is the least-squares constant raised by ``C_shift`` so the curve
    dominates every positive entry; ``degenerate`` flags columns with too few
    positive entries for a fit.
    """

    column: tuple
    magnitudes: np.ndarray
    s: float
    exponent: float
    C: float
    eps: float
    C_shift: float
    residual: float
    dominated: bool
    degenerate: bool

    def bound(self, n) -> np.ndarray:
        return self.C * np.exp(-self.eps * np.asarray(n, dtype=float) ** self.exponent)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "magnitude"])
        for n, a in enumerate(self.magnitudes, start=1):
            w.writerow([n, fmt17(a)])
        return buf.getvalue()


MIN_COLUMN = 16


def rearranged_profile(values, column=(), s: float = 0.5, dim: int = 1,
                       n_max: int | None = None, floor: float = 0.0) -> SparsityProfile:
    """Sparsity profile of an explicit sequence of column entries."""
    if not s > 0:
        raise ValueError("s must be positive")
    a = np.sort(np.abs(np.asarray(values)).ravel())[::-1]
    if a.size < MIN_COLUMN:
        raise ValueError(f"column has {a.size} entries; at least {MIN_COLUMN} needed")
    if n_max is not None:
        a = a[:n_max]
    if np.any(np.diff(a) > 0):
        raise AssertionError("rearranged magnitudes must be nonincreasing")
    p = 1.0 / (2 * dim * s)
    n = np.arange(1, a.size + 1, dtype=float)
    good = a > max(floor, TINY)
    if good.sum() < 3 or np.ptp(a[good]) == 0:
        return SparsityProfile(tuple(column), a, s, p, np.nan, np.nan, np.nan, np.nan, False, True)
    A = np.column_stack([np.ones(good.sum()), -n[good] ** p])
    la = np.log(a[good])
    coef, *_ = np.linalg.lstsq(A, la, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - la) ** 2)))
    excess = float(np.max(la - A @ coef))
    shift = max(excess, 0.0)
    C = float(np.exp(coef[0] + shift))
    eps = float(coef[1])
    curve = C * np.exp(-eps * n ** p)
    dominated = bool(np.all(a[good] <= curve[good] * (1 + 1e-12)))
    return SparsityProfile(tuple(column), a, s, p, C, eps, float(np.exp(shift)), resid, dominated, False)


def sparsity_profile(M: GaborMatrix, column, s: float = 0.5, n_max: int | None = None) -> SparsityProfile:
    """Sparsity profile of the column of lattice index ``column``.

    Entries below the matrix's quadrature floor are kept in the sequence but
    excluded from the fit.
    """
    j = M.points.locate(column)
    sel = M.cols == j
    floor = float(np.max(M.errors[sel])) * FLOOR_MARGIN if M.errors is not None and sel.any() else 0.0
    return rearranged_profile(M.values[sel], tuple(np.asarray(column).tolist()), s, M.lattice.dim, n_max, floor)


# ---------------------------------------------------------------- constants

def constants_convert(eps: float, r: float, d: int) -> float:
    """``C = (r d / eps)**r`` bounding ``|x|**(r k) <= C**k k!**r e^{eps |x|**(1/k)}``-type weights."""
    if not (eps > 0 and r > 0 and d > 0):
        raise ValueError("eps, r and d must be positive")
    return (r * d / eps) ** r


def constants_inverse(C: float, r: float, d: int) -> float:
    """Largest admissible ``eps = r (d C)**(-1/r)``."""
    if not (C > 0 and r > 0 and d > 0):
        raise ValueError("C, r and d must be positive")
    return r * (d * C) ** (-1.0 / r)


# ---------------------------------------------------------------- weights

def weight_convolution_ratio(s: float, eps: float, lat: Lattice, tail: float = 1e-12) -> float:
    """``max_lambda (w * w)(lambda) / w_{s, eps 2**(-1/s)}(lambda)`` with ``w = exp(-eps |.|**(1/s))``.

    The sum runs over lattice points up to a radius ``R`` with
    ``R**(2d) exp(-eps R**(1/s)) < tail`` (at least the lattice truncation
    radius) and the ratio is evaluated for ``|lambda| <= R/2``.
    """
    if not s >= 0.5:
        raise ValueError("s must be at least 1/2")
    if not eps > 0:
        raise ValueError("eps must be positive")
    d2 = 2 * lat.dim
    R = max(lat.truncation_radius, 1.0)
    while d2 * np.log(R) - eps * R ** (1 / s) > np.log(tail) or R ** (1 / s) * eps < 1:
        R *= 1.25
    pts = lat.enumerate(R).points
    rad = np.linalg.norm(pts, axis=1)
    lw = -eps * rad ** (1 / s)
    lam = pts[rad <= R / 2]
    best = -np.inf
    for i in range(0, len(lam), 128):
        L = lam[i:i + 128]
        dist = np.linalg.norm(L[:, None, :] - pts[None, :, :], axis=-1)
        conv = logsumexp(-eps * dist ** (1 / s) + lw[None, :], axis=1)
        bound = -eps * 2 ** (-1 / s) * np.linalg.norm(L, axis=1) ** (1 / s)
        best = max(best, float(np.max(conv - bound)))
    return float(np.exp(best))


# ---------------------------------------------------------------- pipeline

@dataclass(frozen=True)
class OperatorDecayReport:
    operator: str
    t: float
    lattice: dict
    fit: DecayFit
    nu: float
    predicted_r: float
    envelope: ShellEnvelope

    def to_dict(self) -> dict:
        out = {"operator": self.operator, "t": self.t, "lattice": self.lattice}
        out.update(self.fit.to_dict())
        out["nu_estimate"] = self.nu
        out["predicted_r"] = self.predicted_r
        return out


def operator_decay(spec: OperatorSpec, t: float, lat: Lattice | None = None, shell_width: float | None = None,
                   g: WindowSpec | None = None, cfg: MatrixAssemblyConfig | None = None) -> OperatorDecayReport:
    """Assemble the propagator matrix, fit its envelope and compare with the predicted exponent."""
    lat = Lattice(1.0, 0.5, spec.dim, 10.0) if lat is None else lat
    g = WindowSpec.gaussian() if g is None else g
    cfg = MatrixAssemblyConfig(drop_threshold=0.0) if cfg is None else cfg
    # frequency-domain assembly only needs the grid's Nyquist bound
    base = Grid.default(spec.dim)
    n = max(base.samples, 1 << int(np.ceil(np.log2(2 * base.extent * lat.truncation_radius))))
    grid = Grid(spec.dim, base.extent, n)
    M = multiplier_matrix(propagator_symbol(spec, t), g, lat, cfg, grid)
    env = shell_envelope(M, shell_width)
    fit = decay_fit(env)
    nu = nu_estimate(spec)
    desc = {"alpha": lat.alpha, "beta": lat.beta, "dim": lat.dim, "radius": lat.truncation_radius}
    return OperatorDecayReport(spec.name, float(t), desc, fit, nu.nu, nu.r_pred, env)
