"""Sampled time-frequency analysis on a periodic grid.

Conventions
-----------
Fourier transform ``F f(xi) = int f(t) exp(-2 pi i t.xi) dt``, time-frequency
shift ``pi(z) g = M_xi T_x g = exp(2 pi i xi.t) g(t - x)`` and ``D = (1/2 pi i) d``.
Continuum integrals are approximated by the rectangle rule with weight
``(L/N)**d`` on the torus ``[-L/2, L/2)**d``.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_TRUNCATION_BUDGET = 1e-10

DEFAULT_GRIDS = {1: (16.0, 256), 2: (12.0, 128), 3: (8.0, 64)}


@dataclass(frozen=True)
class Grid:
    """Periodic sampling grid ``[-L/2, L/2)**d`` with ``N`` samples per axis.

    Parameters
    ----------
    dim : int
        Spatial dimension ``d``.
    extent : float
        Side length ``L``.
    samples : int
        Samples per axis ``N``; must be even and at least 8.
    trunc_budget : float
        Mass allowed to fall outside the grid for admissible windows.
    """

    dim: int
    extent: float
    samples: int
    trunc_budget: float = DEFAULT_TRUNCATION_BUDGET

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if not (self.extent > 0 and math.isfinite(self.extent)):
            raise ValueError("extent must be a positive real")
        if int(self.samples) != self.samples or self.samples < 8:
            raise ValueError("samples_per_axis must be at least 8")
        if self.samples % 2:
            raise ValueError("samples_per_axis must be even")
        if not self.trunc_budget > 0:
            raise ValueError("trunc_budget must be positive")

    @classmethod
    def default(cls, dim: int = 1) -> "Grid":
        """Default grid for dimension ``dim`` (1, 2 or 3)."""
        if dim not in DEFAULT_GRIDS:
            raise ValueError(f"no default grid for dim={dim}")
        L, N = DEFAULT_GRIDS[dim]
        return cls(dim, L, N)

    @property
    def spacing(self) -> float:
        return self.extent / self.samples

    @property
    def weight(self) -> float:
        """Quadrature weight ``(L/N)**d``."""
        return self.spacing ** self.dim

    @property
    def shape(self) -> tuple:
        return (self.samples,) * self.dim

    @property
    def nyquist(self) -> float:
        return self.samples / (2.0 * self.extent)

    def axis(self) -> np.ndarray:
        """Sample positions along one axis, ascending from ``-L/2``."""
        return -self.extent / 2 + self.spacing * np.arange(self.samples)

    def coords(self) -> np.ndarray:
        """Array of shape ``shape + (d,)`` with the sample positions."""
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    def freq_index(self) -> np.ndarray:
        """Integer frequency indices ``k`` (frequency ``k/L``) in FFT order."""
        return np.rint(np.fft.fftfreq(self.samples) * self.samples).astype(int)

    def freq_coords(self) -> np.ndarray:
        """Frequencies of shape ``shape + (d,)`` in FFT order."""
        k = self.freq_index() / self.extent
        mesh = np.meshgrid(*([k] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    def wrap(self, x):
        """Map positions to the fundamental domain ``[-L/2, L/2)``."""
        L = self.extent
        return np.mod(np.asarray(x) + L / 2, L) - L / 2

    def compatible(self, other: "Grid") -> bool:
        return (self.dim == other.dim and self.samples == other.samples
                and math.isclose(self.extent, other.extent, rel_tol=1e-12))


@dataclass(frozen=True)
class SampledField:
    """Complex samples on a :class:`Grid`, row-major axis order."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.size != self.grid.samples ** self.grid.dim:
            raise ValueError(f"expected {self.grid.samples ** self.grid.dim} values, got {v.size}")
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def norm(self) -> float:
        return float(np.sqrt(self.grid.weight * np.sum(np.abs(self.values) ** 2)))

    def inner(self, other: "SampledField") -> complex:
        """Inner product ``<self, other>`` (linear in the first slot)."""
        _check_grids(self.grid, other.grid)
        return complex(self.grid.weight * np.vdot(other.values, self.values))

    def __add__(self, other: "SampledField") -> "SampledField":
        _check_grids(self.grid, other.grid)
        return SampledField(self.grid, self.values + other.values)

    def __sub__(self, other: "SampledField") -> "SampledField":
        _check_grids(self.grid, other.grid)
        return SampledField(self.grid, self.values - other.values)

    def __mul__(self, c) -> "SampledField":
        return SampledField(self.grid, self.values * complex(c))

    __rmul__ = __mul__

    def spectrum(self) -> np.ndarray:
        """Samples of ``F f(k/L)`` in FFT order."""
        return _forward(self.values, self.grid)

    @classmethod
    def zeros(cls, grid: Grid) -> "SampledField":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "SampledField":
        """Sample ``fn`` at the grid coordinates (array of shape ``shape + (d,)``)."""
        return cls(grid, fn(grid.coords()))


def _check_grids(a: Grid, b: Grid):
    if not a.compatible(b):
        raise ValueError("incompatible grids")


def _centered_phase(grid: Grid) -> np.ndarray:
    # exp(-2 pi i k x_0 / L) with x_0 = -L/2 gives (-1)**k per axis
    s = np.where(grid.freq_index() % 2 == 0, 1.0, -1.0)
    out = s
    for _ in range(grid.dim - 1):
        out = np.multiply.outer(out, s)
    return out


def _forward(values, grid: Grid, axes=None):
    axes = tuple(range(-grid.dim, 0)) if axes is None else axes
    return np.fft.fftn(values, axes=axes) * _centered_phase(grid) * grid.weight


def _inverse(spec, grid: Grid, axes=None):
    axes = tuple(range(-grid.dim, 0)) if axes is None else axes
    return np.fft.ifftn(spec * _centered_phase(grid), axes=axes) / grid.weight


def apply_multiplier(f: SampledField, symbol: Callable) -> SampledField:
    """Apply the Fourier multiplier ``symbol(D)`` spectrally on the torus.

    ``symbol`` receives frequencies in the symbol convention (shape ``shape``
    for d=1, ``shape + (d,)`` otherwise).
    """
    xi = f.grid.freq_coords()
    if f.grid.dim == 1:
        xi = xi[..., 0]
    return SampledField(f.grid, _inverse(_forward(f.values, f.grid) * symbol(xi), f.grid))


# ---------------------------------------------------------------- windows

def hermite_functions(nmax: int, x) -> np.ndarray:
    """L2-normalized Hermite functions ``h_0..h_nmax`` adapted to ``exp(-pi x^2)``.

    Returns an array of shape ``(nmax + 1,) + x.shape``. Each ``h_n``
    satisfies ``F h_n = (-i)**n h_n``.
    """
    x = np.asarray(x)
    y = np.sqrt(2 * np.pi) * x
    out = np.empty((nmax + 1,) + x.shape, dtype=np.result_type(x, float))
    out[0] = 2 ** 0.25 * np.exp(-np.pi * x * x)
    if nmax >= 1:
        out[1] = np.sqrt(2.0) * y * out[0]
    for n in range(1, nmax):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * y * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


@dataclass(frozen=True)
class WindowSpec:
    """Analysis window.

    ``kind`` is ``"gaussian"`` for ``g(x) = 2**(d/4) exp(-pi |x|^2)``,
    ``"hermite"`` for a normalized superposition of tensor Hermite functions,
    or ``"sampled"`` for an explicit :class:`SampledField`.
    """

    kind: str = "gaussian"
    coefficients: tuple = ()
    field: SampledField | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "hermite", "sampled"):
            raise ValueError(f"unknown window kind {self.kind!r}")
        if self.kind == "hermite" and not self.coefficients:
            raise ValueError("hermite window needs coefficients")
        if self.kind == "sampled" and self.field is None:
            raise ValueError("sampled window needs a field")

    @classmethod
    def gaussian(cls) -> "WindowSpec":
        return cls("gaussian")

    @classmethod
    def hermite(cls, coefficients) -> "WindowSpec":
        """Hermite superposition; a sequence means d=1, a mapping multi-index -> c."""
        if isinstance(coefficients, dict):
            items = [(tuple(int(i) for i in k), complex(v)) for k, v in coefficients.items()]
        else:
            items = [((n,), complex(c)) for n, c in enumerate(coefficients)]
        items = [(k, c) for k, c in items if c != 0]
        if not items:
            raise ValueError("hermite window needs a nonzero coefficient")
        dims = {len(k) for k, _ in items}
        if len(dims) != 1:
            raise ValueError("hermite multi-indices must share one dimension")
        nrm = math.sqrt(sum(abs(c) ** 2 for _, c in items))
        return cls("hermite", tuple(sorted((k, c / nrm) for k, c in items)))

    @classmethod
    def sampled(cls, f: SampledField, normalize: bool = True) -> "WindowSpec":
        if normalize:
            n = f.norm()
            if n == 0:
                raise ValueError("sampled window must be nonzero")
            f = f * (1.0 / n)
        return cls("sampled", (), f)

    @property
    def has_closed_form(self) -> bool:
        return self.kind != "sampled"

    def evaluate(self, x) -> np.ndarray:
        """Closed-form values at positions ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        if self.kind == "gaussian":
            return 2 ** (d / 4) * np.exp(-np.pi * np.sum(x * x, axis=-1))
        if self.kind == "hermite":
            return self._hermite(x, fourier=False)
        raise ValueError("sampled windows have no closed form; use samples()")

    def fourier(self, xi) -> np.ndarray:
        """Closed-form ``F g`` at frequencies ``xi`` of shape ``(..., d)``."""
        xi = np.asarray(xi, dtype=float)
        if self.kind == "gaussian":
            return self.evaluate(xi)
        if self.kind == "hermite":
            return self._hermite(xi, fourier=True)
        raise ValueError("sampled windows have no closed-form transform")

    def _hermite(self, x, fourier):
        d = x.shape[-1]
        if len(self.coefficients[0][0]) != d:
            raise ValueError("hermite window dimension does not match grid")
        nmax = max(max(k) for k, _ in self.coefficients)
        tables = [hermite_functions(nmax, x[..., j]) for j in range(d)]
        out = np.zeros(x.shape[:-1], dtype=complex)
        for k, c in self.coefficients:
            term = c * ((-1j) ** sum(k) if fourier else 1.0)
            prod = np.ones(x.shape[:-1])
            for j, n in enumerate(k):
                prod = prod * tables[j][n]
            out = out + term * prod
        return out

    def samples(self, grid: Grid) -> SampledField:
        """Samples on ``grid`` (periodic images beyond the budget are ignored)."""
        if self.kind == "sampled":
            _check_grids(self.field.grid, grid)
            return self.field
        return SampledField(grid, self.evaluate(grid.coords()))


def window_radius(g: WindowSpec, grid: Grid) -> float:
    """Smallest radius outside which the window carries less than the budget of mass."""
    f = g.samples(grid)
    r = np.sqrt(np.sum(grid.coords() ** 2, axis=-1)).ravel()
    m = (np.abs(f.values) ** 2).ravel() * grid.weight
    order = np.argsort(r)[::-1]
    tail = np.cumsum(m[order])
    total = tail[-1]
    outside = np.nonzero(tail > grid.trunc_budget * total)[0]
    if outside.size == 0:
        return 0.0
    return float(r[order][outside[0]])


def check_admissible(g: WindowSpec, grid: Grid) -> None:
    """Raise if the window leaks more than the budget outside the grid or past Nyquist."""
    f = g.samples(grid)
    spec = f.spectrum()
    total = np.sum(np.abs(spec) ** 2)
    # outermost samples on each side stand in for the mass beyond
    edge = np.zeros(grid.shape, dtype=bool)
    band = max(1, grid.samples // 32)
    for ax in range(grid.dim):
        idx = [slice(None)] * grid.dim
        idx[ax] = np.r_[0:band, grid.samples - band:grid.samples]
        edge[tuple(idx)] = True
    space_tail = np.sum(np.abs(f.values[edge]) ** 2) / np.sum(np.abs(f.values) ** 2)
    k = np.abs(grid.freq_coords()).max(axis=-1)
    freq_tail = np.sum(np.abs(spec[k >= grid.nyquist * (1 - 2.0 / 32)]) ** 2) / total
    if space_tail > grid.trunc_budget or freq_tail > grid.trunc_budget:
        raise ValueError(
            f"grid not admissible for window (spatial tail {space_tail:.3g}, "
            f"spectral tail {freq_tail:.3g}, budget {grid.trunc_budget:.3g})")


# ---------------------------------------------------------------- phase points

@dataclass(frozen=True)
class PhasePoint:
    """Phase-space point ``z = (x, xi)``."""

    x: tuple
    xi: tuple

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(self.x))
        xi = tuple(float(v) for v in np.atleast_1d(self.xi))
        if len(x) != len(xi):
            raise ValueError("x and xi must have the same dimension")
        if not all(math.isfinite(v) for v in x + xi):
            raise ValueError("phase point must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)

    @property
    def dim(self) -> int:
        return len(self.x)

    def as_array(self) -> np.ndarray:
        return np.array(self.x + self.xi)


def _as_points(points, d):
    arr = []
    for p in points:
        if not isinstance(p, PhasePoint):
            p = np.asarray(p, dtype=float).ravel()
            p = PhasePoint(p[:d], p[d:])
        if p.dim != d:
            raise ValueError("phase point dimension does not match grid")
        arr.append(p.as_array())
    return np.array(arr, dtype=float).reshape(-1, 2 * d)


def _shifted_window(g: WindowSpec, x, grid: Grid) -> np.ndarray:
    """Samples of ``T_x g`` with periodic wrap-around."""
    x = np.asarray(x, dtype=float)
    if g.kind == "sampled":
        _check_grids(g.field.grid, grid)
        spec = _forward(g.field.values, grid)
        phase = np.exp(-2j * np.pi * np.tensordot(grid.freq_coords(), x, axes=([-1], [0])))
        return _inverse(spec * phase, grid)
    return g.evaluate(grid.wrap(grid.coords() - x))


def _modulation(xi, grid: Grid) -> np.ndarray:
    return np.exp(2j * np.pi * np.tensordot(grid.coords(), np.asarray(xi, float), axes=([-1], [0])))


def tf_shift(g: WindowSpec, z, grid: Grid, check: bool = True) -> SampledField:
    """Samples of ``pi(z) g = M_xi T_x g`` on ``grid`` with periodic wrap.

    Raises
    ------
    ValueError
        If ``|x|`` exceeds ``L/2`` minus the window's truncation radius, since
        the wrapped tail would then corrupt decay measurements.
    """
    (z,) = _as_points([z], grid.dim)
    x, xi = z[:grid.dim], z[grid.dim:]
    if check:
        limit = grid.extent / 2 - window_radius(g, grid)
        if np.max(np.abs(x)) > limit:
            raise ValueError(f"shift |x|={np.max(np.abs(x)):.6g} exceeds the truncation margin {limit:.6g}")
    return SampledField(grid, _modulation(xi, grid) * _shifted_window(g, x, grid))


def stft(f: SampledField, g: WindowSpec, points: Sequence) -> np.ndarray:
    """``V_g f(z) = <f, pi(z) g>`` at each phase point.

    Points sharing a position ``x`` are batched: when all their frequencies
    lie on the grid's frequency lattice one FFT serves the batch, otherwise a
    direct sum is used.
    """
    grid = f.grid
    d = grid.dim
    if g.kind == "sampled":
        _check_grids(g.field.grid, grid)
    pts = _as_points(points, d)
    out = np.empty(len(pts), dtype=complex)
    if len(pts) == 0:
        return out
    xs, inv = np.unique(pts[:, :d], axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    coords = grid.coords().reshape(-1, d)
    for i, x in enumerate(xs):
        sel = np.nonzero(inv == i)[0]
        prod = f.values * np.conj(_shifted_window(g, x, grid))
        xi = pts[sel, d:]
        k = xi * grid.extent
        if np.allclose(k, np.rint(k), atol=1e-9):
            spec = _forward(prod, grid)
            idx = tuple(np.mod(np.rint(k[:, j]).astype(int), grid.samples) for j in range(d))
            out[sel] = spec[idx]
        else:
            ph = np.exp(-2j * np.pi * (xi @ coords.T))
            out[sel] = grid.weight * (ph @ prod.ravel())
    return out


# ---------------------------------------------------------------- phase grids

@dataclass(frozen=True)
class PhaseGrid:
    """Phase-space sampling: every ``x_stride``-th grid position times all grid frequencies."""

    grid: Grid
    x_stride: int = 1

    def __post_init__(self):
        if self.x_stride < 1 or self.grid.samples % self.x_stride:
            raise ValueError("x_stride must divide samples_per_axis")

    @classmethod
    def default(cls, grid: Grid, max_spacing: float = 0.25) -> "PhaseGrid":
        stride = max(1, int(max_spacing / grid.spacing))
        while grid.samples % stride:
            stride -= 1
        return cls(grid, stride)

    @property
    def x_index(self) -> np.ndarray:
        # aligned so that x = 0 is included
        start = (self.grid.samples // 2) % self.x_stride
        return np.arange(start, self.grid.samples, self.x_stride)

    @property
    def x_axis(self) -> np.ndarray:
        return self.grid.axis()[self.x_index]

    @property
    def xi_axis(self) -> np.ndarray:
        """Frequencies in FFT order."""
        return self.grid.freq_index() / self.grid.extent

    @property
    def x_weight(self) -> float:
        return (self.grid.spacing * self.x_stride) ** self.grid.dim

    @property
    def xi_weight(self) -> float:
        return self.grid.extent ** (-self.grid.dim)


@dataclass(frozen=True)
class PhaseField:
    """Samples of a phase-space function.

    ``values`` has shape ``(len(x_axis),)*d + (len(xi_axis),)*d``.
    """

    x_axis: np.ndarray
    xi_axis: np.ndarray
    values: np.ndarray
    phase_grid: PhaseGrid | None = None


def stft_phase(f: SampledField, g: WindowSpec, pg: PhaseGrid | None = None) -> PhaseField:
    """STFT of ``f`` on a phase grid (frequencies in FFT order)."""
    grid = f.grid
    pg = PhaseGrid.default(grid) if pg is None else pg
    _check_grids(pg.grid, grid)
    d = grid.dim
    ax = grid.axis()
    xi_idx = pg.x_index
    mesh = np.meshgrid(*([xi_idx] * d), indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=-1)
    out = np.empty((len(flat),) + grid.shape, dtype=complex)
    for i, row in enumerate(flat):
        x = ax[row]
        out[i] = _forward(f.values * np.conj(_shifted_window(g, x, grid)), grid)
    out = out.reshape((len(xi_idx),) * d + grid.shape)
    return PhaseField(pg.x_axis, pg.xi_axis, out, pg)


def inversion_quality(g: WindowSpec, pg: PhaseGrid) -> float:
    """Max deviation of ``sum_x |g(t - x)|^2 dx`` from ``||g||^2``; zero for exact sampling."""
    grid = pg.grid
    d = grid.dim
    acc = np.zeros(grid.shape)
    mesh = np.meshgrid(*([pg.x_index] * d), indexing="ij")
    for row in np.stack([m.ravel() for m in mesh], axis=-1):
        acc += np.abs(_shifted_window(g, grid.axis()[row], grid)) ** 2
    gn = g.samples(grid).norm() ** 2
    return float(np.max(np.abs(acc * pg.x_weight - gn)) / gn)


def stft_invert(V: PhaseField, g: WindowSpec, return_quality: bool = False, tol: float = 1e-6):
    """Reconstruct ``f = ||g||^-2 int int V(x, xi) M_xi T_x g dx dxi`` by quadrature.

    Parameters
    ----------
    V : PhaseField
        Output of :func:`stft_phase` (its phase grid fixes the quadrature).
    g : WindowSpec
    return_quality : bool
        If true return ``(field, quality, undersampled)`` where ``quality`` is
        :func:`inversion_quality` and ``undersampled`` flags ``quality > tol``.
    """
    pg = V.phase_grid
    if pg is None:
        raise ValueError("phase field carries no phase grid")
    grid = pg.grid
    d = grid.dim
    vals = V.values.reshape((-1,) + grid.shape)
    mesh = np.meshgrid(*([pg.x_index] * d), indexing="ij")
    acc = np.zeros(grid.shape, dtype=complex)
    for i, row in enumerate(np.stack([m.ravel() for m in mesh], axis=-1)):
        # sum over the full frequency lattice is an exact inverse DFT
        inner = _inverse(vals[i], grid) * grid.weight * grid.samples ** d * pg.xi_weight
        acc += inner * _shifted_window(g, grid.axis()[row], grid)
    gn = g.samples(grid).norm() ** 2
    out = SampledField(grid, acc * pg.x_weight / gn)
    if return_quality:
        q = inversion_quality(g, pg)
        return out, q, q > tol
    return out


def modulation_norm(f: SampledField, g: WindowSpec, p: float = 2.0, q: float = 2.0,
                    weight: Callable | None = None, pg: PhaseGrid | None = None) -> float:
    """Mixed norm ``|| |V_g f| m ||_{L^{p,q}}`` with ``p`` over ``x`` (inner) and ``q`` over ``xi``."""
    for e in (p, q):
        if not (1 <= e <= math.inf):
            raise ValueError("p and q must lie in [1, inf]")
    V = stft_phase(f, g, pg)
    pg = V.phase_grid
    d = f.grid.dim
    a = np.abs(V.values)
    if weight is not None:
        xs = np.stack(np.meshgrid(*([V.x_axis] * d), indexing="ij"), -1)
        ks = np.stack(np.meshgrid(*([V.xi_axis] * d), indexing="ij"), -1)
        X = xs.reshape(xs.shape[:-1] + (1,) * d + (d,))
        K = ks.reshape((1,) * d + ks.shape)
        X, K = np.broadcast_arrays(X, K)
        a = a * weight(X, K)
    xaxes = tuple(range(d))
    if p == math.inf:
        inner = a.max(axis=xaxes)
    else:
        inner = (np.sum(a ** p, axis=xaxes) * pg.x_weight) ** (1.0 / p)
    if q == math.inf:
        return float(inner.max())
    return float((np.sum(inner ** q) * pg.xi_weight) ** (1.0 / q))


# ---------------------------------------------------------------- Wigner

def _upsample2(values: np.ndarray) -> np.ndarray:
    """Band-limited 2x upsampling of a 1-d periodic sequence (Nyquist bin split)."""
    N = len(values)
    c = np.fft.fft(values)
    out = np.zeros(2 * N, dtype=complex)
    h = N // 2
    out[:h] = c[:h]
    out[-h + 1:] = c[h + 1:]
    out[h] = c[h] / 2
    out[-h] = c[h] / 2
    return np.fft.ifft(out) * 2


def wigner(f: SampledField, g: SampledField) -> PhaseField:
    """Cross-Wigner distribution ``W(f, g)`` on the phase grid (d = 1).

    The half-sample values ``f(x + t/2)`` come from exact band-limited 2x
    upsampling. Positions are the grid samples; frequencies are the ``2N``
    values ``q/(2L)`` in ascending order.
    """
    _check_grids(f.grid, g.grid)
    grid = f.grid
    if grid.dim != 1:
        raise ValueError("wigner supports d = 1 only")
    N = grid.samples
    F = _upsample2(f.values)
    G = _upsample2(g.values)
    k = np.arange(2 * N)
    j2 = 2 * np.arange(N)
    P = F[(j2[:, None] + k[None, :]) % (2 * N)] * np.conj(G[(j2[:, None] - k[None, :]) % (2 * N)])
    W = np.fft.fft(P, axis=1) * grid.spacing
    xi = np.fft.fftfreq(2 * N) * 2 * N / (2 * grid.extent)
    order = np.argsort(xi)
    return PhaseField(grid.axis(), xi[order], W[:, order])


# ---------------------------------------------------------------- serialization

_HEADER = struct.Struct("<IId")


def fmt17(x) -> str:
    """Float text with 17 significant digits (exact round trip)."""
    return format(float(x), ".17g")


def field_to_bytes(f: SampledField) -> bytes:
    """Little-endian ``u32 d, u32 N, f64 L`` then interleaved ``(re, im)`` f64 pairs."""
    head = _HEADER.pack(f.grid.dim, f.grid.samples, f.grid.extent)
    body = np.ascontiguousarray(f.values.ravel()).astype("<c16").view("<f8").tobytes()
    return head + body


def field_from_bytes(buf: bytes) -> SampledField:
    d, N, L = _HEADER.unpack_from(buf, 0)
    grid = Grid(d, L, N)
    body = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * N ** d:
        raise ValueError("truncated field payload")
    return SampledField(grid, body.view("<c16").reshape(grid.shape))


def field_to_csv(f: SampledField) -> str:
    """CSV rows ``index, re, im`` with flat row-major indices."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "re", "im"])
    for i, v in enumerate(f.values.ravel()):
        w.writerow([i, fmt17(v.real), fmt17(v.imag)])
    return buf.getvalue()


def field_from_csv(text: str, grid: Grid) -> SampledField:
    rows = list(csv.reader(io.StringIO(text)))[1:]
    vals = np.zeros(grid.samples ** grid.dim, dtype=complex)
    for i, re, im in rows:
        vals[int(i)] = complex(float(re), float(im))
    return SampledField(grid, vals)
