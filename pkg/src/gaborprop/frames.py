"""Gabor frames on separable lattices: bounds, canonical duals, coefficient maps.

Frame computations run on the periodic grid. The lattice is restricted to
its points in the fundamental domain ``[-L/2, L/2)**d`` times the full
discrete frequency band, which makes the frame operator exactly periodic.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, eigsh

from .tfcore import Grid, SampledField, WindowSpec, _check_grids, _forward, _inverse, _shifted_window, fmt17


@dataclass(frozen=True)
class Lattice:
    """Lattice ``alpha Z^d x beta Z^d`` or ``A Z^{2d}`` for a general generator ``A``.

    Only points with ``|lambda| <= truncation_radius`` are enumerated by
    :meth:`enumerate`.
    """

    alpha: float = 1.0
    beta: float = 0.5
    dim: int = 1
    truncation_radius: float = 6.0
    generator: np.ndarray | None = None

    def __post_init__(self):
        if self.generator is not None:
            A = np.asarray(self.generator, dtype=float)
            if A.shape != (2 * self.dim, 2 * self.dim):
                raise ValueError("generator must be 2d x 2d")
            if abs(np.linalg.det(A)) < 1e-12:
                raise ValueError("generator must be invertible")
            object.__setattr__(self, "generator", A)
        elif not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        if not self.truncation_radius > 0:
            raise ValueError("truncation_radius must be positive")

    @property
    def separable(self) -> bool:
        return self.generator is None

    @property
    def matrix(self) -> np.ndarray:
        if self.generator is not None:
            return self.generator
        return np.diag([self.alpha] * self.dim + [self.beta] * self.dim)

    @property
    def density(self) -> float:
        return 1.0 / abs(np.linalg.det(self.matrix))

    def enumerate(self, radius: float | None = None) -> "LatticePoints":
        """Points with ``|lambda| <= radius``; symmetric under negation."""
        R = self.truncation_radius if radius is None else radius
        A = self.matrix
        # bound on integer coordinates from the smallest singular value
        smin = np.linalg.svd(A, compute_uv=False).min()
        K = int(np.ceil(R / smin)) + 1
        rng = np.arange(-K, K + 1)
        mesh = np.meshgrid(*([rng] * (2 * self.dim)), indexing="ij")
        idx = np.stack([m.ravel() for m in mesh], axis=-1)
        pts = idx @ A.T
        keep = np.linalg.norm(pts, axis=1) <= R * (1 + 1e-12)
        return LatticePoints(self, idx[keep], pts[keep], None)

    def torus(self, grid: Grid) -> "LatticePoints":
        """All lattice points of the fundamental domain of ``grid`` (separable only)."""
        na, nb, q = torus_counts(self, grid)
        d = self.dim
        ma = np.arange(na) - na // 2
        nbr = np.arange(nb) - nb // 2
        mesh = np.meshgrid(*([ma] * d + [nbr] * d), indexing="ij")
        idx = np.stack([m.ravel() for m in mesh], axis=-1)
        pts = idx * np.array([self.alpha] * d + [self.beta] * d)
        return LatticePoints(self, idx, pts, grid.extent)


def torus_counts(lat: Lattice, grid: Grid):
    """Translations ``L/alpha``, modulations ``N/(beta L)`` and index step ``beta L``."""
    if not lat.separable:
        raise ValueError("periodic frames need a separable lattice")
    if lat.dim != grid.dim:
        raise ValueError("lattice and grid dimensions differ")
    na = grid.extent / lat.alpha
    q = lat.beta * grid.extent
    if abs(na - round(na)) > 1e-9 or abs(q - round(q)) > 1e-9 or round(q) == 0:
        raise ValueError("lattice incompatible with grid: need L/alpha and beta*L integers")
    q = int(round(q))
    if grid.samples % q:
        raise ValueError("lattice incompatible with grid: beta*L must divide N")
    return int(round(na)), grid.samples // q, q


@dataclass(frozen=True)
class LatticePoints:
    """Enumerated lattice points.

    ``index`` holds integer coordinates, ``points`` the phase-space positions
    ``(x, xi)``; ``period`` is the torus extent when the set tiles a torus.
    """

    lattice: Lattice
    index: np.ndarray
    points: np.ndarray
    period: float | None = None

    def __len__(self):
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.lattice.dim

    def offsets(self, rows=None, cols=None) -> np.ndarray:
        """Phase-space differences ``lambda - mu`` (minimum image in ``x`` on a torus)."""
        P = self.points
        a = P if rows is None else P[rows]
        b = P if cols is None else P[cols]
        diff = a[:, None, :] - b[None, :, :] if rows is None else a - b
        if self.period is not None:
            d = self.dim
            L = self.period
            diff[..., :d] = np.mod(diff[..., :d] + L / 2, L) - L / 2
        return diff

    def locate(self, index) -> int:
        hit = np.nonzero(np.all(self.index == np.asarray(index), axis=1))[0]
        if hit.size == 0:
            raise KeyError(f"lattice index {tuple(index)} outside the enumerated set")
        return int(hit[0])


@dataclass(frozen=True)
class FrameBounds:
    A: float
    B: float
    method: str
    converged: bool


@dataclass(frozen=True)
class DualWindow:
    field: SampledField
    source: WindowSpec
    lattice: Lattice
    residual: float
    converged: bool
    iterations: int

    @property
    def window(self) -> WindowSpec:
        return WindowSpec.sampled(self.field, normalize=False)


@dataclass(frozen=True)
class GaborCoefficients:
    """Coefficient map ``lambda -> c_lambda`` over :class:`LatticePoints`."""

    points: LatticePoints
    values: np.ndarray

    def __getitem__(self, index):
        return complex(self.values[self.points.locate(index)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.points.dim
        w.writerow([f"m{i}" for i in range(d)] + [f"n{i}" for i in range(d)] + ["re", "im"])
        for ix, v in zip(self.points.index, self.values):
            w.writerow([int(i) for i in ix] + [fmt17(v.real), fmt17(v.imag)])
        return buf.getvalue()


def _as_window(g):
    return g.window if isinstance(g, DualWindow) else g


class _PeriodicFrame:
    """Matrix-free analysis/synthesis for a separable lattice on a torus."""

    def __init__(self, g: WindowSpec, lat: Lattice, grid: Grid):
        self.grid = grid
        self.lat = lat
        self.na, self.nb, self.q = torus_counts(lat, grid)
        self.points = lat.torus(grid)
        d = grid.dim
        ma = (np.arange(self.na) - self.na // 2) * lat.alpha
        mesh = np.meshgrid(*([ma] * d), indexing="ij")
        shifts = np.stack([m.ravel() for m in mesh], axis=-1)
        self.windows = np.stack([_shifted_window(g, x, grid) for x in shifts])
        nidx = np.arange(self.nb) - self.nb // 2
        self.kidx = np.mod(nidx * self.q, grid.samples)

    def analysis(self, values: np.ndarray) -> np.ndarray:
        d = self.grid.dim
        prod = values[None] * np.conj(self.windows)
        spec = _forward(prod, self.grid, axes=tuple(range(1, d + 1)))
        sel = spec[np.ix_(np.arange(len(spec)), *([self.kidx] * d))]
        return sel.reshape(-1)

    def synthesis(self, coeffs: np.ndarray) -> np.ndarray:
        d = self.grid.dim
        n_shift = len(self.windows)
        c = coeffs.reshape((n_shift,) + (self.nb,) * d)
        spec = np.zeros((n_shift,) + self.grid.shape, dtype=complex)
        spec[np.ix_(np.arange(n_shift), *([self.kidx] * d))] = c
        # sum_n c_n exp(2 pi i xi_n t) via the centred inverse transform
        mods = _inverse(spec, self.grid, axes=tuple(range(1, d + 1))) * self.grid.extent ** d
        return np.sum(mods * self.windows, axis=0)

    def frame_operator(self, values: np.ndarray) -> np.ndarray:
        return self.synthesis(self.analysis(values))

    def linear_operator(self) -> LinearOperator:
        n = self.grid.samples ** self.grid.dim
        shape = self.grid.shape

        def mv(v):
            return self.frame_operator(np.asarray(v).reshape(shape)).ravel()

        return LinearOperator((n, n), matvec=mv, rmatvec=mv, dtype=complex)


def frame_operator(f: SampledField, g: WindowSpec, lat: Lattice) -> SampledField:
    """``S f = sum_lambda <f, pi(lambda) g> pi(lambda) g`` on the torus."""
    fr = _PeriodicFrame(_as_window(g), lat, f.grid)
    return SampledField(f.grid, fr.frame_operator(f.values))


def _start_vector(n):
    rng = np.random.default_rng(12345)
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def frame_bounds(g: WindowSpec, lat: Lattice, grid: Grid, tol: float = 1e-10,
                 maxiter: int = 5000) -> FrameBounds:
    """Extreme eigenvalues of the frame operator by Lanczos iteration.

    ``B`` is the top eigenvalue of ``S``; ``A`` is ``B_upper`` minus the top
    eigenvalue of ``B_upper I - S``.
    """
    fr = _PeriodicFrame(_as_window(g), lat, grid)
    op = fr.linear_operator()
    n = op.shape[0]
    v0 = _start_vector(n)
    converged = True
    try:
        B = float(eigsh(op, k=1, which="LA", v0=v0, tol=tol, maxiter=maxiter,
                        return_eigenvectors=False)[0])
    except Exception as exc:  # ArpackNoConvergence carries partial results
        converged = False
        ev = getattr(exc, "eigenvalues", np.array([np.nan]))
        B = float(np.max(ev)) if len(ev) else float("nan")
    upper = B * (1 + 1e-8)
    shifted = LinearOperator((n, n), matvec=lambda v: upper * v - op.matvec(v),
                             rmatvec=lambda v: upper * v - op.matvec(v), dtype=complex)
    try:
        top = float(eigsh(shifted, k=1, which="LA", v0=v0, tol=tol, maxiter=maxiter,
                          return_eigenvectors=False)[0])
    except Exception as exc:
        converged = False
        ev = getattr(exc, "eigenvalues", np.array([np.nan]))
        top = float(np.max(ev)) if len(ev) else float("nan")
    A = max(0.0, upper - top)
    return FrameBounds(A=A, B=B, method="lanczos", converged=converged)


def canonical_dual(g: WindowSpec, lat: Lattice, grid: Grid, rtol: float = 1e-8,
                   maxiter: int = 2000, bounds: FrameBounds | None = None) -> DualWindow:
    """``gamma = S^{-1} g`` by conjugate gradients on the frame operator.

    Raises
    ------
    ValueError
        If ``A <= 1e-3 B``; the inversion would be ill-conditioned.
    """
    b = frame_bounds(g, lat, grid) if bounds is None else bounds
    if not b.A > 1e-3 * b.B:
        raise ValueError(f"frame too ill-conditioned for a dual (A={b.A:.3g}, B={b.B:.3g})")
    fr = _PeriodicFrame(g, lat, grid)
    op = fr.linear_operator()
    rhs = g.samples(grid).values.ravel()
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = cg(op, rhs, x0=rhs / b.B, rtol=rtol, atol=0.0, maxiter=maxiter, callback=cb)
    gamma = SampledField(grid, x.reshape(grid.shape))
    res = SampledField(grid, op.matvec(x).reshape(grid.shape)) - g.samples(grid)
    return DualWindow(gamma, g, lat, res.norm(), info == 0, count[0])


def analysis_coeffs(f: SampledField, g, lat: Lattice) -> GaborCoefficients:
    """``c_lambda = <f, pi(lambda) g>`` over the torus lattice."""
    w = _as_window(g)
    if w.kind == "sampled":
        _check_grids(w.field.grid, f.grid)
    fr = _PeriodicFrame(w, lat, f.grid)
    return GaborCoefficients(fr.points, fr.analysis(f.values))


def synthesis(coeffs: GaborCoefficients, gamma, lat: Lattice, grid: Grid | None = None) -> SampledField:
    """``sum_lambda c_lambda pi(lambda) gamma``."""
    w = _as_window(gamma)
    if grid is None:
        if w.kind != "sampled":
            raise ValueError("grid required for closed-form windows")
        grid = w.field.grid
    fr = _PeriodicFrame(w, lat, grid)
    if len(coeffs.values) != len(fr.points) or not np.array_equal(coeffs.points.index, fr.points.index):
        raise ValueError("coefficients do not match the lattice")
    return SampledField(grid, fr.synthesis(np.asarray(coeffs.values)))


def wexler_raz_defect(g: WindowSpec, gamma: DualWindow, grid: Grid) -> float:
    """Max deviation of ``(alpha beta)^-d <gamma, pi(mu) g>`` from ``delta_{mu,0}``.

    ``mu`` runs over the adjoint lattice ``(1/beta) Z^d x (1/alpha) Z^d``
    inside the fundamental domain.
    """
    lat = gamma.lattice
    adj = Lattice(1.0 / lat.beta, 1.0 / lat.alpha, lat.dim)
    c = analysis_coeffs(gamma.field, g, adj).values / (lat.alpha * lat.beta) ** lat.dim
    zero = adj.torus(grid).locate([0] * (2 * lat.dim))
    delta = np.zeros(len(c))
    delta[zero] = 1.0
    return float(np.max(np.abs(c - delta)))
