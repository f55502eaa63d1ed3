"""Forward Cauchy problem: spectral reference and sparse Gabor-matrix solver."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .frames import DualWindow, GaborCoefficients, Lattice, analysis_coeffs, synthesis
from .gabor_matrix import MatrixAssemblyConfig, direct_matrix, multiplier_callback, multiplier_matrix
from .symbols import OperatorSpec, hp_check, propagator_symbol
from .tfcore import Grid, SampledField, WindowSpec, _forward, _inverse


@dataclass(frozen=True)
class CauchyData:
    """Initial values ``d_t**k u(0) = u_k`` for ``k = 0 .. m-1``."""

    fields: tuple

    def __post_init__(self):
        fields = tuple(self.fields)
        if not fields:
            raise ValueError("Cauchy data needs at least one field")
        g0 = fields[0].grid
        if any(not f.grid.compatible(g0) for f in fields[1:]):
            raise ValueError("all Cauchy data must share one grid")
        object.__setattr__(self, "fields", fields)

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    def __len__(self):
        return len(self.fields)

    def combine(self, a, other: "CauchyData", b) -> "CauchyData":
        """``a * self + b * other``."""
        return CauchyData(tuple(f * a + h * b for f, h in zip(self.fields, other.fields)))


@dataclass(frozen=True)
class DatumSymbol:
    """Total symbol acting on datum ``u_i``: ``sum_k a_{m-1-i-k}(xi) d_t**k sigma(t, xi)`` with ``a_0 = 1``.

    Accepts complex frequencies, like :class:`~gaborprop.symbols.PropagatorSymbol`.
    """

    spec: OperatorSpec
    t: float
    index: int

    analytic = True

    def __call__(self, xi):
        sym = propagator_symbol(self.spec, self.t)
        m = self.spec.order
        out = 0
        for k in range(m - self.index):
            j = m - 1 - self.index - k
            if j > 0:
                a = self.spec.coeffs[j - 1]
                if not a.terms:
                    continue
                out = out + sym.evaluate(xi, k) * a(xi)
            else:
                out = out + sym.evaluate(xi, k)
        return out


def _check_data(spec: OperatorSpec, data: CauchyData):
    if len(data) != spec.order:
        raise ValueError(f"operator of order {spec.order} needs {spec.order} initial fields, got {len(data)}")
    if data.grid.dim != spec.dim:
        raise ValueError("data and operator dimensions differ")


def _frequencies(grid: Grid) -> np.ndarray:
    xi = grid.freq_coords()
    return xi[..., 0] if grid.dim == 1 else xi


def spectral_solve(spec: OperatorSpec, data: CauchyData, t: float, check_hp: bool = True) -> SampledField:
    """``u(t)`` with every term applied diagonally in frequency.

    Raises
    ------
    ValueError
        For ``t < 0``, mismatched data or when the Hadamard-Petrowsky check
        fails on the grid frequencies (the forward problem is ill-posed).
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    _check_data(spec, data)
    grid = data.grid
    xi = _frequencies(grid)
    if check_hp:
        rep = hp_check(spec, grid.freq_coords().reshape(-1, grid.dim))
        if not rep.holds:
            raise ValueError("Hadamard-Petrowsky condition fails: the forward problem is ill-posed")
    acc = np.zeros(grid.shape, dtype=complex)
    for i, f in enumerate(data.fields):
        acc = acc + DatumSymbol(spec, float(t), i)(xi) * _forward(f.values, grid)
    return SampledField(grid, _inverse(acc, grid))


@dataclass(frozen=True)
class SparsePropagator:
    """Per-datum Gabor matrices of a fixed-time propagator on a periodic frame.

    ``dense`` keeps the threshold-0 matrices so other pruning levels can be
    derived without reassembly.
    """

    spec: OperatorSpec
    t: float
    window: WindowSpec
    dual: DualWindow
    lattice: Lattice
    grid: Grid
    matrices: tuple
    threshold: float
    band_radius: float | None
    assembly_seconds: float
    dense: tuple = field(repr=False, default=())

    @property
    def nnz(self) -> int:
        return int(sum(M.nnz for M in self.matrices))

    def with_pruning(self, threshold: float, band_radius: float | None = None) -> "SparsePropagator":
        source = self.dense or self.matrices
        mats = tuple(M.pruned(threshold, band_radius) for M in source)
        _check_diagonals(mats, threshold)
        return SparsePropagator(self.spec, self.t, self.window, self.dual, self.lattice, self.grid, mats,
                                float(threshold), band_radius, self.assembly_seconds, self.dense)


def _check_diagonals(mats, threshold):
    for i, M in enumerate(mats):
        if not np.any(M.diag() != 0):
            raise ValueError(f"threshold {threshold:g} removes the whole diagonal of term {i}; refusing")


def build_sparse_propagator(spec: OperatorSpec, t: float, frame, threshold: float = 0.0,
                            band_radius: float | None = None, method: str = "multiplier",
                            cfg: MatrixAssemblyConfig | None = None) -> SparsePropagator:
    """Assemble one Gabor matrix per datum and prune it.

    Parameters
    ----------
    frame : tuple
        ``(g, gamma, lattice)`` with ``gamma`` a :class:`DualWindow` built on
        the solver grid.
    method : {"multiplier", "direct"}
        Frequency-domain assembly or direct application on the grid.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    g, gamma, lat = frame
    grid = gamma.field.grid
    if lat != gamma.lattice:
        raise ValueError("dual window was built for a different lattice")
    pts = lat.torus(grid)
    cfg = MatrixAssemblyConfig(drop_threshold=0.0) if cfg is None else cfg
    t0 = time.perf_counter()
    dense = []
    for i in range(spec.order):
        sym = DatumSymbol(spec, float(t), i)
        if method == "multiplier":
            M = multiplier_matrix(sym, g, pts, cfg, grid)
        elif method == "direct":
            M = direct_matrix(multiplier_callback(sym), g, pts, cfg, grid)
        else:
            raise ValueError(f"unknown assembly method {method!r}")
        dense.append(M)
    elapsed = time.perf_counter() - t0
    mats = tuple(M.pruned(threshold, band_radius) for M in dense)
    _check_diagonals(mats, threshold)
    return SparsePropagator(spec, float(t), g, gamma, lat, grid, mats, float(threshold), band_radius,
                            elapsed, tuple(dense))


@dataclass(frozen=True)
class SolveReport:
    error: float
    nnz: int
    assembly_seconds: float
    apply_seconds: float
    threshold: float
    band_radius: float | None

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def gabor_solve(prop: SparsePropagator, data: CauchyData, reference: SampledField | None = None):
    """Analyse each datum with the dual window, apply its matrix, synthesise with the dual.

    With ``f = sum <f, gamma_mu> g_mu`` and ``h = sum <h, g_lambda> gamma_lambda``
    the matrix ``<T g_mu, g_lambda>`` maps analysis coefficients of the data
    to synthesis coefficients of the solution.

    Returns
    -------
    (SampledField, SolveReport)
    """
    _check_data(prop.spec, data)
    if not data.grid.compatible(prop.grid):
        raise ValueError("data grid does not match the frame grid")
    pts = prop.matrices[0].points
    t0 = time.perf_counter()
    out = np.zeros(len(pts), dtype=complex)
    for f, M in zip(data.fields, prop.matrices):
        c = analysis_coeffs(f, prop.dual, prop.lattice)
        if not np.array_equal(c.points.index, pts.index):
            raise ValueError("propagator and frame lattices differ")
        out += M.matvec(c.values)
    u = synthesis(GaborCoefficients(pts, out), prop.dual, prop.lattice, prop.grid)
    elapsed = time.perf_counter() - t0
    ref = spectral_solve(prop.spec, data, prop.t) if reference is None else reference
    nrm = ref.norm()
    err = (u - ref).norm() / nrm if nrm > 0 else (u - ref).norm()
    return u, SolveReport(float(err), prop.nnz, prop.assembly_seconds, elapsed, prop.threshold, prop.band_radius)


def sweep(prop: SparsePropagator, data: CauchyData, thresholds=(), band_radii=()) -> list:
    """Tidy rows over pruning settings.

    Columns are ``threshold, band_radius, nnz, error, time_ms`` plus
    ``truncation_error``, the relative distance to the unpruned Gabor solve,
    which isolates pruning from the frame round-trip floor.
    """
    ref = spectral_solve(prop.spec, data, prop.t)
    full, _ = gabor_solve(prop.with_pruning(0.0, None), data, ref)
    scale = full.norm() or 1.0
    settings = [(float(th), None) for th in thresholds] + [(0.0, float(r)) for r in band_radii]
    rows = []
    for th, br in settings:
        u, rep = gabor_solve(prop.with_pruning(th, br), data, ref)
        rows.append({"threshold": th, "band_radius": br, "nnz": rep.nnz, "error": rep.error,
                     "time_ms": 1e3 * rep.apply_seconds, "truncation_error": (u - full).norm() / scale})
    return rows


def repeated_solve(prop: SparsePropagator, data: CauchyData, steps: int) -> SampledField:
    """Experimental: apply a first-order propagator ``steps`` times, reaching ``steps * t``.

    Only meaningful for evolution semigroups (order 1), where the state is
    the single field.
    """
    if prop.spec.order != 1:
        raise ValueError("repeated stepping needs a first-order operator")
    if steps < 1:
        raise ValueError("steps must be positive")
    u = data.fields[0]
    for _ in range(steps):
        c = analysis_coeffs(u, prop.dual, prop.lattice)
        pts = prop.matrices[0].points
        u = synthesis(GaborCoefficients(pts, prop.matrices[0].matvec(c.values)), prop.dual, prop.lattice, prop.grid)
    return u


def default_data(spec: OperatorSpec, grid: Grid) -> CauchyData:
    """Gaussian bumps and Hermite functions as initial values."""
    fields = []
    for k in range(spec.order):
        if k % 2 == 0:
            w = WindowSpec.gaussian() if k == 0 else WindowSpec.hermite([0, 1])
            x0 = 0.5 * k
            vals = w.evaluate(grid.wrap(grid.coords() - x0))
        else:
            w = WindowSpec.hermite({(2,) * grid.dim: 1.0}) if grid.dim > 1 else WindowSpec.hermite([0, 0, 1])
            vals = w.evaluate(grid.coords()) * np.exp(2j * np.pi * 0.5 * grid.coords()[..., 0])
        fields.append(SampledField(grid, vals))
    return CauchyData(tuple(fields))
