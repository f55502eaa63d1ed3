"""Gabor matrices ``<T pi(mu) g, pi(lambda) g>`` by independent assembly paths.

Three paths are provided:

* :func:`multiplier_matrix` integrates the symbol against the closed-form
  window transforms. For the Gaussian window and analytic symbols the
  frequency integral is taken along a shifted horizontal contour, which
  resolves entries far below the rounding level of a real-axis sum.
* :func:`direct_matrix` applies an operator callback to sampled atoms on the
  periodic grid and takes quadrature inner products.
* :func:`weyl_matrix_magnitudes` evaluates ``|V_Phi sigma|`` at the mapped
  phase-space points, with ``Phi = W(g, g)``.
"""

from __future__ import annotations

import csv
import io
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy.special import logsumexp

from .frames import Lattice, LatticePoints
from .tfcore import Grid, PhaseField, PhaseGrid, SampledField, WindowSpec, apply_multiplier, fmt17, stft, tf_shift

EPS = np.finfo(float).eps
# log of the relative size below which contour endpoint values are negligible
_ENDPOINT_LOG = np.log(1e-18)
_KEY_CHUNK = 400


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("GABORPROP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class MatrixAssemblyConfig:
    """Assembly options.

    ``quad_step`` and ``quad_halfwidth`` set the frequency quadrature per
    axis (``None`` picks a dimension-dependent default). ``contour`` enables
    the shifted-contour path for analytic symbols. On a torus lattice the
    periodic images of every offset out to ``image_reach`` periods are
    summed, matching the periodised atoms of :func:`direct_matrix`.
    """

    drop_threshold: float = 1e-14
    band_radius: float | None = None
    quad_step: float | None = None
    quad_halfwidth: float | None = None
    contour: bool = True
    workers: int | None = None
    image_reach: float = 2.0

    def __post_init__(self):
        if not self.drop_threshold >= 0:
            raise ValueError("drop_threshold must be nonnegative")
        if self.band_radius is not None and not self.band_radius > 0:
            raise ValueError("band_radius must be positive")
        if self.quad_step is not None and not self.quad_step > 0:
            raise ValueError("quad_step must be positive")
        if not self.image_reach >= 0.5:
            raise ValueError("image_reach must be at least half a period")

    def quadrature(self, dim: int):
        step, hw = {1: (1 / 32, 6.0), 2: (1 / 16, 4.5)}.get(dim, (1 / 8, 4.0))
        return (self.quad_step or step), (self.quad_halfwidth or hw)


@dataclass(frozen=True)
class GaborMatrix:
    """Sparse Gabor matrix over enumerated lattice points.

    Entry ``k`` sits at row ``rows[k]`` (index of ``lambda`` in ``points``)
    and column ``cols[k]`` (index of ``mu``). ``errors`` holds per-entry
    quadrature error estimates when the assembly path provides them.
    """

    points: LatticePoints
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    method: str
    threshold: float
    band_radius: float | None = None
    errors: np.ndarray | None = None

    @property
    def lattice(self) -> Lattice:
        return self.points.lattice

    @property
    def shape(self):
        return (len(self.points), len(self.points))

    @property
    def nnz(self) -> int:
        return int(len(self.values))

    def offsets(self) -> np.ndarray:
        """``lambda - mu`` per stored entry."""
        return self.points.offsets(self.rows, self.cols)

    def to_sparse(self):
        return scipy.sparse.csr_matrix((self.values, (self.rows, self.cols)), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.values.dtype)
        out[self.rows, self.cols] = self.values
        return out

    def matvec(self, c) -> np.ndarray:
        return self.to_sparse() @ np.asarray(c)

    def entry(self, lam, mu) -> complex:
        i, j = self.points.locate(lam), self.points.locate(mu)
        hit = np.nonzero((self.rows == i) & (self.cols == j))[0]
        return self.values[hit[0]] if hit.size else 0.0

    def column(self, mu) -> np.ndarray:
        """Stored values of the column of lattice index ``mu``."""
        j = self.points.locate(mu)
        return self.values[self.cols == j]

    def diag(self) -> np.ndarray:
        out = np.zeros(len(self.points), dtype=self.values.dtype)
        on = self.rows == self.cols
        out[self.rows[on]] = self.values[on]
        return out

    def pruned(self, threshold: float | None = None, band_radius: float | None = None) -> "GaborMatrix":
        """Copy with entries below ``threshold`` or beyond ``band_radius`` removed."""
        thr = self.threshold if threshold is None else float(threshold)
        if thr < 0:
            raise ValueError("threshold must be nonnegative")
        keep = _keep_mask(self.values, self.offsets(), thr, band_radius)
        return GaborMatrix(self.points, self.rows[keep], self.cols[keep], self.values[keep], self.method,
                           thr, band_radius if band_radius is not None else self.band_radius,
                           None if self.errors is None else self.errors[keep])

    # ------------------------------------------------------------ dumps

    def to_csv(self) -> str:
        d2 = 2 * self.lattice.dim
        buf = io.StringIO()
        buf.write(f"# method={self.method} threshold={self.threshold!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"lam{k}" for k in range(d2)] + [f"mu{k}" for k in range(d2)] + ["re", "im"])
        idx = self.points.index
        vals = np.asarray(self.values, dtype=complex)
        for r, c, v in zip(self.rows, self.cols, vals):
            w.writerow([*idx[r], *idx[c], fmt17(v.real), fmt17(v.imag)])
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        """Header ``<u32 d, u64 nnz>``, lattice descriptor, method tag, threshold, records.

        The lattice descriptor is ``<u8 separable, f64 alpha, f64 beta,
        f64 truncation_radius, f64 period>`` followed by the generator when
        the lattice is not separable. Each record holds ``4d`` little-endian
        ``i32`` lattice indices then ``re, im`` as ``f64``.
        """
        lat = self.lattice
        d = lat.dim
        parts = [struct.pack("<IQ", d, self.nnz),
                 struct.pack("<Bdddd", int(lat.separable), lat.alpha, lat.beta, lat.truncation_radius,
                             self.points.period or 0.0)]
        if not lat.separable:
            parts.append(np.ascontiguousarray(lat.generator, dtype="<f8").tobytes())
        tag = self.method.encode("ascii")
        parts.append(struct.pack("<H", len(tag)) + tag)
        parts.append(struct.pack("<d", self.threshold))
        rec = np.dtype([("lam", "<i4", (2 * d,)), ("mu", "<i4", (2 * d,)), ("re", "<f8"), ("im", "<f8")])
        arr = np.empty(self.nnz, dtype=rec)
        arr["lam"] = self.points.index[self.rows]
        arr["mu"] = self.points.index[self.cols]
        vals = np.asarray(self.values, dtype=complex)
        arr["re"], arr["im"] = vals.real, vals.imag
        parts.append(arr.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "GaborMatrix":
        """Inverse of :meth:`to_bytes`; points are the indices that occur in the records."""
        d, nnz = struct.unpack_from("<IQ", buf, 0)
        off = 12
        sep, alpha, beta, radius, period = struct.unpack_from("<Bdddd", buf, off)
        off += struct.calcsize("<Bdddd")
        gen = None
        if not sep:
            n = (2 * d) ** 2
            gen = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(2 * d, 2 * d).copy()
            off += 8 * n
        (tl,) = struct.unpack_from("<H", buf, off)
        method = buf[off + 2: off + 2 + tl].decode("ascii")
        off += 2 + tl
        (thr,) = struct.unpack_from("<d", buf, off)
        off += 8
        rec = np.dtype([("lam", "<i4", (2 * d,)), ("mu", "<i4", (2 * d,)), ("re", "<f8"), ("im", "<f8")])
        arr = np.frombuffer(buf, dtype=rec, count=nnz, offset=off)
        if off + rec.itemsize * nnz != len(buf):
            raise ValueError("trailing or missing bytes in matrix dump")
        lat = Lattice(alpha, beta, d, radius, gen)
        idx, inv = np.unique(np.concatenate([arr["lam"], arr["mu"]]).reshape(-1, 2 * d), axis=0,
                             return_inverse=True)
        inv = np.asarray(inv).ravel()
        pts = LatticePoints(lat, idx, idx @ lat.matrix.T, period or None)
        return cls(pts, inv[:nnz], inv[nnz:], arr["re"] + 1j * arr["im"], method, thr)


def _keep_mask(values, offsets, threshold, band_radius):
    keep = np.ones(len(values), dtype=bool)
    if threshold > 0:
        keep &= ~(np.abs(values) < threshold)
    if band_radius is not None:
        keep &= np.linalg.norm(offsets, axis=-1) <= band_radius * (1 + 1e-12)
    return keep


def _points(lat) -> LatticePoints:
    if isinstance(lat, LatticePoints):
        return lat
    if isinstance(lat, Lattice):
        return lat.enumerate()
    raise TypeError("expected a Lattice or LatticePoints")


def _pairs(pts: LatticePoints, cfg: MatrixAssemblyConfig, columns=None):
    P = len(pts)
    cset = np.arange(P) if columns is None else np.unique(np.asarray(columns, dtype=int))
    if cset.size and (cset.min() < 0 or cset.max() >= P):
        raise IndexError("column index outside the enumerated lattice")
    rows = np.repeat(np.arange(P), cset.size)
    cols = np.tile(cset, P)
    if cfg.band_radius is not None:
        off = pts.offsets(rows, cols)
        keep = np.linalg.norm(off, axis=-1) <= cfg.band_radius * (1 + 1e-12)
        rows, cols = rows[keep], cols[keep]
    return rows, cols


def _finish(pts, rows, cols, values, errors, method, cfg):
    keep = _keep_mask(values, pts.offsets(rows, cols), cfg.drop_threshold, None)
    return GaborMatrix(pts, rows[keep], cols[keep], values[keep], method, cfg.drop_threshold,
                       cfg.band_radius, None if errors is None else errors[keep])


def _check_nyquist(pts: LatticePoints, grid: Grid):
    d = pts.dim
    top = np.max(np.abs(pts.points[:, d:])) if len(pts) else 0.0
    if top > grid.nyquist * (1 + 1e-12):
        raise ValueError(f"lattice frequency extent {top:.6g} exceeds grid Nyquist {grid.nyquist:.6g}")


def _run_chunks(fn, n, workers):
    chunks = [slice(i, min(i + _KEY_CHUNK, n)) for i in range(0, n, _KEY_CHUNK)]
    if workers <= 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, chunks))


def _u_grid(dim, step, hw):
    u1 = np.arange(-hw, hw + step / 2, step)
    mesh = np.meshgrid(*([u1] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1), u1.size


def _coarse_mask(dim, n1):
    """Points of the flattened product grid with every axis index even."""
    even = np.arange(n1) % 2 == 0
    mesh = np.meshgrid(*([even] * dim), indexing="ij")
    return np.logical_and.reduce([m.ravel() for m in mesh])


def _symbol_at(sym, xi):
    # symbols take shape (...) in one dimension and (..., d) otherwise
    if xi.shape[-1] == 1:
        return np.asarray(sym(xi[..., 0]))
    return np.asarray(sym(xi))


def _steps(D, base):
    """Quadrature step per key: the oscillation ``e(D.u)`` must stay below the
    grid's folding frequency with a margin of 8 for the Gaussian and symbol."""
    need = 1.0 / (2 * (np.max(np.abs(D), axis=-1) + 8.0))
    return np.minimum(base, 2.0 ** np.floor(np.log2(need)))


def _is_edge(u, hw, step):
    return np.any(np.abs(u) > hw - step / 2, axis=-1)


def _real_centers(sym, C, step):
    """Centre of mass of ``|sigma(c + u)| e^{-2 pi |u|^2}`` along the segment ``u = theta c``.

    Symbols that decay fast in ``xi`` pull the integrand away from ``u = 0``.
    """
    theta = np.linspace(-1.2, 0.2, 57)
    u = theta[None, :, None] * C[:, None, :]
    with np.errstate(all="ignore"):
        la = np.log(np.abs(_symbol_at(sym, C[:, None, :] + u))) - 2 * np.pi * np.sum(u * u, axis=-1)
    la = np.where(np.isnan(la), -np.inf, la)
    best = theta[np.argmax(la, axis=1)]
    best = np.where(np.all(la == -np.inf, axis=1), 0.0, best)
    return np.rint(best[:, None] * C / step) * step


def _contour_chunk(sym, D, C, u, edge, coarse, step, s_cand):
    """Values and error estimates of ``J(D, c) = int sigma(c+u) e(D.u) e^{-2 pi |u|^2} du``.

    The real window is centred per key and the line ``u + i s D / 2`` is
    chosen among ``s_cand`` (with ``s_cand[0] = 0``) to minimize an error
    estimate: rounding ``4 eps sum |f| du`` for the real axis, which the step
    rule of :func:`_steps` resolves, and for shifted lines the larger of
    rounding and the discrepancy against the half-resolution subgrid sum.
    Lines whose edge values are not negligible are discarded. Moving the line
    is exact when the integrand decays at infinity within the strip, which
    holds for the polynomial-growth symbols treated here.
    """
    nk, d = D.shape
    w = step ** d
    u0 = _real_centers(sym, C, step)
    eta = s_cand[None, :, None] * D[:, None, :] / 2                 # (nk, ns, d)
    z = (u0[:, None, None, :] + u[None, None, :, :]) + 1j * eta[:, :, None, :]   # (nk, ns, nu, d)
    with np.errstate(all="ignore"):
        sig = _symbol_at(sym, C[:, None, None, :] + z)
        expo = 2j * np.pi * np.einsum("kd,ksud->ksu", D, z) - 2 * np.pi * np.einsum("ksud,ksud->ksu", z, z)
        f = sig * np.exp(expo)
        logabs = np.log(np.abs(sig)) + expo.real
        logabs = np.where(np.isfinite(logabs) | (logabs == -np.inf), logabs, np.inf)
        peak = np.max(logabs, axis=2)
        edge_peak = np.max(np.where(edge[None, None, :], logabs, -np.inf), axis=2)
        J = np.sum(f, axis=2) * w
        J2 = np.sum(f[:, :, coarse], axis=2) * w * 2 ** d
        rounding = 4 * EPS * np.sum(np.abs(f), axis=2) * w
        gap = np.abs(J - J2)
        finite = np.isfinite(peak) & np.isfinite(J) & np.isfinite(gap)
        tails = ~(edge_peak - peak <= _ENDPOINT_LOG)
    # the step rule resolves the real axis (s = 0) at full resolution; other
    # lines are charged the subgrid discrepancy unless it is at rounding level
    est = np.where(gap <= 4 * rounding, rounding, np.maximum(gap, rounding))
    est[:, 0] = rounding[:, 0]
    est = np.where(finite & ~tails, est, np.inf)
    k = np.arange(nk)
    choice = np.argmin(est, axis=1)
    Jc = J[k, choice]
    err = est[k, choice]
    failed = ~np.isfinite(err)
    return np.where(failed, np.nan, Jc), np.where(failed, np.inf, err)


def _images(pts: LatticePoints, rows, cols, reach: float):
    """Spatial offsets ``y' - y`` per pair, plus periodic images within ``reach`` periods on a torus.

    Returns the source pair of every term and its offset.
    """
    d = pts.dim
    D = pts.offsets(rows, cols)[:, :d]
    src = np.arange(len(rows))
    if pts.period is None:
        return src, D
    L = pts.period
    kmax = int(np.ceil(reach + 0.5))
    shifts = np.array(np.meshgrid(*([np.arange(-kmax, kmax + 1)] * d), indexing="ij")).reshape(d, -1).T
    shifts = shifts[np.any(shifts != 0, axis=1)]
    extra_s, extra_d = [src], [D]
    for k in shifts:
        Dk = D + k * L
        keep = np.max(np.abs(Dk), axis=1) <= reach * L * (1 + 1e-12)
        extra_s.append(src[keep])
        extra_d.append(Dk[keep])
    return np.concatenate(extra_s), np.concatenate(extra_d)


def _fold(src, values, errors):
    n = int(src.max()) + 1 if src.size else 0
    out = np.zeros(n, dtype=complex)
    np.add.at(out, src, values)
    return out, np.bincount(src, weights=errors, minlength=n)


def _log_bounds(sym, D, C, hw, s_cand):
    """Log of ``min_s int |integrand|`` over the lines ``u + i s D / 2`` on a coarse grid.

    The modulus carries no oscillation, so a coarse sum bounds ``|J(D, c)|``
    up to a small factor. Lines with non-negligible edge values are skipped.
    """
    d = D.shape[1]
    step = 1 / 8
    u, _ = _u_grid(d, step, hw)
    edge = _is_edge(u, hw, step)
    out = np.empty(len(D))
    chunk = max(1, 2_000_000 // (len(s_cand) * len(u)))
    for i in range(0, len(D), chunk):
        Dc, Cc = D[i:i + chunk], C[i:i + chunk]
        u0 = _real_centers(sym, Cc, step)
        eta = s_cand[None, :, None] * Dc[:, None, :] / 2
        z = (u0[:, None, None, :] + u[None, None, :, :]) + 1j * eta[:, :, None, :]
        with np.errstate(all="ignore"):
            la = (np.log(np.abs(_symbol_at(sym, Cc[:, None, None, :] + z)))
                  + np.real(2j * np.pi * np.einsum("kd,ksud->ksu", Dc, z)
                            - 2 * np.pi * np.einsum("ksud,ksud->ksu", z, z)))
        la = np.where(np.isnan(la), np.inf, la)
        peak = np.max(la, axis=2)
        edge_peak = np.max(np.where(edge[None, None, :], la, -np.inf), axis=2)
        with np.errstate(invalid="ignore"):
            tot = logsumexp(la, axis=2) + d * np.log(step)
            tot = np.where(np.isfinite(peak) & (edge_peak - peak <= _ENDPOINT_LOG), tot, np.inf)
        tot = np.where(peak == -np.inf, -np.inf, tot)
        out[i:i + chunk] = np.min(tot, axis=1)
    return out


def _gaussian_entries(sym, pts, rows, cols, cfg, analytic, workers):
    d = pts.dim
    P = pts.points
    n_pairs = len(rows)
    src, D = _images(pts, rows, cols, cfg.image_reach)
    rows, cols = rows[src], cols[src]
    y = P[cols, :d]
    yp = y + D
    nu, nup = P[cols, d:], P[rows, d:]
    c = (nu + nup) / 2
    delta = nu - nup
    key = np.round(np.concatenate([D, c], axis=1) * 2 ** 20) / 2 ** 20
    keys, inv = np.unique(key, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    base, hw = cfg.quadrature(d)
    if analytic and cfg.contour:
        s_cand = np.linspace(0, 1, 33 if d == 1 else 9)
    else:
        s_cand = np.zeros(1)
    Dk, Ck = keys[:, :d], keys[:, d:]
    steps = _steps(Dk, base)
    J = np.zeros(len(keys), dtype=complex)
    Jerr = np.zeros(len(keys))
    needed = np.ones(len(keys), dtype=bool)
    primary = np.zeros(len(keys), dtype=bool)
    primary[inv[:n_pairs]] = True
    image_only = ~primary
    if np.any(image_only):
        # periodic images far below rounding of the largest entry are skipped
        lb = _log_bounds(sym, Dk, Ck, hw, s_cand[:: max(1, (len(s_cand) - 1) // 8)])
        top = np.max(lb[primary]) if np.any(primary) else -np.inf
        needed = primary | (lb > top + np.log(1e-3 * EPS))
    for step in np.unique(steps[needed]):
        grp = np.nonzero((steps == step) & needed)[0]
        u, n1 = _u_grid(d, step, hw)
        edge = _is_edge(u, hw, step)
        coarse = _coarse_mask(d, n1)
        # cap the working array near a few million complex values
        chunk = max(1, min(_KEY_CHUNK, 4_000_000 // (len(s_cand) * len(u))))

        def work(sl, grp=grp, u=u, edge=edge, coarse=coarse, step=step, chunk=chunk):
            out_J, out_e = [], []
            for i in range(sl.start, sl.stop, chunk):
                sel = grp[i:min(i + chunk, sl.stop)]
                a, b = _contour_chunk(sym, Dk[sel], Ck[sel], u, edge, coarse, step, s_cand)
                out_J.append(a)
                out_e.append(b)
            return np.concatenate(out_J), np.concatenate(out_e)

        res = _run_chunks(work, len(grp), workers)
        J[grp] = np.concatenate([r[0] for r in res])
        Jerr[grp] = np.concatenate([r[1] for r in res])
    amp = 2 ** (d / 2) * np.exp(-np.pi * np.sum(delta * delta, axis=1) / 2)
    phase = np.exp(2j * np.pi * (np.sum(y * nu, axis=1) - np.sum(yp * nup, axis=1) + np.sum(D * c, axis=1)))
    return _fold(src, phase * amp * J[inv], amp * Jerr[inv])


def _window_entries(sym, g, pts, rows, cols, cfg, workers):
    """Real-axis quadrature with a closed-form window transform."""
    d = pts.dim
    P = pts.points
    src, D = _images(pts, rows, cols, cfg.image_reach)
    rows, cols = rows[src], cols[src]
    y = P[cols, :d]
    yp = y + D
    nu, nup = P[cols, d:], P[rows, d:]
    c = (nu + nup) / 2
    delta = nu - nup
    step, hw = cfg.quadrature(d)
    if g.kind == "hermite":
        nmax = max(max(k) for k, _ in g.coefficients)
        hw = max(hw, 4.5 + np.sqrt((2 * nmax + 1) / (2 * np.pi)))
    steps = _steps(D, step)
    J = np.empty(len(rows), dtype=complex)
    err = np.empty(len(rows))
    for st in np.unique(steps):
        grp = np.nonzero(steps == st)[0]
        u, _ = _u_grid(d, st, hw)
        w = st ** d
        chunk = max(1, min(_KEY_CHUNK, 2_000_000 // len(u)))

        def work(sl, grp=grp, u=u, w=w, chunk=chunk):
            vals, errs = [], []
            for i in range(sl.start, sl.stop, chunk):
                sel = grp[i:min(i + chunk, sl.stop)]
                cc, dd, DD = c[sel, None, :], delta[sel, None, :], D[sel, None, :]
                xi = cc + u[None]
                f = (_symbol_at(sym, xi) * g.fourier(u[None] - dd / 2) * np.conj(g.fourier(u[None] + dd / 2))
                     * np.exp(2j * np.pi * np.sum(DD * xi, axis=-1)))
                vals.append(np.sum(f, axis=1) * w)
                errs.append(4 * EPS * np.sum(np.abs(f), axis=1) * w)
            return np.concatenate(vals), np.concatenate(errs)

        res = _run_chunks(work, len(grp), workers)
        J[grp] = np.concatenate([r[0] for r in res])
        err[grp] = np.concatenate([r[1] for r in res])
    phase = np.exp(2j * np.pi * (np.sum(y * nu, axis=1) - np.sum(yp * nup, axis=1)))
    return _fold(src, phase * J, err)


def multiplier_matrix(sym, g: WindowSpec, lat, cfg: MatrixAssemblyConfig | None = None,
                      grid: Grid | None = None, columns=None) -> GaborMatrix:
    """Gabor matrix of the Fourier multiplier ``sym(D)``.

    Parameters
    ----------
    sym : callable
        Symbol ``xi -> sigma(xi)`` (shape ``(...)`` in one dimension, else
        ``(..., d)``). Objects with a true ``analytic`` attribute, such as
        :class:`~gaborprop.symbols.PropagatorSymbol`, must accept complex
        frequencies and enable the contour path.
    g : WindowSpec
        Gaussian or Hermite window.
    lat : Lattice or LatticePoints
    cfg : MatrixAssemblyConfig, optional
    grid : Grid, optional
        Grid whose Nyquist frequency bounds the lattice (default grid of the
        lattice dimension).
    columns : array_like of int, optional
        Restrict assembly to these columns (positions in the point list).

    Raises
    ------
    ValueError
        For sampled windows or lattice frequencies beyond Nyquist.
    """
    cfg = MatrixAssemblyConfig() if cfg is None else cfg
    pts = _points(lat)
    grid = Grid.default(pts.dim) if grid is None else grid
    if grid.dim != pts.dim:
        raise ValueError("grid and lattice dimensions differ")
    _check_nyquist(pts, grid)
    if not g.has_closed_form:
        raise ValueError("multiplier_matrix needs a closed-form window transform; use direct_matrix")
    workers = cfg.workers or default_workers()
    rows, cols = _pairs(pts, cfg, columns)
    analytic = bool(getattr(sym, "analytic", False))
    if g.kind == "gaussian":
        vals, errs = _gaussian_entries(sym, pts, rows, cols, cfg, analytic, workers)
        method = "multiplier-contour" if analytic and cfg.contour else "multiplier-quadrature"
    else:
        vals, errs = _window_entries(sym, g, pts, rows, cols, cfg, workers)
        method = "multiplier-quadrature"
    if np.any(~np.isfinite(vals)):
        raise FloatingPointError("multiplier quadrature failed: no admissible integration contour")
    return _finish(pts, rows, cols, vals, errs, method, cfg)


def multiplier_callback(sym):
    """Operator callback ``f -> sym(D) f`` for :func:`direct_matrix`."""
    return lambda f: apply_multiplier(f, sym)


def direct_matrix(apply, g: WindowSpec, lat, cfg: MatrixAssemblyConfig | None = None,
                  grid: Grid | None = None, columns=None) -> GaborMatrix:
    """Entries ``<T pi(mu) g, pi(lambda) g>`` from sampled atoms on ``grid``.

    ``apply`` maps a :class:`SampledField` to a :class:`SampledField` on the
    same grid. On a torus lattice the atoms wrap periodically.
    """
    cfg = MatrixAssemblyConfig() if cfg is None else cfg
    pts = _points(lat)
    if grid is None:
        grid = g.field.grid if g.kind == "sampled" else Grid.default(pts.dim)
    _check_nyquist(pts, grid)
    periodic = pts.period is not None
    if periodic and abs(pts.period - grid.extent) > 1e-12:
        raise ValueError("torus lattice period differs from grid extent")
    rows, cols = _pairs(pts, cfg, columns)
    vals = np.empty(len(rows), dtype=complex)
    order = np.argsort(cols, kind="stable")
    starts = np.searchsorted(cols[order], np.arange(len(pts) + 1))
    for j in range(len(pts)):
        sel = order[starts[j]:starts[j + 1]]
        if sel.size == 0:
            continue
        atom = tf_shift(g, pts.points[j], grid, check=not periodic)
        out = apply(atom)
        if not isinstance(out, SampledField) or not out.grid.compatible(grid):
            raise ValueError("operator callback must return a field on the atom grid")
        vals[sel] = stft(out, g, pts.points[rows[sel]])
    return _finish(pts, rows, cols, vals, None, "direct", cfg)


# ---------------------------------------------------------------- Weyl path

_PATCH_RADIUS = 3.2
# distance kept from the folding frequency 1/(2h) of the sampled symbol
_ALIAS_MARGIN = 1.0


def sample_phase_symbol(fn, grid: Grid, x_stride: int = 1) -> PhaseField:
    """Samples ``fn(x, xi)`` on a phase grid (``d = 1``; frequencies in FFT order)."""
    if grid.dim != 1:
        raise ValueError("phase-space symbols are sampled in one dimension only")
    pg = PhaseGrid(grid, x_stride)
    X, K = np.meshgrid(pg.x_axis, pg.xi_axis, indexing="ij")
    vals = np.broadcast_to(np.asarray(fn(X, K)), X.shape)
    return PhaseField(pg.x_axis, pg.xi_axis, np.array(vals, dtype=complex), pg)


def weyl_matrix_magnitudes(symbol_field: PhaseField, g: WindowSpec, lat,
                           cfg: MatrixAssemblyConfig | None = None) -> GaborMatrix:
    """Magnitudes ``|V_Phi sigma((z + w)/2, j(w - z))|`` with ``Phi = W(g, g)``.

    The short-time Fourier transform of the sampled symbol is computed at
    each mapped point by direct quadrature over a patch of the phase grid.
    Entries whose patch leaves the sampled region, or whose frequency
    exceeds what the sampling resolves, are ``nan``.
    """
    cfg = MatrixAssemblyConfig(drop_threshold=0.0) if cfg is None else cfg
    pts = _points(lat)
    if pts.dim != 1:
        raise ValueError("weyl_matrix_magnitudes supports d = 1")
    if g.kind != "gaussian":
        raise ValueError("weyl_matrix_magnitudes needs the Gaussian window (closed-form W(g, g))")
    xo = np.argsort(symbol_field.x_axis)
    ko = np.argsort(symbol_field.xi_axis)
    xa, ka = symbol_field.x_axis[xo], symbol_field.xi_axis[ko]
    S = np.asarray(symbol_field.values)[np.ix_(xo, ko)]
    hx, hk = xa[1] - xa[0], ka[1] - ka[0]
    rows, cols = _pairs(pts, cfg)
    P = pts.points
    off = pts.offsets(rows, cols)                       # w - z
    ux = P[cols, 0] + off[:, 0] / 2
    uk = (P[cols, 1] + P[rows, 1]) / 2
    v1, v2 = off[:, 1], -off[:, 0]
    nx = int(np.ceil(_PATCH_RADIUS / hx))
    nk = int(np.ceil(_PATCH_RADIUS / hk))
    ix0 = np.rint((ux - xa[0]) / hx).astype(int) - nx
    ik0 = np.rint((uk - ka[0]) / hk).astype(int) - nk
    ok = ((ix0 >= 0) & (ix0 + 2 * nx < len(xa)) & (ik0 >= 0) & (ik0 + 2 * nk < len(ka))
          & (np.abs(v1) <= 0.5 / hx - _ALIAS_MARGIN) & (np.abs(v2) <= 0.5 / hk - _ALIAS_MARGIN))
    vals = np.full(len(rows), np.nan)
    jx, jk = np.arange(2 * nx + 1), np.arange(2 * nk + 1)
    idx = np.nonzero(ok)[0]
    for s in range(0, len(idx), 256):
        e = idx[s:s + 256]
        gx = ix0[e, None] + jx
        gk = ik0[e, None] + jk
        x, k = xa[gx], ka[gk]
        ax = np.exp(-2 * np.pi * (x - ux[e, None]) ** 2 - 2j * np.pi * v1[e, None] * x)
        ak = np.exp(-2 * np.pi * (k - uk[e, None]) ** 2 - 2j * np.pi * v2[e, None] * k)
        patch = S[gx[:, :, None], gk[:, None, :]]
        vals[e] = 2 * hx * hk * np.abs(np.einsum("ei,eij,ej->e", ax, patch, ak))
    return GaborMatrix(pts, rows, cols, vals, "weyl-magnitude", 0.0, cfg.band_radius)
