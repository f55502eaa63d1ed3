"""Propagator symbols of constant-coefficient evolution operators.

An operator ``P = d_t**m + sum_k a_k(D) d_t**(m-k)`` is described by an
:class:`OperatorSpec`. Its fundamental solution has the Fourier multiplier
``sigma(t, xi)`` solving the ODE ``P(d_t, xi) sigma = 0`` with
``sigma(0) = ... = d_t**(m-2) sigma(0) = 0`` and ``d_t**(m-1) sigma(0) = 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar

from .fitting import exponent_grid, fit_stretched_exponential
from .tfcore import Grid, SampledField, WindowSpec, stft

CLUSTER_TOL = 1e-6
NU_FIT_SLACK_DECADES = 0.05
GEVREY_CAP = 8.0
FOUR_PI2 = 4 * np.pi ** 2


# ---------------------------------------------------------------- polynomials

def _grlex_key(exp):
    return (-sum(exp), tuple(-e for e in exp))


class Polynomial:
    """Sparse d-variate polynomial stored as ``{exponent tuple: coefficient}``.

    Terms are kept in graded-lex order (highest total degree first) and
    zero coefficients are dropped.
    """

    def __init__(self, dim: int, terms=None):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        acc = {}
        for exp, c in (terms.items() if isinstance(terms, dict) else (terms or [])):
            exp = tuple(int(e) for e in exp)
            if len(exp) != self.dim or min(exp, default=0) < 0:
                raise ValueError(f"bad exponent {exp} for dim {self.dim}")
            acc[exp] = acc.get(exp, 0) + c
        self.terms = {e: acc[e] for e in sorted(acc, key=_grlex_key) if acc[e] != 0}

    @classmethod
    def constant(cls, dim, c) -> "Polynomial":
        return cls(dim, {(0,) * dim: c})

    @classmethod
    def norm_squared(cls, dim, scale=1.0) -> "Polynomial":
        """``scale * |xi|^2``."""
        return cls(dim, {tuple(2 if j == i else 0 for j in range(dim)): scale for i in range(dim)})

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.dim == other.dim and self.terms == other.terms

    def __repr__(self):
        return f"Polynomial({self.dim}, {self.terms})"

    def __add__(self, other: "Polynomial") -> "Polynomial":
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0) + c
        return Polynomial(self.dim, out)

    def __mul__(self, other) -> "Polynomial":
        if not isinstance(other, Polynomial):
            return Polynomial(self.dim, {e: c * other for e, c in self.terms.items()})
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return Polynomial(self.dim, out)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Polynomial":
        out = Polynomial.constant(self.dim, 1.0)
        for _ in range(k):
            out = out * self
        return out

    def _split(self, xi):
        xi = np.asarray(xi)
        if self.dim == 1:
            return [xi]
        if xi.ndim == 0 or xi.shape[-1] != self.dim:
            raise ValueError(f"expected trailing dimension {self.dim}")
        return [xi[..., j] for j in range(self.dim)]

    def __call__(self, xi):
        """Evaluate at ``xi``: shape ``(...)`` when d=1, else ``(..., d)``.

        Horner's rule runs along the last variable within each group of
        terms sharing the leading exponents.
        """
        comps = self._split(xi)
        shape = np.shape(comps[0])
        dtype = np.result_type(comps[0], *[type(c) for c in self.terms.values()], float)
        out = np.zeros(shape, dtype=dtype)
        groups = {}
        for e, c in self.terms.items():
            groups.setdefault(e[:-1], {})[e[-1]] = c
        last = comps[-1]
        for head, tail in groups.items():
            top = max(tail)
            acc = np.zeros(shape, dtype=dtype)
            for p in range(top, -1, -1):
                acc = acc * last + tail.get(p, 0)
            mono = np.ones(shape, dtype=dtype)
            for comp, e in zip(comps[:-1], head):
                if e:
                    mono = mono * comp ** e
            out = out + mono * acc
        return out

    def to_json(self) -> dict:
        return {"terms": [{"exp": list(e), "c": c} for e, c in self.terms.items()]}

    @classmethod
    def from_json(cls, obj: dict, dim: int) -> "Polynomial":
        return cls(dim, {tuple(t["exp"]): float(t["c"]) for t in obj.get("terms", [])})


# ---------------------------------------------------------------- operators

@dataclass(frozen=True)
class OperatorSpec:
    """``P(d_t, D) = d_t**m + sum_{k=1..m} a_k(D) d_t**(m-k)``.

    ``preset`` records a named family (``("wave",)``, ``("klein-gordon", M)``,
    ``("heat",)``, ``("genheat", k)``) so closed forms can be used.
    """

    order: int
    coeffs: tuple
    dim: int = 1
    preset: tuple | None = None

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError("order must be a positive integer")
        if len(self.coeffs) != self.order:
            raise ValueError(f"need exactly {self.order} coefficient polynomials")
        for a in self.coeffs:
            if a.dim != self.dim:
                raise ValueError("coefficient dimension mismatch")
            if any(np.iscomplexobj(c) and np.imag(c) != 0 for c in a.terms.values()):
                raise ValueError("coefficients must be real")
        object.__setattr__(self, "coeffs", tuple(self.coeffs))

    @property
    def name(self) -> str:
        if self.preset is None:
            return "custom"
        if len(self.preset) == 1:
            return self.preset[0]
        return f"{self.preset[0]}:{self.preset[1]:g}"

    def coefficient_values(self, xi) -> np.ndarray:
        """Array ``(..., m)`` of ``a_1(xi) .. a_m(xi)``."""
        vals = [np.asarray(a(xi)) for a in self.coeffs]
        vals = np.broadcast_arrays(*vals)
        return np.stack(vals, axis=-1)

    def to_json(self) -> dict:
        return {"m": self.order, "d": self.dim, "a": [a.to_json() for a in self.coeffs]}

    @classmethod
    def from_json(cls, obj) -> "OperatorSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        m = int(obj["m"])
        dim = obj.get("d")
        if dim is None:
            lens = {len(t["exp"]) for a in obj["a"] for t in a.get("terms", [])}
            dim = lens.pop() if len(lens) == 1 else 1
        return cls(m, tuple(Polynomial.from_json(a, dim) for a in obj["a"]), dim)


def wave(dim: int = 1) -> OperatorSpec:
    return OperatorSpec(2, (Polynomial(dim), Polynomial.norm_squared(dim, FOUR_PI2)), dim, ("wave",))


def klein_gordon(mass: float = 1.0, dim: int = 1) -> OperatorSpec:
    if not mass > 0:
        raise ValueError("mass must be positive")
    a2 = Polynomial.norm_squared(dim, FOUR_PI2) + Polynomial.constant(dim, mass ** 2)
    return OperatorSpec(2, (Polynomial(dim), a2), dim, ("klein-gordon", float(mass)))


def heat(dim: int = 1) -> OperatorSpec:
    return OperatorSpec(1, (Polynomial.norm_squared(dim, FOUR_PI2),), dim, ("heat",))


def generalized_heat(k: int = 2, dim: int = 1) -> OperatorSpec:
    """``d_t + (-Delta)**k``; ``k = 1`` is the heat operator."""
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    a1 = Polynomial.norm_squared(dim, FOUR_PI2) ** int(k)
    return OperatorSpec(1, (a1,), dim, ("genheat", int(k)))


def backward_heat(dim: int = 1) -> OperatorSpec:
    """``d_t + Delta``, ill-posed forward in time."""
    return OperatorSpec(1, (Polynomial.norm_squared(dim, -FOUR_PI2),), dim)


def parse_operator(text: str, dim: int = 1) -> OperatorSpec:
    """Preset name (``wave``, ``klein-gordon:<mass>``, ``heat``, ``genheat:<k>``, ``backward-heat``) or JSON text."""
    s = text.strip()
    if s.startswith("{"):
        return OperatorSpec.from_json(s)
    name, _, arg = s.partition(":")
    if name == "wave" and not arg:
        return wave(dim)
    if name == "heat" and not arg:
        return heat(dim)
    if name == "backward-heat" and not arg:
        return backward_heat(dim)
    if name == "klein-gordon":
        return klein_gordon(float(arg) if arg else 1.0, dim)
    if name == "genheat":
        return generalized_heat(int(arg) if arg else 2, dim)
    raise ValueError(f"unknown operator {text!r}")


# ---------------------------------------------------------------- roots

def _companion(b):
    """Companion matrices ``(..., m, m)`` of monic polynomials with lower coefficients ``b``."""
    m = b.shape[-1]
    C = np.zeros(b.shape[:-1] + (m, m), dtype=complex)
    C[..., 0, :] = -b
    if m > 1:
        idx = np.arange(m - 1)
        C[..., idx + 1, idx] = 1.0
    return C


def lambda_roots(a, fast: bool = False) -> np.ndarray:
    """Roots of ``lam**m + a_1 lam**(m-1) + ... + a_m`` for ``a`` of shape ``(..., m)``.

    The variable is rescaled by ``max_k |a_k|**(1/k)`` before the companion
    eigenvalue solve so large coefficients do not overflow. ``fast`` uses the
    quadratic formula when ``m = 2``.
    """
    a = np.asarray(a, dtype=complex)
    if not np.all(np.isfinite(a)):
        raise OverflowError("coefficient evaluation overflowed")
    m = a.shape[-1]
    if m == 1:
        return -a.copy()
    if m == 2 and fast:
        # cancellation-free quadratic formula
        b, c = a[..., 0], a[..., 1]
        disc = np.sqrt(b * b - 4 * c)
        sgn = np.where((np.conj(b) * disc).real >= 0, 1.0, -1.0)
        q = -(b + sgn * disc) / 2
        safe = np.where(q == 0, 1.0, q)
        r2 = np.where(q == 0, 0.0, c / safe)
        return np.stack([q, r2], axis=-1)
    k = np.arange(1, m + 1)
    s = np.max(np.abs(a) ** (1.0 / k), axis=-1)
    s = np.where(s > 0, s, 1.0)
    b = a / s[..., None] ** k
    mu = np.linalg.eigvals(_companion(b))
    return mu * s[..., None]


def char_roots(spec: OperatorSpec, zeta) -> np.ndarray:
    """Roots ``tau`` of ``P(i tau, zeta) = 0``; shape ``(..., m)``.

    ``zeta`` may be complex; shape ``(...)`` when d=1, else ``(..., d)``.
    """
    lam = lambda_roots(spec.coefficient_values(np.asarray(zeta)))
    return -1j * lam


def _defect(tau):
    """``max(0, -min Im tau)`` with root-finder noise cleared."""
    mn = np.min(tau.imag, axis=-1)
    noise = 1e-9 * (1 + np.max(np.abs(tau), axis=-1))
    return np.where(-mn > noise, -mn, 0.0)


@dataclass(frozen=True)
class HPReport:
    """Outcome of the forward Hadamard-Petrowsky check ``Im tau >= -C``."""

    holds: bool
    C: float
    worst_xi: tuple
    worst_tau: complex
    n_points: int
    probe_radii: tuple
    probe_max_defect: float
    failures: int = 0


def _as_xi_array(xi, dim):
    xi = np.asarray(xi, dtype=float)
    if dim == 1:
        return xi.reshape(-1, 1)
    return xi.reshape(-1, dim)


def hp_check(spec: OperatorSpec, xi_grid, probe_levels: int = 4, rel_slack: float = 1e-6) -> HPReport:
    """Check ``min Im tau >= -C`` over real frequencies.

    ``C`` is the largest defect on the grid. The bound is declared to hold
    when the defect does not grow at radii ``R * 2**j`` (``j = 1..probe_levels``)
    along the grid's directions, ``R`` being the grid radius.
    """
    xi = _as_xi_array(xi_grid, spec.dim)
    if len(xi) == 0:
        raise ValueError("xi grid must be nonempty")
    arg = xi[:, 0] if spec.dim == 1 else xi
    failures = 0
    try:
        tau = char_roots(spec, arg)
    except (OverflowError, np.linalg.LinAlgError):
        tau = np.full((len(xi), spec.order), np.nan, dtype=complex)
        for i in range(len(xi)):
            try:
                tau[i] = char_roots(spec, arg[i])
            except (OverflowError, np.linalg.LinAlgError):
                failures += 1
    ok = np.all(np.isfinite(tau), axis=-1)
    D = np.where(ok, _defect(np.where(ok[:, None], tau, 0)), 0.0)
    C = float(D.max())
    iw = int(np.argmin(np.where(ok, np.min(tau.imag, axis=-1), np.inf)))
    worst_tau = complex(tau[iw][np.argmin(tau[iw].imag)])
    norms = np.linalg.norm(xi, axis=1)
    R = float(norms.max())
    probe_max = 0.0
    radii = ()
    if R > 0:
        dirs = xi[norms > 0] / norms[norms > 0, None]
        dirs = np.unique(np.round(dirs, 12), axis=0)
        radii = tuple(R * 2.0 ** j for j in range(1, probe_levels + 1))
        for r in radii:
            pts = dirs * r
            try:
                t2 = char_roots(spec, pts[:, 0] if spec.dim == 1 else pts)
                probe_max = max(probe_max, float(_defect(t2).max()))
            except OverflowError:
                break
    holds = probe_max <= C * (1 + rel_slack) + 1e-9 * (1 + C)
    return HPReport(holds=bool(holds), C=C, worst_xi=tuple(xi[iw]), worst_tau=worst_tau,
                    n_points=len(xi), probe_radii=radii, probe_max_defect=probe_max,
                    failures=failures)


# ---------------------------------------------------------------- nu estimate

@dataclass(frozen=True)
class NuEstimate:
    """Fit of ``D(|eta|) <= C (1 + |eta|)**nu`` for the complex-frequency defect."""

    nu: float
    C: float
    curve: tuple
    s_pred: float
    r_pred: float
    exact_hyperbolic: bool = False
    max_excess_decades: float = 0.0
    clipped: bool = False


def predicted_exponents(nu: float) -> tuple:
    """``(s, r) = (1 - 1/nu, min(2, nu/(nu - 1)))``."""
    s = 1.0 - 1.0 / nu
    r = 2.0 if nu <= 2 else nu / (nu - 1.0)
    return s, min(2.0, r)


def default_directions(dim: int) -> list:
    dirs = [np.eye(dim)[i] for i in range(dim)]
    if dim > 1:
        dirs.append(np.ones(dim) / math.sqrt(dim))
    return dirs


def _min_im_tau(spec, xi_line, eta_vec):
    zeta = xi_line + 1j * eta_vec
    arg = zeta[..., 0] if spec.dim == 1 else zeta
    return np.min(char_roots(spec, arg).imag, axis=-1)


def nu_estimate(spec: OperatorSpec, eta_magnitudes=None, directions=None,
                n_xi: int = 401) -> NuEstimate:
    """Estimate the growth order ``nu`` of ``-min Im tau`` along ``zeta = xi + i eta``.

    For each ``|eta|`` and direction, the real part ``xi`` runs over lines
    through the origin (in the sampled directions) up to ``3 (1 + |eta|)``,
    and the worst sample is refined by bounded scalar minimization. Only
    ``|eta| >= 1`` enters the log-log least-squares fit against
    ``log(1 + |eta|)``.
    """
    eta = np.logspace(0, 6, 25) if eta_magnitudes is None else np.asarray(eta_magnitudes, float)
    if len(eta) < 4 or np.any(np.diff(eta) <= 0) or eta[-1] / eta[0] < 100:
        raise ValueError("need at least 4 increasing magnitudes spanning 2 decades")
    dirs = default_directions(spec.dim) if directions is None else [np.asarray(u, float) / np.linalg.norm(u) for u in directions]
    s = np.linspace(-1, 1, n_xi)
    curve = []
    for e in eta:
        worst = 0.0
        R = 3 * (1 + e)
        for u in dirs:
            ev = e * u
            for v in dirs:
                vals = _min_im_tau(spec, (R * s)[:, None] * v[None, :], ev[None, :])
                i = int(np.argmin(vals))
                lo, hi = R * s[max(i - 1, 0)], R * s[min(i + 1, n_xi - 1)]
                best = float(vals[i])
                if hi > lo:
                    res = minimize_scalar(lambda x: float(_min_im_tau(spec, (x * v)[None, :], ev[None, :])[0]),
                                          bounds=(lo, hi), method="bounded",
                                          options={"xatol": 1e-10 * R})
                    best = min(best, float(res.fun))
                worst = max(worst, -best)
        curve.append((float(e), worst))
    arr = np.array(curve)
    tau_scale = 1e-9 * (1 + arr[:, 0])
    use = (arr[:, 0] >= 1) & (arr[:, 1] > tau_scale)
    if not np.any(arr[:, 1] > tau_scale):
        return NuEstimate(1.0, 0.0, tuple(curve), 0.0, 2.0, exact_hyperbolic=True)
    if use.sum() < 2:
        raise ValueError("too few usable magnitudes for the fit")
    x = np.log1p(arr[use, 0])
    y = np.log(arr[use, 1])
    nu, logC = np.polyfit(x, y, 1)
    clipped = nu < 1
    nu = max(1.0, float(nu))
    logC = float(np.mean(y - nu * x))
    excess = float(np.max((y - logC - nu * x) / np.log(10)))
    C = math.exp(logC) * 10 ** max(0.0, excess - NU_FIT_SLACK_DECADES)
    s_pred, r_pred = predicted_exponents(nu)
    return NuEstimate(nu, C, tuple(curve), s_pred, r_pred, False, excess, clipped)


# ---------------------------------------------------------------- propagator symbols

def _sinc_sin(omega, t):
    """``sin(omega t)/omega`` with the removable singularity at 0."""
    omega = np.asarray(omega)
    small = np.abs(omega * t) < 1e-4
    safe = np.where(small, 1.0, omega)
    with np.errstate(invalid="ignore", over="ignore"):
        main = np.sin(safe * t) / safe
    x2 = (omega * t) ** 2
    return np.where(small, t * (1 - x2 / 6 + x2 * x2 / 120), main)


@dataclass(frozen=True)
class PropagatorSymbol:
    """Evaluator of ``d_t**k sigma(t, xi)`` for a fixed ``t >= 0``.

    ``kind`` is ``"closed-form"`` (presets) or ``"root-residue"``.
    Frequencies may be complex, which the analytic continuation supports.
    """

    spec: OperatorSpec
    t: float
    kind: str
    derivative_order: int

    analytic = True

    def __call__(self, xi):
        return self.evaluate(xi)

    def evaluate(self, xi, k: int = 0) -> np.ndarray:
        if k < 0:
            raise ValueError("derivative order must be nonnegative")
        xi = np.asarray(xi)
        if self.kind == "closed-form":
            return self._closed(xi, k)
        return self._residue(xi, k)

    def _closed(self, xi, k):
        name = self.spec.preset[0]
        t = self.t
        comps = Polynomial.norm_squared(self.spec.dim, FOUR_PI2)(xi)
        if name in ("wave", "klein-gordon"):
            w2 = comps if name == "wave" else comps + self.spec.preset[1] ** 2
            w = np.sqrt(w2 + 0j)
            if not np.iscomplexobj(xi):
                w = w.real
            if k == 0:
                return _sinc_sin(w, t)
            return w ** (k - 1) * np.sin(w * t + k * np.pi / 2)
        a = comps if name == "heat" else comps ** self.spec.preset[1]
        return (-a) ** k * np.exp(-a * t)

    def _residue(self, xi, k):
        a = self.spec.coefficient_values(xi)
        shape = a.shape[:-1]
        a = a.reshape(-1, self.spec.order)
        lam = lambda_roots(a, fast=True)
        m = self.spec.order
        out = np.empty(len(a), dtype=complex)
        if m == 1:
            out[:] = lam[:, 0] ** k * np.exp(lam[:, 0] * self.t)
            return self._finish(out.reshape(shape), xi)
        diff = lam[:, :, None] - lam[:, None, :]
        eye = np.eye(m, dtype=bool)
        sep = np.min(np.where(eye, np.inf, np.abs(diff)), axis=(1, 2))
        clustered = sep < CLUSTER_TOL * (1 + np.max(np.abs(lam), axis=1))
        ok = ~clustered
        if np.any(ok):
            dp = np.prod(np.where(eye, 1.0, diff[ok]), axis=2)
            L = lam[ok]
            out[ok] = np.sum(L ** k * np.exp(L * self.t) / dp, axis=1)
        if np.any(clustered):
            out[clustered] = companion_evaluate(a[clustered], self.t, k)
        return self._finish(out.reshape(shape), xi)

    def _finish(self, out, xi):
        if not np.iscomplexobj(xi):
            return out.real
        return out


def ode_matrix(a) -> np.ndarray:
    """State matrices for ``(sigma, sigma', ..., sigma^(m-1))``; shape ``(..., m, m)``."""
    a = np.asarray(a, dtype=complex)
    m = a.shape[-1]
    A = np.zeros(a.shape[:-1] + (m, m), dtype=complex)
    if m > 1:
        idx = np.arange(m - 1)
        A[..., idx, idx + 1] = 1.0
    A[..., m - 1, :] = -a[..., ::-1]
    return A


def companion_evaluate(a, t: float, k: int = 0) -> np.ndarray:
    """``d_t**k sigma(t)`` from ``expm(t A) e_m`` (Pade scaling and squaring)."""
    A = ode_matrix(a)
    m = A.shape[-1]
    E = scipy.linalg.expm(t * A)
    x = E[..., :, m - 1]
    for _ in range(k):
        x = np.einsum("...ij,...j->...i", A, x)
    return x[..., 0]


def propagator_symbol(spec: OperatorSpec, t: float, kind: str | None = None) -> PropagatorSymbol:
    """Evaluator for the fundamental-solution symbol at time ``t``.

    Presets use closed forms unless ``kind="root-residue"`` is requested.
    """
    if not t >= 0:
        raise ValueError("t must be nonnegative; use causal_symbol for t < 0")
    if kind is None:
        kind = "closed-form" if spec.preset is not None else "root-residue"
    if kind not in ("closed-form", "root-residue"):
        raise ValueError(f"unknown evaluator kind {kind!r}")
    if kind == "closed-form" and spec.preset is None:
        raise ValueError("closed form requires a preset operator")
    return PropagatorSymbol(spec, float(t), kind, max(spec.order - 1, 0))


def causal_symbol(spec: OperatorSpec, t: float, xi, k: int = 0):
    """``d_t**k sigma(t, xi)`` extended by zero to ``t < 0``."""
    if t < 0:
        return np.zeros(np.shape(xi) if spec.dim == 1 else np.shape(xi)[:-1])
    return propagator_symbol(spec, t).evaluate(xi, k)


# ---------------------------------------------------------------- Gevrey fit

@dataclass(frozen=True)
class GevreyFit:
    """``|V_g sigma(u, zeta)| <= C exp(-eps |zeta|**(1/s))``."""

    s: float
    eps: float
    C: float
    residual: float
    capped: bool
    restricted: bool
    usable_range: tuple


def gevrey_fit(sym, g: WindowSpec, grid: Grid, xi_offsets, cap: float = GEVREY_CAP,
               shell_width: float | None = None) -> GevreyFit:
    """Fit the decay of the STFT of ``sigma(t, .)`` in its frequency variable.

    ``grid`` samples the symbol's own argument. The envelope is the maximum
    of ``|V_g sigma(u, zeta)|`` over ``u`` in ``xi_offsets`` and over shells
    of ``|zeta|``; the exponent ``1/s`` is searched on ``[0.5, cap]``.
    """
    d = grid.dim
    vals = sym(grid.coords()[..., 0] if d == 1 else grid.coords()) if callable(sym) else sym
    f = SampledField(grid, vals)
    offsets = [np.atleast_1d(np.asarray(u, float)) for u in xi_offsets]
    zeta = grid.freq_coords().reshape(-1, d)
    nz = np.linalg.norm(zeta, axis=1)
    mags = np.zeros(len(zeta))
    for u in offsets:
        pts = np.column_stack([np.broadcast_to(u, (len(zeta), d)), zeta])
        mags = np.maximum(mags, np.abs(stft(f, g, pts)))
    w = shell_width if shell_width is not None else 2.0 / grid.extent
    shell = np.floor(nz / w + 0.5).astype(int)
    env = np.zeros(shell.max() + 1)
    np.maximum.at(env, shell, mags)
    rho = np.arange(len(env)) * w
    floor = 1e-15 * env.max()
    reliable = (env > 100 * floor) & (rho >= 2 * w) & (rho <= 0.9 * grid.nyquist)
    nonzero = (rho >= 2 * w) & (rho <= 0.9 * grid.nyquist)
    restricted = reliable.sum() < 0.5 * max(nonzero.sum(), 1)
    if reliable.sum() < 3:
        # decay reaches the floor within two shells: faster than any tested exponent
        return GevreyFit(1.0 / cap, math.inf, float(env.max()), 0.0, True, True,
                         (float(rho[0]), float(rho[0])))
    fit = fit_stretched_exponential(rho[reliable], env[reliable], exponent_grid(0.5, cap))
    return GevreyFit(s=1.0 / fit.r, eps=fit.eps, C=fit.C, residual=fit.residual,
                     capped=fit.at_upper_bound, restricted=bool(restricted),
                     usable_range=(float(rho[reliable].min()), float(rho[reliable].max())))
