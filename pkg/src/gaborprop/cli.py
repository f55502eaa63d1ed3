"""Command-line front end.

Every subcommand writes ``<command>.json`` (resolved config, library version
and results) plus CSV and/or binary data files under ``--out``. Wall-clock
timings go to ``<command>.timings.json`` so the main report is reproducible
bit for bit.

Settings come from built-in defaults, then the ``--config`` file, then
explicit flags; later sources win.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.sparse.linalg import ArpackError

from . import __version__
from .analysis import decay_fit, operator_decay, shell_envelope, sparsity_profile
from .frames import Lattice, analysis_coeffs, canonical_dual, frame_bounds, synthesis, torus_counts, wexler_raz_defect
from .gabor_matrix import MatrixAssemblyConfig, multiplier_matrix
from .propagate import CauchyData, build_sparse_propagator, default_data, gabor_solve, spectral_solve, sweep
from .symbols import hp_check, nu_estimate, parse_operator, propagator_symbol
from .tfcore import DEFAULT_GRIDS, Grid, WindowSpec, field_to_bytes, field_to_csv, fmt17

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

COMMANDS = ("symbol", "hp-check", "nu-fit", "frame", "matrix", "decay-fit", "sparsity", "solve", "sweep")
# commands that enumerate a truncated lattice (the others use the full torus lattice)
ENUMERATED = {"matrix": 6.0, "decay-fit": 10.0, "sparsity": 13.0}
TORUS = ("frame", "solve", "sweep")


class ConfigError(ValueError):
    """Malformed configuration file."""


@dataclass
class ExperimentConfig:
    """Flat experiment description; ``None`` means a command-dependent default."""

    operator: str = "wave"
    t: float = 1.0
    dim: int = 1
    extent: float | None = None
    samples: int | None = None
    alpha: float = 1.0
    beta: float = 0.5
    radius: float | None = None
    window: str = "gaussian"
    threshold: float = 0.0
    band_radius: float | None = None
    thresholds: list = field(default_factory=lambda: [1e-2, 1e-4, 1e-6, 1e-8])
    band_radii: list = field(default_factory=lambda: [2.0, 3.0, 4.0, 5.0, 6.0])
    xi_range: float = 10.0
    points: int = 512
    k: int = 0
    shell_width: float | None = None
    s: float = 0.5
    n_max: int | None = None
    out: str = "."
    emit: str = "csv"


CONFIG_KEYS = tuple(f.name for f in fields(ExperimentConfig))


def load_config(path: str) -> ExperimentConfig:
    """Read a flat JSON object of config keys.

    Raises
    ------
    ConfigError
        With line and column for syntax errors, or listing every unknown key.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}:1:1: expected a JSON object")
    unknown = sorted(set(obj) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"{path}: unknown keys: {', '.join(unknown)}")
    return ExperimentConfig(**obj)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _load_operator(text: str, dim: int):
    if os.path.isfile(text):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    return parse_operator(text, dim)


def _window(text: str, dim: int) -> WindowSpec:
    if text == "gaussian":
        return WindowSpec.gaussian()
    name, _, arg = text.partition(":")
    if name == "hermite" and arg.isdigit():
        return WindowSpec.hermite({(int(arg),) * dim: 1.0})
    raise ValueError(f"window must be 'gaussian' or 'hermite:<n>', got {text!r}")


def resolve(cfg: ExperimentConfig, command: str) -> ExperimentConfig:
    """Fill command-dependent defaults (grid size, truncation radius)."""
    if cfg.dim not in DEFAULT_GRIDS:
        return cfg
    L, N = DEFAULT_GRIDS[cfg.dim]
    extent = L if cfg.extent is None else cfg.extent
    radius = cfg.radius
    if radius is None:
        radius = ENUMERATED.get(command, 6.0)
    samples = cfg.samples
    if samples is None:
        samples = N
        if command in ENUMERATED and _is_number(extent) and _is_number(radius) and extent > 0 and radius > 0:
            # frequencies reach the truncation radius; keep them below Nyquist
            samples = max(N, 1 << int(math.ceil(math.log2(2 * extent * radius))))
    return replace(cfg, extent=extent, samples=samples, radius=radius)


def validate_config(cfg: ExperimentConfig, command: str | None = None) -> list:
    """Every violated precondition, in a fixed order; empty when the config is usable."""
    out = []
    spec = None
    if not isinstance(cfg.dim, int) or cfg.dim not in DEFAULT_GRIDS:
        out.append("dim must be 1, 2 or 3")
    dim = cfg.dim if cfg.dim in DEFAULT_GRIDS else 1
    try:
        spec = _load_operator(str(cfg.operator), dim)
    except (ValueError, KeyError, TypeError) as exc:
        out.append(f"operator: {exc}")
    if not _is_number(cfg.t) or cfg.t < 0:
        out.append("t must be a nonnegative real")
    if cfg.extent is not None and not (_is_number(cfg.extent) and cfg.extent > 0):
        out.append("extent must be a positive real")
    if cfg.samples is not None:
        if not _is_int(cfg.samples) or cfg.samples < 8:
            out.append("samples_per_axis must be an integer of at least 8")
        elif cfg.samples % 2:
            out.append("samples_per_axis must be even")
    for name in ("alpha", "beta"):
        v = getattr(cfg, name)
        if not (_is_number(v) and v > 0):
            out.append(f"{name} must be a positive real")
    if cfg.radius is not None and not (_is_number(cfg.radius) and cfg.radius > 0):
        out.append("radius must be a positive real")
    try:
        _window(str(cfg.window), dim)
    except ValueError as exc:
        out.append(str(exc))
    if not (_is_number(cfg.threshold) and cfg.threshold >= 0):
        out.append("threshold must be a nonnegative real")
    if cfg.band_radius is not None and not (_is_number(cfg.band_radius) and cfg.band_radius > 0):
        out.append("band_radius must be a positive real")
    if not isinstance(cfg.thresholds, list) or not all(_is_number(v) and v >= 0 for v in cfg.thresholds):
        out.append("thresholds must be a list of nonnegative reals")
    if not isinstance(cfg.band_radii, list) or not all(_is_number(v) and v > 0 for v in cfg.band_radii):
        out.append("band_radii must be a list of positive reals")
    if not (_is_number(cfg.xi_range) and cfg.xi_range > 0):
        out.append("xi_range must be a positive real")
    if not (_is_int(cfg.points) and cfg.points >= 2):
        out.append("points must be an integer of at least 2")
    if not (_is_int(cfg.k) and cfg.k >= 0):
        out.append("k must be a nonnegative integer")
    if cfg.shell_width is not None and not (_is_number(cfg.shell_width) and cfg.shell_width > 0):
        out.append("shell_width must be a positive real")
    if not (_is_number(cfg.s) and cfg.s > 0):
        out.append("s must be a positive real")
    if cfg.n_max is not None and not (_is_int(cfg.n_max) and cfg.n_max >= 1):
        out.append("n_max must be a positive integer")
    if cfg.emit not in ("csv", "binary", "both"):
        out.append("emit must be csv, binary or both")
    if spec is not None and spec.dim != dim:
        out.append("operator dimension differs from dim")
    if out or command is None:
        return out

    r = resolve(cfg, command)
    grid = Grid(dim, r.extent, r.samples)
    if r.beta > grid.nyquist:
        out.append(f"lattice beta {r.beta:g} exceeds the grid Nyquist bound N/(2L) = {grid.nyquist:g}")
    if command in ENUMERATED:
        top = math.floor(r.radius / r.beta + 1e-12) * r.beta
        if top > grid.nyquist * (1 + 1e-12):
            out.append(f"lattice frequencies up to {top:g} exceed the grid Nyquist bound N/(2L) = {grid.nyquist:g}")
    if command in TORUS:
        try:
            torus_counts(Lattice(r.alpha, r.beta, dim), grid)
        except ValueError as exc:
            out.append(str(exc))
    if command in ("solve", "sweep") and spec is not None:
        rep = hp_check(spec, grid.freq_coords().reshape(-1, dim))
        if not rep.holds:
            out.append("Hadamard-Petrowsky condition fails: the forward problem is ill-posed")
    return out


# ---------------------------------------------------------------- output

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _encode(obj, indent=0) -> str:
    pad = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(obj, list):
        return "[" + ", ".join(_encode(v, indent + 1) for v in obj) + "]"
    if isinstance(obj, float):
        if math.isnan(obj):
            return "NaN"
        if math.isinf(obj):
            return "Infinity" if obj > 0 else "-Infinity"
        return fmt17(obj)
    return json.dumps(obj)


def dumps(obj) -> str:
    """JSON text with every float at 17 significant digits."""
    return _encode(_plain(obj)) + "\n"


def atomic_write(path: str, data) -> None:
    """Write through a temporary file in the target directory, then rename."""
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _table(header, rows) -> str:
    cell = lambda v: "" if v is None else (fmt17(v) if isinstance(v, (float, np.floating)) else str(v))
    lines = [",".join(header)] + [",".join(cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


class _Run:
    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.artifacts = []
        self.timings = {}
        os.makedirs(cfg.out, exist_ok=True)

    def _put(self, name, data):
        atomic_write(os.path.join(self.cfg.out, name), data)
        self.artifacts.append(name)

    @property
    def csv(self):
        return self.cfg.emit in ("csv", "both")

    @property
    def binary(self):
        return self.cfg.emit in ("binary", "both")

    def table(self, name, header, rows):
        self._put(name + ".csv", _table(header, rows))

    def text(self, name, text):
        self._put(name, text)

    def field(self, name, f):
        if self.csv:
            self._put(name + ".csv", field_to_csv(f))
        if self.binary:
            self._put(name + ".bin", field_to_bytes(f))

    def matrix(self, name, M):
        if self.csv:
            self._put(name + ".csv", M.to_csv())
        if self.binary:
            self._put(name + ".bin", M.to_bytes())

    def finish(self, results):
        report = {"command": self.command, "version": __version__, "config": asdict(self.cfg),
                  "results": results, "artifacts": sorted(self.artifacts + [self.command + ".timings.json"])}
        atomic_write(os.path.join(self.cfg.out, self.command + ".timings.json"), dumps(self.timings))
        atomic_write(os.path.join(self.cfg.out, self.command + ".json"), dumps(report))
        return report


# ---------------------------------------------------------------- commands

def _grid(cfg):
    return Grid(cfg.dim, cfg.extent, cfg.samples)


def _lattice(cfg):
    return Lattice(cfg.alpha, cfg.beta, cfg.dim, cfg.radius)


def _line(cfg):
    x = np.linspace(-cfg.xi_range, cfg.xi_range, cfg.points)
    xi = np.zeros((cfg.points, cfg.dim))
    xi[:, 0] = x
    return x, (x if cfg.dim == 1 else xi)


def cmd_symbol(cfg, spec, run):
    sym = propagator_symbol(spec, cfg.t)
    x, arg = _line(cfg)
    vals = np.asarray(sym.evaluate(arg, cfg.k), dtype=complex)
    run.table("symbol", ["xi", "re", "im"], [(a, v.real, v.imag) for a, v in zip(x, vals)])
    return {"kind": sym.kind, "k": cfg.k, "max_abs": float(np.max(np.abs(vals)))}


def cmd_hp_check(cfg, spec, run):
    x = np.linspace(-cfg.xi_range, cfg.xi_range, cfg.points)
    if cfg.dim == 1:
        xi = x[:, None]
    else:
        # tensor grid, kept to about 10**5 points
        n = min(cfg.points, int(1e5 ** (1 / cfg.dim)))
        ax = np.linspace(-cfg.xi_range, cfg.xi_range, n)
        xi = np.stack(np.meshgrid(*([ax] * cfg.dim), indexing="ij"), -1).reshape(-1, cfg.dim)
    rep = hp_check(spec, xi)
    return {"holds": rep.holds, "C": rep.C, "worst_xi": list(rep.worst_xi), "worst_tau": rep.worst_tau,
            "n_points": rep.n_points, "probe_radii": list(rep.probe_radii),
            "probe_max_defect": rep.probe_max_defect, "failures": rep.failures}


def cmd_nu_fit(cfg, spec, run):
    est = nu_estimate(spec)
    run.table("nu_curve", ["eta", "defect"], est.curve)
    return {"nu": est.nu, "C": est.C, "s_pred": est.s_pred, "r_pred": est.r_pred,
            "exact_hyperbolic": est.exact_hyperbolic, "clipped": est.clipped,
            "max_excess_decades": est.max_excess_decades}


def cmd_frame(cfg, spec, run):
    grid, lat, g = _grid(cfg), _lattice(cfg), _window(cfg.window, cfg.dim)
    t0 = time.perf_counter()
    b = frame_bounds(g, lat, grid)
    out = {"A": b.A, "B": b.B, "ratio": b.B / b.A if b.A > 0 else math.inf, "converged": b.converged}
    if b.A > 1e-3 * b.B:
        gamma = canonical_dual(g, lat, grid, bounds=b)
        f = default_data(spec, grid).fields[0]
        back = synthesis(analysis_coeffs(f, gamma, lat), g, lat, grid)
        out.update({"dual_residual": gamma.residual, "dual_converged": gamma.converged,
                    "dual_iterations": gamma.iterations, "wexler_raz_defect": wexler_raz_defect(g, gamma, grid),
                    "roundtrip_error": (back - f).norm() / f.norm()})
        run.field("dual_window", gamma.field)
    else:
        out["dual"] = "skipped: lower frame bound collapsed"
    run.timings["frame_seconds"] = time.perf_counter() - t0
    return out


def _assembly(cfg, threshold=0.0):
    return MatrixAssemblyConfig(drop_threshold=threshold, band_radius=cfg.band_radius)


def cmd_matrix(cfg, spec, run):
    grid, lat, g = _grid(cfg), _lattice(cfg), _window(cfg.window, cfg.dim)
    t0 = time.perf_counter()
    M = multiplier_matrix(propagator_symbol(spec, cfg.t), g, lat, _assembly(cfg, cfg.threshold), grid)
    run.timings["assembly_seconds"] = time.perf_counter() - t0
    run.matrix("matrix", M)
    return {"method": M.method, "points": len(M.points), "nnz": M.nnz, "threshold": M.threshold,
            "max_abs": float(np.max(np.abs(M.values))) if M.nnz else 0.0}


def cmd_decay_fit(cfg, spec, run):
    t0 = time.perf_counter()
    rep = operator_decay(spec, cfg.t, _lattice(cfg), cfg.shell_width, _window(cfg.window, cfg.dim))
    run.timings["seconds"] = time.perf_counter() - t0
    run.text("envelope.csv", rep.envelope.to_csv())
    return rep.to_dict()


def cmd_sparsity(cfg, spec, run):
    grid, lat, g = _grid(cfg), _lattice(cfg), _window(cfg.window, cfg.dim)
    pts = lat.enumerate()
    j = pts.locate([0] * (2 * cfg.dim))
    t0 = time.perf_counter()
    M = multiplier_matrix(propagator_symbol(spec, cfg.t), g, pts, _assembly(cfg), grid, columns=[j])
    run.timings["assembly_seconds"] = time.perf_counter() - t0
    n_max = cfg.n_max or min(1000, len(pts))
    prof = sparsity_profile(M, j, cfg.s, n_max)
    run.text("sparsity.csv", prof.to_csv())
    return {"column": list(prof.column), "s": prof.s, "exponent": prof.exponent, "C": prof.C, "eps": prof.eps,
            "C_shift": prof.C_shift, "residual": prof.residual, "dominated": prof.dominated,
            "degenerate": prof.degenerate, "n": len(prof.magnitudes)}


def _frame(cfg):
    grid, lat, g = _grid(cfg), Lattice(cfg.alpha, cfg.beta, cfg.dim), _window(cfg.window, cfg.dim)
    return grid, (g, canonical_dual(g, lat, grid), lat)


def cmd_solve(cfg, spec, run):
    grid, frame = _frame(cfg)
    data = default_data(spec, grid)
    ref = spectral_solve(spec, data, cfg.t)
    prop = build_sparse_propagator(spec, cfg.t, frame, cfg.threshold, cfg.band_radius)
    u, rep = gabor_solve(prop, data, ref)
    run.field("spectral", ref)
    run.field("gabor", u)
    run.timings.update({"assembly_seconds": rep.assembly_seconds, "apply_seconds": rep.apply_seconds})
    return {"error": rep.error, "nnz": rep.nnz, "threshold": rep.threshold, "band_radius": rep.band_radius}


def cmd_sweep(cfg, spec, run):
    grid, frame = _frame(cfg)
    data = default_data(spec, grid)
    prop = build_sparse_propagator(spec, cfg.t, frame, 0.0, None)
    rows = sweep(prop, data, cfg.thresholds, cfg.band_radii)
    cols = ["threshold", "band_radius", "nnz", "error", "time_ms", "truncation_error"]
    run.table("sweep", cols, [[r[c] for c in cols] for r in rows])
    run.timings["assembly_seconds"] = prop.assembly_seconds
    keep = [c for c in cols if c != "time_ms"]
    return {"rows": [{c: r[c] for c in keep} for r in rows]}


HANDLERS = {"symbol": cmd_symbol, "hp-check": cmd_hp_check, "nu-fit": cmd_nu_fit, "frame": cmd_frame,
            "matrix": cmd_matrix, "decay-fit": cmd_decay_fit, "sparsity": cmd_sparsity, "solve": cmd_solve,
            "sweep": cmd_sweep}


# ---------------------------------------------------------------- argv

def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file; flags override its values")
    common.add_argument("--operator", help="wave, klein-gordon:<mass>, heat, genheat:<k>, backward-heat or a JSON file")
    common.add_argument("--t", type=float, help="time")
    common.add_argument("--dim", type=int)
    common.add_argument("--extent", type=float, help="grid side length L")
    common.add_argument("--samples", type=int, help="grid samples per axis N")
    common.add_argument("--alpha", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("--radius", type=float, help="lattice truncation radius")
    common.add_argument("--window", help="gaussian or hermite:<n>")
    common.add_argument("--threshold", type=float)
    common.add_argument("--band-radius", type=float)
    common.add_argument("--thresholds", type=_floats, help="comma-separated list")
    common.add_argument("--band-radii", type=_floats, help="comma-separated list")
    common.add_argument("--xi-range", type=float)
    common.add_argument("--points", type=int)
    common.add_argument("--k", type=int, help="time-derivative order for 'symbol'")
    common.add_argument("--shell-width", type=float)
    common.add_argument("--s", type=float, help="sparsity Gelfand-Shilov index")
    common.add_argument("--n-max", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--emit", choices=("csv", "binary", "both"))
    parser = argparse.ArgumentParser(prog="gaborprop", description="Gabor-frame propagator experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def config_from_args(ns) -> ExperimentConfig:
    cfg = load_config(ns.config) if ns.config else ExperimentConfig()
    updates = {k: getattr(ns, k) for k in CONFIG_KEYS if getattr(ns, k, None) is not None}
    return replace(cfg, **updates)


def run(argv=None) -> int:
    """Run one subcommand; returns the exit code."""
    try:
        ns = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        cfg = config_from_args(ns)
    except (OSError, ConfigError, TypeError) as exc:
        print(f"gaborprop: {exc}", file=sys.stderr)
        return EXIT_INVALID
    problems = validate_config(cfg, ns.command)
    if problems:
        for p in problems:
            print(f"gaborprop: invalid config: {p}", file=sys.stderr)
        return EXIT_INVALID
    cfg = resolve(cfg, ns.command)
    spec = _load_operator(cfg.operator, cfg.dim)
    try:
        report = _Run(cfg, ns.command)
        results = HANDLERS[ns.command](cfg, spec, report)
        report.finish(results)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError, ArpackError, ArithmeticError) as exc:
        print(f"gaborprop: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(dumps(results), end="")
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
