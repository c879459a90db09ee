"""Epsilon sweeps over the full homogenization pipeline, rate fitting and report files."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cell import CellSolution, SolverError, solve_cell_problem
from .dirichlet import (MESH_RATIO, BoundedDomain, GridField, VariableForm, norms,
                        solve_dirichlet, solve_discrepancy, solve_homogenized)
from .lattice import CellGrid, Lattice, PeriodicCoefficient, SymbolOperator
from .smoothing import corrector_field, extend, extension_margin, make_cutoff

log = logging.getLogger(__name__)

TABLE_HEADER = ("eps", "e_l2", "e_h1corr", "e_full", "w_l2")
SERIES = ("e_l2", "e_h1corr", "e_full", "w_l2")


class SweepError(RuntimeError):
    """A pipeline stage failed at a particular eps."""

    def __init__(self, eps, cause):
        super().__init__(f"sweep aborted at eps = {eps:g}: {cause}")
        self.eps = eps
        self.cause = cause


def eps_thresholds(eps1: float, lattice: Lattice) -> tuple[float, float]:
    """(eps2, eps0) for a domain threshold eps1."""
    eps2 = eps1 / (1.0 + lattice.cell_radius)
    return eps2, 0.5 * eps2


# ------------------------------------------------------------------ sources

def manufactured_source(shape: str, g_eff, symbol: SymbolOperator, radius: float = 1.0):
    """Right-hand side whose homogenized solution is known in closed form.

    The exact u0 is s(x) c with c = (1, ..., 1) / sqrt(n) and
    s = sin(pi x1) sin(pi x2) on the square or R^2 - |x|^2 on the disk.
    Returns (F, u0_exact), both callables on points (..., 2).
    """
    b = symbol.matrices
    coef = np.einsum("kai,ab,lbp->klip", b.conj(), np.asarray(g_eff), b)
    c = np.ones(symbol.n) / np.sqrt(symbol.n)
    if shape == "unit-square":
        def s(x):
            return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])

        def hess(x):
            sx, sy = np.sin(np.pi * x[..., 0]), np.sin(np.pi * x[..., 1])
            cx, cy = np.cos(np.pi * x[..., 0]), np.cos(np.pi * x[..., 1])
            p2 = np.pi ** 2
            return np.stack([np.stack([-p2 * sx * sy, p2 * cx * cy], -1),
                             np.stack([p2 * cx * cy, -p2 * sx * sy], -1)], -2)
    elif shape == "unit-disk":
        def s(x):
            return radius ** 2 - (x ** 2).sum(axis=-1)

        def hess(x):
            return np.broadcast_to(-2.0 * np.eye(2), x.shape[:-1] + (2, 2))
    else:
        raise ValueError(f"no manufactured solution for {shape!r}")

    def F(x):
        return _real_if_close(-np.einsum("...kl,klip,p->...i", hess(x), coef, c))

    def u0(x):
        return s(x)[..., None] * c

    return F, u0


def random_source(n: int, seed: int, modes: int = 4):
    """Band-limited trigonometric polynomial with unit coefficient scale, fixed seed."""
    rng = np.random.default_rng(seed)
    k = np.arange(modes + 1)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    amp = rng.standard_normal((n,) + K1.shape) / (1.0 + K1 ** 2 + K2 ** 2)
    phase = rng.uniform(0, 2 * np.pi, (n,) + K1.shape)

    def F(x):
        arg = np.pi * (x[..., 0, None, None, None] * K1 + x[..., 1, None, None, None] * K2) + phase
        return np.sum(amp * np.cos(arg), axis=(-1, -2))

    return F


def _real_if_close(a, tol=1e-12):
    a = np.asarray(a)
    if np.iscomplexobj(a) and np.abs(a.imag).max(initial=0) <= tol * max(np.abs(a).max(initial=0), 1):
        return a.real
    return a


# ------------------------------------------------------------------ config / report

@dataclass
class SweepConfig:
    coefficient: PeriodicCoefficient
    symbol: SymbolOperator
    eps_list: list
    shape: str = "unit-square"
    source: str = "manufactured"
    seed: int = 0
    modes: int = 4
    mesh_ratio: int = MESH_RATIO
    cell_resolution: int = 256
    cell_method: str = "auto"
    eps1: float = 0.5
    eps_range: str = "eps0"  # eps0 for the L2 estimate, eps2 for the corrector estimates
    precond: str = "amg"
    audit: bool = False
    lattice: Lattice = field(default_factory=lambda: Lattice.cubic(2))

    def validate(self) -> None:
        eps = [float(e) for e in self.eps_list]
        if len(eps) < 3:
            raise ValueError("eps_list needs at least 3 values to fit a rate")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        eps2, eps0 = eps_thresholds(self.eps1, self.lattice)
        top = {"eps0": eps0, "eps2": eps2}.get(self.eps_range)
        if top is None:
            raise ValueError(f"eps_range must be eps0 or eps2, got {self.eps_range!r}")
        bad = [e for e in eps if not 0 < e <= top * (1 + 1e-12)]
        if bad:
            raise ValueError(f"eps = {bad[0]:g} outside the admissible range 0 < eps <= "
                             f"{self.eps_range} = {top:.6g}")
        if self.mesh_ratio < MESH_RATIO:
            raise ValueError(f"mesh_ratio must be at least {MESH_RATIO}")
        if self.source not in ("manufactured", "random"):
            raise ValueError(f"unknown source {self.source!r}")


@dataclass
class SweepRow:
    eps: float
    e_l2: float
    e_h1corr: float
    e_full: float
    w_l2: float
    mesh_h: float = float("nan")
    w_h1: float = float("nan")
    phi_h1: float = float("nan")
    corrector_l2: float = float("nan")
    kappa: float = float("nan")
    extension_ratio: float = float("nan")
    h2_ratio: float = float("nan")
    nodes: int = 0


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float


@dataclass
class ConvergenceReport:
    rows: list
    f_norm: float = 1.0
    slopes: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    audit: dict | None = None
    meta: dict = field(default_factory=dict)
    g_eff: np.ndarray | None = None

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def degenerate(self) -> bool:
        return any(f.startswith("degenerate") for f in self.flags)


def fit_rate(points) -> RateFit:
    """Least-squares line through (log eps, log error)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("rate fitting needs at least 3 (eps, error) points")
    if np.any(pts <= 0):
        raise ValueError("errors must be positive to fit a rate; "
                         "a constant coefficient is the degenerate case (see the report flag)")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.max(np.abs(y - (slope * x + intercept))))
    return RateFit(float(slope), float(intercept), residual)


# ------------------------------------------------------------------ sweep

def sweep_source(cfg: SweepConfig, sol: CellSolution):
    if cfg.source == "manufactured":
        return manufactured_source(cfg.shape, sol.g_eff, cfg.symbol)[0]
    return random_source(cfg.symbol.n, cfg.seed, cfg.modes)


def _domain(cfg: SweepConfig, eps: float, ratio: int) -> BoundedDomain:
    h = eps / ratio
    if cfg.shape == "unit-square":
        return BoundedDomain.unit_square(int(round(1.0 / h)), cfg.eps1)
    return BoundedDomain.unit_disk(h, eps1=cfg.eps1)


def sweep_row(cfg, sol, eps, ratio, F, margin) -> SweepRow:
    """Run the per-eps pipeline once and measure every error functional."""
    dom = _domain(cfg, eps, ratio)
    b = cfg.symbol
    form = VariableForm.oscillatory(cfg.coefficient, b, eps)
    ue = solve_dirichlet(dom, form, F, cfg.precond)
    u0 = solve_homogenized(dom, sol.g_eff, b, F, cfg.precond)
    ext = extend(u0, margin)
    corr = corrector_field(eps, sol, ext, b, dom, cfg.lattice)
    w = solve_discrepancy(dom, form, corr, cfg.precond)
    diff = ue - u0
    e1 = diff - corr
    full = e1 + w
    theta = make_cutoff(eps, "theta", dom)
    phi = GridField(theta.values[:, None] * corr.values, dom)
    nw = norms(w, with_h2=False)
    return SweepRow(
        eps=eps, e_l2=norms(diff, False).l2, e_h1corr=norms(e1, False).h1,
        e_full=norms(full, False).h1, w_l2=nw.l2, mesh_h=dom.mesh_h, w_h1=nw.h1,
        phi_h1=norms(phi, False).h1, corrector_l2=norms(corr, False).l2, kappa=theta.kappa,
        extension_ratio=ext.norm_ratio if ext.norm_ratio is not None else float("nan"),
        h2_ratio=u0.info.get("h2_ratio") or float("nan"), nodes=dom.num_nodes)


def run_sweep(cfg: SweepConfig, sol: CellSolution | None = None,
              progress: Callable[[str], None] | None = None) -> ConvergenceReport:
    """Run the pipeline once per eps and collect the error table."""
    cfg.validate()
    g, b = cfg.coefficient, cfg.symbol
    if sol is None:
        sol = solve_cell_problem(g, b, CellGrid(cfg.cell_resolution), method=cfg.cell_method)
    eps_list = [float(e) for e in cfg.eps_list]
    F = sweep_source(cfg, sol)
    margin = extension_margin(eps_list[0], cfg.lattice)

    rows = []
    for eps in eps_list:
        t0 = time.perf_counter()
        try:
            row = sweep_row(cfg, sol, eps, cfg.mesh_ratio, F, margin)
        except (SolverError, ValueError, MemoryError) as exc:
            raise SweepError(eps, exc) from exc
        rows.append(row)
        msg = (f"eps={eps:g} nodes={row.nodes} e_l2={row.e_l2:.4e} e_h1corr={row.e_h1corr:.4e} "
               f"e_full={row.e_full:.4e} w_l2={row.w_l2:.4e} seconds={time.perf_counter() - t0:.1f}")
        log.info(msg)
        if progress:
            progress(msg)

    # ||F||_L2 on the finest mesh (the source is smooth, so this is mesh-independent in practice)
    fine = _domain(cfg, eps_list[-1], cfg.mesh_ratio)
    f_norm = norms(GridField.from_function(fine, F), False).l2
    report = ConvergenceReport(rows, f_norm=f_norm, g_eff=np.asarray(sol.g_eff))
    report.meta = {
        "coefficient": g.name, "shape": cfg.shape, "source": cfg.source,
        "seed": cfg.seed if cfg.source == "random" else None, "mesh_ratio": cfg.mesh_ratio,
        "cell_resolution": sol.grid.resolution, "eps_range": cfg.eps_range,
        "lambda_l2": sol.lambda_l2,
    }
    if g.is_constant:
        report.flags.append("degenerate: u_eps == u0 (constant coefficient, rates not fitted)")
    else:
        for name in SERIES + ("phi_h1",):
            pts = [(r.eps, getattr(r, name)) for r in rows]
            try:
                report.slopes[name] = fit_rate(pts)
            except ValueError as exc:
                report.flags.append(f"no rate for {name}: {exc}")
    _constants(report)
    if cfg.audit:
        eps = eps_list[-1]
        try:
            fine_row = sweep_row(cfg, sol, eps, 2 * cfg.mesh_ratio, F, margin)
        except (SolverError, ValueError, MemoryError) as exc:
            raise SweepError(eps, exc) from exc
        base = rows[-1].e_l2
        change = abs(fine_row.e_l2 - base) / base if base > 0 else 0.0
        report.audit = {"eps": eps, "mesh_ratio": 2 * cfg.mesh_ratio, "e_l2": fine_row.e_l2,
                        "relative_change": change}
        if progress:
            progress(f"audit eps={eps:g} mesh_ratio={2 * cfg.mesh_ratio} e_l2={fine_row.e_l2:.4e} "
                     f"relative_change={change:.3%}")
    return report


def _constants(report: ConvergenceReport) -> None:
    f = report.f_norm or 1.0
    eps = report.series("eps")
    c = report.constants
    c["C1_l2"] = float(np.max(report.series("e_l2") / (eps * f)))
    c["C_h1corr"] = float(np.max(report.series("e_h1corr") / (np.sqrt(eps) * f)))
    c["C_full"] = float(np.max(report.series("e_full") / (eps * f)))
    c["C5_w_l2"] = float(np.max(report.series("w_l2") / (eps * f)))
    c["C2_phi_h1"] = float(np.max(report.series("phi_h1") / (np.sqrt(eps) * f)))
    c["kappa"] = float(np.max(report.series("kappa")))
    for name in ("extension_ratio", "h2_ratio"):
        vals = report.series(name)
        if np.isfinite(vals).any():  # not measured on every shape
            c[name] = float(np.nanmax(vals))
    c["max_mesh_ratio_h_over_eps"] = float(np.max(report.series("mesh_h") / eps))


# ------------------------------------------------------------------ bands

DEFAULT_BANDS = {
    "e_l2": (0.9, 1.15),
    "e_h1corr": (0.4, 0.75),
    "e_full": (0.8, np.inf),
    "w_l2": (0.8, np.inf),
}


@dataclass
class BandResult:
    name: str
    measured: float
    low: float
    high: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.measured) and self.low <= self.measured <= self.high)

    def line(self) -> str:
        hi = "inf" if np.isinf(self.high) else f"{self.high:g}"
        return (f"{'PASS' if self.ok else 'FAIL'} {self.name}: measured {self.measured:.4f} "
                f"band [{self.low:g}, {hi}]")


def check_bands(report: ConvergenceReport, checks, bands=None, audit_max: float = 0.2) -> list:
    """Evaluate tolerance bands; ``checks`` names slopes, plus 'ordering' and 'audit'."""
    bands = {**DEFAULT_BANDS, **(bands or {})}
    out = []
    if report.degenerate:
        return out
    for name in checks:
        if name in bands:
            fit = report.slopes.get(name)
            out.append(BandResult(f"slope {name}", fit.slope if fit else float("nan"), *bands[name]))
        elif name == "ordering":
            last = report.rows[-1]
            out.append(BandResult("e_full / e_h1corr at smallest eps",
                                  last.e_full / last.e_h1corr, 0.0, 1.0 - 1e-12))
        elif name == "audit":
            change = report.audit["relative_change"] if report.audit else float("nan")
            out.append(BandResult("mesh audit relative change of e_l2", change, 0.0, audit_max))
        else:
            raise ValueError(f"unknown band {name!r}")
    return out


# ------------------------------------------------------------------ output

def _fmt(x) -> str:
    return repr(float(x))


def emit_report(report: ConvergenceReport, path, bands=(), series_files: bool = True) -> dict:
    """Write table.csv, summary.txt and (optionally) one two-column file per series."""
    if not report.rows:
        raise ValueError("refusing to write a report with no rows")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = {"table": out / "table.csv", "summary": out / "summary.txt"}
    with open(files["table"], "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TABLE_HEADER)
        for r in report.rows:
            wr.writerow([_fmt(getattr(r, k)) for k in TABLE_HEADER])

    lines = [f"{k} = {v}" for k, v in report.meta.items()]
    lines.append(f"f_l2 = {_fmt(report.f_norm)}")
    if report.g_eff is not None:
        lines.append("g_eff = " + "; ".join(" ".join(f"{x:.12g}" for x in row)
                                            for row in np.real_if_close(report.g_eff)))
    for flag in report.flags:
        lines.append(f"flag = {flag}")
    for name, fit in report.slopes.items():
        lines.append(f"slope.{name} = {fit.slope:.6f} intercept = {fit.intercept:.6f} "
                     f"residual = {fit.residual:.3e}")
    for name, val in report.constants.items():
        lines.append(f"constant.{name} = {val:.6g}")
    for r in report.rows:
        lines.append(f"row eps={r.eps:g} mesh_h={r.mesh_h:.6g} nodes={r.nodes} w_h1={r.w_h1:.6e} "
                     f"phi_h1={r.phi_h1:.6e} corrector_l2={r.corrector_l2:.6e} "
                     f"triangle_ok={r.e_full <= r.e_h1corr + r.w_h1 * (1 + 1e-12)}")
    if report.audit:
        lines.append("audit = " + " ".join(f"{k}={v:.6g}" for k, v in report.audit.items()))
    for b in bands:
        lines.append(f"band = {b.line()}")
    files["summary"].write_text("\n".join(lines) + "\n")

    if series_files:
        for name in SERIES:
            p = out / f"{name}.dat"
            p.write_text("".join(f"{_fmt(r.eps)} {_fmt(getattr(r, name))}\n" for r in report.rows))
            files[name] = p
    return files


def read_table(path) -> list:
    """Parse table.csv back into SweepRow objects (only the tabulated columns)."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = tuple(next(rd))
        if header != TABLE_HEADER:
            raise ValueError(f"unexpected header {header}")
        return [SweepRow(*map(float, rec)) for rec in rd if rec]
