"""Invariant suite on small instances, shared by the ``check`` command and the tests."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .cell import check_cell_bounds, solve_cell_problem
from .dirichlet import (BoundedDomain, GridField, VariableForm, dual_norm, norms,
                        solve_dirichlet, solve_discrepancy)
from .lattice import (CellGrid, Lattice, PeriodicCoefficient, SymbolOperator, alpha_bounds,
                      cell_mean, product_sinusoid_coefficient)
from .smoothing import BoxField, extend, extension_margin, make_cutoff, steklov_smooth


@dataclass
class CheckResult:
    name: str
    measured: float
    bound: float
    ok: bool
    relation: str = "<="

    def line(self) -> str:
        return (f"{'PASS' if self.ok else 'FAIL'}  {self.name:<44s} measured {self.measured:.4e} "
                f"{self.relation} {self.bound:.4e}")


def _le(name, measured, bound):
    return CheckResult(name, float(measured), float(bound), bool(measured <= bound))


def random_periodic_field(shape, rng, modes=6, ncomp=1, complex_=False):
    """Random trigonometric field on a periodic grid, band-limited to |k| <= modes."""
    spectrum = np.zeros(tuple(shape) + (ncomp,), dtype=complex)
    k = np.fft.fftfreq(shape[0], 1.0 / shape[0])
    l = np.fft.fftfreq(shape[1], 1.0 / shape[1])
    mask = (np.abs(k)[:, None] <= modes) & (np.abs(l)[None, :] <= modes)
    noise = rng.standard_normal(spectrum.shape) + 1j * rng.standard_normal(spectrum.shape)
    spectrum[mask] = noise[mask]
    u = np.fft.ifft2(spectrum, axes=(0, 1))
    return u if complex_ else u.real


def multiplier_norm_ratios(f_cell: np.ndarray, eps_cells: int, trials: int, rng,
                           modes: int = 6) -> np.ndarray:
    """||f(x/eps) S_eps u|| / ||u|| on a periodic box of ``eps_cells`` periods per axis.

    ``f_cell`` holds a periodic function at the midpoints of an N x N cell grid;
    the box grid is chosen so that x / eps lands on exactly those midpoints.
    """
    N = f_cell.shape[0]
    n = N * eps_cells
    h = 1.0 / n
    eps = N * h
    f_box = np.tile(f_cell, (eps_cells, eps_cells))
    out = []
    for _ in range(trials):
        u = random_periodic_field((n, n), rng, modes)
        su = steklov_smooth(BoxField(u, (0.5 * h, 0.5 * h), h), eps, periodic=True).values[..., 0]
        out.append(np.linalg.norm(f_box * su) / np.linalg.norm(u))
    return np.array(out)


def run_checks(b: SymbolOperator, g: PeriodicCoefficient, seed: int = 0,
               corrupt_lambda_mean: bool = False, cell_resolution: int = 64,
               mesh_elements: int = 64) -> list:
    """Evaluate every module invariant on a small instance of (b, g)."""
    rng = np.random.default_rng(seed)
    lattice = Lattice.cubic(b.d)
    res = []

    # lattice_cell
    s = 1.7
    a0, a1 = alpha_bounds(b.matrices * s)
    res.append(_le("alpha bounds scale as s^2", max(abs(a0 - s * s * b.alpha0),
                                                    abs(a1 - s * s * b.alpha1)), 1e-8 * s * s * b.alpha1))
    grid = CellGrid(cell_resolution, b.d)
    F1 = rng.standard_normal(grid.shape + (3, 3)) + 1j * rng.standard_normal(grid.shape + (3, 3))
    F2 = rng.standard_normal(grid.shape + (3, 3))
    lin = np.abs(cell_mean(2 * F1 - F2, grid) - (2 * cell_mean(F1, grid) - cell_mean(F2, grid))).max()
    herm = np.abs(cell_mean(np.conj(np.swapaxes(F1, -1, -2)), grid)
                  - cell_mean(F1, grid).conj().T).max()
    res.append(_le("cell_mean linear and commutes with ^H", max(lin, herm), 1e-12))
    gbar = g.mean(grid)
    res.append(CheckResult("cell_mean(g) positive definite", float(np.linalg.eigvalsh(gbar).min()),
                           0.0, bool(np.linalg.eigvalsh(gbar).min() > 0), ">"))

    # cell_problem
    sol = solve_cell_problem(g, b, grid)
    if corrupt_lambda_mean:
        sol = replace(sol, lam=sol.lam + 0.1)
    res.append(_le("Lambda columns have zero mean", np.abs(sol.column_means()).max(),
                   1e-10 * sol.lambda_l2 + 1e-14))
    ev = np.linalg.eigvalsh(sol.g_eff)
    res.append(CheckResult("g_eff positive definite", float(ev.min()), 0.0, bool(ev.min() > 0), ">"))
    xi = rng.standard_normal((100, b.m)) + 1j * rng.standard_normal((100, b.m))
    q_eff = np.real(np.einsum("ki,ij,kj->k", xi.conj(), sol.g_eff, xi))
    q_bar = np.real(np.einsum("ki,ij,kj->k", xi.conj(), gbar, xi))
    res.append(_le("<g_eff xi, xi> <= <mean(g) xi, xi>", np.max(q_eff - q_bar), 1e-10 * q_bar.max()))
    bounds = check_cell_bounds(sol, lattice, b, g)
    res.append(_le("||Lambda||_L2 <= bound", sol.lambda_l2, bounds.bound))
    fine = solve_cell_problem(g, b, CellGrid(2 * cell_resolution, b.d), estimate_error=False)
    res.append(_le("g_eff refinement change <= error estimate",
                   np.abs(fine.g_eff - sol.g_eff).max(), max(sol.error_estimate, 1e-12)))
    ps = product_sinusoid_coefficient(b.m)
    ps_sol = solve_cell_problem(ps, b, grid, estimate_error=False)
    off = ps_sol.g_eff - np.diag(np.diag(ps_sol.g_eff))
    res.append(_le("reflection-symmetric g gives diagonal g_eff", np.abs(off).max(), 1e-8))

    # dirichlet_solver
    eps = 1.0 / 4
    dom = BoundedDomain.unit_square(mesh_elements)
    form = VariableForm.oscillatory(g, b, eps)
    I = dom.interior
    n = b.n
    worst_lo, worst_hi = np.inf, -np.inf
    for _ in range(50):
        u = np.zeros((dom.num_nodes, n))
        u[I] = rng.standard_normal((len(I), n))
        a = np.real(form.energy(dom, u))
        du = np.real(np.sum(u * (dom.laplace @ u)))
        worst_lo = min(worst_lo, a / (form.c0 * du))
        worst_hi = max(worst_hi, a / (form.c1 * du))
    res.append(CheckResult("coercivity lower a[u,u] / (c0 ||Du||^2)", worst_lo, 1.0,
                           bool(worst_lo >= 1 - 1e-10), ">="))
    res.append(_le("coercivity upper a[u,u] / (c1 ||Du||^2)", worst_hi, 1.0 + 1e-10))
    u = rng.standard_normal((dom.num_nodes, n))
    v = rng.standard_normal((dom.num_nodes, n))
    nu, nv = norms(GridField(u, dom), False).h1, norms(GridField(v, dom), False).h1
    asym = abs(form.energy(dom, u, v) - np.conj(form.energy(dom, v, u)))
    res.append(_le("stiffness Hermitian", asym, 1e-12 * nu * nv))

    c_hat = (1 + dom.diameter ** 2) / b.alpha0 * g.norm_ginv
    worst = 0.0
    galerkin = 0.0
    for _ in range(5):
        F = GridField(rng.standard_normal((dom.num_nodes, n)), dom)
        ue = solve_dirichlet(dom, form, F)
        worst = max(worst, norms(ue, False).h1 / (c_hat * dual_norm(F)))
        galerkin = max(galerkin, ue.info["residual"])
    res.append(_le("energy inequality ||u||_H1 / (C ||F||_H-1)", worst, 1.0))
    res.append(_le("Galerkin residual (relative)", galerkin, 1e-9))
    lb = [dom.layer_measure(e) / (e * dom.boundary_length) for e in (1 / 16, 1 / 32, 1 / 64)]
    res.append(CheckResult("|B_eps| / (eps |boundary|) in [0.8, 1.2]", min(lb), 0.8,
                           bool(min(lb) >= 0.8 and max(lb) <= 1.2), ">="))
    w = solve_discrepancy(dom, VariableForm.oscillatory(g, b, eps), np.ones((dom.num_nodes, n)))
    res.append(_le("constant data gives constant discrepancy", np.abs(w.values - 1).max(), 1e-8))

    # smoothing_corrector
    box = BoxField(rng.standard_normal((96, 96)), (0.0, 0.0), 1.0 / 96)
    se = 1 / 12
    res.append(_le("S_eps reproduces constants",
                   np.abs(steklov_smooth(BoxField(np.full((96, 96), 2.5), (0, 0), 1 / 96), se).values
                          - 2.5).max(), 1e-12))
    per = steklov_smooth(box, se, periodic=True)
    res.append(_le("S_eps contraction in L2 (periodic)",
                   np.linalg.norm(per.values) / np.linalg.norm(box.values), 1.0 + 1e-12))
    res.append(CheckResult("S_eps positivity preserving",
                           float(steklov_smooth(BoxField(np.abs(box.values), (0, 0), 1 / 96), se).values.min()),
                           0.0, True, ">="))
    shifted = steklov_smooth(BoxField(np.roll(box.values, 5, axis=0), (0, 0), 1 / 96), se, periodic=True)
    res.append(_le("S_eps commutes with grid shifts",
                   np.abs(shifted.values - np.roll(per.values, 5, axis=0)).max(), 1e-12))
    f_cells = [np.real(g(grid.nodes)[..., i, j]) for i in range(b.m) for j in range(b.m)]
    f_cells += [sol.lam[..., i, j] for i in range(b.n) for j in range(b.m)]
    worst = 0.0
    for f in f_cells:
        bound = np.sqrt(cell_mean(np.abs(f) ** 2, grid))
        if bound == 0:
            continue
        r = multiplier_norm_ratios(f, 2, 5, rng)
        worst = max(worst, float(r.max() / bound))
    res.append(_le("||f^eps S_eps u|| / (||f|| ||u||)", worst, 1.0 + 1e-8))

    theta = make_cutoff(eps, "theta", dom)
    dist = dom.boundary_distance
    supp = np.abs(theta.values[dist >= eps]).max(initial=0)
    res.append(_le("theta vanishes for dist >= eps", supp, 0.0))
    res.append(_le("theta = 1 on the boundary", np.abs(theta.values[dom.boundary] - 1).max(), 0.0))
    tt = make_cutoff(eps / 2, "theta_tilde", dom)
    res.append(_le("theta_tilde = 1 near, 0 far",
                   max(np.abs(tt.values[dist <= eps / 2] - 1).max(),
                       np.abs(tt.values[dist >= eps]).max(initial=0)), 0.0))
    kap = [make_cutoff(e, "theta", dom).kappa for e in (1 / 4, 1 / 8)]
    res.append(_le("kappa uniform in eps (spread)", abs(kap[0] - kap[1]), 0.25))

    F = GridField.from_function(dom, lambda x: np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]))
    ext = extend(F, extension_margin(eps / 2, lattice))
    N = dom.grid_n
    P = int(round(-ext.origin[0] / ext.h))
    inner = ext.values[P:P + N + 1, P:P + N + 1].reshape(-1, F.ncomp)
    res.append(_le("extension equals u0 on the domain", np.abs(inner - F.values).max(), 0.0))
    return res


def default_problem():
    from .lattice import layered_coefficient
    return SymbolOperator.gradient(2), layered_coefficient(2)


def timed_checks(*args, **kwargs):
    t0 = time.perf_counter()
    out = run_checks(*args, **kwargs)
    return out, time.perf_counter() - t0
