"""Periodic cell problem for the corrector matrix Lambda and the effective matrix g0.

Two discretizations share one interface:

* ``spectral`` -- Fourier collocation on the midpoint cell grid; derivatives by
  FFT, PCG on the mean-zero subspace preconditioned by the exact inverse of
  the constant-coefficient operator with the cell mean of g.
* ``fe`` -- bilinear (Q1) elements with periodic identification; element
  integrals by 2-point Gauss rules per axis.  The constant-coefficient Q1
  operator is circulant, so its FFT inverse is used as preconditioner.

Columns of Lambda solve
``int <g (b(D) v_j + e_j), b(D) eta> = 0`` for all periodic eta, with zero mean.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .lattice import CellGrid, Lattice, PeriodicCoefficient, SymbolOperator, cell_mean

log = logging.getLogger(__name__)

SPECTRAL_RTOL = 1e-10
FE_RTOL = 1e-8


class SolverError(RuntimeError):
    """Krylov iteration failed to reach the requested tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class CellSolution:
    """Discrete solution of the cell problem.

    ``lam`` has shape grid.shape + (n, m); column j is v_j sampled on the
    cell-grid nodes.
    """

    grid: CellGrid
    lam: np.ndarray
    g_eff: np.ndarray
    residual: float
    method: str
    iterations: tuple = ()
    error_estimate: float = float("nan")
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.lam.shape[-2]

    @property
    def m(self) -> int:
        return self.lam.shape[-1]

    @property
    def lambda_l2(self) -> float:
        """||Lambda||_{L2(Omega)} with the Frobenius norm pointwise."""
        sq = np.sum(np.abs(self.lam) ** 2, axis=(-2, -1))
        return float(np.sqrt(np.sum(sq * self.grid.quadrature_weights)))

    def column_means(self) -> np.ndarray:
        return cell_mean(self.lam, self.grid)

    def interpolate(self, y: np.ndarray) -> np.ndarray:
        """Periodic multilinear interpolation of Lambda at cell coordinates ``y`` (..., d)."""
        return periodic_interpolate(self.lam, np.asarray(y))


def periodic_interpolate(values: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of node values on the midpoint grid, periodic in each axis."""
    d = y.shape[-1]
    res = values.shape[0]
    t = np.mod(y, 1.0) * res - 0.5
    base = np.floor(t).astype(np.int64)
    frac = t - base
    out = 0
    for corner in itertools.product((0, 1), repeat=d):
        w = np.ones(y.shape[:-1])
        idx = []
        for k, c in enumerate(corner):
            w = w * (frac[..., k] if c else 1.0 - frac[..., k])
            idx.append(np.mod(base[..., k] + c, res))
        out = out + w.reshape(w.shape + (1,) * (values.ndim - d)) * values[tuple(idx)]
    return out


# ---------------------------------------------------------------- spectral

def _wavenumbers(res: int, d: int):
    k = np.fft.fftfreq(res, 1.0 / res)
    if res % 2 == 0:
        k[res // 2] = 0.0
    return np.stack(np.meshgrid(*([2 * np.pi * k] * d), indexing="ij"), axis=-1)


class _SpectralOperator:
    def __init__(self, G, b: SymbolOperator, grid: CellGrid):
        self.G = G
        self.b = b.matrices
        self.d = grid.dim
        self.shape = grid.shape
        self.axes = tuple(range(self.d))
        xi = _wavenumbers(grid.resolution, self.d)
        self.bxi = np.einsum("...l,lmn->...mn", xi, self.b)  # b(xi) per mode
        self.null = np.all(xi == 0, axis=-1)
        gbar = cell_mean(G, grid)
        sym = np.einsum("...mi,mk,...kj->...ij", self.bxi.conj(), gbar, self.bxi)
        sym[self.null] = np.eye(b.n)
        inv = np.linalg.inv(sym)
        inv[self.null] = 0.0
        self.prec_symbol = inv

    def bD(self, v):
        vh = np.fft.fftn(v, axes=self.axes)
        return np.fft.ifftn(np.einsum("...mn,...n->...m", self.bxi, vh), axes=self.axes)

    def bD_star(self, q):
        qh = np.fft.fftn(q, axes=self.axes)
        out = np.einsum("...mn,...m->...n", self.bxi.conj(), qh)
        out[self.null] = 0.0
        return np.fft.ifftn(out, axes=self.axes)

    def apply(self, v):
        return self.bD_star(np.einsum("...ij,...j->...i", self.G, self.bD(v)))

    def precondition(self, r):
        rh = np.fft.fftn(r, axes=self.axes)
        return np.fft.ifftn(np.einsum("...ij,...j->...i", self.prec_symbol, rh), axes=self.axes)


def _pcg(apply, precond, rhs, rtol, maxiter, label):
    size = rhs.size
    shape = rhs.shape
    A = LinearOperator((size, size), matvec=lambda x: apply(x.reshape(shape)).ravel(),
                       dtype=complex)
    M = LinearOperator((size, size), matvec=lambda x: precond(x.reshape(shape)).ravel(),
                       dtype=complex)
    rnorm = np.linalg.norm(rhs)
    if rnorm == 0:
        return np.zeros_like(rhs), 0.0, 0
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = cg(A, rhs.ravel(), rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    x = x.reshape(shape)
    res = np.linalg.norm(apply(x) - rhs) / rnorm
    if info != 0 and res > 10 * rtol:
        raise SolverError(f"{label}: CG hit the iteration cap {maxiter} "
                          f"with relative residual {res:.3e}", res)
    return x, float(res), count[0]


def _solve_spectral(g, b, grid, rtol, maxiter):
    G = g(grid.nodes).astype(complex)
    op = _SpectralOperator(G, b, grid)
    n, m = b.n, b.m
    lam = np.zeros(grid.shape + (n, m), dtype=complex)
    residual, iters = 0.0, []
    for j in range(m):
        rhs = -op.bD_star(G[..., :, j])
        v, res, it = _pcg(op.apply, op.precondition, rhs, rtol, maxiter, f"cell column {j}")
        v = v - cell_mean(v, grid)
        lam[..., :, j] = v
        residual = max(residual, res)
        iters.append(it)
    flux = np.stack([op.bD(lam[..., :, j]) for j in range(m)], axis=-1)  # (..., m, m)
    g_eff = cell_mean(np.einsum("...ik,...kj->...ij", G, flux + np.eye(m)), grid)
    return lam, g_eff, residual, tuple(iters)


# ---------------------------------------------------------------------- Q1

def _q1_reference(d: int, h: float):
    """Shape-function gradients and weights at the 2^d Gauss points of a cube of side h."""
    gp = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)
    corners = list(itertools.product((0, 1), repeat=d))
    points = list(itertools.product(gp, repeat=d))
    dphi = np.zeros((len(points), len(corners), d))
    phi = np.zeros((len(points), len(corners)))
    for q, pt in enumerate(points):
        for a, c in enumerate(corners):
            f = [pt[k] if c[k] else 1.0 - pt[k] for k in range(d)]
            phi[q, a] = np.prod(f)
            for l in range(d):
                df = list(f)
                df[l] = (1.0 if c[l] else -1.0) / h
                dphi[q, a, l] = np.prod(df)
    weights = np.full(len(points), h ** d / len(points))
    return np.array(points), np.array(corners), phi, dphi, weights


class _PeriodicQ1:
    def __init__(self, grid: CellGrid):
        self.grid = grid
        res, d = grid.resolution, grid.dim
        self.h = 1.0 / res
        self.pts, self.corners, self.phi, self.dphi, self.w = _q1_reference(d, self.h)
        elem = np.stack(np.meshgrid(*([np.arange(res)] * d), indexing="ij"), axis=-1).reshape(-1, d)
        self.elem_origin = elem
        conn = []
        for c in self.corners:
            idx = np.mod(elem + c, res)
            conn.append(np.ravel_multi_index(tuple(idx.T), grid.shape))
        self.conn = np.stack(conn, axis=1)  # (E, 2^d)
        # Gauss points in cell coordinates, per element
        self.qpoints = (elem[:, None, :] + self.pts[None, :, :]) * self.h
        self.nnodes = res ** d

    def assemble(self, Bgb):
        """Stiffness from per-(element, qp) tensors Bgb[e, q, k, l, i, p] = (b_k^* g b_l)_{ip}."""
        n = Bgb.shape[-1]
        Ke = np.einsum("q,qck,qal,eqklip->eciap", self.w, self.dphi, self.dphi, Bgb, optimize=True)
        E, nl = self.conn.shape
        Ke = Ke.reshape(E, nl * n, nl * n)
        dofs = (self.conn[:, :, None] * n + np.arange(n)).reshape(E, nl * n)
        rows = np.repeat(dofs, nl * n, axis=1).ravel()
        cols = np.tile(dofs, (1, nl * n)).ravel()
        size = self.nnodes * n
        return sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(size, size))


def _bgb(b, G):
    return np.einsum("kip,...ij,ljq->...klpq", b.conj(), G, b, optimize=True)


def _solve_fe(g, b, grid, rtol, maxiter):
    if grid.resolution % 2:
        raise ValueError("cell grid resolution must be even")
    fe = _PeriodicQ1(grid)
    B = b.matrices.astype(complex)
    n, m, d = b.n, b.m, grid.dim
    G = g(fe.qpoints).astype(complex)  # (E, Q, m, m)
    K = fe.assemble(_bgb(B, G))

    # circulant preconditioner from the same assembly with the cell-mean coefficient
    gbar = cell_mean(g(grid.nodes), grid).astype(complex)
    Kref = fe.assemble(_bgb(B, np.broadcast_to(gbar, G.shape)))
    cols = np.stack([Kref[:, p].toarray().ravel() for p in range(n)], axis=-1)  # (N*n, n)
    stencil = cols.reshape(grid.shape + (n, n))  # [node, q, p]
    axes = tuple(range(d))
    symbol = np.fft.fftn(stencil, axes=axes)
    zero = (0,) * d
    symbol[zero] = np.eye(n)
    inv = np.linalg.inv(symbol)
    inv[zero] = 0.0

    def apply(x):
        return (K @ x.reshape(-1)).reshape(x.shape)

    def precond(r):
        rh = np.fft.fftn(r, axes=axes)
        z = np.fft.ifftn(np.einsum("...ij,...j->...i", inv, rh), axes=axes)
        return z - z.mean(axis=axes)

    lam_nodes = np.zeros(grid.shape + (n, m), dtype=complex)
    residual, iters = 0.0, []
    # rhs_(c,q) = -i sum_k int d_k phi_c (b_k^* g)_{qj}
    bg = np.einsum("kip,...ij->...kpj", B.conj(), G)  # (E, Q, d, n, m)
    for j in range(m):
        fe_rhs = -1j * np.einsum("q,qck,eqkp->ecp", fe.w, fe.dphi, bg[..., j], optimize=True)
        rhs = np.zeros((fe.nnodes, n), dtype=complex)
        np.add.at(rhs, fe.conn, fe_rhs)
        rhs = rhs.reshape(grid.shape + (n,))
        v, res, it = _pcg(apply, precond, rhs, rtol, maxiter, f"cell column {j}")
        lam_nodes[..., :, j] = v - v.mean(axis=axes)
        residual = max(residual, res)
        iters.append(it)

    # g0 by Gauss quadrature of g (b(D) Lambda + 1)
    vals = lam_nodes.reshape(fe.nnodes, n, m)[fe.conn]  # (E, 2^d, n, m)
    grad = np.einsum("qal,eapj->eqlpj", fe.dphi, vals, optimize=True)
    flux = -1j * np.einsum("lip,eqlpj->eqij", B, grad, optimize=True)
    integrand = np.einsum("eqik,eqkj->eqij", G, flux + np.eye(m))
    g_eff = np.einsum("q,eqij->ij", fe.w, integrand)

    # store Lambda on the midpoint nodes: average of the 2^d surrounding vertices
    lam = np.zeros_like(lam_nodes)
    for c in fe.corners:
        lam += np.roll(lam_nodes, shift=tuple(-int(x) for x in c), axis=axes)
    lam /= len(fe.corners)
    lam -= cell_mean(lam, grid)
    return lam, g_eff, residual, tuple(iters)


# ---------------------------------------------------------------- interface

def _dispatch(g, b, grid, method, rtol, maxiter):
    if method == "spectral":
        return _solve_spectral(g, b, grid, rtol, maxiter)
    if method == "fe":
        return _solve_fe(g, b, grid, rtol, maxiter)
    raise ValueError(f"unknown cell solver {method!r}")


def solve_cell_problem(g: PeriodicCoefficient, b: SymbolOperator, grid: CellGrid,
                       method: str = "auto", rtol: float | None = None,
                       maxiter: int = 2000, estimate_error: bool = True) -> CellSolution:
    """Solve the periodic cell problem and compute g0.

    ``method='auto'`` picks the spectral solver for smooth coefficients and
    Q1 elements for piecewise-constant ones.  With ``estimate_error`` the
    problem is also solved at half resolution and the change in g0 is
    reported as ``error_estimate``.
    """
    if grid.resolution % 2:
        raise ValueError(f"cell grid resolution must be even, got {grid.resolution}")
    if g.m != b.m:
        raise ValueError(f"coefficient is {g.m}x{g.m} but the symbol has m={b.m}")
    if grid.dim != b.d:
        raise ValueError(f"grid dimension {grid.dim} differs from symbol dimension {b.d}")
    if method == "auto":
        method = "fe" if g.smoothness == "piecewise-constant" else "spectral"
    if rtol is None:
        rtol = FE_RTOL if method == "fe" else SPECTRAL_RTOL

    lam, g_eff, residual, iters = _dispatch(g, b, grid, method, rtol, maxiter)
    err = float("nan")
    if estimate_error and grid.resolution >= 8 and grid.resolution % 4 == 0:
        coarse = CellGrid(grid.resolution // 2, grid.dim)
        _, g_coarse, _, _ = _dispatch(g, b, coarse, method, rtol, maxiter)
        err = float(np.abs(g_eff - g_coarse).max())
    log.debug("cell problem method=%s residual=%.3e iterations=%s", method, residual, iters)
    sol = CellSolution(grid, lam, g_eff, residual, method, iters, err)
    return replace(sol, g_eff=effective_matrix(g, sol, b))


def effective_matrix(g: PeriodicCoefficient, sol: CellSolution, b: SymbolOperator,
                     tol: float = 1e-8) -> np.ndarray:
    """Return the Hermitian part of g0, refusing inconsistent (non-Hermitian) results."""
    g0 = np.asarray(sol.g_eff)
    scale = max(1.0, np.abs(g0).max())
    dev = np.abs(g0 - g0.conj().T).max()
    if dev > tol * scale:
        raise SolverError(f"effective matrix is not Hermitian (deviation {dev:.2e}); "
                          "the cell solution is inconsistent")
    g0 = 0.5 * (g0 + g0.conj().T)
    if np.abs(g0.imag).max() <= tol * scale:
        g0 = g0.real
    if np.linalg.eigvalsh(g0).min() <= 0:
        raise SolverError("effective matrix is not positive definite")
    return g0


def bound_constant_M(lattice: Lattice, b: SymbolOperator, g: PeriodicCoefficient) -> float:
    """M = m^{1/2} (2 r0)^{-1} alpha0^{-1/2} ||g||^{1/2} ||g^{-1}||^{1/2}."""
    return float(np.sqrt(b.m) / (2 * lattice.dual_inradius) / np.sqrt(b.alpha0)
                 * np.sqrt(g.norm_g * g.norm_ginv))


@dataclass(frozen=True)
class CellBoundsReport:
    lambda_l2: float
    bound: float
    M: float
    mean_defect: float

    @property
    def ok(self) -> bool:
        return self.lambda_l2 <= self.bound


def check_cell_bounds(sol: CellSolution, lattice: Lattice, b: SymbolOperator,
                      g: PeriodicCoefficient) -> CellBoundsReport:
    M = bound_constant_M(lattice, b, g)
    bound = M * np.sqrt(lattice.cell_volume)
    means = np.abs(sol.column_means()).max() if sol.lam.size else 0.0
    return CellBoundsReport(sol.lambda_l2, float(bound), M, float(means))


# ----------------------------------------------------------- serialization

def save_cell_solution(sol: CellSolution, path) -> None:
    """Column text: header line ``d m n resolution``, node-major Lambda, then g0."""
    grid = sol.grid
    n, m = sol.n, sol.m
    lam = sol.lam.reshape(-1, n * m)
    with open(path, "w") as fh:
        fh.write(f"# cell-solution method={sol.method} residual={sol.residual:.6e}\n")
        fh.write(f"{grid.dim} {m} {n} {grid.resolution}\n")
        for row in lam:
            fh.write(" ".join(f"{z.real:.17g} {z.imag:.17g}" for z in row) + "\n")
        g0 = np.asarray(sol.g_eff, dtype=complex).ravel()
        fh.write("# g0\n")
        fh.write(" ".join(f"{z.real:.17g} {z.imag:.17g}" for z in g0) + "\n")


def load_cell_solution(path) -> CellSolution:
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    d, m, n, res = (int(t) for t in lines[0].split())
    grid = CellGrid(res, d)
    count = res ** d
    body = np.array([[float(t) for t in ln.split()] for ln in lines[1:1 + count]])
    lam = (body[:, 0::2] + 1j * body[:, 1::2]).reshape(grid.shape + (n, m))
    g0 = np.array([float(t) for t in lines[1 + count].split()])
    g0 = (g0[0::2] + 1j * g0[1::2]).reshape(m, m)
    if np.abs(g0.imag).max() == 0:
        g0 = g0.real
    return CellSolution(grid, lam, g0, float("nan"), "cached")
