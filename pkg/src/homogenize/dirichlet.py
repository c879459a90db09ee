"""Dirichlet problems on a bounded domain with bilinear (Q1) elements.

Meshes are quadrilateral: a uniform tensor grid on the unit square, or a
five-block O-grid on the unit disk (isoparametric bilinear elements whose
boundary nodes lie on the circle).  Fields are stored node-major with one
row per mesh node.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, eigsh, spsolve

from .cell import SolverError
from .lattice import Lattice, SymbolOperator

log = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-10
MESH_RATIO = 16
_CHUNK = 200_000

_GP = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)
_CORNERS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])  # counterclockwise
_QREF = np.array([[s, t] for s in _GP for t in _GP])


def _ref_shape(q):
    s, t = q[..., 0], q[..., 1]
    phi = np.stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t], axis=-1)
    ds = np.stack([-(1 - t), 1 - t, t, -t], axis=-1)
    dt = np.stack([-(1 - s), -s, s, 1 - s], axis=-1)
    return phi, np.stack([ds, dt], axis=-1)  # (..., 4), (..., 4, 2)


_PHI, _DREF = _ref_shape(_QREF)  # (4 qp, 4 nodes), (4 qp, 4 nodes, 2)


class MeshResolutionError(ValueError):
    pass


@dataclass(eq=False)
class BoundedDomain:
    """Quadrilateral mesh of a bounded domain plus the admissible-epsilon thresholds."""

    shape: str
    nodes: np.ndarray
    elements: np.ndarray
    boundary: np.ndarray
    boundary_distance: np.ndarray
    mesh_h: float
    diameter: float
    eps1: float = 0.5
    lattice: Lattice = field(default_factory=lambda: Lattice.cubic(2))
    grid_n: int | None = None  # elements per side for the structured square
    radius: float | None = None
    logical_k: int | None = None

    def __post_init__(self):
        if not (0 < self.eps1 <= 1):
            raise ValueError("eps1 must lie in (0, 1]")

    # ----------------------------------------------------------- factories
    @classmethod
    def unit_square(cls, n_elements: int, eps1: float = 0.5) -> "BoundedDomain":
        n = int(n_elements)
        ax = np.arange(n + 1) / n
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
        elements = np.column_stack([
            idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
        ])
        dist = np.minimum(np.minimum(X, 1 - X), np.minimum(Y, 1 - Y)).ravel()
        boundary = np.zeros((n + 1, n + 1), dtype=bool)
        boundary[[0, -1], :] = True
        boundary[:, [0, -1]] = True
        boundary = boundary.ravel()
        dist[boundary] = 0.0
        return cls("unit-square", nodes, elements, boundary, dist, 1.0 / n, np.sqrt(2.0),
                   eps1, grid_n=n)

    @classmethod
    def unit_disk(cls, mesh_h: float, radius: float = 1.0, eps1: float = 0.5) -> "BoundedDomain":
        """Five-block O-grid: an inner square of half-width R/2 and four blended blocks."""
        K = max(2, int(np.ceil(radius / mesh_h)))
        while True:
            dom = cls._ogrid(K, radius, eps1)
            if dom.mesh_h <= mesh_h * (1 + 1e-12):
                return dom
            K = int(np.ceil(K * dom.mesh_h / mesh_h)) + 1

    @classmethod
    def _ogrid(cls, K, R, eps1):
        a, s_in = 0.5, 0.5 * R
        lg = np.arange(-K, K + 1) / K
        S, T = np.meshgrid(lg, lg, indexing="ij")
        P = np.stack([S, T], axis=-1)
        rho = np.maximum(np.abs(S), np.abs(T))
        norm = np.hypot(S, T)
        with np.errstate(invalid="ignore", divide="ignore"):
            sigma = np.where(rho > 0, norm / np.where(rho > 0, rho, 1), 1.0)
            direction = np.where(norm[..., None] > 0, P / np.where(norm > 0, norm, 1)[..., None], 0)
        lam = np.clip((rho - a) / (1 - a), 0, None)
        inner = P * (s_in / a)
        outer = direction * ((1 - lam) * sigma * s_in + lam * R)[..., None]
        X = np.where((rho <= a)[..., None], inner, outer)
        nodes = X.reshape(-1, 2)
        n1 = 2 * K + 1
        idx = np.arange(n1 * n1).reshape(n1, n1)
        elements = np.column_stack([
            idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
        ])
        boundary = (np.isclose(rho, 1.0)).ravel()
        r = np.hypot(nodes[:, 0], nodes[:, 1])
        nodes[boundary] *= (R / r[boundary])[:, None]
        dist = np.maximum(R - np.hypot(nodes[:, 0], nodes[:, 1]), 0.0)
        dist[boundary] = 0.0
        xe = nodes[elements]
        edges = np.concatenate([np.linalg.norm(xe[:, (i + 1) % 4] - xe[:, i], axis=-1) for i in range(4)])
        return cls("unit-disk", nodes, elements, boundary, dist, float(edges.max()), 2.0 * R,
                   eps1, radius=R, logical_k=K)

    @classmethod
    def build(cls, shape: str, mesh_h: float, eps1: float = 0.5) -> "BoundedDomain":
        if shape == "unit-square":
            return cls.unit_square(int(np.ceil(1.0 / mesh_h - 1e-9)), eps1)
        if shape == "unit-disk":
            return cls.unit_disk(mesh_h, eps1=eps1)
        raise ValueError(f"unknown domain shape {shape!r}")

    # ------------------------------------------------------- basic geometry
    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def eps2(self) -> float:
        return self.eps1 / (1.0 + self.lattice.cell_radius)

    @property
    def eps0(self) -> float:
        return 0.5 * self.eps2

    @property
    def boundary_length(self) -> float:
        return 4.0 if self.shape == "unit-square" else 2 * np.pi * self.radius

    @property
    def area(self) -> float:
        return 1.0 if self.shape == "unit-square" else np.pi * self.radius ** 2

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def element_chunks(self):
        """Yield (element slice, qp coordinates (C,4,2), weights (C,4), grads (C|1,4,4,2))."""
        E = self.elements.shape[0]
        for start in range(0, E, _CHUNK):
            sl = slice(start, min(E, start + _CHUNK))
            xe = self.nodes[self.elements[sl]]  # (C, 4, 2)
            xq = np.einsum("qa,cai->cqi", _PHI, xe)
            if self.grid_n is not None:
                h = 1.0 / self.grid_n
                w = np.full(xq.shape[:2], h * h / 4)
                grads = (_DREF / h)[None]
            else:
                J = np.einsum("qak,cai->cqik", _DREF, xe)  # dx_i / ds_k
                det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
                if np.any(det <= 0):
                    raise ValueError("mesh has inverted or degenerate elements")
                Jinv = np.linalg.inv(J)
                grads = np.einsum("qak,cqki->cqai", _DREF, Jinv)
                w = det / 4
            yield sl, xq, w, grads

    def element_gradients(self, values: np.ndarray) -> np.ndarray:
        """Gradients of the Q1 field at the Gauss points, shape (E, 4, 2, c)."""
        vals = values.reshape(self.num_nodes, -1)
        out = []
        for sl, _, _, grads in self.element_chunks():
            ve = vals[self.elements[sl]]
            out.append(np.einsum("cqal,cap->cqlp", np.broadcast_to(grads, (ve.shape[0],) + grads.shape[1:]), ve))
        return np.concatenate(out)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """dist(x, boundary) for points inside the exact domain."""
        x = np.asarray(points, dtype=float)
        if self.shape == "unit-square":
            return np.minimum(np.minimum(x[..., 0], 1 - x[..., 0]), np.minimum(x[..., 1], 1 - x[..., 1]))
        return np.maximum(self.radius - np.hypot(x[..., 0], x[..., 1]), 0.0)

    def layer_measure(self, width: float) -> float:
        """Quadrature of |{x : dist(x, boundary) < width}| at the Gauss points of a 4x refined sampling."""
        total = 0.0
        sub = (np.arange(4) + 0.5) / 4
        for sl, xq, w, grads in self.element_chunks():
            xe = self.nodes[self.elements[sl]]
            for s in sub:
                for t in sub:
                    phi, dref = _ref_shape(np.array([s, t]))
                    x = phi @ xe
                    jac = np.einsum("al,cai->cil", dref, xe)
                    det = np.abs(np.linalg.det(jac))
                    total += np.sum(det * (self.distance(x) < width)) / 16
        return float(total)

    def logical_coordinates(self, points: np.ndarray) -> np.ndarray:
        """Fractional node-grid indices of physical points (structured meshes only)."""
        pts = np.asarray(points, dtype=float)
        if self.grid_n is not None:
            return pts * self.grid_n
        R, a, s_in, K = self.radius, 0.5, 0.5 * self.radius, self.logical_k
        r = np.hypot(pts[..., 0], pts[..., 1])
        safe = np.where(r > 0, r, 1.0)
        direction = pts / safe[..., None]
        sigma = 1.0 / np.maximum(np.maximum(np.abs(direction[..., 0]), np.abs(direction[..., 1])), 1e-300)
        sigma = np.where(r > 0, sigma, 1.0)
        lam = np.clip((r - sigma * s_in) / (R - sigma * s_in), 0.0, 1.0)
        outer = direction * ((a + lam * (1 - a)) * sigma)[..., None]
        inner = pts * (a / s_in)
        is_inner = np.max(np.abs(pts), axis=-1) <= s_in
        p = np.where(is_inner[..., None], inner, outer)
        return (p + 1.0) * K

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Bilinear interpolation of a nodal field at physical points on the logical node grid."""
        n1 = (self.grid_n + 1) if self.grid_n is not None else (2 * self.logical_k + 1)
        V = np.asarray(values).reshape(n1, n1, -1)
        t = self.logical_coordinates(points)
        i = np.clip(np.floor(t).astype(np.int64), 0, n1 - 2)
        f = np.clip(t - i, 0.0, 1.0)
        fx, fy = f[..., 0:1], f[..., 1:2]
        ix, iy = i[..., 0], i[..., 1]
        return ((1 - fx) * (1 - fy) * V[ix, iy] + fx * (1 - fy) * V[ix + 1, iy]
                + fx * fy * V[ix + 1, iy + 1] + (1 - fx) * fy * V[ix, iy + 1])

    # ------------------------------------------------------------- matrices
    def _assemble(self, kernel, ncomp: int, dtype=float) -> sp.csr_matrix:
        size = self.num_nodes * ncomp
        A = sp.csr_matrix((size, size), dtype=dtype)
        loc = np.arange(ncomp)
        for sl, xq, w, grads in self.element_chunks():
            Ke = kernel(xq, w, grads)  # (C, 4, n, 4, n)
            C = Ke.shape[0]
            dofs = (self.elements[sl][:, :, None] * ncomp + loc).reshape(C, 4 * ncomp)
            nl = 4 * ncomp
            rows = np.repeat(dofs, nl, axis=1).ravel()
            cols = np.tile(dofs, (1, nl)).ravel()
            A = A + sp.csr_matrix((Ke.reshape(-1), (rows, cols)), shape=(size, size))
        return A

    @cached_property
    def mass(self) -> sp.csr_matrix:
        def kernel(xq, w, grads):
            return np.einsum("cq,qa,qb->cab", w, _PHI, _PHI)[:, :, None, :, None]
        return self._assemble(kernel, 1)

    @cached_property
    def laplace(self) -> sp.csr_matrix:
        def kernel(xq, w, grads):
            g = np.broadcast_to(grads, (w.shape[0],) + grads.shape[1:])
            return np.einsum("cq,cqal,cqbl->cab", w, g, g)[:, :, None, :, None]
        return self._assemble(kernel, 1)

    @cached_property
    def smallest_dirichlet_eigenvalue(self) -> float:
        """Smallest generalized eigenvalue of (laplace, mass) on H1_0."""
        I = self.interior
        K = self.laplace[I][:, I].tocsc()
        M = self.mass[I][:, I].tocsc()
        val = eigsh(K, k=1, M=M, sigma=0, which="LM", return_eigenvectors=False)
        return float(val[0])

    @property
    def poincare_constant(self) -> float:
        """c with ||eta||_L2 <= c ||eta||_H1 on the discrete H1_0, hence ||F||_{H^-1} <= c ||F||_L2."""
        return 1.0 / np.sqrt(1.0 + self.smallest_dirichlet_eigenvalue)

    # --------------------------------------------------------------- export
    def export(self, path, **fields) -> None:
        """Column text: x, y and the real (and imaginary, if any) parts of each field."""
        cols, names = [self.nodes[:, 0], self.nodes[:, 1]], ["x", "y"]
        for name, f in fields.items():
            v = f.values if isinstance(f, GridField) else np.asarray(f)
            v = v.reshape(self.num_nodes, -1)
            for p in range(v.shape[1]):
                cols.append(v[:, p].real)
                names.append(f"{name}{p}" if v.shape[1] > 1 else name)
                if np.iscomplexobj(v) and np.abs(v[:, p].imag).max() > 0:
                    cols.append(v[:, p].imag)
                    names.append(f"{name}{p}_im")
        np.savetxt(path, np.column_stack(cols), header=" ".join(names), fmt="%.12e")


@dataclass
class GridField:
    """Nodal field (num_nodes, ncomp) on a :class:`BoundedDomain`."""

    values: np.ndarray
    domain: BoundedDomain
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.domain.num_nodes:
            raise ValueError(f"field has {v.shape[0]} rows, mesh has {self.domain.num_nodes} nodes")
        self.values = v

    @property
    def ncomp(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_function(cls, domain, fn):
        return cls(np.asarray(fn(domain.nodes)), domain)

    def _combine(self, other, op):
        ov = other.values if isinstance(other, GridField) else other
        return GridField(op(self.values, ov), self.domain)

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __neg__(self):
        return GridField(-self.values, self.domain)

    def __mul__(self, c):
        return GridField(self.values * c, self.domain)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Norms:
    l2: float
    h1: float
    h2: float | None = None


def _quad(A, v):
    return float(np.real(np.sum(np.conj(v) * (A @ v))))


def norms(u: GridField, with_h2: bool = True) -> Norms:
    """Discrete L2, H1 (and, on the structured square, H2) norms of a Q1 field."""
    dom = u.domain
    v = u.values
    l2sq = _quad(dom.mass, v)
    dsq = _quad(dom.laplace, v)
    h2 = None
    if with_h2 and dom.grid_n is not None:
        n = dom.grid_n
        h = 1.0 / n
        U = v.reshape(n + 1, n + 1, -1)
        uxx = (U[2:, 1:-1] - 2 * U[1:-1, 1:-1] + U[:-2, 1:-1]) / h ** 2
        uyy = (U[1:-1, 2:] - 2 * U[1:-1, 1:-1] + U[1:-1, :-2]) / h ** 2
        uxy = (U[2:, 2:] - U[2:, :-2] - U[:-2, 2:] + U[:-2, :-2]) / (4 * h * h)
        second = np.sum(np.abs(uxx) ** 2 + 2 * np.abs(uxy) ** 2 + np.abs(uyy) ** 2) * h * h
        h2 = float(np.sqrt(max(l2sq, 0) + max(dsq, 0) + second))
    return Norms(float(np.sqrt(max(l2sq, 0.0))), float(np.sqrt(max(l2sq + dsq, 0.0))), h2)


def dual_norm(F: GridField) -> float:
    """Discrete H^{-1} norm sup (F, eta) / ||eta||_H1 over the discrete H1_0."""
    dom = F.domain
    I = dom.interior
    f = (dom.mass @ F.values)[I]
    A = (dom.mass + dom.laplace)[I][:, I].tocsc()
    z = spsolve(A, f)
    z = z.reshape(f.shape)
    return float(np.sqrt(np.real(np.sum(np.conj(f) * z))))


class VariableForm:
    """Sesquilinear form a[u, v] = int <g b(D) u, b(D) v> with oscillatory or constant g.

    ``coefficient`` maps physical points (..., 2) to (..., m, m).  For the
    oscillatory form pass ``eps`` so the mesh-resolution rule can be enforced.
    """

    def __init__(self, coefficient: Callable[[np.ndarray], np.ndarray], symbol: SymbolOperator,
                 norm_g: float, norm_ginv: float, eps: float | None = None, label: str = ""):
        self.coefficient = coefficient
        self.symbol = symbol
        self.norm_g = norm_g
        self.norm_ginv = norm_ginv
        self.eps = eps
        self.label = label
        self._cache = {}

    @classmethod
    def oscillatory(cls, g, symbol, eps):
        return cls(g.scaled(eps), symbol, g.norm_g, g.norm_ginv, eps, f"g(x/{eps:g})")

    @classmethod
    def constant(cls, matrix, symbol):
        c = np.asarray(matrix)
        ev = np.linalg.eigvalsh(c)

        def coef(x):
            return np.broadcast_to(c, x.shape[:-1] + c.shape)

        return cls(coef, symbol, float(ev.max()), float(1.0 / ev.min()), None, "g0")

    @property
    def c0(self) -> float:
        return self.symbol.alpha0 / self.norm_ginv

    @property
    def c1(self) -> float:
        return self.symbol.alpha1 * self.norm_g

    def check_resolution(self, domain: BoundedDomain) -> None:
        if self.eps is not None and domain.mesh_h > self.eps / MESH_RATIO * (1 + 1e-9):
            raise MeshResolutionError(
                f"mesh_h = {domain.mesh_h:.6g} does not resolve the oscillation: "
                f"need mesh_h <= eps/{MESH_RATIO} = {self.eps / MESH_RATIO:.6g}")

    def stiffness(self, domain: BoundedDomain) -> sp.csr_matrix:
        key = id(domain)
        if key not in self._cache:
            t0 = time.perf_counter()
            b = self.symbol.matrices
            n = self.symbol.n

            def kernel(xq, w, grads):
                G = self.coefficient(xq)
                bgb = np.einsum("kai,cqab,lbp->cqklip", b.conj(), G, b, optimize=True)
                g = np.broadcast_to(grads, (w.shape[0],) + grads.shape[1:])
                # rows: test node t / component i, columns: trial node s / component p
                return np.einsum("cq,cqtk,cqsl,cqklip->ctisp", w, g, g, bgb, optimize=True)

            probe = self.coefficient(domain.nodes[:1])
            dtype = np.result_type(probe, b, float)
            self._cache = {key: (domain._assemble(kernel, n, dtype), domain)}
            log.debug("assembled %s on %d nodes in %.2fs", self.label, domain.num_nodes,
                      time.perf_counter() - t0)
        return self._cache[key][0]

    def energy(self, domain, u: np.ndarray, v: np.ndarray | None = None) -> complex:
        """a[u, v] = v^H A u."""
        A = self.stiffness(domain)
        v = u if v is None else v
        return complex(np.sum(np.conj(v.ravel()) * (A @ u.ravel())))


# ------------------------------------------------------------------ solving

def solve_spd(A, rhs, precond: str = "amg", rtol: float = DEFAULT_RTOL, maxiter: int | None = None):
    """Preconditioned CG for a Hermitian positive definite sparse matrix."""
    rhs = np.asarray(rhs)
    rnorm = np.linalg.norm(rhs)
    if rnorm == 0:
        return np.zeros_like(rhs), {"iterations": 0, "residual": 0.0}
    size = A.shape[0]
    maxiter = maxiter or max(1000, 20 * int(np.sqrt(size)))
    if precond == "amg":
        import pyamg
        # pyamg draws its spectral-radius probe from the global RNG; pin it for reproducible runs
        state = np.random.get_state()
        np.random.seed(0)
        try:
            M = pyamg.smoothed_aggregation_solver(A.tocsr(), max_coarse=500).aspreconditioner(cycle="V")
        finally:
            np.random.set_state(state)
    elif precond == "jacobi":
        dinv = 1.0 / A.diagonal()
        M = LinearOperator(A.shape, matvec=lambda x: dinv * x, dtype=A.dtype)
    elif precond == "direct":
        x = spsolve(A.tocsc(), rhs)
        res = np.linalg.norm(A @ x - rhs) / rnorm
        return x, {"iterations": 0, "residual": float(res)}
    else:
        raise ValueError(f"unknown preconditioner {precond!r}")
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = cg(A, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    res = float(np.linalg.norm(A @ x - rhs) / rnorm)
    if info != 0 and res > 10 * rtol:
        raise SolverError(f"CG did not converge in {maxiter} iterations "
                          f"(relative residual {res:.3e})", res)
    return x, {"iterations": count[0], "residual": res}


def _solve_lifted(domain, A, F_values, boundary_values, n, precond, rtol):
    """Solve A u = M F on interior dofs with u = boundary_values on boundary nodes."""
    N = domain.num_nodes
    dof_b = (np.flatnonzero(domain.boundary)[:, None] * n + np.arange(n)).ravel()
    dof_i = (domain.interior[:, None] * n + np.arange(n)).ravel()
    dtype = np.result_type(A.dtype, F_values.dtype, boundary_values.dtype)
    u = np.zeros(N * n, dtype=dtype)
    ub = boundary_values.reshape(N, n)[domain.boundary].ravel()
    u[dof_b] = ub
    rhs = np.zeros(N * n, dtype=dtype)
    if np.any(F_values):
        rhs += sp.kron(domain.mass, sp.identity(n), format="csr") @ F_values.reshape(-1) if n > 1 \
            else domain.mass @ F_values.reshape(-1)
    rhs = rhs[dof_i]
    if np.any(ub):
        rhs = rhs - A[dof_i][:, dof_b] @ ub
    Aii = A[dof_i][:, dof_i]
    t0 = time.perf_counter()
    x, info = solve_spd(Aii, rhs, precond, rtol)
    info["seconds"] = time.perf_counter() - t0
    u[dof_i] = x
    return u.reshape(N, n), info


def _as_field(F, domain, n):
    if isinstance(F, GridField):
        return F.values
    if callable(F):
        return np.asarray(F(domain.nodes)).reshape(domain.num_nodes, n)
    return np.asarray(F).reshape(domain.num_nodes, n)


def solve_dirichlet(domain: BoundedDomain, form: VariableForm, F, precond: str = "amg",
                    rtol: float = DEFAULT_RTOL) -> GridField:
    """Discrete weak solution of b(D)^* g b(D) u = F with u = 0 on the boundary."""
    form.check_resolution(domain)
    n = form.symbol.n
    Fv = _as_field(F, domain, n)
    A = form.stiffness(domain)
    u, info = _solve_lifted(domain, A, Fv, np.zeros_like(Fv), n, precond, rtol)
    log.info("solve form=%s nodes=%d iterations=%d residual=%.3e seconds=%.2f",
             form.label, domain.num_nodes, info["iterations"], info["residual"], info["seconds"])
    return GridField(u, domain, info)


def solve_homogenized(domain: BoundedDomain, g_eff, symbol: SymbolOperator, F,
                      precond: str = "amg", rtol: float = DEFAULT_RTOL) -> GridField:
    """Solve the constant-coefficient problem and record ||u0||_H2 / ||F||_L2."""
    g_eff = np.asarray(g_eff)
    if np.linalg.eigvalsh(0.5 * (g_eff + g_eff.conj().T)).min() <= 0:
        raise ValueError("effective matrix must be positive definite")
    form = VariableForm.constant(g_eff, symbol)
    u0 = solve_dirichlet(domain, form, F, precond, rtol)
    Fv = GridField(_as_field(F, domain, symbol.n), domain)
    nF = norms(Fv, with_h2=False).l2
    nu = norms(u0)
    u0.info["h2"] = nu.h2
    u0.info["h2_ratio"] = (nu.h2 / nF) if (nu.h2 is not None and nF > 0) else None
    return u0


def solve_discrepancy(domain: BoundedDomain, form: VariableForm, boundary_data,
                      precond: str = "amg", rtol: float = DEFAULT_RTOL) -> GridField:
    """Solve A_eps w = 0 with w = boundary_data on the boundary (nodal lifting)."""
    form.check_resolution(domain)
    n = form.symbol.n
    data = _as_field(boundary_data, domain, n)
    A = form.stiffness(domain)
    w, info = _solve_lifted(domain, A, np.zeros_like(data), data, n, precond, rtol)
    return GridField(w, domain, info)
