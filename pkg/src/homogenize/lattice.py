"""Lattice geometry, the symbol b(D), periodic coefficients and the cell grid.

Conventions
-----------
``D = -i grad`` so that ``b(D) u = -i sum_l b_l d_l u``.  The dual lattice is
taken without the 2*pi factor, ``{k : <k, a> in Z for all a in Gamma}``; for
``Gamma = Z^d`` this gives ``r0 = 1/2``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize


class RankConditionError(ValueError):
    pass


@dataclass(frozen=True)
class Lattice:
    basis: np.ndarray  # rows are the lattice vectors

    def __post_init__(self):
        basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if basis.shape[0] != basis.shape[1]:
            raise ValueError(f"basis must be square, got shape {basis.shape}")
        if abs(np.linalg.det(basis)) < 1e-14:
            raise ValueError("lattice basis vectors are linearly dependent")
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def cubic(cls, d: int) -> "Lattice":
        return cls(np.eye(d))

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def cell_volume(self) -> float:
        return float(abs(np.linalg.det(self.basis)))

    @property
    def is_cubic(self) -> bool:
        return bool(np.array_equal(self.basis, np.eye(self.dim)))

    @property
    def dual_inradius(self) -> float:
        """Radius r0 of the ball inscribed in the closed central Brillouin zone."""
        if self.is_cubic:
            return 0.5
        dual = np.linalg.inv(self.basis).T
        shortest = np.inf
        for c in itertools.product(range(-3, 4), repeat=self.dim):
            if any(c):
                shortest = min(shortest, np.linalg.norm(np.asarray(c) @ dual))
        return 0.5 * shortest

    @property
    def cell_radius(self) -> float:
        """r1 = diam(Omega) / 2 for the parallelepiped cell."""
        if self.is_cubic:
            return 0.5 * np.sqrt(self.dim)
        diam = max(
            np.linalg.norm(np.asarray(s) @ self.basis)
            for s in itertools.product((-1, 0, 1), repeat=self.dim)
        )
        return 0.5 * diam


def symbol_at(matrices: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """b(xi) = sum_l b_l xi_l for a stack of points ``xi`` of shape (..., d)."""
    return np.einsum("...l,lmn->...mn", xi, matrices)


def _extreme_eigs(matrices, theta):
    bt = symbol_at(matrices, theta)
    gram = np.einsum("...mi,...mj->...ij", bt.conj(), bt)
    ev = np.linalg.eigvalsh(gram)
    return ev[..., 0], ev[..., -1]


def _fibonacci_sphere(count: int) -> np.ndarray:
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    phi = np.pi * (1.0 + 5 ** 0.5) * i
    r = np.sqrt(1.0 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def alpha_bounds(matrices, tol: float = 1e-10) -> tuple[float, float]:
    """Constants alpha0, alpha1 with alpha0 <= b(theta)^* b(theta) <= alpha1 on the sphere.

    The quadratic form is sampled on the unit sphere and the extreme samples
    are refined locally (golden section in 2-D, Nelder-Mead on spherical
    angles in 3-D).
    """
    b = np.asarray(matrices)
    if b.ndim != 3 or b.shape[0] == 0:
        raise ValueError("need a nonempty stack of m x n matrices")
    d, m, n = b.shape
    if m < n:
        raise ValueError(f"symbol needs m >= n, got m={m}, n={n}")

    if d == 1:
        lo, hi = _extreme_eigs(b, np.array([[1.0]]))
        alpha0, alpha1 = float(lo[0]), float(hi[0])
    elif d == 2:
        t = np.linspace(0.0, np.pi, 4096, endpoint=False)
        lo, hi = _extreme_eigs(b, np.column_stack([np.cos(t), np.sin(t)]))

        def f_lo(s):
            return _extreme_eigs(b, np.array([np.cos(s), np.sin(s)]))[0]

        def f_hi(s):
            return -_extreme_eigs(b, np.array([np.cos(s), np.sin(s)]))[1]

        step = t[1] - t[0]
        i0, i1 = int(np.argmin(lo)), int(np.argmax(hi))
        r0 = optimize.minimize_scalar(
            f_lo, bracket=(t[i0] - step, t[i0], t[i0] + step), method="golden"
        )
        r1 = optimize.minimize_scalar(
            f_hi, bracket=(t[i1] - step, t[i1], t[i1] + step), method="golden"
        )
        alpha0 = float(min(lo.min(), r0.fun))
        alpha1 = float(max(hi.max(), -r1.fun))
    elif d == 3:
        pts = _fibonacci_sphere(16384)
        lo, hi = _extreme_eigs(b, pts)

        def angles(p):
            return np.array([np.arccos(np.clip(p[2], -1, 1)), np.arctan2(p[1], p[0])])

        def point(a):
            return np.array(
                [np.sin(a[0]) * np.cos(a[1]), np.sin(a[0]) * np.sin(a[1]), np.cos(a[0])]
            )

        r0 = optimize.minimize(
            lambda a: _extreme_eigs(b, point(a))[0],
            angles(pts[np.argmin(lo)]), method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14},
        )
        r1 = optimize.minimize(
            lambda a: -_extreme_eigs(b, point(a))[1],
            angles(pts[np.argmax(hi)]), method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14},
        )
        alpha0 = float(min(lo.min(), r0.fun))
        alpha1 = float(max(hi.max(), -r1.fun))
    else:
        raise NotImplementedError("sphere sampling implemented for d <= 3")

    if alpha0 <= tol:
        raise RankConditionError(
            "rank condition violated: rank b(xi) < n for some xi != 0 "
            f"(alpha0 = {alpha0:.3e})"
        )
    return alpha0, alpha1


@dataclass(frozen=True)
class SymbolOperator:
    """First-order operator b(D) = sum_l b_l D_l with (m x n) matrices b_l."""

    matrices: np.ndarray
    alpha0: float = field(init=False)
    alpha1: float = field(init=False)

    def __post_init__(self):
        b = np.array(self.matrices)
        if not np.iscomplexobj(b):
            b = b.astype(float)
        b.setflags(write=False)
        object.__setattr__(self, "matrices", b)
        a0, a1 = alpha_bounds(b)
        object.__setattr__(self, "alpha0", a0)
        object.__setattr__(self, "alpha1", a1)

    @classmethod
    def gradient(cls, d: int, weights: Sequence[float] | None = None) -> "SymbolOperator":
        """b(D) = D (n = 1, m = d), optionally with b_l = w_l e_l."""
        w = np.ones(d) if weights is None else np.asarray(weights, dtype=float)
        mats = np.zeros((d, d, 1))
        for l in range(d):
            mats[l, l, 0] = w[l]
        return cls(mats)

    @property
    def d(self) -> int:
        return self.matrices.shape[0]

    @property
    def m(self) -> int:
        return self.matrices.shape[1]

    @property
    def n(self) -> int:
        return self.matrices.shape[2]

    def __call__(self, xi):
        return symbol_at(self.matrices, np.asarray(xi))

    def apply_gradient(self, grad: np.ndarray) -> np.ndarray:
        """b(D)u from the gradient array ``grad[..., l, p] = d_l u_p``."""
        return -1j * np.einsum("lmp,...lp->...m", self.matrices, grad)


@dataclass(frozen=True)
class PeriodicCoefficient:
    """Gamma-periodic Hermitian matrix field g(x) with its L-infinity bounds.

    ``evaluator`` maps cell coordinates of shape (..., d) to (..., m, m).
    ``norm_g`` is sup ||g(x)|| and ``norm_ginv`` is sup ||g(x)^{-1}||.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    m: int
    norm_g: float
    norm_ginv: float
    smoothness: str = "smooth"
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.evaluator(np.mod(x, 1.0))

    def scaled(self, eps: float) -> Callable[[np.ndarray], np.ndarray]:
        """x -> g(x / eps)."""
        return lambda x: self(np.asarray(x) / eps)

    @property
    def is_constant(self) -> bool:
        return self.name == "constant"

    def mean(self, grid: "CellGrid") -> np.ndarray:
        return cell_mean(self(grid.nodes), grid)

    def check_admissible(self, grid: "CellGrid", tol: float = 1e-10) -> None:
        vals = self(grid.nodes).reshape(-1, self.m, self.m)
        herm = np.abs(vals - np.conj(np.swapaxes(vals, -1, -2))).max()
        if herm > tol * max(1.0, self.norm_g):
            raise ValueError(f"g(x) is not Hermitian (deviation {herm:.2e})")
        ev = np.linalg.eigvalsh(vals)
        lo, hi = 1.0 / self.norm_ginv, self.norm_g
        if ev.min() < lo * (1 - tol) or ev.max() > hi * (1 + tol):
            raise ValueError(
                f"eigenvalues of g in [{ev.min():.6g}, {ev.max():.6g}] "
                f"outside [{lo:.6g}, {hi:.6g}]"
            )


def constant_coefficient(matrix) -> PeriodicCoefficient:
    c = np.array(matrix)
    if c.ndim == 0:
        c = c.reshape(1, 1)
    ev = np.linalg.eigvalsh(c)

    def ev_fn(x, c=c):
        return np.broadcast_to(c, x.shape[:-1] + c.shape).copy()

    return PeriodicCoefficient(ev_fn, c.shape[0], float(ev.max()), float(1 / ev.min()),
                               "smooth", "constant", {"matrix": c})


def layered_coefficient(m: int, mean: float = 2.0, amplitude: float = 1.0,
                        axis: int = 0) -> PeriodicCoefficient:
    """g(x) = (mean + amplitude * sin(2 pi x_axis)) * I_m."""
    if abs(amplitude) >= mean:
        raise ValueError("layered coefficient needs |amplitude| < mean")
    eye = np.eye(m)

    def ev_fn(x):
        s = mean + amplitude * np.sin(2 * np.pi * x[..., axis])
        return s[..., None, None] * eye

    return PeriodicCoefficient(ev_fn, m, mean + abs(amplitude), 1.0 / (mean - abs(amplitude)),
                               "smooth", "layered",
                               {"mean": mean, "amplitude": amplitude, "axis": axis})


def product_sinusoid_coefficient(m: int, mean: float = 2.0,
                                 amplitude: float = 1.0) -> PeriodicCoefficient:
    """g(x) = (mean + amplitude * prod_k cos(2 pi x_k)) * I_m."""
    if abs(amplitude) >= mean:
        raise ValueError("product-sinusoid coefficient needs |amplitude| < mean")
    eye = np.eye(m)

    def ev_fn(x):
        s = mean + amplitude * np.prod(np.cos(2 * np.pi * x), axis=-1)
        return s[..., None, None] * eye

    return PeriodicCoefficient(ev_fn, m, mean + abs(amplitude), 1.0 / (mean - abs(amplitude)),
                               "smooth", "product-sinusoid",
                               {"mean": mean, "amplitude": amplitude})


def checkerboard_coefficient(m: int, low: float = 1.0, high: float = 4.0) -> PeriodicCoefficient:
    """Two-phase checkerboard: ``low`` where sum(floor(2 x_k)) is even, ``high`` otherwise."""
    if min(low, high) <= 0:
        raise ValueError("checkerboard values must be positive")
    eye = np.eye(m)

    def ev_fn(x):
        parity = np.sum(np.floor(2 * x).astype(int), axis=-1) % 2
        s = np.where(parity == 0, low, high)
        return s[..., None, None] * eye

    return PeriodicCoefficient(ev_fn, m, max(low, high), 1.0 / min(low, high),
                               "piecewise-constant", "checkerboard",
                               {"low": low, "high": high})


def tabulated_coefficient(path, d: int = 2) -> PeriodicCoefficient:
    """Piecewise-constant coefficient from a column-text table.

    Each row holds a node index followed by the m*m entries of g at that
    cell-grid node (row-major).  Nodes are ordered as in :class:`CellGrid`.
    """
    table = np.atleast_2d(np.loadtxt(path, comments="#", dtype=complex))
    if np.abs(table.imag).max() == 0:
        table = table.real
    idx = table[:, 0].real.astype(int)
    if not np.array_equal(np.sort(idx), np.arange(len(idx))):
        raise ValueError(f"{path}: node indices must be 0..{len(idx) - 1}")
    ncols = table.shape[1] - 1
    m = int(round(ncols ** 0.5))
    if m * m != ncols:
        raise ValueError(f"{path}: {ncols} entry columns is not a square number")
    res = int(round(len(idx) ** (1.0 / d)))
    if res ** d != len(idx):
        raise ValueError(f"{path}: {len(idx)} rows do not form a {d}-D grid")
    vals = np.empty((len(idx), m, m), dtype=table.dtype)
    vals[idx] = table[:, 1:].reshape(-1, m, m)
    vals = vals.reshape((res,) * d + (m, m))
    ev = np.linalg.eigvalsh(vals.reshape(-1, m, m))

    def ev_fn(x):
        k = np.minimum((x * res).astype(int), res - 1)
        return vals[tuple(np.moveaxis(k, -1, 0))]

    return PeriodicCoefficient(ev_fn, m, float(ev.max()), float(1 / ev.min()),
                               "piecewise-constant", "tabulated",
                               {"path": str(path), "resolution": res})


@dataclass(frozen=True)
class CellGrid:
    """Uniform midpoint grid on the unit cell [0,1)^d with N points per axis."""

    resolution: int
    dim: int = 2

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError("empty cell grid")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution,) * self.dim

    @property
    def spacing(self) -> float:
        return 1.0 / self.resolution

    @property
    def axis(self) -> np.ndarray:
        return (np.arange(self.resolution) + 0.5) / self.resolution

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates of shape (N, ..., N, d)."""
        return np.stack(np.meshgrid(*([self.axis] * self.dim), indexing="ij"), axis=-1)

    @property
    def quadrature_weights(self) -> np.ndarray:
        return np.full(self.shape, self.spacing ** self.dim)


def cell_mean(f: np.ndarray, grid: CellGrid) -> np.ndarray:
    """Midpoint-rule mean |Omega|^{-1} sum w f over the cell.

    ``f`` has the grid shape as leading axes and arbitrary trailing axes.
    """
    f = np.asarray(f)
    if f.size == 0:
        raise ValueError("cell_mean of an empty field")
    if f.shape[: grid.dim] != grid.shape:
        raise ValueError(f"field shape {f.shape} does not start with grid shape {grid.shape}")
    w = grid.quadrature_weights
    return np.tensordot(w, f, axes=grid.dim) / w.sum()
