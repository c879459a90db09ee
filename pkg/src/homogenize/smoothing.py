"""Steklov smoothing, extension of u0 beyond the domain, cutoffs and the first-order corrector.

Fields outside the mesh live on a uniform Cartesian box (:class:`BoxField`).
On the unit square the box nodes coincide with the mesh nodes, so
restriction back to the mesh is exact; on the disk it is bilinear
interpolation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell import CellSolution
from .dirichlet import BoundedDomain, GridField
from .lattice import Lattice, SymbolOperator


@dataclass
class BoxField:
    """Values (nx, ny, c) on the grid origin + h * (i, j)."""

    values: np.ndarray
    origin: np.ndarray
    h: float
    margin: float = 0.0
    norm_ratio: float | None = None

    def __post_init__(self):
        if self.values.ndim == 2:
            self.values = self.values[..., None]
        self.origin = np.asarray(self.origin, dtype=float)

    @property
    def shape(self):
        return self.values.shape[:2]

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.h * (np.array(self.shape) - 1)

    def coordinates(self) -> np.ndarray:
        ax = [self.origin[k] + self.h * np.arange(self.shape[k]) for k in range(2)]
        return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)

    def covers(self, lo, hi, tol=1e-9) -> bool:
        return bool(np.all(self.origin <= np.asarray(lo) + tol * self.h)
                    and np.all(self.upper >= np.asarray(hi) - tol * self.h))

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Bilinear interpolation at physical points."""
        t = (np.asarray(points) - self.origin) / self.h
        nx, ny = self.shape
        i = np.clip(np.floor(t).astype(np.int64), 0, [nx - 2, ny - 2])
        f = np.clip(t - i, 0.0, 1.0)
        fx, fy = f[..., 0:1], f[..., 1:2]
        ix, iy = i[..., 0], i[..., 1]
        V = self.values
        return ((1 - fx) * (1 - fy) * V[ix, iy] + fx * (1 - fy) * V[ix + 1, iy]
                + fx * fy * V[ix + 1, iy + 1] + (1 - fx) * fy * V[ix, iy + 1])

    def gradient(self) -> np.ndarray:
        """Central-difference gradient, shape (nx, ny, 2, c)."""
        return np.stack(np.gradient(self.values, self.h, axis=(0, 1)), axis=2)

    def h2_norm(self, mask=None) -> float:
        v = self.values
        h = self.h
        gx, gy = np.gradient(v, h, axis=(0, 1))
        gxx, gxy = np.gradient(gx, h, axis=(0, 1))
        gyy = np.gradient(gy, h, axis=1)
        dens = (np.abs(v) ** 2 + np.abs(gx) ** 2 + np.abs(gy) ** 2
                + np.abs(gxx) ** 2 + 2 * np.abs(gxy) ** 2 + np.abs(gyy) ** 2).sum(axis=-1)
        if mask is not None:
            dens = dens[mask]
        return float(np.sqrt(dens.sum() * h * h))


def _taper(s, start, stop):
    """C1 cubic cutoff: 1 for s <= start, 0 for s >= stop."""
    r = np.clip((s - start) / (stop - start), 0.0, 1.0)
    return 1.0 - 3 * r ** 2 + 2 * r ** 3


def _reflect_axis(U, axis, P):
    """Append P ghost layers on both ends of ``axis`` using 3 u(-s) - 2 u(-2s)."""
    U = np.moveaxis(U, axis, 0)
    N = U.shape[0] - 1
    k = np.arange(1, P + 1)
    left = 3 * U[k] - 2 * U[2 * k]
    right = 3 * U[N - k] - 2 * U[N - 2 * k]
    out = np.concatenate([left[::-1], U, right], axis=0)
    return np.moveaxis(out, 0, axis)


def extension_margin(eps_max: float, lattice: Lattice) -> float:
    return 2.0 * eps_max * (1.0 + lattice.cell_radius)


def extend(u0: GridField, margin: float) -> BoxField:
    """Extend a Dirichlet solution past the boundary by second-order reflection.

    Values and normal derivatives match across each face (square) or across
    the circle (disk, radial reflection about R).  The extension is tapered
    to zero over the outer half of the margin.
    """
    dom = u0.domain
    c = u0.ncomp
    if dom.shape == "unit-square":
        N = dom.grid_n
        h = 1.0 / N
        P = int(np.ceil(margin / h - 1e-9))
        if N < 4 or 2 * P > N:
            raise ValueError(f"mesh with {N} elements per side is too coarse to reflect "
                             f"{P} ghost layers (margin {margin:.4g})")
        U = u0.values.reshape(N + 1, N + 1, c)
        U = _reflect_axis(_reflect_axis(U, 0, P), 1, P)
        ax = (np.arange(-P, N + P + 1)) * h
        sx = np.maximum(np.maximum(-ax, ax - 1.0), 0.0)
        t = _taper(sx, 0.5 * P * h, P * h)
        U = U * (t[:, None] * t[None, :])[..., None]
        box = BoxField(U, (-P * h, -P * h), h, P * h)
        ratio_den = _square_h2(u0)
    elif dom.shape == "unit-disk":
        R = dom.radius
        if margin > 0.5 * R:
            raise ValueError(f"margin {margin:.4g} exceeds R/2 = {0.5 * R:.4g}")
        h = dom.mesh_h / np.sqrt(2.0)
        P = int(np.ceil((R + margin) / h))
        ax = np.arange(-P, P + 1) * h
        X = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
        r = np.hypot(X[..., 0], X[..., 1])
        s = r - R
        safe = np.where(r > 0, r, 1.0)[..., None]
        inside = s <= 0
        vals = np.zeros(X.shape[:2] + (c,), dtype=u0.values.dtype)
        vals[inside] = dom.interpolate(u0.values, X[inside])
        out = ~inside & (s <= margin)
        d = X[out] / safe[out]
        s_out = s[out][:, None]
        v1 = dom.interpolate(u0.values, d * (R - s_out))
        v2 = dom.interpolate(u0.values, d * (R - 2 * s_out))
        vals[out] = (3 * v1 - 2 * v2) * _taper(s_out, 0.5 * margin, margin)
        box = BoxField(vals, (-P * h, -P * h), h, margin)
        ratio_den = BoxField(np.where(inside[..., None], vals, 0), box.origin, h).h2_norm(inside)
    else:
        raise ValueError(f"no extension rule for {dom.shape!r}")
    num = box.h2_norm()
    box.norm_ratio = num / ratio_den if ratio_den > 0 else None
    return box


def _square_h2(u0: GridField) -> float:
    N = u0.domain.grid_n
    U = u0.values.reshape(N + 1, N + 1, -1)
    return BoxField(U, (0.0, 0.0), 1.0 / N).h2_norm()


def steklov_weights(width: float, h: float) -> np.ndarray:
    """Weights w_k with (1/width) int_{x-width}^{x} u = sum_k w_k u(x - k h), exact for piecewise-linear u."""
    ratio = width / h
    K = int(np.floor(ratio + 1e-12))
    f = ratio - K
    if f < 1e-12:
        f = 0.0
    w = np.zeros(K + 2)
    w[:K] += 0.5
    w[1:K + 1] += 0.5
    if f > 0:
        w[K] += f * (1 - 0.5 * f)
        w[K + 1] += 0.5 * f * f
    else:
        w = w[:K + 1]
    return w / ratio


def steklov_smooth(u: BoxField, eps: float, lattice: Lattice | None = None,
                   periodic: bool = False, cover=None) -> BoxField:
    """(S_eps u)(x) = |Omega|^{-1} int_Omega u(x - eps z) dz on a uniform box.

    For a rectangular cell [0, a1) x [0, a2) this is the average over
    [x1 - eps a1, x1] x [x2 - eps a2, x2], applied axis by axis.  Without
    ``periodic`` the output box loses the nodes whose window leaves the
    input; ``cover=(lo, hi)`` demands the output still contain that box.
    """
    lattice = lattice or Lattice.cubic(2)
    basis = lattice.basis
    if not np.allclose(basis, np.diag(np.diag(basis))):
        raise NotImplementedError("Steklov smoothing on the grid needs a rectangular cell")
    V = u.values
    origin = u.origin.copy()
    for axis in range(2):
        w = steklov_weights(eps * basis[axis, axis], u.h)
        if periodic:
            n = V.shape[axis]
            if len(w) > n:
                raise ValueError("smoothing window exceeds the periodic box")
            kern = np.zeros(n)
            kern[:len(w)] = w
            shape = [1] * V.ndim
            shape[axis] = n
            kernel_hat = np.fft.fft(kern).reshape(shape)
            V = np.fft.ifft(np.fft.fft(V, axis=axis) * kernel_hat, axis=axis)
            if not np.iscomplexobj(u.values):
                V = V.real
        else:
            kmax = len(w) - 1
            n = V.shape[axis]
            if kmax >= n:
                raise ValueError("padding insufficient: smoothing window exceeds the box")
            acc = 0
            for k, wk in enumerate(w):
                acc = acc + wk * np.take(V, np.arange(kmax - k, n - k), axis=axis)
            V = acc
            origin[axis] += kmax * u.h
    out = BoxField(V, origin, u.h)
    if cover is not None and not out.covers(*cover):
        raise ValueError(f"padding insufficient: smoothed field covers [{out.origin}, {out.upper}], "
                         f"need [{cover[0]}, {cover[1]}]")
    return out


def _maybe_real(values, tol=1e-12):
    if np.iscomplexobj(values):
        scale = np.abs(values).max() if values.size else 0.0
        if scale == 0 or np.abs(values.imag).max() <= tol * scale:
            return values.real.copy()
    return values


def _domain_bbox(dom: BoundedDomain):
    return dom.nodes.min(axis=0), dom.nodes.max(axis=0)


def smoothed_flux(eps: float, u0_ext: BoxField, b: SymbolOperator, domain: BoundedDomain,
                  lattice: Lattice | None = None) -> np.ndarray:
    """S_eps b(D) u0_ext sampled at the mesh nodes, shape (num_nodes, m)."""
    grad = u0_ext.gradient()  # (nx, ny, 2, n)
    flux = BoxField(b.apply_gradient(grad), u0_ext.origin, u0_ext.h)
    S = steklov_smooth(flux, eps, lattice, cover=_domain_bbox(domain))
    if domain.grid_n is not None:
        N = domain.grid_n
        i0 = int(round((0.0 - S.origin[0]) / S.h))
        j0 = int(round((0.0 - S.origin[1]) / S.h))
        vals = S.values[i0:i0 + N + 1, j0:j0 + N + 1]
        return vals.reshape(-1, vals.shape[-1])
    return S.sample(domain.nodes)


def corrector_field(eps: float, sol: CellSolution, u0_ext: BoxField, b: SymbolOperator,
                    domain: BoundedDomain, lattice: Lattice | None = None) -> GridField:
    """eps * Lambda(x/eps) S_eps b(D) u0_ext restricted to the mesh nodes."""
    if not (0 < eps <= domain.eps2 * (1 + 1e-12)):
        raise ValueError(f"eps = {eps:g} outside the admissible range 0 < eps <= eps2 = "
                         f"{domain.eps2:.6g}")
    S = smoothed_flux(eps, u0_ext, b, domain, lattice)
    lam = sol.interpolate(domain.nodes / eps)  # (N, n, m)
    corr = eps * np.einsum("knm,km->kn", lam, S)
    out = GridField(_maybe_real(corr), domain)
    out.info["smoothed_flux"] = S
    return out


@dataclass
class Cutoff:
    """``kappa`` is measured on the mesh (Q1 gradients, corners included);
    ``profile_kappa`` is eps * max |d theta / d dist| along the distance coordinate."""

    kind: str
    eps: float
    values: np.ndarray
    kappa: float
    profile_kappa: float


def _ramp(r):
    r = np.clip(r, 0.0, 1.0)
    return 1.0 - 3 * r ** 2 + 2 * r ** 3


def make_cutoff(eps: float, kind: str, domain: BoundedDomain) -> Cutoff:
    """Boundary cutoff as a cubic ramp of the distance to the boundary.

    ``theta``: 1 on the boundary, 0 for dist >= eps.
    ``theta_tilde``: 1 for dist <= eps, 0 for dist >= 2 eps.
    ``kappa`` is eps * max |grad theta| measured on the Q1 interpolant.
    """
    dist = domain.boundary_distance
    if kind == "theta":
        if not (0 < eps <= domain.eps1):
            raise ValueError(f"theta cutoff needs 0 < eps <= eps1 = {domain.eps1:g}, got {eps:g}")
        vals = _ramp(dist / eps)
    elif kind == "theta_tilde":
        if not (0 < 2 * eps <= domain.eps1):
            raise ValueError(f"theta_tilde cutoff needs 0 < 2 eps <= eps1 = {domain.eps1:g}, got {eps:g}")
        vals = _ramp(dist / eps - 1.0)
    else:
        raise ValueError(f"unknown cutoff kind {kind!r}")
    grads = domain.element_gradients(vals)
    kappa = eps * float(np.sqrt((grads[..., 0] ** 2).sum(axis=-1)).max())
    r = np.linspace(0.0, 1.0, 4097)
    profile_kappa = float(np.abs(np.diff(_ramp(r)) / np.diff(r)).max())
    return Cutoff(kind, eps, vals, kappa, profile_kappa)
