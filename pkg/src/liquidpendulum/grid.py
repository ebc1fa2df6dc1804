"""Staggered (MAC) discretisation of the rectangular cavity.

Layout, all indices ``[i, j]`` with ``i`` along x1 and ``j`` along x2:

* u-faces ``(nx + 1, ny)`` at ``(x0 + i hx, y0 + (j + 1/2) hy)``
* v-faces ``(nx, ny + 1)`` at ``(x0 + (i + 1/2) hx, y0 + j hy)``
* pressure cells ``(nx, ny)`` at cell centres
* streamfunction on the interior corners ``(nx - 1, ny - 1)``

A velocity field is one flat vector: the raveled u-faces followed by the
raveled v-faces. Faces on the walls carry the normal component and get
half the interior quadrature weight, so that for an arbitrary L2 field the
face quadrature reproduces the cell-midpoint rule exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .model import CavityGeometry


class ProjectionError(RuntimeError):
    """The pressure Poisson solve failed to produce a divergence-free field."""

    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = residuals


class StaggeredGrid:
    def __init__(self, cavity: CavityGeometry):
        self.cavity = cavity
        self.nx, self.ny = cavity.nx, cavity.ny
        self.hx, self.hy = cavity.hx, cavity.hy
        x0, y0 = cavity.lower_left
        nx, ny, hx, hy = self.nx, self.ny, self.hx, self.hy
        xe = x0 + np.arange(nx + 1) * hx
        ye = y0 + np.arange(ny + 1) * hy
        xc = x0 + (np.arange(nx) + 0.5) * hx
        yc = y0 + (np.arange(ny) + 0.5) * hy
        self.xu, self.yu = np.meshgrid(xe, yc, indexing="ij")
        self.xv, self.yv = np.meshgrid(xc, ye, indexing="ij")
        self.xp, self.yp = np.meshgrid(xc, yc, indexing="ij")
        self.nu = (nx + 1) * ny
        self.nv = nx * (ny + 1)
        self.n_faces = self.nu + self.nv
        self.n_cells = nx * ny
        self.n_psi = (nx - 1) * (ny - 1)

        bu = np.zeros((nx + 1, ny), dtype=bool)
        bu[0, :] = bu[-1, :] = True
        bv = np.zeros((nx, ny + 1), dtype=bool)
        bv[:, 0] = bv[:, -1] = True
        self.boundary = np.concatenate([bu.ravel(), bv.ravel()])
        self.interior = ~self.boundary
        self.interior_index = np.flatnonzero(self.interior)
        self.weights = np.where(self.boundary, 0.5 * hx * hy, hx * hy)
        self.cell_area = hx * hy

    @property
    def id(self) -> str:
        return f"{self.nx}x{self.ny}"

    def split(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Views of a face vector as the u- and v-face arrays."""
        return v[: self.nu].reshape(self.nx + 1, self.ny), v[self.nu :].reshape(self.nx, self.ny + 1)

    def join(self, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        return np.concatenate([np.ravel(u), np.ravel(w)])

    def sample(self, fx, fy) -> np.ndarray:
        """Sample a vector field given as two callables ``f(x1, x2)`` on the faces."""
        return self.join(fx(self.xu, self.yu), fy(self.xv, self.yv))

    def rigid_field(self) -> np.ndarray:
        """``e3 x x = (-x2, x1)`` on every face, walls included."""
        return self.join(-self.yu, self.xv)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.dot(self.weights * a, b))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(self.inner(a, a)))

    def u_index(self, i, j):
        return np.asarray(i) * self.ny + np.asarray(j)

    def v_index(self, i, j):
        return self.nu + np.asarray(i) * (self.ny + 1) + np.asarray(j)

    def cell_index(self, i, j):
        return np.asarray(i) * self.ny + np.asarray(j)

    def psi_index(self, i, j):
        return (np.asarray(i) - 1) * (self.ny - 1) + (np.asarray(j) - 1)


def _coo(rows, cols, vals, shape):
    rows = np.concatenate([np.ravel(r) for r in rows])
    cols = np.concatenate([np.ravel(c) for c in cols])
    vals = np.concatenate([np.ravel(v) for v in vals])
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)


def _divergence(g: StaggeredGrid) -> sp.csr_matrix:
    nx, ny, hx, hy = g.nx, g.ny, g.hx, g.hy
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    c = g.cell_index(i, j)
    one = np.ones(c.shape)
    return _coo(
        [c, c, c, c],
        [g.u_index(i + 1, j), g.u_index(i, j), g.v_index(i, j + 1), g.v_index(i, j)],
        [one / hx, -one / hx, one / hy, -one / hy],
        (g.n_cells, g.n_faces),
    )


def _gradient(g: StaggeredGrid) -> sp.csr_matrix:
    """Pressure gradient onto interior faces; wall rows are empty."""
    nx, ny, hx, hy = g.nx, g.ny, g.hx, g.hy
    iu, ju = np.meshgrid(np.arange(1, nx), np.arange(ny), indexing="ij")
    iv, jv = np.meshgrid(np.arange(nx), np.arange(1, ny), indexing="ij")
    ou = np.ones(iu.shape)
    ov = np.ones(iv.shape)
    return _coo(
        [g.u_index(iu, ju)] * 2 + [g.v_index(iv, jv)] * 2,
        [g.cell_index(iu, ju), g.cell_index(iu - 1, ju), g.cell_index(iv, jv), g.cell_index(iv, jv - 1)],
        [ou / hx, -ou / hx, ov / hy, -ov / hy],
        (g.n_faces, g.n_cells),
    )


def _velocity_gradient(g: StaggeredGrid) -> tuple[sp.csr_matrix, np.ndarray]:
    """All first differences of both velocity components, with their weights.

    Tangential derivatives at a wall use the reflected ghost ``-u``, i.e. the
    one-sided difference ``2 u / h`` over the half cell next to the wall.
    """
    nx, ny, hx, hy = g.nx, g.ny, g.hx, g.hy
    area = hx * hy
    rows, cols, vals, weights = [], [], [], []
    n = 0

    # du/dx at cell centres
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    r = n + g.cell_index(i, j)
    rows += [r, r]
    cols += [g.u_index(i + 1, j), g.u_index(i, j)]
    vals += [np.full(r.shape, 1 / hx), np.full(r.shape, -1 / hx)]
    weights.append(np.full(r.size, area))
    n += nx * ny

    # du/dy at corners, ghost-reflected at the bottom and top walls
    i, j = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="ij")
    r = n + i * (ny + 1) + j
    w = np.full(i.shape, area)
    w[:, [0, -1]] *= 0.5
    w[[0, -1], :] *= 0.5
    inner = (j > 0) & (j < ny)
    rows += [r[inner], r[inner], r[:, 0], r[:, -1]]
    cols += [g.u_index(i[inner], j[inner]), g.u_index(i[inner], j[inner] - 1), g.u_index(i[:, 0], 0), g.u_index(i[:, -1], ny - 1)]
    vals += [np.full(inner.sum(), 1 / hy), np.full(inner.sum(), -1 / hy), np.full(nx + 1, 2 / hy), np.full(nx + 1, -2 / hy)]
    weights.append(w.ravel())
    n += (nx + 1) * (ny + 1)

    # dv/dy at cell centres
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    r = n + g.cell_index(i, j)
    rows += [r, r]
    cols += [g.v_index(i, j + 1), g.v_index(i, j)]
    vals += [np.full(r.shape, 1 / hy), np.full(r.shape, -1 / hy)]
    weights.append(np.full(r.size, area))
    n += nx * ny

    # dv/dx at corners, ghost-reflected at the side walls
    i, j = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="ij")
    r = n + i * (ny + 1) + j
    w = np.full(i.shape, area)
    w[:, [0, -1]] *= 0.5
    w[[0, -1], :] *= 0.5
    inner = (i > 0) & (i < nx)
    rows += [r[inner], r[inner], r[0, :], r[-1, :]]
    cols += [g.v_index(i[inner], j[inner]), g.v_index(i[inner] - 1, j[inner]), g.v_index(0, j[0, :]), g.v_index(nx - 1, j[-1, :])]
    vals += [np.full(inner.sum(), 1 / hx), np.full(inner.sum(), -1 / hx), np.full(ny + 1, 2 / hx), np.full(ny + 1, -2 / hx)]
    weights.append(w.ravel())
    n += (nx + 1) * (ny + 1)

    return _coo(rows, cols, vals, (n, g.n_faces)), np.concatenate(weights)


def _streamfunction(g: StaggeredGrid) -> sp.csr_matrix:
    """Discrete curl ``(d psi/dy, -d psi/dx)`` from interior corners to faces."""
    nx, ny, hx, hy = g.nx, g.ny, g.hx, g.hy
    rows, cols, vals = [], [], []
    i, j = np.meshgrid(np.arange(1, nx), np.arange(1, ny), indexing="ij")
    k = g.psi_index(i, j)
    one = np.ones(k.shape)
    # psi at corner (i, j) is the top of u-face (i, j-1) and the bottom of u-face (i, j)
    rows += [g.u_index(i, j - 1), g.u_index(i, j)]
    cols += [k, k]
    vals += [one / hy, -one / hy]
    # ... and the right end of v-face (i-1, j), the left end of v-face (i, j)
    rows += [g.v_index(i - 1, j), g.v_index(i, j)]
    cols += [k, k]
    vals += [-one / hx, one / hx]
    return _coo(rows, cols, vals, (g.n_faces, g.n_psi))


@dataclass
class DiscreteOperators:
    """Sparse operators of one grid. Immutable after :func:`build_operators`."""

    grid: StaggeredGrid
    div: sp.csr_matrix
    grad: sp.csr_matrix
    vel_grad: sp.csr_matrix
    vel_grad_weights: np.ndarray
    lap: sp.csr_matrix
    curl: sp.csr_matrix

    def __post_init__(self):
        g = self.grid
        A = (self.div @ self.grad).tolil()
        # pin the constant mode; compatible right-hand sides make the dropped row redundant
        A[0, :] = 0.0
        A[:, 0] = 0.0
        A[0, 0] = 1.0
        self.neumann = (self.div @ self.grad).tocsr()
        self._poisson = splu(A.tocsc())
        St = self.curl.T.tocsr()
        self._psi_gram = splu((St @ sp.diags(g.weights) @ self.curl).tocsc())
        self._stokes_stiffness = (self.curl.T @ self.vel_grad.T @ sp.diags(self.vel_grad_weights) @ self.vel_grad @ self.curl).tocsr()
        self._psi_mass = (St @ sp.diags(g.weights) @ self.curl).tocsr()

    # -- projection -----------------------------------------------------
    def project(self, v: np.ndarray, tol: float = 1e-10) -> np.ndarray:
        """Discrete Leray projection: ``w = v - grad q`` with ``div w = 0``.

        Normal wall components are removed (they are not part of the
        divergence-free, no-penetration space); tangential components are
        never stored on walls in the staggered layout.
        """
        g = self.grid
        v = np.asarray(v, dtype=float)
        w = np.where(g.boundary, 0.0, v)
        rhs = self.div @ w
        rhs[0] = 0.0
        q = self._poisson.solve(rhs)
        q -= q.mean()
        w = w - self.grad @ q
        residual = float(np.max(np.abs(self.div @ w))) if w.size else 0.0
        scale = max(float(np.max(np.abs(self.div @ np.where(g.boundary, 0.0, v)))), float(np.max(np.abs(v)) / min(g.hx, g.hy)), 1e-300)
        if not np.isfinite(residual) or residual > tol * scale:
            raise ProjectionError(f"Poisson solve left divergence {residual:.3e} (scale {scale:.3e})", [residual])
        return w

    def pressure_of(self, v: np.ndarray) -> np.ndarray:
        """Potential ``q`` with ``v - project(v) = grad q`` on interior faces."""
        g = self.grid
        w = np.where(g.boundary, 0.0, v)
        rhs = self.div @ w
        rhs[0] = 0.0
        q = self._poisson.solve(rhs)
        return q - q.mean()

    # -- streamfunction coordinates --------------------------------------
    def velocity_from_psi(self, psi: np.ndarray) -> np.ndarray:
        return self.curl @ psi

    def psi_from_velocity(self, v: np.ndarray) -> np.ndarray:
        """Least-squares streamfunction; exact for divergence-free no-slip ``v``."""
        return self._psi_gram.solve(self.curl.T @ (self.grid.weights * v))

    def stokes_pencil(self, mu: float = 1.0) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """``(mu * K, M)`` with ``psi' K psi = ||grad v||^2`` and ``psi' M psi = ||v||^2``."""
        return mu * self._stokes_stiffness, self._psi_mass

    # -- quadratures ----------------------------------------------------
    def grad_norm_sq(self, v: np.ndarray) -> float:
        d = self.vel_grad @ v
        return float(np.dot(self.vel_grad_weights * d, d))

    def quad_cross_moment(self, v: np.ndarray) -> float:
        """Face quadrature of ``integral (e3 x x) . v = integral (x1 v2 - x2 v1)``."""
        return self.grid.inner(self.grid.rigid_field(), v)

    def apply_lap(self, v: np.ndarray) -> np.ndarray:
        return self.lap @ v

    @cached_property
    def poincare_constant(self) -> float:
        """Smallest ``||grad v||^2 / ||v||^2`` over no-slip fields on this grid."""
        from scipy.sparse.linalg import eigsh

        g = self.grid
        idx = g.interior_index
        K = (self.vel_grad[:, idx].T @ sp.diags(self.vel_grad_weights) @ self.vel_grad[:, idx]).tocsc()
        M = sp.diags(g.weights[idx]).tocsc()
        vals = eigsh(K, k=1, M=M, sigma=0.0, which="LM", return_eigenvectors=False)
        return float(vals[0])

    # -- nonlinear terms -------------------------------------------------
    def advection(self, v: np.ndarray) -> np.ndarray:
        """``(v . grad) v`` in divergence form with centred fluxes; zero on walls."""
        g = self.grid
        hx, hy = g.hx, g.hy
        u, w = g.split(v)
        uc = 0.5 * (u[1:, :] + u[:-1, :])
        wc = 0.5 * (w[:, 1:] + w[:, :-1])
        # corner values; reflected ghosts make both vanish on the walls
        u_cor = np.zeros((g.nx + 1, g.ny + 1))
        u_cor[:, 1:-1] = 0.5 * (u[:, :-1] + u[:, 1:])
        w_cor = np.zeros((g.nx + 1, g.ny + 1))
        w_cor[1:-1, :] = 0.5 * (w[:-1, :] + w[1:, :])
        fuu = uc * uc
        fww = wc * wc
        fuw = u_cor * w_cor
        au = np.zeros_like(u)
        aw = np.zeros_like(w)
        au[1:-1, :] = (fuu[1:, :] - fuu[:-1, :]) / hx + (fuw[1:-1, 1:] - fuw[1:-1, :-1]) / hy
        aw[:, 1:-1] = (fuw[1:, 1:-1] - fuw[:-1, 1:-1]) / hx + (fww[:, 1:] - fww[:, :-1]) / hy
        return g.join(au, aw)

    def rotate(self, v: np.ndarray) -> np.ndarray:
        """``e3 x v = (-v2, v1)`` with four-point averages onto the other face family."""
        g = self.grid
        u, w = g.split(v)
        ru = np.zeros_like(u)
        rw = np.zeros_like(w)
        ru[1:-1, :] = -0.25 * (w[:-1, :-1] + w[1:, :-1] + w[:-1, 1:] + w[1:, 1:])
        rw[:, 1:-1] = 0.25 * (u[:-1, :-1] + u[1:, :-1] + u[:-1, 1:] + u[1:, 1:])
        return g.join(ru, rw)


def build_operators(grid: StaggeredGrid | CavityGeometry) -> DiscreteOperators:
    if isinstance(grid, CavityGeometry):
        grid = StaggeredGrid(grid)
    div = _divergence(grid)
    grad = _gradient(grid)
    vel_grad, vw = _velocity_gradient(grid)
    keep = sp.diags(grid.interior.astype(float))
    lap = -(keep @ sp.diags(1.0 / grid.weights) @ vel_grad.T @ sp.diags(vw) @ vel_grad @ keep).tocsr()
    lap.eliminate_zeros()
    return DiscreteOperators(
        grid=grid,
        div=div,
        grad=grad,
        vel_grad=vel_grad,
        vel_grad_weights=vw,
        lap=lap,
        curl=_streamfunction(grid),
    )
