"""Spectrum of the linearised operator, hypotheses H1-H3, spectral projections
and fractional powers of the Stokes operator.

The linearisation ``du/dt + L u = 0`` is represented by the pencil
``M x' + K x = 0`` over the coordinates ``(psi, omega, gamma1, gamma2)``, so
``L = M^{-1} K``. Small problems are solved densely; larger ones use
shift-invert Arnoldi on the pencil.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs, splu, svds

TOL_RANK = 1e-8
TOL_IMAG = 1e-6
DENSE_LIMIT = 2000
ARNOLDI_SHIFT = -1e-3


class SpectralError(RuntimeError):
    pass


class HypothesisError(SpectralError):
    """A structural hypothesis (kernel/range splitting) does not hold."""


# -- fractional powers -------------------------------------------------------------


def frac_power(A: np.ndarray, alpha: float, W: np.ndarray | None = None, *, tol: float = 1e-12) -> np.ndarray:
    """``A^alpha`` for ``A`` self-adjoint and positive definite in the ``W`` inner product.

    ``W`` defaults to the identity. Raises ``ValueError`` when ``W A`` is
    not symmetric or ``A`` has a non-positive eigenvalue.
    """
    A = np.asarray(A, dtype=float)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    n = A.shape[0]
    W = np.eye(n) if W is None else np.asarray(W, dtype=float)
    WA = W @ A
    scale = max(np.max(np.abs(WA)), 1e-300)
    if np.max(np.abs(WA - WA.T)) > tol * scale * n:
        raise ValueError("matrix is not self-adjoint in the given inner product")
    lam, phi = sla.eigh(0.5 * (WA + WA.T), W)
    if lam[0] <= 0:
        raise ValueError(f"matrix is not positive definite (smallest eigenvalue {lam[0]:.3e})")
    # phi' W phi = I, hence A^alpha = phi diag(lam^alpha) phi' W
    return (phi * lam**alpha) @ (phi.T @ W)


class StokesBasis:
    """Eigenpairs of the discrete Stokes operator ``A0 = -mu P Delta`` in
    streamfunction coordinates, orthonormal in the L2 quadrature."""

    def __init__(self, eigenvalues: np.ndarray, modes: np.ndarray, mass: sp.csr_matrix):
        self.eigenvalues = eigenvalues
        self.modes = modes
        self.mass = mass

    @classmethod
    def from_operators(cls, ops, mu: float) -> "StokesBasis":
        K, M = ops.stokes_pencil(mu)
        lam, phi = sla.eigh(K.toarray(), M.toarray())
        # fix eigenvector signs so repeated builds are bit-identical
        idx = np.argmax(np.abs(phi), axis=0)
        phi *= np.sign(phi[idx, np.arange(phi.shape[1])])
        return cls(lam, phi, M)

    def coefficients(self, psi: np.ndarray) -> np.ndarray:
        return self.modes.T @ (self.mass @ psi)

    def power_norm_psi(self, psi: np.ndarray, alpha: float) -> float:
        """``||A0^alpha v||`` for ``v = curl psi``."""
        c = self.coefficients(psi)
        return float(np.sqrt(np.sum(self.eigenvalues ** (2 * alpha) * c * c)))

    def power_psi(self, psi: np.ndarray, alpha: float) -> np.ndarray:
        """Streamfunction of ``A0^alpha v``."""
        return self.modes @ (self.eigenvalues**alpha * self.coefficients(psi))

    def matrix_power(self, alpha: float) -> np.ndarray:
        """Dense ``A0^alpha`` acting on streamfunction coordinates."""
        return (self.modes * self.eigenvalues**alpha) @ (self.modes.T @ self.mass.toarray())

    def mode_psi(self, k: int) -> np.ndarray:
        return self.modes[:, k]


def alpha_norm(u, alpha: float, system) -> float:
    """``||A0^alpha v|| + |omega| + |gamma|`` of a state or H-vector."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    psi = system.ops.psi_from_velocity(np.asarray(u.v, dtype=float))
    return system.stokes.power_norm_psi(psi, alpha) + abs(u.omega) + float(np.linalg.norm(u.gamma))


def kato_diagnostic(v1: np.ndarray, v2: np.ndarray, alpha: float, system) -> float | None:
    """Sampled ratio for the quadratic bound on ``P(v1.grad v1 - v2.grad v2)``.

    Returns ``None`` when the denominator vanishes (the sample is skipped).
    """
    if not 0.5 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [1/2, 1], got {alpha}")
    ops, basis = system.ops, system.stokes
    num = system.grid.norm(ops.project(ops.advection(v1) - ops.advection(v2)))
    p1, p2 = ops.psi_from_velocity(v1), ops.psi_from_velocity(v2)
    den = (basis.power_norm_psi(p1, alpha) + basis.power_norm_psi(p2, alpha)) * basis.power_norm_psi(p1 - p2, alpha)
    if den == 0.0:
        return None
    return num / den


# -- the linearised operator -----------------------------------------------------------


@dataclass
class ReducedOperator:
    """``L = M^{-1} K`` over reduced coordinates, with the H-inner-product Gram matrix.

    ``labels`` names the trailing rigid coordinates; ``kernel_vector`` is the
    analytically known null vector ``(0, 0, e1)`` when available.
    """

    K: sp.csr_matrix
    M: sp.csr_matrix
    gram: sp.csr_matrix
    labels: tuple[str, ...]
    grid_id: str = ""
    xi: int | None = None
    kernel_vector: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def dense(self) -> np.ndarray:
        return np.linalg.solve(self.M.toarray(), self.K.toarray())

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self._mlu.solve(self.K @ x)

    @property
    def _mlu(self):
        if not hasattr(self, "_mlu_cache"):
            self._mlu_cache = splu(self.M.tocsc())
        return self._mlu_cache


def assemble_L(system) -> ReducedOperator:
    """Linearisation at the rest state of ``system`` in reduced coordinates.

    With zero density the liquid carries no inertia; it is slaved to the
    body (``v = 0``) and the reduction keeps only ``(omega, gamma1, gamma2)``.
    """
    p = system.params
    if p.rho == 0:
        M = sp.csr_matrix(np.diag([p.c_total, 1.0, 1.0]))
        K = sp.csr_matrix(np.array([[0.0, 0.0, -p.beta_sq], [0.0, 0.0, 0.0], [float(system.xi), 0.0, 0.0]]))
        gram = sp.identity(3, format="csr")
        kv = np.array([0.0, 1.0, 0.0])
        return ReducedOperator(K, M, gram, ("omega", "gamma1", "gamma2"), system.grid.id, system.xi, kv)
    M = system.mass_matrix()
    K = system.stiffness_matrix()
    if M.shape[0] != system.n_psi + 3:
        raise SpectralError(f"reduced basis has dimension {M.shape[0]}, expected {system.n_psi + 3}")
    kv = np.zeros(M.shape[0])
    kv[system.n_psi + 1] = 1.0
    return ReducedOperator(K, M, system.h_gram(), ("omega", "gamma1", "gamma2"), system.grid.id, system.xi, kv)


def as_reduced(L) -> ReducedOperator:
    if isinstance(L, ReducedOperator):
        return L
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    return ReducedOperator(sp.csr_matrix(L), sp.identity(n, format="csr"), sp.identity(n, format="csr"), ())


# -- spectrum report -----------------------------------------------------------------------


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    kernel_dim: int
    h2_angle: float
    imag_axis_gap: float
    gamma_gap: float | None
    unstable_count: int
    xi: int | None
    grid_id: str
    tol_rank: float
    tol_imag: float
    sigma_max: float
    method: str
    kernel_residual: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def h1(self) -> bool:
        return self.kernel_dim >= 1

    @property
    def h2(self) -> bool:
        return self.h2_angle > self.tol_imag

    @property
    def h3(self) -> bool:
        return self.imag_axis_gap > self.tol_imag

    def nonzero(self) -> np.ndarray:
        return self.eigenvalues[np.abs(self.eigenvalues) > self.tol_rank * self.sigma_max]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eigenvalues"] = [[float(z.real), float(z.imag)] for z in self.eigenvalues]
        d["h1"], d["h2"], d["h3"] = self.h1, self.h2, self.h3
        return d


def _sort_eigs(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    return z[np.lexsort((z.imag, z.real))]


def _sigma_max(R: ReducedOperator, dense: np.ndarray | None) -> float:
    if dense is not None:
        return float(sla.svdvals(dense)[0])
    n = R.n
    lu = R._mlu
    Mt = splu(R.M.T.tocsc())
    op = LinearOperator((n, n), matvec=lambda x: lu.solve(R.K @ x), rmatvec=lambda y: R.K.T @ Mt.solve(y), dtype=float)
    s = svds(op, k=1, which="LM", return_singular_vectors=False, v0=np.ones(n) / math.sqrt(n))
    return float(s[0])


def _arnoldi(R: ReducedOperator, k: int, shift: float) -> np.ndarray:
    n = R.n
    A = (R.K - shift * R.M).tocsc()
    lu = splu(A)
    op = LinearOperator((n, n), matvec=lambda x: lu.solve(R.M @ x), dtype=float)
    v0 = np.ones(n) / math.sqrt(n)
    last = None
    for ncv in (max(2 * k + 1, 20), max(4 * k, 60), min(n - 1, max(8 * k, 120))):
        try:
            mu = eigs(op, k=k, which="LM", ncv=min(ncv, n - 1), v0=v0, tol=1e-13, maxiter=20000, return_eigenvectors=False)
            return shift + 1.0 / mu
        except ArpackNoConvergence as exc:
            last = exc
    raise SpectralError(f"Arnoldi did not converge for k={k}: {last}")


def spectrum(L, k: int = 40, *, tol_rank: float = TOL_RANK, tol_imag: float = TOL_IMAG, dense_limit: int = DENSE_LIMIT) -> SpectrumReport:
    """Eigenvalues, kernel dimension and H1-H3 verdicts of ``L``.

    Systems with at most ``dense_limit`` unknowns are decomposed densely and
    all eigenvalues are reported; larger ones use shift-invert Arnoldi for
    the ``k`` eigenvalues nearest the origin.
    """
    R = as_reduced(L)
    n = R.n
    if n <= dense_limit:
        Ld = R.dense()
        sv = sla.svdvals(Ld)
        smax = float(sv[0]) if sv.size else 0.0
        kernel_dim = int(np.sum(sv <= tol_rank * smax))
        eig = _sort_eigs(sla.eigvals(R.K.toarray(), R.M.toarray()))
        method = "dense"
    else:
        if k >= n - 1:
            raise ValueError(f"k={k} too large for dimension {n}")
        smax = _sigma_max(R, None)
        # a shift just left of the origin keeps K - shift M invertible
        eig = _sort_eigs(_arnoldi(R, k, ARNOLDI_SHIFT))
        kernel_dim = int(np.sum(np.abs(eig) <= tol_rank * smax))
        method = f"arnoldi(k={k})"
    thresh = tol_rank * smax
    nz = eig[np.abs(eig) > thresh]
    imag_gap = float(np.min(np.abs(nz.real))) if nz.size else math.inf
    gap = float(np.min(nz.real)) if nz.size else math.nan
    gamma_gap = gap if gap > 0 else None
    unstable = int(np.sum(eig.real < -tol_imag))
    try:
        angle = h2_angle(R, tol_rank=tol_rank) if kernel_dim >= 1 else math.nan
    except HypothesisError:
        angle = 0.0
    kres = None
    if R.kernel_vector is not None:
        kres = float(np.linalg.norm(R.apply(R.kernel_vector)))
    return SpectrumReport(
        eigenvalues=eig,
        kernel_dim=kernel_dim,
        h2_angle=angle,
        imag_axis_gap=imag_gap,
        gamma_gap=gamma_gap,
        unstable_count=unstable,
        xi=R.xi,
        grid_id=R.grid_id,
        tol_rank=tol_rank,
        tol_imag=tol_imag,
        sigma_max=smax,
        method=method,
        kernel_residual=kres,
    )


# -- kernels and projections -----------------------------------------------------------------------


def _kernels_dense(Ld: np.ndarray, tol_rank: float) -> tuple[np.ndarray, np.ndarray]:
    U, s, Vt = sla.svd(Ld)
    smax = s[0] if s.size else 0.0
    m = int(np.sum(s <= tol_rank * smax))
    if m == 0:
        return np.zeros((Ld.shape[0], 0)), np.zeros((Ld.shape[0], 0))
    return Vt[-m:].T.copy(), U[:, -m:].copy()


def _kernels_sparse(R: ReducedOperator, tol_rank: float) -> tuple[np.ndarray, np.ndarray]:
    """Right and left null vectors by inverse iteration (kernel dimension one)."""
    n = R.n
    shift = 1e-9

    def inverse_iteration(A, B):
        lu = splu((A + shift * B).tocsc())
        x = R.kernel_vector.copy() if R.kernel_vector is not None else np.ones(n)
        x = x + 1e-3 * np.linspace(-1.0, 1.0, n)
        for _ in range(8):
            x = lu.solve(B @ x)
            x /= np.linalg.norm(x)
        return x

    right = inverse_iteration(R.K, R.M)
    # left null vectors of L = M^{-1}K are l = M z with K^T z = 0
    z = inverse_iteration(R.K.T.tocsr(), R.M)
    left = R.M @ z
    return right.reshape(-1, 1), left.reshape(-1, 1)


def kernels(L, tol_rank: float = TOL_RANK) -> tuple[np.ndarray, np.ndarray]:
    """Bases of the right kernel ``N[L]`` and of the left kernel ``N[L^T]``."""
    R = as_reduced(L)
    if R.n <= DENSE_LIMIT:
        return _kernels_dense(R.dense(), tol_rank)
    return _kernels_sparse(R, tol_rank)


def _gram_orthonormal(X: np.ndarray, G) -> np.ndarray:
    GX = G @ X
    S = X.T @ GX
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return X @ (V / np.sqrt(w))


def h2_angle(L, tol_rank: float = TOL_RANK) -> float:
    """Smallest principal angle between ``N[L]`` and ``R[L]`` in the H inner product.

    ``R[L]`` is the annihilator of the left kernel, so its orthogonal
    complement is spanned by ``G^{-1} l`` for the left null vectors ``l``.
    """
    R = as_reduced(L)
    right, left = kernels(R, tol_rank)
    if right.shape[1] == 0:
        raise HypothesisError("L has a trivial kernel")
    G = R.gram
    Gl = splu(G.tocsc()).solve(left) if sp.issparse(G) else np.linalg.solve(G, left)
    Gl = Gl.reshape(left.shape)
    Qn = _gram_orthonormal(right, G)
    Qc = _gram_orthonormal(Gl, G)
    s = np.linalg.svd(Qc.T @ (G @ Qn), compute_uv=False)
    return float(math.asin(min(1.0, float(np.min(s)))))


@dataclass
class SpectralProjections:
    Q: np.ndarray
    P: np.ndarray
    right: np.ndarray
    left: np.ndarray
    h2_angle: float

    def split(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u0 = self.Q @ u
        return u0, u - u0


def projections(L, *, tol_rank: float = TOL_RANK, tol_angle: float = TOL_IMAG) -> SpectralProjections:
    """Oblique projections onto ``N[L]`` along ``R[L]`` and its complement.

    ``Q = R (Lk^T R)^{-1} Lk^T`` with ``R`` and ``Lk`` bases of the right and
    left kernels. Refuses with :class:`HypothesisError` when the kernel is
    trivial or meets the range (H2).
    """
    R = as_reduced(L)
    right, left = kernels(R, tol_rank)
    if right.shape[1] == 0:
        raise HypothesisError("kernel of L is trivial; nothing to project onto")
    angle = h2_angle(R, tol_rank)
    if not angle > tol_angle:
        raise HypothesisError(f"kernel and range of L intersect (principal angle {angle:.3e}); no kernel/range splitting")
    C = left.T @ right
    Q = right @ np.linalg.solve(C, left.T)
    Q[np.abs(Q) < 1e-15] = 0.0
    return SpectralProjections(Q=Q, P=np.eye(R.n) - Q, right=right, left=left, h2_angle=angle)
