"""Finite-dimensional systems ``du/dt + L u + N(u) = 0`` with a kernel in L.

A small laboratory for the kernel/range splitting: projections, the
split dynamics, the linear semigroup, the structural bounds on N and
stability verdicts checked against brute-force integration.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import spectral

BLOWUP = 1e6


@dataclass(frozen=True)
class Monomial:
    coef: float
    output: int
    powers: tuple[int, ...]

    def __call__(self, u: np.ndarray) -> float:
        return self.coef * float(np.prod(u ** np.asarray(self.powers)))

    def jac_row(self, u: np.ndarray) -> np.ndarray:
        g = np.zeros(len(self.powers))
        for j, pj in enumerate(self.powers):
            if pj:
                p = np.array(self.powers)
                p[j] -= 1
                g[j] = self.coef * pj * float(np.prod(u**p))
        return g


def parse_polynomial(text: str, output: int, n: int) -> list[Monomial]:
    """Parse ``"u2*u3 - 0.5*u1^2"`` into monomials (coordinates are 1-based)."""
    text = text.replace(" ", "")
    if text in ("", "0"):
        return []
    terms = []
    for chunk in re.findall(r"[+-]?[^+-]+", text):
        sign = -1.0 if chunk.startswith("-") else 1.0
        body = chunk.lstrip("+-")
        factors = body.split("*")
        coef = 1.0
        powers = [0] * n
        for f in factors:
            m = re.fullmatch(r"u(\d+)(?:\^(\d+))?", f)
            if m:
                j = int(m.group(1)) - 1
                if not 0 <= j < n:
                    raise ValueError(f"coordinate u{j + 1} out of range for dimension {n}")
                powers[j] += int(m.group(2) or 1)
            else:
                try:
                    coef *= float(f)
                except ValueError:
                    raise ValueError(f"cannot parse factor {f!r} in {text!r}") from None
        terms.append(Monomial(sign * coef, output, tuple(powers)))
    return terms


@dataclass
class ToySystem:
    name: str
    L: np.ndarray
    terms: list[Monomial]
    kappa: tuple[float, float, float]
    alpha: float = 0.0
    description: str = ""

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=float)
        if self.L.ndim != 2 or self.L.shape[0] != self.L.shape[1]:
            raise ValueError(f"L must be square, got shape {self.L.shape}")

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def N(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        for m in self.terms:
            out[m.output] += m(u)
        return out

    def N_jacobian(self, u: np.ndarray) -> np.ndarray:
        J = np.zeros((self.n, self.n))
        for m in self.terms:
            J[m.output] += m.jac_row(u)
        return J

    def rhs(self, u: np.ndarray) -> np.ndarray:
        return -(self.L @ u) - self.N(u)

    @classmethod
    def from_mapping(cls, name: str, d: dict) -> "ToySystem":
        """Build from flat string fields: ``L = "0 0 0; 0 1 0; 0 0 2"``,
        ``N1 = "u2*u3"``, ..., ``kappa = "1 1 2"``, ``alpha = 0``."""
        rows = [r.split() for r in d["L"].split(";") if r.strip()]
        L = np.array([[float(x) for x in r] for r in rows])
        n = L.shape[0]
        terms = []
        for i in range(n):
            terms += parse_polynomial(d.get(f"N{i + 1}", "0"), i, n)
        kappa = tuple(float(x) for x in d.get("kappa", "1 1 2").split())
        return cls(name, L, terms, kappa, float(d.get("alpha", 0.0)), d.get("description", ""))

    def spectrum(self) -> spectral.SpectrumReport:
        return spectral.spectrum(self.L)

    def projections(self) -> spectral.SpectralProjections:
        return spectral.projections(self.L)


def _preset_table() -> dict[str, dict]:
    return {
        "cubic3": {
            "L": "0 0 0; 0 1 0; 0 0 2",
            "N1": "u2*u3",
            "N2": "u1*u2^2",
            "N3": "u2^3",
            "kappa": "1 1 2",
            "description": "diagonal kernel plus two damped modes, cubic coupling",
        },
        "spiral4": {
            "L": "0 0 0 0; 0 0.5 -2 0; 0 2 0.5 0; 0 0 0 1.5",
            "N1": "u2^2 + u4^2",
            "N2": "u1*u2",
            "N3": "u2*u4",
            "N4": "u3^2",
            "kappa": "1 1 2",
            "description": "complex stable pair, bilinear kernel/range coupling",
        },
        "unstable3": {
            "L": "0 0 0; 0 -0.5 0; 0 0 1",
            "N1": "u2*u3",
            "N3": "u2^2",
            "kappa": "1 1 2",
            "description": "one eigenvalue with negative real part",
        },
        "jordan2": {
            "L": "0 1; 0 0",
            "kappa": "1 1 2",
            "description": "nilpotent block: kernel and range coincide",
        },
    }


PRESETS = tuple(_preset_table())


def preset(name: str) -> ToySystem:
    table = _preset_table()
    if name not in table:
        raise KeyError(f"unknown preset {name!r}; known: {PRESETS}")
    return ToySystem.from_mapping(name, table[name])


# -- splitting and integration ----------------------------------------------------------


def split(u: np.ndarray, proj: spectral.SpectralProjections) -> tuple[np.ndarray, np.ndarray]:
    """``(Q u, u - Q u)``; the parts add back to ``u`` exactly."""
    return proj.split(np.asarray(u, dtype=float))


@dataclass
class ToyTrajectory:
    t: np.ndarray
    u: np.ndarray
    u0: np.ndarray | None
    u1: np.ndarray | None
    status: str = "completed"

    @property
    def final(self) -> np.ndarray:
        return self.u[-1]


def rk4_step(f, u: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(u)
    k2 = f(u + 0.5 * dt * k1)
    k3 = f(u + 0.5 * dt * k2)
    k4 = f(u + dt * k3)
    return u + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_toy(
    sys_: ToySystem,
    u0,
    horizon: float,
    dt: float,
    *,
    proj: spectral.SpectralProjections | None = None,
    stride: int = 1,
    blowup: float = BLOWUP,
    linear: bool = False,
) -> ToyTrajectory:
    """Classical RK4 for the full system with the projected streams.

    Stops with status ``blowup`` once ``|u|`` exceeds ``blowup``.
    """
    u = np.array(u0, dtype=float)
    n_steps = int(round(horizon / dt))
    f = (lambda x: -(sys_.L @ x)) if linear else sys_.rhs
    ts, us = [0.0], [u.copy()]
    status = "completed"
    for k in range(1, n_steps + 1):
        u = rk4_step(f, u, dt)
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > blowup:
            status = "blowup"
            ts.append(k * dt)
            us.append(u.copy())
            break
        if k % stride == 0 or k == n_steps:
            ts.append(k * dt)
            us.append(u.copy())
    U = np.array(us)
    U0 = U1 = None
    if proj is not None:
        U0 = U @ proj.Q.T
        U1 = U - U0
    return ToyTrajectory(np.array(ts), U, U0, U1, status)


def _duhamel_residual(sys_: ToySystem, t: np.ndarray, u: np.ndarray, u1: np.ndarray, P: np.ndarray) -> float:
    h = t[1] - t[0]
    E = expm(-sys_.L * h)
    pn = np.array([P @ sys_.N(x) for x in u])
    w = u1[0].copy()
    worst = 0.0
    for k in range(1, len(t)):
        # w(t) = exp(-L t) u1(0) - trapezoid of exp(-L (t - s)) P N(u(s))
        w = E @ w - 0.5 * h * (E @ pn[k - 1] + pn[k])
        worst = max(worst, float(np.linalg.norm(w - u1[k])))
    return worst


def mild_residual(sys_: ToySystem, u1_0, t: float, dt: float = 1e-3) -> float:
    """``|u1(t) - exp(-L t) u1_0|`` with ``u1`` from RK4 of the linear flow."""
    u1_0 = np.asarray(u1_0, dtype=float)
    if t == 0:
        return 0.0
    steps = max(1, int(round(t / dt)))
    traj = integrate_toy(sys_, u1_0, t, t / steps, linear=True, stride=steps)
    return float(np.linalg.norm(traj.final - expm(-sys_.L * t) @ u1_0))


def mild_check(sys_: ToySystem, u1_0, times=(0.5, 1.0, 2.0), dt: float = 0.01) -> tuple[float, float]:
    """Worst linear mild residual at step ``dt`` and an RK4 error bound.

    The bound is 1.5 times the Richardson estimate from step halving
    (fourth order, so the halved run is 16 times closer), plus a round-off
    floor.
    """
    u1_0 = np.asarray(u1_0, dtype=float)
    floor = 1e3 * np.finfo(float).eps * max(float(np.linalg.norm(u1_0)), 1e-300)
    worst, bound = 0.0, 0.0
    for t in times:
        r1 = mild_residual(sys_, u1_0, t, dt)
        r2 = mild_residual(sys_, u1_0, t, 0.5 * dt)
        worst = max(worst, r1)
        bound = max(bound, 1.5 * 16.0 / 15.0 * abs(r1 - r2) + floor)
    return worst, bound


def duhamel_residual(sys_: ToySystem, traj: "ToyTrajectory", proj: spectral.SpectralProjections) -> tuple[float, float]:
    """Residual of the variation-of-constants form of the range equation.

    ``u1(t) = exp(-L t) u1(0) - int_0^t exp(-L (t - s)) P N(u(s)) ds`` is
    checked on the recorded samples with the trapezoid rule. Returns the
    residual and a quadrature error estimate, taken as the change of the
    residual when the sample spacing is doubled (second-order quadrature).
    """
    t, u, u1 = traj.t, traj.u, traj.u1
    n = len(t) - 1
    if n < 4 or not np.allclose(np.diff(t), t[1] - t[0]):
        raise ValueError("mild residual needs at least 4 uniformly spaced samples")
    m = n - n % 2
    r_h = _duhamel_residual(sys_, t[: m + 1], u[: m + 1], u1[: m + 1], proj.P)
    r_2h = _duhamel_residual(sys_, t[: m + 1 : 2], u[: m + 1 : 2], u1[: m + 1 : 2], proj.P)
    return r_h, abs(r_2h - r_h)


def kernel_equation_residual(sys_: ToySystem, traj: ToyTrajectory, proj: spectral.SpectralProjections) -> float:
    """Largest ``|d u0/dt + Q N(u)|`` with the derivative by central differences."""
    if traj.u0 is None or len(traj.t) < 3:
        return 0.0
    du0 = (traj.u0[2:] - traj.u0[:-2]) / (traj.t[2:] - traj.t[:-2])[:, None]
    qn = np.array([proj.Q @ sys_.N(u) for u in traj.u[1:-1]])
    return float(np.max(np.linalg.norm(du0 + qn, axis=1)))


# -- structural bounds on N ----------------------------------------------------------------------


@dataclass
class H45Report:
    lipschitz: float
    kernel_residual: float
    mixed_slope: float
    pure_slope: float
    kappa: tuple[float, float, float]
    passed: bool
    matches: bool
    reasons: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _ray_slope(f, scales: np.ndarray) -> float:
    vals = np.array([f(s) for s in scales])
    if np.all(vals == 0):
        return math.inf
    vals = np.maximum(vals, 1e-300)
    return float(np.polyfit(np.log(scales), np.log(vals), 1)[0])


def verify_H4_H5(sys_: ToySystem, n_samples: int = 50, radius: float = 0.1, *, seed: int = 0, tol: float = 0.1) -> H45Report:
    """Sampled Lipschitz constant of N in a ball and ray regressions of ``M(u0, u1) = N(u0 + u1)``.

    Mixed rays keep ``|u0| = radius`` fixed and shrink ``u1``; pure rays
    have ``u0 = 0``. H5 bounds ``M`` above, so a fitted slope may exceed the
    declared exponent; the verdict requires ``slope >= declared - tol`` and a
    pure-ray slope above one. ``matches`` additionally records whether both
    slopes equal the declared exponents within ``tol``.
    """
    rng = np.random.default_rng(seed)
    proj = sys_.projections()
    n = sys_.n
    lip = 0.0
    for _ in range(n_samples):
        a = rng.uniform(-radius, radius, n)
        b = rng.uniform(-radius, radius, n)
        d = np.linalg.norm(a - b)
        if d > 0:
            lip = max(lip, float(np.linalg.norm(sys_.N(a) - sys_.N(b)) / d))
    kres = 0.0
    scales = radius * np.logspace(-4, 0, 13)
    mixed, pure = math.inf, math.inf
    for _ in range(n_samples):
        d0 = proj.Q @ rng.standard_normal(n)
        d1 = proj.P @ rng.standard_normal(n)
        d0 /= np.linalg.norm(d0)
        d1 /= np.linalg.norm(d1)
        kres = max(kres, float(np.linalg.norm(sys_.N(radius * d0))))
        mixed = min(mixed, _ray_slope(lambda s: np.linalg.norm(sys_.N(radius * d0 + s * d1)), scales))
        pure = min(pure, _ray_slope(lambda s: np.linalg.norm(sys_.N(s * d1)), scales))
    k1, k2, k3 = sys_.kappa
    reasons = []
    if kres > 1e-12:
        reasons.append(f"N does not vanish on the kernel (|N(u0)| = {kres:.3e})")
    if mixed < k2 - tol:
        reasons.append(f"mixed-ray slope {mixed:.3f} below declared {k2}")
    if pure < k3 - tol or not pure > 1.0:
        reasons.append(f"pure-ray slope {pure:.3f} below declared {k3} or not above 1")
    if not (k1 >= 1 and k2 >= 1 and k3 > 1):
        reasons.append(f"declared exponents {sys_.kappa} outside the admissible range")
    matches = abs(mixed - k2) <= tol and abs(pure - k3) <= tol
    return H45Report(lip, kres, mixed, pure, sys_.kappa, not reasons, matches, reasons)


# -- stability verdicts -------------------------------------------------------------------------------


@dataclass
class Theorem1Report:
    preset: str
    classification: str
    passed: bool
    details: dict

    def to_dict(self) -> dict:
        return {"preset": self.preset, "classification": self.classification, "passed": self.passed, "details": self.details}


def default_grid(sys_: ToySystem, norms=(1e-2, 3e-2, 1e-1), n_dirs: int = 4, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    out = []
    for r in norms:
        for _ in range(n_dirs):
            d = rng.standard_normal(sys_.n)
            out.append(r * d / np.linalg.norm(d))
    return out


def theorem1_verdict(
    sys_: ToySystem,
    u0_grid=None,
    *,
    horizon: float = 40.0,
    dt: float = 0.01,
    eps: float = 0.5,
    delta: float = 0.2,
    b_factor: float = 0.9,
    rate_factor: float = 0.8,
    exit_radius: float = 1.0,
    unstable_norms=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6),
    unstable_horizon: float = 100.0,
    conv_tol: float = 1e-4,
) -> Theorem1Report:
    """Stable ``L1``: bounded, convergent trajectories from the grid with
    ``|P u(t)|`` decaying at least at ``rate_factor * b``, ``b = b_factor * gap``.
    Unstable ``L1``: trajectories from tiny norms along the unstable
    direction leave the ball of radius ``exit_radius``.
    """
    from .decay import FitError, fit_exponential

    rep = sys_.spectrum()
    proj = sys_.projections()
    nz = rep.nonzero()
    if np.any(nz.real < -rep.tol_imag):
        ev, V = np.linalg.eig(sys_.L)
        k = int(np.argmin(ev.real))
        d = np.real(V[:, k])
        d /= np.linalg.norm(d)
        exits = {}
        for r in unstable_norms:
            traj = integrate_toy(sys_, r * d, unstable_horizon, dt, stride=10)
            norms = np.linalg.norm(traj.u, axis=1)
            hit = np.nonzero(norms > exit_radius)[0]
            exits[f"{r:.0e}"] = float(traj.t[hit[0]]) if hit.size else None
        ok = all(v is not None for v in exits.values())
        return Theorem1Report(sys_.name, "unstable", ok, {"exit_times": exits, "exit_radius": exit_radius, "unstable_eigenvalue": [float(ev[k].real), float(ev[k].imag)]})

    gap = rep.gamma_gap
    b = b_factor * gap
    u0_grid = default_grid(sys_) if u0_grid is None else u0_grid
    runs = []
    ok = True
    for u0 in u0_grid:
        u0 = np.asarray(u0, dtype=float)
        if np.linalg.norm(u0) >= delta:
            continue
        traj = integrate_toy(sys_, u0, horizon, dt, proj=proj, stride=10)
        norms = np.linalg.norm(traj.u, axis=1)
        n1 = np.linalg.norm(traj.u1, axis=1)
        bounded = bool(traj.status == "completed" and norms.max() < eps)
        u_bar = traj.u0[-1]
        # the range component must have died out, leaving a point of the kernel
        converged = bool(n1[-1] <= conv_tol * max(float(n1[0]), 1e-300))
        try:
            fit = fit_exponential(traj.t, n1, (0.1 * horizon, horizon), "u1")
            rate = fit.rate
        except FitError:
            rate = math.nan
        rate_ok = bool(rate >= rate_factor * b)
        drift = float(np.linalg.norm(u_bar - traj.u0[0]))
        lin, lin_bound = mild_check(sys_, traj.u1[0], dt=dt)
        mild, mild_err = duhamel_residual(sys_, traj, proj)
        # time-stepping error of the samples themselves, by step halving
        fine = integrate_toy(sys_, u0, horizon, 0.5 * dt, proj=proj, stride=20)
        mild_err += float(np.max(np.linalg.norm(fine.u - traj.u, axis=1))) if fine.u.shape == traj.u.shape else math.inf
        mild_ok = bool(mild <= mild_err and lin <= lin_bound)
        run_ok = bounded and converged and rate_ok and mild_ok
        ok = ok and run_ok
        runs.append(
            {
                "u0_norm": float(np.linalg.norm(u0)),
                "sup_norm": float(norms.max()),
                "bounded": bounded,
                "converged": converged,
                "final_u1": float(n1[-1]),
                "rate": float(rate),
                "rate_ok": rate_ok,
                "u_bar": u_bar.tolist(),
                "kernel_drift": drift,
                "drift_ratio": drift / max(float(n1[0]), 1e-300),
                "kernel_eq_residual": kernel_equation_residual(sys_, traj, proj),
                "mild_residual": lin,
                "mild_error_bound": lin_bound,
                "duhamel_residual": mild,
                "duhamel_error_estimate": mild_err,
                "mild_ok": mild_ok,
            }
        )
    return Theorem1Report(sys_.name, "stable", ok and bool(runs), {"gap": gap, "b": b, "runs": runs})
