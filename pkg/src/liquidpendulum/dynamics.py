"""Coupled liquid/pendulum dynamics: operators and time stepping.

The perturbation ``u = (v, omega, gamma)`` obeys

    I du/dt + (A~ + B~) u = N~(u)

with the inertia operator ``I``, the Stokes-plus-identity part ``A~``, the
bounded coupling ``B~`` and the quadratic remainder ``N~``. Internally the
velocity is carried by its streamfunction on the interior corners, which
keeps every iterate exactly divergence-free and turns ``I`` and ``A~`` into
sparse Galerkin matrices over the coordinates ``(psi, omega, gamma1, gamma2)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grid import DiscreteOperators, build_operators
from .model import CoupledState, PhysicalParams, check_xi, equilibrium_angle, gamma_of_phi, linear_state, state_from_phi

log = logging.getLogger(__name__)

MODES = ("linear", "nonlinear")


class SolverError(RuntimeError):
    """A time step could not be completed."""


class CFLViolation(SolverError):
    def __init__(self, dt: float, suggested_dt: float):
        self.dt = dt
        self.suggested_dt = suggested_dt
        super().__init__(f"dt={dt:.4g} violates the advective CFL limit; use dt <= {suggested_dt:.4g}")


class HVec(NamedTuple):
    """An element ``(v, omega, gamma)`` of the phase space H, velocity on faces."""

    v: np.ndarray
    omega: float
    gamma: np.ndarray


def e3_cross(w) -> np.ndarray:
    return np.array([-w[1], w[0]])


class CoupledSystem:
    """Operators of the perturbation problem around the rest state ``xi e1``."""

    def __init__(self, params: PhysicalParams, xi: int, ops: DiscreteOperators | None = None):
        self.params = params
        self.xi = check_xi(xi)
        self.ops = ops or build_operators(params.cavity)
        self.grid = self.ops.grid
        g = self.grid
        self.r = g.rigid_field()
        self.Pr = self.ops.project(self.r)
        self.r_Pr = g.inner(self.r, self.Pr)
        K, Mpsi = self.ops.stokes_pencil(params.mu)
        self.K_psi = K
        self.M_psi = params.rho * Mpsi
        self.m_cross = params.rho * (self.ops.curl.T @ (g.weights * self.r))
        self.n_psi = g.n_psi
        self._steppers: dict[tuple[float, str], Stepper] = {}
        self._stokes = None

    # -- scalar functionals ------------------------------------------------
    def coupling_a(self, v: np.ndarray) -> float:
        """``a = -(rho / C) integral (e3 x x) . v``."""
        return -self.params.rho / self.params.c_total * self.ops.quad_cross_moment(v)

    # -- operators on H ------------------------------------------------------
    def apply_I(self, u: HVec) -> HVec:
        p = self.params
        v = np.asarray(u.v, dtype=float)
        return HVec(
            p.rho * v + p.rho * u.omega * self.Pr,
            p.c_total * (u.omega - self.coupling_a(v)),
            np.array(u.gamma, dtype=float),
        )

    def solve_I(self, f: HVec) -> HVec:
        """Invert ``I`` in closed form (rank-one coupling between v and omega)."""
        p = self.params
        fv = self.ops.project(np.asarray(f.v, dtype=float))
        denom = p.c_total - p.rho * self.r_Pr
        if not denom > 0:
            raise SolverError(f"inertia operator is singular: C - rho ||P r||^2 = {denom!r}")
        omega = (f.omega - self.grid.inner(self.r, fv)) / denom
        if p.rho > 0:
            v = (fv - omega * p.rho * self.Pr) / p.rho
        else:
            v = np.zeros_like(fv)
        return HVec(v, omega, np.array(f.gamma, dtype=float))

    def apply_A(self, u: HVec) -> HVec:
        v = np.asarray(u.v, dtype=float)
        return HVec(-self.params.mu * self.ops.project(self.ops.lap @ v), float(u.omega), np.array(u.gamma, dtype=float))

    def apply_B(self, u: HVec) -> HVec:
        g0 = np.array([self.xi, 0.0])
        gamma = np.asarray(u.gamma, dtype=float)
        return HVec(
            np.zeros(self.grid.n_faces),
            -self.params.beta_sq * gamma[1] - u.omega,
            u.omega * e3_cross(g0) - gamma,
        )

    def apply_N(self, u: HVec) -> HVec:
        """``N~(u) = (-rho P[2 omega e3 x v + (v . grad) v], 0, -omega e3 x gamma)``."""
        v = np.asarray(u.v, dtype=float)
        fv = -self.params.rho * self.ops.project(2.0 * u.omega * self.ops.rotate(v) + self.ops.advection(v))
        return HVec(fv, 0.0, -u.omega * e3_cross(np.asarray(u.gamma, dtype=float)))

    def apply_L(self, u: HVec) -> HVec:
        a, b = self.apply_A(u), self.apply_B(u)
        return self.solve_I(HVec(a.v + b.v, a.omega + b.omega, a.gamma + b.gamma))

    # -- Galerkin coordinates ---------------------------------------------------
    @property
    def n_coords(self) -> int:
        return self.n_psi + 3

    def to_coords(self, u: HVec | CoupledState) -> np.ndarray:
        return np.concatenate([self.ops.psi_from_velocity(np.asarray(u.v, dtype=float)), [u.omega], np.asarray(u.gamma, dtype=float)])

    def from_coords(self, x: np.ndarray) -> HVec:
        n = self.n_psi
        return HVec(self.ops.velocity_from_psi(x[:n]), float(x[n]), np.array(x[n + 1 : n + 3]))

    def mass_matrix(self) -> sp.csr_matrix:
        """Matrix of ``<I u, u'>`` over ``(psi, omega, gamma1, gamma2)``."""
        n = self.n_psi
        mc = sp.csr_matrix(self.m_cross.reshape(-1, 1))
        return sp.bmat(
            [
                [self.M_psi, mc, None],
                [mc.T, sp.csr_matrix([[self.params.c_total]]), None],
                [None, None, sp.identity(2, format="csr")],
            ],
            format="csr",
        ).astype(float) if n else sp.csr_matrix(np.diag([self.params.c_total, 1.0, 1.0]))

    def stiffness_matrix(self) -> sp.csr_matrix:
        """Matrix of ``<(A~ + B~) u, u'>``; the rigid rows read
        ``omega -> -beta^2 gamma2``, ``gamma1 -> 0``, ``gamma2 -> xi omega``."""
        rigid = sp.csr_matrix(np.array([[0.0, 0.0, -self.params.beta_sq], [0.0, 0.0, 0.0], [float(self.xi), 0.0, 0.0]]))
        return sp.bmat([[self.K_psi, None], [None, rigid]], format="csr")

    def h_gram(self) -> sp.csr_matrix:
        """Gram matrix of the plain H inner product in coordinates."""
        return sp.block_diag([self.M_psi / self.params.rho if self.params.rho > 0 else self.ops.stokes_pencil()[1], sp.identity(3)], format="csr")

    # -- time stepping ----------------------------------------------------------
    def stepper(self, dt: float, mode: str) -> "Stepper":
        key = (float(dt), mode)
        if key not in self._steppers:
            self._steppers[key] = Stepper(self, dt, mode)
        return self._steppers[key]

    @property
    def stokes(self):
        from .spectral import StokesBasis

        if self._stokes is None:
            self._stokes = StokesBasis.from_operators(self.ops, self.params.mu)
        return self._stokes


@dataclass
class StepperState:
    psi: np.ndarray
    omega: float
    phi: float
    gamma: np.ndarray
    time: float
    forcing_prev: np.ndarray | None = None
    v_prev: np.ndarray | None = None


class Stepper:
    """IMEX scheme for one ``(dt, mode)``.

    Crank-Nicolson on the coupled ``(v, omega)`` inertia/viscous block,
    solved monolithically; second-order Adams-Bashforth on the fluid
    nonlinearity (explicit Euler on the first step). The restoring torque
    enters the omega row as a scalar ``tau``, so each step is
    ``y = y0 + tau * y1`` followed by a scalar equation for ``tau``:

    * linear mode: ``tau`` is the trapezoidal average of ``beta^2 gamma2``
      with ``gamma2' = -xi omega`` (exact linear solve);
    * nonlinear mode: ``phi' = omega`` by the trapezoidal rule and ``tau``
      is the secant slope of ``-U(phi) = beta^2 cos(phi)``, which makes the
      rigid part of the energy balance exact at the discrete level.
    """

    def __init__(self, system: CoupledSystem, dt: float, mode: str):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if not dt > 0:
            raise ValueError(f"dt must be > 0, got {dt!r}")
        self.system = system
        self.dt = float(dt)
        self.mode = mode
        n = system.n_psi
        mc = sp.csr_matrix(system.m_cross.reshape(-1, 1))
        M = sp.bmat([[system.M_psi, mc], [mc.T, sp.csr_matrix([[system.params.c_total]])]], format="csr")
        K = sp.block_diag([system.K_psi, sp.csr_matrix((1, 1))], format="csr")
        h = 0.5 * self.dt
        self._explicit = (M - h * K).tocsr()
        self._lu = splu((M + h * K).tocsc())
        e = np.zeros(n + 1)
        e[n] = self.dt
        self._y1 = self._lu.solve(e)
        self._omega1 = float(self._y1[n])

    def initial(self, state: CoupledState) -> StepperState:
        sys_ = self.system
        return StepperState(
            psi=sys_.ops.psi_from_velocity(np.asarray(state.v)),
            omega=state.omega,
            phi=state.phi,
            gamma=np.array(state.gamma, dtype=float),
            time=state.time,
        )

    def fluid_forcing(self, psi: np.ndarray, omega: float, v: np.ndarray | None = None) -> np.ndarray:
        """Galerkin load of the fluid nonlinearity, ``S^T W (-rho [2 omega e3 x v + (v . grad) v])``."""
        sys_ = self.system
        ops = sys_.ops
        if v is None:
            v = ops.velocity_from_psi(psi)
        f = -sys_.params.rho * (2.0 * omega * ops.rotate(v) + ops.advection(v))
        return ops.curl.T @ (sys_.grid.weights * f)

    def check_cfl(self, v: np.ndarray):
        vmax = float(np.max(np.abs(v))) if v.size else 0.0
        if vmax == 0.0:
            return
        g = self.system.grid
        limit = 0.5 * min(g.hx, g.hy) / vmax
        if self.dt > limit:
            raise CFLViolation(self.dt, limit)

    def advance(self, st: StepperState) -> StepperState:
        sys_ = self.system
        p = sys_.params
        n = sys_.n_psi
        h = 0.5 * self.dt
        y = np.concatenate([st.psi, [st.omega]])
        b = self._explicit @ y
        v_now = sys_.ops.velocity_from_psi(st.psi)
        forcing = None
        if self.mode == "nonlinear":
            self.check_cfl(v_now)
            forcing = self.fluid_forcing(st.psi, st.omega, v_now)
            ab = forcing if st.forcing_prev is None else 1.5 * forcing - 0.5 * st.forcing_prev
            b[:n] += self.dt * ab
        y0 = self._lu.solve(b)
        w0, w1 = float(y0[n]), self._omega1

        if self.mode == "linear":
            # tau = beta^2 (g + g_new) / 2, g_new = g - xi h (omega + omega_new)
            g2 = st.gamma[1]
            tau = p.beta_sq * (2.0 * g2 - sys_.xi * h * (st.omega + w0)) / (2.0 + p.beta_sq * sys_.xi * h * w1)
            omega_new = w0 + tau * w1
            gamma = np.array([st.gamma[0], g2 - sys_.xi * h * (st.omega + omega_new)])
            phi = st.phi
        else:
            tau = self._secant_torque(st.phi, st.omega, w0, w1)
            omega_new = w0 + tau * w1
            phi = st.phi + h * (st.omega + omega_new)
            gamma = gamma_of_phi(phi, sys_.xi)

        y_new = y0 + tau * self._y1
        return StepperState(
            psi=y_new[:n],
            omega=float(y_new[n]),
            phi=phi,
            gamma=gamma,
            time=st.time + self.dt,
            forcing_prev=forcing,
            v_prev=v_now,
        )

    def _secant_torque(self, phi: float, omega: float, w0: float, w1: float) -> float:
        beta_sq = self.system.params.beta_sq
        h = 0.5 * self.dt

        def torque(tau):
            dphi = h * (omega + w0 + tau * w1)
            half = 0.5 * dphi
            sinc = math.sin(half) / half if half != 0.0 else 1.0
            return -xi * beta_sq * math.sin(d + half) * sinc

        # sin(phi) = xi sin(d) with d the displacement from the rest angle
        xi = self.system.xi
        d = phi - equilibrium_angle(xi)
        tau = torque(-xi * beta_sq * math.sin(d))
        for _ in range(100):
            new = torque(tau)
            if abs(new - tau) <= 1e-15 * max(1.0, abs(new)):
                return new
            tau = new
        raise SolverError(f"torque iteration did not converge at phi={phi:.6g}, omega={omega:.6g}")

    def to_state(self, st: StepperState, xi: int) -> CoupledState:
        v = self.system.ops.velocity_from_psi(st.psi)
        if self.mode == "nonlinear":
            return state_from_phi(v, st.omega, st.phi, xi, time=st.time)
        return linear_state(v, st.omega, st.gamma, xi, time=st.time)


def step(system: CoupledSystem, state: CoupledState, dt: float, mode: str) -> CoupledState:
    """One isolated IMEX step (first-step Euler for the explicit part)."""
    stepper = system.stepper(dt, mode)
    return stepper.to_state(stepper.advance(stepper.initial(state)), system.xi)


# -- trajectories -----------------------------------------------------------------

TRAJECTORY_COLUMNS = ("t", "omega", "phi", "chi1", "chi2", "gamma1", "gamma2", "v_l2", "v_alpha", "v_h2proxy")
ENERGY_COLUMNS = ("t", "kinetic", "potential", "dissipation", "a", "E", "E1", "lyap_linear")
EXTRA_COLUMNS = ("v_t_l2",)


@dataclass
class Trajectory:
    """Recorded output of one run.

    ``records`` maps every column of the trajectory and energy schemas (plus
    ``v_t_l2``) to an array over the output times. ``snapshots`` holds the
    full states at the snapshot stride.
    """

    records: dict[str, np.ndarray]
    snapshots: list[CoupledState]
    meta: dict
    status: str = "completed"
    message: str = ""
    final: CoupledState | None = None

    @property
    def times(self) -> np.ndarray:
        return self.records["t"]

    def __len__(self) -> int:
        return len(self.records["t"])

    def column(self, name: str) -> np.ndarray:
        return self.records[name]


@dataclass
class _Recorder:
    system: CoupledSystem
    alpha: float
    energy_convention: str
    rows: list[dict] = field(default_factory=list)

    def record(self, state: CoupledState, v_t: np.ndarray | None):
        from .energy import energy_record

        sys_ = self.system
        er = energy_record(state, v_t, sys_, convention=self.energy_convention)
        basis = sys_.stokes
        psi = sys_.ops.psi_from_velocity(np.asarray(state.v))
        chi = state.chi
        row = {
            "t": state.time,
            "omega": state.omega,
            "phi": state.phi,
            "chi1": chi[0],
            "chi2": chi[1],
            "gamma1": state.gamma[0],
            "gamma2": state.gamma[1],
            "v_l2": sys_.grid.norm(np.asarray(state.v)),
            "v_alpha": basis.power_norm_psi(psi, self.alpha),
            "v_h2proxy": basis.power_norm_psi(psi, 1.0),
            "kinetic": er.kinetic,
            "potential": er.potential,
            "dissipation": er.dissipation,
            "a": er.a,
            "E": er.E,
            "E1": er.E1,
            "lyap_linear": er.lyap_linear,
            "v_t_l2": sys_.grid.norm(v_t) if v_t is not None else float("nan"),
        }
        self.rows.append(row)

    def arrays(self) -> dict[str, np.ndarray]:
        names = TRAJECTORY_COLUMNS + ENERGY_COLUMNS[1:] + EXTRA_COLUMNS
        return {k: np.array([r[k] for r in self.rows], dtype=float) for k in names}


def simulate(
    system: CoupledSystem,
    initial: CoupledState,
    horizon: float,
    dt: float,
    mode: str,
    *,
    stride: int = 1,
    snapshot_stride: int = 0,
    alpha: float = 0.75,
    energy_convention: str = "consistent",
    blowup: float = 1e8,
    stop_radius: float | None = None,
) -> Trajectory:
    """Integrate from ``initial`` up to ``initial.time + horizon``.

    Records are written every ``stride`` steps; full snapshots every
    ``snapshot_stride`` steps (0 keeps only the first and last). A
    non-finite iterate or a norm above ``blowup`` halts the run and keeps
    the last valid snapshot. With ``stop_radius`` the run ends (status
    ``exited``) at the first record whose alpha norm exceeds it. Errors
    raised by a step propagate after the partial trajectory is attached as
    ``exc.trajectory``.
    """
    if initial.xi != system.xi:
        raise ValueError(f"state xi={initial.xi} does not match system xi={system.xi}")
    stepper = system.stepper(dt, mode)
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of dt {dt}")
    rec = _Recorder(system, alpha, energy_convention)
    st = stepper.initial(initial)
    state = initial
    rec.record(state, None)
    snapshots = [state]
    status, message = "completed", ""
    meta = {
        "dt": dt,
        "mode": mode,
        "xi": system.xi,
        "grid": system.grid.id,
        "scheme": "CN(v,omega)+AB2(N)" + ("+secant-torque" if mode == "nonlinear" else ""),
        "stride": stride,
        "horizon": horizon,
        "alpha": alpha,
        "energy_convention": energy_convention,
        "beta_sq": system.params.beta_sq,
        "c_total": system.params.c_total,
        "mu": system.params.mu,
    }
    for k in range(1, n_steps + 1):
        try:
            new = stepper.advance(st)
        except SolverError as exc:
            exc.trajectory = Trajectory(rec.arrays(), snapshots, meta, "failed", str(exc), state)
            raise
        size = float(np.max(np.abs(new.psi))) if new.psi.size else 0.0
        if not (np.isfinite(size) and np.isfinite(new.omega) and np.all(np.isfinite(new.gamma))):
            status, message = "nan", f"non-finite iterate at step {k}"
            log.warning(message)
            break
        if max(size, abs(new.omega), float(np.max(np.abs(new.gamma)))) > blowup:
            status, message = "blowup", f"norm exceeded {blowup:g} at step {k}"
            break
        st = new
        # snap the clock to the grid of steps to keep output times reproducible
        st.time = initial.time + k * dt
        snap = bool(snapshot_stride) and k % snapshot_stride == 0
        if snap or k % stride == 0 or k == n_steps:
            state = stepper.to_state(st, system.xi)
            if snap:
                snapshots.append(state)
        if k % stride == 0 or k == n_steps:
            v_t = (np.asarray(state.v) - st.v_prev) / dt
            rec.record(state, v_t)
            if stop_radius is not None:
                row = rec.rows[-1]
                if row["v_alpha"] + abs(row["omega"]) + math.hypot(row["gamma1"], row["gamma2"]) > stop_radius:
                    status, message = "exited", f"alpha norm exceeded {stop_radius:g} at t={state.time:.6g}"
                    break
    final = stepper.to_state(st, system.xi)
    if snapshots[-1].time != final.time:
        snapshots.append(final)
    return Trajectory(rec.arrays(), snapshots, meta, status, message, final)


# -- initial data ---------------------------------------------------------------------

VELOCITY_TEMPLATES = ("zero", "vortex", "stokes1", "dipole", "random")


def velocity_template(name: str, system: CoupledSystem, seed: int = 0) -> np.ndarray:
    """Unit-L2 divergence-free no-slip velocity field of a named shape."""
    ops = system.ops
    g = system.grid
    if name == "zero":
        return np.zeros(g.n_faces)
    if name == "stokes1":
        psi = system.stokes.mode_psi(0)
    else:
        x0, y0 = g.cavity.lower_left
        lx, ly = 2 * g.cavity.half_width, 2 * g.cavity.half_height
        i, j = np.meshgrid(np.arange(1, g.nx), np.arange(1, g.ny), indexing="ij")
        s = i * g.hx / lx
        t = j * g.hy / ly
        if name == "vortex":
            psi = (s * (1 - s) * t * (1 - t)) ** 2
        elif name == "dipole":
            psi = (s * (1 - s) * t * (1 - t)) ** 2 * (s - 0.5)
        elif name == "random":
            rng = np.random.default_rng(seed)
            psi = rng.standard_normal(i.shape)
            # smooth towards low modes so the field is resolvable on the grid
            psi = ops.psi_from_velocity(ops.velocity_from_psi(psi.ravel())).reshape(i.shape)
            psi = (s * (1 - s) * t * (1 - t)) * np.cumsum(np.cumsum(psi, 0), 1)
        else:
            raise KeyError(f"unknown velocity template {name!r}; known: {VELOCITY_TEMPLATES}")
        psi = psi.ravel()
    v = ops.velocity_from_psi(psi)
    nv = g.norm(v)
    return v / nv if nv > 0 else v


def perturbed_state(
    system: CoupledSystem,
    *,
    velocity: np.ndarray | None = None,
    omega: float = 0.0,
    angle: float = 0.0,
    mode: str = "nonlinear",
) -> CoupledState:
    """State displaced from the rest configuration by ``angle`` (radians)."""
    v = np.zeros(system.grid.n_faces) if velocity is None else velocity
    phi = equilibrium_angle(system.xi) + angle
    if mode == "nonlinear":
        return state_from_phi(v, omega, phi, system.xi)
    # linear gamma matching the same angle to first order: gamma2 = -xi * angle
    return linear_state(v, omega, np.array([0.0, -system.xi * angle]), system.xi)
