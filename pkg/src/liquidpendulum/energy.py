"""Energy functionals, the strong energy inequality audit, quadratic-form
bounds, the linear energy identity and the basin-of-attraction test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

CONVENTIONS = ("consistent", "inertia_scaled")


def _check_convention(convention: str) -> str:
    if convention not in CONVENTIONS:
        raise ValueError(f"energy_convention must be one of {CONVENTIONS}, got {convention!r}")
    return convention


@dataclass(frozen=True)
class EnergyRecord:
    t: float
    kinetic: float
    potential: float
    dissipation: float
    a: float
    E: float
    E1: float
    lyap_linear: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential


def quadratic_E(v: np.ndarray, system) -> float:
    """``rho ||v||^2 - C a(v)^2``."""
    p = system.params
    v = np.asarray(v, dtype=float)
    a = system.coupling_a(v)
    return p.rho * system.grid.inner(v, v) - p.c_total * a * a


def potential_energy(chi1: float, params, convention: str = "consistent") -> float:
    """``-beta^2 chi1``; the alternative convention carries an extra factor C."""
    scale = params.c_total if _check_convention(convention) == "inertia_scaled" else 1.0
    return -scale * params.beta_sq * chi1


def energy_record(state, v_t: np.ndarray | None, system, convention: str = "consistent") -> EnergyRecord:
    """All energy functionals of one state; ``E1`` is NaN without a ``v_t`` estimate."""
    p = system.params
    v = np.asarray(state.v, dtype=float)
    a = system.coupling_a(v)
    E = quadratic_E(v, system)
    kinetic = 0.5 * (E + p.c_total * (state.omega - a) ** 2)
    lyap = 0.5 * (E + p.c_total * (state.omega - a) ** 2 + p.beta_sq / state.xi * state.gamma[1] ** 2)
    E1 = quadratic_E(v_t, system) if v_t is not None else math.nan
    return EnergyRecord(
        t=state.time,
        kinetic=kinetic,
        potential=potential_energy(state.chi[0], p, convention),
        dissipation=p.mu * system.ops.grad_norm_sq(v),
        a=a,
        E=E,
        E1=E1,
        lyap_linear=lyap,
    )


# -- quadratic-form bounds ---------------------------------------------------------


@dataclass(frozen=True)
class BoundCheck:
    lower: float
    value: float
    upper: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.lower - self.tol <= self.value <= self.upper + self.tol


def lemma_bounds(v: np.ndarray, system, rtol: float = 1e-12) -> BoundCheck:
    """``(C_B / C) rho ||v||^2 <= E(v) <= rho ||v||^2``."""
    p = system.params
    v = np.asarray(v, dtype=float)
    kin = p.rho * system.grid.inner(v, v)
    return BoundCheck(p.c_body / p.c_total * kin, quadratic_E(v, system), kin, rtol * max(kin, 1e-300))


# -- strong energy inequality ----------------------------------------------------------


@dataclass
class AuditResult:
    passed: bool
    max_violation: float
    tol: float
    worst_pair: tuple[int, int]
    first_violation: int | None
    violation_series: np.ndarray

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_violation": self.max_violation,
            "tol": self.tol,
            "worst_pair": list(self.worst_pair),
            "first_violation": self.first_violation,
        }


def sei_audit(traj, *, tol: float | None = None, tol_factor: float = 10.0, rest_potential: float | None = None) -> AuditResult:
    """Check ``F(t) <= F(s) + tol`` for every record pair ``s <= t`` where
    ``F = kinetic + potential + integral of dissipation``. Linear-mode runs
    use their quadratic form ``lyap_linear`` (rest value 0) in place of the
    kinetic plus potential energy.

    The default tolerance is ``tol_factor * dt^2 * (excess initial energy)``
    with ``dt`` the largest record spacing and the excess measured above the
    lower rest state (``-beta^2`` in the consistent convention). The worst
    pair is found in one pass with a running minimum of ``F``.
    """
    r = traj.records
    t = np.asarray(r["t"], dtype=float)
    if len(t) < 2:
        raise ValueError("audit needs at least two records")
    linear = traj.meta.get("mode") == "linear"
    energy = r["lyap_linear"] if linear else r["kinetic"] + r["potential"]
    F = energy + cumulative_trapezoid(r["dissipation"], t, initial=0.0)
    if tol is None:
        dt = float(np.max(np.diff(t)))
        if rest_potential is None:
            rest_potential = 0.0 if linear else _rest_potential(traj)
        base = F[0] - rest_potential
        tol = tol_factor * dt * dt * max(base, 0.0)
    run_min = np.minimum.accumulate(F)
    arg_min = np.zeros(len(F), dtype=int)
    for k in range(1, len(F)):
        arg_min[k] = k if F[k] <= F[arg_min[k - 1]] else arg_min[k - 1]
    viol = F - run_min
    k = int(np.argmax(viol))
    bad = np.nonzero(viol > tol)[0]
    return AuditResult(
        passed=bool(viol[k] <= tol),
        max_violation=float(viol[k]),
        tol=float(tol),
        worst_pair=(int(arg_min[k]), k),
        first_violation=int(bad[0]) if bad.size else None,
        violation_series=viol,
    )


def _rest_potential(traj) -> float:
    """Potential of the lower rest state in the trajectory's convention."""
    m = traj.meta
    beta_sq = m.get("beta_sq", 1.0)
    scale = m.get("c_total", 1.0) if m.get("energy_convention", "consistent") == "inertia_scaled" else 1.0
    return -scale * beta_sq


# -- linear identity -------------------------------------------------------------------


def linear_identity_residual(traj) -> np.ndarray:
    """``d/dt lyap_linear + mu ||grad v||^2`` at record midpoints.

    The derivative is a first difference between consecutive records and the
    dissipation its trapezoidal average.
    """
    if traj.meta.get("mode") != "linear":
        raise ValueError(f"identity residual needs a linear-mode trajectory, got mode={traj.meta.get('mode')!r}")
    r = traj.records
    t = r["t"]
    if len(t) < 2:
        return np.zeros(0)
    return np.diff(r["lyap_linear"]) / np.diff(t) + 0.5 * (r["dissipation"][1:] + r["dissipation"][:-1])


def form_drift_rate(traj) -> float:
    """Largest change of ``lyap_linear`` per unit time over a run."""
    r = traj.records
    span = float(r["t"][-1] - r["t"][0])
    return float(np.max(np.abs(r["lyap_linear"] - r["lyap_linear"][0]))) / span if span > 0 else 0.0


# -- basin of attraction ------------------------------------------------------------------


def basin_margin(state, system, convention: str = "consistent") -> float:
    """``2 beta^2 (1 + chi1) - [rho ||v||^2 + C (omega - a)^2]``; positive inside."""
    p = system.params
    v = np.asarray(state.v, dtype=float)
    a = system.coupling_a(v)
    lhs = p.rho * system.grid.inner(v, v) + p.c_total * (state.omega - a) ** 2
    scale = p.c_total if _check_convention(convention) == "inertia_scaled" else 1.0
    return 2.0 * scale * p.beta_sq * (1.0 + state.chi[0]) - lhs


def basin_check(state, system, convention: str = "consistent") -> bool:
    return basin_margin(state, system, convention) > 0.0
