"""Physical parameters, state containers and equilibrium conventions.

The cavity flow is planar: every point of the rectangular cavity carries
body-frame coordinates ``(x1, x2)`` measured from the suspension point O,
``e3 x x = (-x2, x1)`` and ``e3 x v = (-v2, v1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ParameterError(ValueError):
    """Raised when a physical or geometric parameter is out of range."""

    def __init__(self, field_name: str, value, reason: str):
        self.field_name = field_name
        self.value = value
        super().__init__(f"{field_name}={value!r}: {reason}")


@dataclass(frozen=True)
class CavityGeometry:
    half_width: float = 0.5
    half_height: float = 0.5
    center_offset: tuple[float, float] = (0.0, 0.0)
    nx: int = 32
    ny: int = 32

    def __post_init__(self):
        if not self.half_width > 0:
            raise ParameterError("half_width", self.half_width, "must be > 0")
        if not self.half_height > 0:
            raise ParameterError("half_height", self.half_height, "must be > 0")
        if int(self.nx) != self.nx or self.nx < 8:
            raise ParameterError("nx", self.nx, "must be an integer >= 8")
        if int(self.ny) != self.ny or self.ny < 8:
            raise ParameterError("ny", self.ny, "must be an integer >= 8")
        object.__setattr__(self, "center_offset", (float(self.center_offset[0]), float(self.center_offset[1])))

    @property
    def hx(self) -> float:
        return 2.0 * self.half_width / self.nx

    @property
    def hy(self) -> float:
        return 2.0 * self.half_height / self.ny

    @property
    def lower_left(self) -> tuple[float, float]:
        cx, cy = self.center_offset
        return cx - self.half_width, cy - self.half_height

    def with_resolution(self, nx: int, ny: int | None = None) -> "CavityGeometry":
        return CavityGeometry(self.half_width, self.half_height, self.center_offset, nx, nx if ny is None else ny)


@dataclass(frozen=True)
class PhysicalParams:
    rho: float
    mu: float
    c_body: float
    beta_sq: float
    cavity: CavityGeometry
    c_liquid: float
    c_total: float

    @property
    def beta(self) -> float:
        return math.sqrt(self.beta_sq)


def liquid_moment(rho: float, cavity: CavityGeometry) -> float:
    """Midpoint-rule value of rho * integral |x|^2 over the cavity, on pressure cells."""
    x0, y0 = cavity.lower_left
    hx, hy = cavity.hx, cavity.hy
    xc = x0 + (np.arange(cavity.nx) + 0.5) * hx
    yc = y0 + (np.arange(cavity.ny) + 0.5) * hy
    # separable sum keeps the result independent of summation order quirks
    sx = float(np.sum(xc**2))
    sy = float(np.sum(yc**2))
    return rho * hx * hy * (sx * cavity.ny + sy * cavity.nx)


def derive_params(
    rho: float,
    mu: float,
    c_body: float,
    beta_sq: float,
    cavity: CavityGeometry | None = None,
    *,
    allow_zero_density: bool = False,
    allow_inviscid: bool = False,
) -> PhysicalParams:
    """Validate user parameters and assemble the derived moments of inertia.

    ``allow_zero_density`` admits the degenerate rho = 0 preset, where the
    liquid carries no inertia and ``c_total == c_body``. ``allow_inviscid``
    admits mu = 0, used only to check conservation of the skew part.
    """
    cavity = cavity or CavityGeometry()
    for name, value in (("rho", rho), ("mu", mu), ("c_body", c_body), ("beta_sq", beta_sq)):
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ParameterError(name, value, "must be a finite number")
    if rho < 0 or (rho == 0 and not allow_zero_density):
        raise ParameterError("rho", rho, "must be > 0")
    if mu < 0 or (mu == 0 and not allow_inviscid):
        raise ParameterError("mu", mu, "must be > 0")
    if c_body <= 0:
        raise ParameterError("c_body", c_body, "must be > 0")
    if beta_sq <= 0:
        raise ParameterError("beta_sq", beta_sq, "must be > 0")
    c_liquid = liquid_moment(float(rho), cavity)
    return PhysicalParams(
        rho=float(rho),
        mu=float(mu),
        c_body=float(c_body),
        beta_sq=float(beta_sq),
        cavity=cavity,
        c_liquid=c_liquid,
        c_total=float(c_body) + c_liquid,
    )


def check_xi(xi: int) -> int:
    if xi not in (1, -1):
        raise ParameterError("xi", xi, "must be +1 or -1")
    return int(xi)


def equilibrium_angle(xi: int) -> float:
    """Pendulum angle of the rest state s0+ (xi=+1, phi=0) or s0- (xi=-1, phi=pi)."""
    return 0.0 if check_xi(xi) == 1 else math.pi


def chi_of_phi(phi: float) -> np.ndarray:
    return np.array([math.cos(phi), -math.sin(phi)])


def gamma_of_phi(phi: float, xi: int) -> np.ndarray:
    """``chi(phi) - xi e1`` evaluated through the displacement from the rest
    angle, so the rest state itself gives exactly zero."""
    d = phi - equilibrium_angle(xi)
    return xi * np.array([-2.0 * math.sin(0.5 * d) ** 2, -math.sin(d)])


@dataclass(frozen=True)
class CoupledState:
    """One snapshot of the perturbation ``(v, omega, gamma)`` around ``xi e1``.

    ``v`` is the full staggered face vector (u-faces then v-faces). In
    nonlinear runs the orientation is carried by ``phi`` and ``gamma`` is
    ``chi(phi) - xi e1``; in linearised runs ``gamma`` evolves on its own
    and ``phi`` is only a reporting convenience.
    """

    v: np.ndarray
    omega: float
    phi: float
    gamma: np.ndarray
    xi: int
    time: float = 0.0
    p: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        v.setflags(write=False)
        g = np.array(self.gamma, dtype=float).reshape(2)
        g.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "phi", float(self.phi))
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "xi", check_xi(self.xi))

    @property
    def chi(self) -> np.ndarray:
        return self.gamma + np.array([self.xi, 0.0])

    def replace(self, **changes) -> "CoupledState":
        kw = dict(v=self.v, omega=self.omega, phi=self.phi, gamma=self.gamma, xi=self.xi, time=self.time, p=self.p)
        kw.update(changes)
        return CoupledState(**kw)


def state_from_phi(v, omega: float, phi: float, xi: int, time: float = 0.0) -> CoupledState:
    return CoupledState(v=v, omega=omega, phi=phi, gamma=gamma_of_phi(phi, check_xi(xi)), xi=xi, time=time)


def state_from_chi(v, omega: float, chi, xi: int, time: float = 0.0) -> CoupledState:
    """Build a state from an orientation vector on the unit circle.

    ``chi`` is renormalised before use; a norm off by more than 1e-6 is
    treated as a corrupted orientation.
    """
    chi = np.asarray(chi, dtype=float).reshape(2)
    norm = math.hypot(chi[0], chi[1])
    if abs(norm - 1.0) > 1e-6:
        raise ParameterError("chi", tuple(chi), f"|chi| = {norm!r} is not 1")
    chi = chi / norm
    # angle measured from the rest state, wrapped into (-pi, pi]
    eq = equilibrium_angle(xi)
    d = math.atan2(-chi[1], chi[0]) - eq
    d = d - 2.0 * math.pi * math.ceil((d - math.pi) / (2.0 * math.pi))
    phi = eq + d
    return CoupledState(v=v, omega=omega, phi=phi, gamma=chi - np.array([check_xi(xi), 0.0]), xi=xi, time=time)


def linear_state(v, omega: float, gamma, xi: int, time: float = 0.0) -> CoupledState:
    """State for the linearised problem, where ``gamma`` is unconstrained."""
    gamma = np.asarray(gamma, dtype=float).reshape(2)
    chi = gamma + np.array([check_xi(xi), 0.0])
    phi = math.atan2(-chi[1], chi[0]) if np.any(chi) else equilibrium_angle(xi)
    return CoupledState(v=v, omega=omega, phi=phi, gamma=gamma, xi=xi, time=time)
