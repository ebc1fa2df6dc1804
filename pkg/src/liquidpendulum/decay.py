"""Exponential decay fits, transient-time detection and rate/gap comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

MIN_SAMPLES = 20
MIN_EFOLDS = 2.0
ENVELOPE_SWITCH = 0.1
MIN_MAXIMA = 4

SERIES = ("u_alpha", "v_alpha", "v_l2", "v_h2proxy", "v_t_l2", "omega", "omega_dot", "gamma", "chi_minus_e1")


class FitError(ValueError):
    """Not enough usable samples for a fit."""


@dataclass
class DecayFit:
    rate: float
    amplitude: float
    t_a: float
    t_b: float
    residual: float
    series_id: str = ""
    n_samples: int = 0
    method: str = "loglinear"
    clipped: int = 0

    @property
    def efolds(self) -> float:
        return self.rate * (self.t_b - self.t_a)

    @property
    def reportable(self) -> bool:
        """At least 20 samples spanning at least two e-foldings."""
        return self.n_samples >= MIN_SAMPLES and abs(self.efolds) >= MIN_EFOLDS and math.isfinite(self.residual)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["efolds"] = self.efolds
        d["reportable"] = self.reportable
        return d


def _loglinear(t: np.ndarray, logy: np.ndarray) -> tuple[float, float, float]:
    A = np.column_stack([np.ones_like(t), t - t[0]])
    coef, *_ = np.linalg.lstsq(A, logy, rcond=None)
    resid = float(np.max(np.abs(logy - A @ coef))) if len(t) else math.nan
    # amplitude is referred back to t = 0
    return -float(coef[1]), float(coef[0] - coef[1] * t[0]), resid


def local_maxima(y: np.ndarray) -> np.ndarray:
    """Indices of interior samples not smaller than either neighbour."""
    if len(y) < 3:
        return np.zeros(0, dtype=int)
    k = np.nonzero((y[1:-1] >= y[:-2]) & (y[1:-1] > y[2:]))[0] + 1
    return k


def fit_exponential(t, y, window: tuple[float, float] | None = None, series_id: str = "", *, envelope: bool = True) -> DecayFit:
    """Fit ``y ~ c exp(-rate t)`` by least squares on ``log y``.

    ``residual`` is the largest absolute deviation of ``log y`` from the fit
    (a relative deviation of ``y``). When it exceeds 0.1 and enough local
    maxima exist, the envelope of maxima is fitted instead; this handles
    oscillatory decay.
    """
    t = np.asarray(t, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if window is not None:
        m = (t >= window[0]) & (t <= window[1])
        t, y = t[m], y[m]
    finite = np.isfinite(y)
    t, y = t[finite], y[finite]
    clipped = int(np.sum(y <= 0))
    if len(t) - clipped < MIN_SAMPLES:
        raise FitError(f"{series_id or 'series'}: {len(t) - clipped} positive samples in window, need {MIN_SAMPLES}")
    logy = np.log(np.maximum(y, 1e-300))
    rate, logc, resid = _loglinear(t, logy)
    fit = DecayFit(rate, math.exp(logc), float(t[0]), float(t[-1]), resid, series_id, len(t), "loglinear", clipped)
    if envelope and resid > ENVELOPE_SWITCH:
        k = local_maxima(y)
        if len(k) >= MIN_MAXIMA:
            r2, c2, res2 = _loglinear(t[k], logy[k])
            if res2 < resid:
                fit = DecayFit(r2, math.exp(c2), float(t[0]), float(t[-1]), res2, series_id, len(t), "envelope", clipped)
    return fit


# -- series from trajectories ------------------------------------------------------------


def series(traj, name: str) -> tuple[np.ndarray, np.ndarray]:
    """Scalar norm series of a trajectory by name (see ``SERIES``)."""
    r = traj.records
    t = r["t"]
    if name == "u_alpha":
        y = r["v_alpha"] + np.abs(r["omega"]) + np.hypot(r["gamma1"], r["gamma2"])
    elif name in ("v_alpha", "v_l2", "v_h2proxy", "v_t_l2"):
        y = r[name]
    elif name == "omega":
        y = np.abs(r["omega"])
    elif name == "omega_dot":
        y = np.abs(omega_dot(traj))
    elif name == "gamma":
        y = np.hypot(r["gamma1"], r["gamma2"])
    elif name == "chi_minus_e1":
        y = np.hypot(r["chi1"] - 1.0, r["chi2"])
    else:
        raise KeyError(f"unknown series {name!r}; known: {SERIES}")
    return t, np.asarray(y, dtype=float)


def omega_dot(traj) -> np.ndarray:
    """Angular acceleration from the torque balance, ``a' + (beta^2 / C) chi2``."""
    r = traj.records
    m = traj.meta
    a_dot = np.gradient(r["a"], r["t"]) if len(r["t"]) > 1 else np.zeros_like(r["a"])
    return a_dot + m["beta_sq"] / m["c_total"] * r["chi2"]


def fit_series(traj, name: str, window: tuple[float, float] | None = None) -> DecayFit:
    t, y = series(traj, name)
    return fit_exponential(t, y, window, name)


# -- transient time ------------------------------------------------------------------------------


@dataclass
class T0Result:
    t0: float | None
    threshold: float
    exhausted: bool
    fit: DecayFit | None = None

    def to_dict(self) -> dict:
        return {"t0": self.t0, "threshold": self.threshold, "exhausted": self.exhausted, "fit": self.fit.to_dict() if self.fit else None}


def excess_energy(traj) -> np.ndarray:
    """Kinetic plus potential energy above the lower rest state."""
    r = traj.records
    m = traj.meta
    scale = m["c_total"] if m.get("energy_convention", "consistent") == "inertia_scaled" else 1.0
    return r["kinetic"] + r["potential"] + scale * m["beta_sq"]


def detect_t0(
    traj,
    energy_threshold: float | None = None,
    *,
    window: float | None = None,
    residual_tol: float = ENVELOPE_SWITCH,
    candidates: int = 200,
    series_name: str = "v_l2",
) -> T0Result:
    """Onset of clean exponential decay.

    ``t0`` is the first record time after which the excess energy stays
    below ``energy_threshold`` and a fit of ``||v||`` over ``[t0, t0 + window]``
    has residual below ``residual_tol``. The threshold defaults to 1% of the
    potential barrier ``2 beta^2`` between the two rest states; the window
    defaults to a quarter of the run.
    """
    t = traj.records["t"]
    if energy_threshold is None:
        energy_threshold = 0.01 * 2.0 * traj.meta["beta_sq"]
    if window is None:
        window = 0.25 * (t[-1] - t[0])
    exc = excess_energy(traj)
    # suffix maximum: energy stays below the threshold from index k on
    stays = np.maximum.accumulate(exc[::-1])[::-1] < energy_threshold
    ts, ys = series(traj, series_name)
    last_start = t[-1] - window
    idx = np.unique(np.linspace(0, len(t) - 1, min(candidates, len(t))).astype(int))
    for k in idx:
        if t[k] > last_start + 1e-12:
            break
        if not stays[k]:
            continue
        try:
            fit = fit_exponential(ts, ys, (t[k], t[k] + window), series_name)
        except FitError:
            continue
        if fit.residual < residual_tol and fit.rate > 0:
            return T0Result(float(t[k]), energy_threshold, False, fit)
    return T0Result(None, energy_threshold, True, None)


# -- rate versus gap ------------------------------------------------------------------------------


@dataclass
class RateComparison:
    rate: float
    gap: float
    ratio: float
    lower: float
    upper: float | None
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def rate_vs_gap(fit: DecayFit | float, gap, lower: float = 0.8, upper: float | None = None) -> RateComparison:
    """Compare a fitted rate with a spectral gap (a number or a report)."""
    g = getattr(gap, "gamma_gap", gap)
    if g is None or not g > 0:
        raise ValueError(f"rate comparison needs a positive gap, got {g!r}")
    rate = fit.rate if isinstance(fit, DecayFit) else float(fit)
    ratio = rate / g
    ok = ratio >= lower and (upper is None or ratio <= upper)
    return RateComparison(rate, float(g), ratio, lower, upper, bool(ok))
