import numpy as np
import pytest

from liquidpendulum import decay
from liquidpendulum.decay import DecayFit, FitError, detect_t0, fit_exponential, local_maxima, rate_vs_gap
from liquidpendulum.dynamics import Trajectory, perturbed_state, simulate
from liquidpendulum.toy import ToySystem, integrate_toy


def test_exact_exponential():
    t = np.linspace(0, 5, 101)
    f = fit_exponential(t, 3 * np.exp(-2 * t))
    assert f.rate == pytest.approx(2.0, rel=1e-12) and f.amplitude == pytest.approx(3.0, rel=1e-12)
    assert f.residual < 1e-12 and f.reportable and f.method == "loglinear"


def test_perturbed_exponential():
    t = np.linspace(0, 5, 501)
    f = fit_exponential(t, 3 * np.exp(-2 * t) * (1 + 0.01 * np.sin(10 * t)))
    assert abs(f.rate - 2.0) <= 0.02


def test_constant_series():
    t = np.linspace(0, 5, 50)
    f = fit_exponential(t, np.full(50, 0.7))
    assert f.rate == pytest.approx(0.0, abs=1e-12) and not f.reportable


def test_window_and_offset_amplitude():
    t = np.linspace(0, 10, 201)
    f = fit_exponential(t, 5 * np.exp(-0.5 * t), (4.0, 10.0))
    assert f.t_a == pytest.approx(4.0) and f.amplitude == pytest.approx(5.0, rel=1e-10)
    assert f.n_samples == 121


def test_oscillatory_decay_uses_envelope():
    t = np.linspace(0, 10, 2001)
    y = np.exp(-0.8 * t) * np.abs(np.cos(3 * t)) + 1e-12
    f = fit_exponential(t, y)
    assert f.method == "envelope" and f.rate == pytest.approx(0.8, rel=0.02) and f.residual < 0.1
    assert fit_exponential(t, y, envelope=False).method == "loglinear"


def test_too_few_samples():
    with pytest.raises(FitError):
        fit_exponential(np.arange(10.0), np.exp(-np.arange(10.0)))
    t = np.linspace(0, 1, 40)
    y = np.where(t < 0.6, 0.0, np.exp(-t))
    with pytest.raises(FitError):
        fit_exponential(t, y)


def test_reportable_needs_two_efolds():
    t = np.linspace(0, 1, 50)
    assert not fit_exponential(t, np.exp(-t)).reportable
    assert fit_exponential(t, np.exp(-3 * t)).reportable


def test_local_maxima():
    assert list(local_maxima(np.array([0, 2, 1, 3, 3, 1, 0.5]))) == [1, 4]
    assert local_maxima(np.array([1.0, 2.0])).size == 0


def test_rate_vs_gap_synthetic_linear_system():
    # exact linear flow with gap 1: the slowest range mode sets the rate
    sys_ = ToySystem("lin", np.diag([0.0, 1.0, 2.0]), [], (1, 1, 2))
    tr = integrate_toy(sys_, [0.3, 0.2, 0.5], 12.0, 0.01, proj=sys_.projections(), stride=10)
    f = fit_exponential(tr.t, np.linalg.norm(tr.u1, axis=1), (6.0, 12.0))
    cmp = rate_vs_gap(f, sys_.spectrum())
    assert cmp.ratio == pytest.approx(1.0, abs=0.01) and cmp.passed
    assert not rate_vs_gap(0.5, 1.0).passed
    assert rate_vs_gap(DecayFit(1.1, 1, 0, 1, 0), 1.0, 0.8, 1.2).passed
    with pytest.raises(ValueError):
        rate_vs_gap(1.0, None)


def test_series_names(decay16):
    tr = simulate(decay16, perturbed_state(decay16, omega=0.1, angle=0.05), 1.0, 0.05, "nonlinear")
    for name in decay.SERIES:
        if name == "v_t_l2":
            continue
        t, y = decay.series(tr, name)
        assert len(t) == len(y) == len(tr)
    with pytest.raises(KeyError):
        decay.series(tr, "pressure")


def test_omega_dot_matches_finite_difference(decay16):
    tr = simulate(decay16, perturbed_state(decay16, omega=0.3, angle=0.2), 4.0, 0.005, "nonlinear", stride=4)
    od = decay.omega_dot(tr)
    fd = np.gradient(tr.records["omega"], tr.records["t"])
    scale = np.max(np.abs(fd))
    assert np.max(np.abs(od[2:-2] - fd[2:-2])) < 2e-2 * scale


def test_t0_small_data_is_first_record(decay16):
    tr = simulate(decay16, perturbed_state(decay16, omega=0.01), 40.0, 0.05, "linear", stride=4)
    r = detect_t0(tr, series_name="u_alpha")
    assert r.t0 == tr.records["t"][0] and not r.exhausted


def test_t0_growth_run_exhausts(sys16_minus):
    s = sys16_minus
    tr = simulate(s, perturbed_state(s, omega=1e-6, mode="linear"), 20.0, 0.05, "linear", stride=4)
    r = detect_t0(tr)
    assert r.t0 is None and r.exhausted


def test_t0_waits_for_energy_threshold():
    # synthetic record: large excess energy until t = 3, then clean decay
    t = np.linspace(0, 20, 401)
    exc = np.where(t < 3.0, 1.0, 1e-3 * np.exp(-(t - 3.0)))
    v = np.exp(-0.5 * t) * np.where(t < 3.0, 2 + np.sin(7 * t), 1.0)
    recs = {"t": t, "kinetic": exc - 1.0 + 1.0, "potential": np.full_like(t, -1.0), "v_l2": v}
    tr = Trajectory(recs, [], {"beta_sq": 1.0, "c_total": 1.0}, "completed", "", None)
    r = detect_t0(tr)
    assert r.t0 is not None and 3.0 <= r.t0 < 3.5
