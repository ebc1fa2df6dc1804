import numpy as np
import pytest
from scipy.linalg import expm

from liquidpendulum.spectral import HypothesisError
from liquidpendulum.toy import (
    PRESETS,
    ToySystem,
    integrate_toy,
    kernel_equation_residual,
    mild_check,
    mild_residual,
    parse_polynomial,
    preset,
    split,
    theorem1_verdict,
    verify_H4_H5,
)


def test_parse_polynomial():
    terms = parse_polynomial("u2*u3 - 0.5*u1^2 + 2", 0, 3)
    u = np.array([2.0, 3.0, 5.0])
    assert sum(m(u) for m in terms) == pytest.approx(15 - 2 + 2)
    assert parse_polynomial("0", 1, 3) == []
    with pytest.raises(ValueError):
        parse_polynomial("u4", 0, 3)
    with pytest.raises(ValueError):
        parse_polynomial("u1*x", 0, 3)


def test_jacobian_matches_finite_differences(rng):
    for name in PRESETS:
        s = preset(name)
        u = rng.standard_normal(s.n)
        J = s.N_jacobian(u)
        h = 1e-6
        fd = np.column_stack([(s.N(u + h * e) - s.N(u - h * e)) / (2 * h) for e in np.eye(s.n)])
        assert np.allclose(J, fd, atol=1e-7)


def test_preset_spectra():
    r = preset("cubic3").spectrum()
    assert r.kernel_dim == 1 and r.gamma_gap == pytest.approx(1.0)
    r = preset("spiral4").spectrum()
    assert r.kernel_dim == 1 and r.gamma_gap == pytest.approx(0.5)
    r = preset("unstable3").spectrum()
    assert r.unstable_count == 1
    with pytest.raises(KeyError):
        preset("quartic")


def test_split_examples():
    proj = preset("cubic3").projections()
    u0, u1 = split(np.array([2.0, 0.0, 0.0]), proj)
    assert np.allclose(u0, [2, 0, 0]) and not u1.any()
    u0, u1 = split(np.array([0.0, 1.0, -1.0]), proj)
    assert not u0.any() and np.allclose(u1, [0, 1, -1])


def test_linear_flow_closed_form():
    s = ToySystem("lin", np.diag([0.0, 1.0, 2.0]), [], (1, 1, 2))
    a, b, c = 0.3, -0.2, 0.5
    tr = integrate_toy(s, [a, b, c], 3.0, 0.01, stride=10)
    exact = np.column_stack([np.full_like(tr.t, a), b * np.exp(-tr.t), c * np.exp(-2 * tr.t)])
    assert np.max(np.abs(tr.u - exact)) < 1e-9


def test_kernel_points_are_equilibria():
    for name in ("cubic3", "spiral4"):
        s = preset(name)
        u = 0.37 * s.projections().right[:, 0]
        tr = integrate_toy(s, u, 5.0, 0.01)
        assert np.max(np.abs(tr.u - u)) < 1e-15


def test_blowup_is_flagged():
    s = preset("unstable3")
    tr = integrate_toy(s, [0.0, 1.0, 0.0], 100.0, 0.01)
    assert tr.status == "blowup" and tr.t[-1] < 100.0


def test_mild_residual_examples(rng):
    s = ToySystem("l1", np.diag([1.0, 2.0]), [], (1, 1, 2))
    assert mild_residual(s, [1.0, 1.0], 0.0) == 0.0
    tr = integrate_toy(s, [1.0, 1.0], 1.0, 1e-3, linear=True, stride=1000)
    assert np.allclose(tr.final, [np.exp(-1), np.exp(-2)], atol=1e-10)
    assert mild_residual(s, [1.0, 1.0], 1.0) < 1e-10
    X = rng.standard_normal((3, 3))
    L1 = X @ X.T + 0.5 * np.eye(3) + (X - X.T)
    s = ToySystem("r", L1, [], (1, 1, 2))
    u = rng.standard_normal(3)
    worst, bound = mild_check(s, u, dt=0.02)
    assert worst <= bound
    assert np.linalg.norm(expm(-L1 * 2.0) @ u) < np.linalg.norm(u)


def test_h45_presets():
    r = verify_H4_H5(preset("cubic3"))
    assert r.passed and r.kernel_residual == 0.0 and r.pure_slope > 1 and np.isfinite(r.lipschitz)
    assert r.pure_slope == pytest.approx(2.0, abs=0.1)
    r = verify_H4_H5(preset("spiral4"))
    assert r.passed and r.matches
    assert r.mixed_slope == pytest.approx(1.0, abs=0.1) and r.pure_slope == pytest.approx(2.0, abs=0.1)


def test_h45_controls():
    r = verify_H4_H5(ToySystem("zero", np.diag([0.0, 1.0, 2.0]), [], (1, 1, 2)))
    assert r.lipschitz == 0.0 and r.kernel_residual == 0.0 and r.passed
    linear = ToySystem.from_mapping("lin", {"L": "0 0 0; 0 1 0; 0 0 2", "N1": "u1", "N2": "u2", "N3": "u3"})
    r = verify_H4_H5(linear)
    assert not r.passed and r.reasons


def test_jordan_preset_refused():
    with pytest.raises(HypothesisError):
        preset("jordan2").projections()


def test_verdict_zero_initial_data_stays_zero():
    s = preset("cubic3")
    r = theorem1_verdict(s, [np.zeros(3)])
    run = r.details["runs"][0]
    assert run["sup_norm"] == 0.0 and run["final_u1"] == 0.0


def test_verdict_stable_preset_records_limit():
    s = preset("cubic3")
    grid = [0.05 * np.array([0.6, 0.8, 0.0]), 0.05 * np.array([0.0, 0.6, 0.8])]
    r = theorem1_verdict(s, grid)
    assert r.passed and r.classification == "stable"
    for run in r.details["runs"]:
        assert run["converged"] and run["rate"] >= 0.8 * 0.9 * 1.0
        assert run["kernel_eq_residual"] < 1e-4
        assert len(run["u_bar"]) == 3 and run["mild_ok"]


def test_kernel_equation_residual_small():
    s = preset("spiral4")
    proj = s.projections()
    tr = integrate_toy(s, [0.05, 0.05, -0.05, 0.05], 10.0, 0.001, proj=proj, stride=10)
    assert kernel_equation_residual(s, tr, proj) < 1e-5
