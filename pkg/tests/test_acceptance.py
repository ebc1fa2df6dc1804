"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the per-criterion summary is
printed at the end of the session.
"""

import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE, DECAY, make_system

from liquidpendulum import decay, energy, experiment, spectral, toy
from liquidpendulum.cli import main
from liquidpendulum.config import resolve
from liquidpendulum.dynamics import perturbed_state, simulate, velocity_template


def verdict(n: int, checks: dict[str, bool], detail: str):
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    line = detail + ("" if ok else f"  failed: {', '.join(failed)}")
    ACCEPTANCE[n] = (ok, line)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {line}")
    assert ok, line


def test_criterion_01_kernel_and_hypotheses():
    checks, parts = {}, []
    for n in (32, 64):
        t0 = time.perf_counter()
        rep = spectral.spectrum(spectral.assemble_L(make_system(n, 1)), k=40)
        wall = time.perf_counter() - t0
        checks[f"{n}: kernel_dim"] = rep.kernel_dim == 1
        checks[f"{n}: kernel residual"] = rep.kernel_residual <= 1e-10
        checks[f"{n}: h2 angle"] = rep.h2_angle > 1e-6
        checks[f"{n}: imaginary axis"] = rep.imag_axis_gap > 1e-6
        checks[f"{n}: runtime"] = wall <= 120
        parts.append(
            f"{n}^2 {rep.method}: dim={rep.kernel_dim} res={rep.kernel_residual:.1e} "
            f"angle={rep.h2_angle:.3f} axis_gap={rep.imag_axis_gap:.2e} ({wall:.1f}s)"
        )
    verdict(1, checks, "; ".join(parts))


def test_criterion_02_dichotomy():
    plus = spectral.spectrum(spectral.assemble_L(make_system(32, 1)))
    s = make_system(32, -1)
    minus = spectral.spectrum(spectral.assemble_L(s))
    bad = minus.eigenvalues[minus.eigenvalues.real < -1e-6]
    rng = np.random.default_rng(1)
    v = 1e-6 * velocity_template("random", s, seed=1)
    u0 = perturbed_state(s, velocity=v, omega=1e-6 * rng.standard_normal(), angle=1e-6 * rng.standard_normal(), mode="linear")
    tr = simulate(s, u0, 20.0, 0.01, "linear", stride=5)
    t, y = decay.series(tr, "u_alpha")
    # final decade of growth
    k = np.nonzero(y >= y[-1] / 10)[0][0]
    fit = decay.fit_exponential(t, y, (t[k], t[-1]))
    growth = -fit.rate
    lam = abs(bad[0].real) if bad.size else math.nan
    rel = abs(growth / lam - 1)
    checks = {
        "plus stable": plus.unstable_count == 0,
        "plus gap": plus.gamma_gap is not None and plus.gamma_gap > 0,
        "one unstable": bad.size == 1,
        "growth rate": rel <= 0.10,
    }
    verdict(2, checks, f"gap(+)={plus.gamma_gap:.3e}; unstable eig={bad}; fitted growth={growth:.6f} (rel dev {rel:.1e})")


def test_criterion_03_degenerate_limit():
    checks, parts = {}, []
    for xi in (1, -1):
        s = make_system(32, xi, rho=1e-4)
        rep = spectral.spectrum(spectral.assemble_L(s))
        w = math.sqrt(s.params.beta_sq / s.params.c_total)
        expect = np.array([1j * w, -1j * w]) if xi == 1 else np.array([w, -w])
        nz = rep.nonzero()
        got = np.array([nz[np.argmin(np.abs(nz - z))] for z in expect])
        dev = float(np.max(np.abs(got - expect)) / w)
        checks[f"xi={xi}"] = dev <= 0.02
        parts.append(f"xi={xi:+d}: {np.round(got, 7)} vs {np.round(expect, 7)} (rel {dev:.1e})")
    verdict(3, checks, "; ".join(parts))


def test_criterion_04_linear_energy_identity():
    s = make_system(32, 1, **DECAY)
    u0 = perturbed_state(s, omega=0.1, mode="linear")
    res = []
    for dt in (0.02, 0.01, 0.005):
        tr = simulate(s, u0, 2.0, dt, "linear")
        res.append(float(np.max(np.abs(energy.linear_identity_residual(tr)))))
    ratios = [res[0] / res[1], res[1] / res[2]]
    si = make_system(32, 1, rho=1.0, mu=0.0, c_body=0.1, beta_sq=1.0, allow_inviscid=True)
    v = 0.1 * velocity_template("vortex", si)
    tr = simulate(si, perturbed_state(si, velocity=v, omega=0.1, angle=0.05, mode="linear"), 10.0, 0.01, "linear", stride=10)
    drift = energy.form_drift_rate(tr)
    checks = {"ratio 1": 3.5 <= ratios[0] <= 4.5, "ratio 2": 3.5 <= ratios[1] <= 4.5, "inviscid drift": drift <= 1e-10}
    verdict(4, checks, f"residuals {[f'{r:.2e}' for r in res]}, ratios {[round(r, 3) for r in ratios]}; mu=0 drift {drift:.1e}/time")


def test_criterion_05_quadratic_form_bounds():
    s = make_system(32, 1)
    g = s.grid
    rng = np.random.default_rng(5)
    violations = 0
    for k in range(10_000):
        if k % 2:
            v = rng.standard_normal(g.n_faces) * rng.uniform(1e-3, 1e3)
        else:
            v = s.ops.velocity_from_psi(rng.standard_normal(g.n_psi)) + rng.normal() * g.rigid_field()
        violations += not energy.lemma_bounds(v, s).ok
    E = energy.quadratic_E(g.rigid_field(), s)
    rel = abs(E - 1 / 7) / (1 / 7)
    checks = {"no violations": violations == 0, "rigid field": rel <= 1e-3}
    verdict(5, checks, f"{violations} violations in 10^4 fields; E(rigid)={E:.8f} vs 1/7 (rel {rel:.1e})")


@pytest.fixture(scope="module")
def decay32():
    s = make_system(32, 1, **DECAY)
    return s, spectral.spectrum(spectral.assemble_L(s))


def test_criterion_06_nonlinear_stability(decay32):
    s, rep = decay32
    gap = rep.gamma_gap
    checks, parts = {}, []
    for amp in (1e-3, 1e-2, 1e-1):
        u0 = perturbed_state(s, omega=amp)
        n0 = spectral.alpha_norm(u0, 0.75, s)
        tr = simulate(s, u0, 80.0, 0.01, "nonlinear", stride=5)
        t, y = decay.series(tr, "u_alpha")
        fit = decay.fit_exponential(t, y, (5.0, 80.0), "u_alpha")
        chi_err = float(np.hypot(tr.final.chi[0] - 1.0, tr.final.chi[1]))
        ratio = fit.rate / gap
        checks[f"{amp:g} bounded"] = tr.status == "completed" and float(y.max()) < 0.5
        checks[f"{amp:g} rate"] = ratio >= 0.8
        checks[f"{amp:g} residual"] = fit.residual < 0.15
        checks[f"{amp:g} chi"] = chi_err < 1e-3
        parts.append(f"|u0|={n0:.0e}: sup={y.max():.2e} k/gap={ratio:.3f} res={fit.residual:.3f} |chi-e1|={chi_err:.1e}")
    verdict(6, checks, f"gap={gap:.5f}; " + "; ".join(parts))


def test_criterion_07_nonlinear_instability():
    s = make_system(32, -1)
    checks, parts = {}, []
    for amp in (1e-2, 1e-4, 1e-6):
        tr = simulate(s, perturbed_state(s, omega=amp), 40.0, 0.01, "nonlinear", stride=5, stop_radius=0.5)
        t, y = decay.series(tr, "u_alpha")
        exited = tr.status == "exited" and y[-1] > 0.5
        checks[f"{amp:g}"] = exited
        parts.append(f"|u0|={amp:g}: exit at t={t[-1]:.2f}" if exited else f"|u0|={amp:g}: stayed ({tr.status})")
    verdict(7, checks, "; ".join(parts))


LARGE = ("largedata_deep", "largedata_mid", "largedata_near")
LARGE_SERIES = ("v_h2proxy", "v_t_l2", "omega", "omega_dot", "chi_minus_e1")


def test_criterion_08_large_data(tmp_path):
    small = experiment.run_simulate(resolve("xi_plus_smalldata").with_value("analysis.spectrum", "false"), tmp_path / "small")
    e_small = small.analysis["basin"]["initial_excess_energy"]
    checks, parts, t0s = {}, [], {}
    for name in LARGE:
        t0 = time.perf_counter()
        res = experiment.run_simulate(resolve(name), tmp_path / name)
        wall = time.perf_counter() - t0
        a = res.analysis
        b = a["basin"]
        audit = a["sei_audit"]
        t0s[name] = a["t0"]["t0"]
        checks[f"{name} inside basin"] = b["inside"]
        checks[f"{name} energy"] = b["initial_excess_energy"] >= 50 * e_small
        checks[f"{name} audit"] = audit["passed"] and audit["max_violation"] <= audit["tol"]
        checks[f"{name} t0"] = t0s[name] is not None and math.isfinite(t0s[name])
        checks[f"{name} runtime"] = wall <= 900
        rates = []
        for sname in LARGE_SERIES:
            f = a["fits"].get(sname, {})
            ok = "rate" in f and f["residual"] < 0.15 and f["rate"] > 0
            checks[f"{name} fit {sname}"] = ok
            if ok:
                rates.append(f["rate"])
        spread = max(rates) / min(rates) if rates else math.inf
        checks[f"{name} rates within 2x"] = spread <= 2.0
        parts.append(
            f"{name}: E0={b['initial_excess_energy']:.3f} ({b['initial_excess_energy'] / e_small:.0f}x) "
            f"viol/tol={audit['max_violation'] / audit['tol']:.2f} t0={t0s[name]} rates {min(rates or [0]):.4f}-{max(rates or [0]):.4f}"
        )
    checks["near-boundary t0 > deep t0"] = (
        t0s["largedata_near"] is not None and t0s["largedata_deep"] is not None and t0s["largedata_near"] > t0s["largedata_deep"]
    )
    rows = experiment.sweep(resolve("sweep_t0"), tmp_path / "sweep", threads=2)
    sweep_t0 = [r["t0"] for r in rows]
    checks["sweep t0 monotone"] = all(x is not None for x in sweep_t0) and all(np.diff(sweep_t0) >= 0)
    checks["sweep audits"] = all(r["audit_passed"] for r in rows)
    parts.append(f"sweep omega0={[r['value'] for r in rows]} -> t0={sweep_t0}")
    verdict(8, checks, "; ".join(parts))


def test_criterion_09_theorem1_lab():
    checks, parts = {}, []
    t0 = time.perf_counter()
    stable = toy.theorem1_verdict(toy.preset("cubic3"))
    runs = stable.details["runs"]
    checks["cubic3 verdict"] = stable.passed
    checks["cubic3 mild residuals"] = all(r["mild_ok"] for r in runs)
    drift = max(r["drift_ratio"] for r in runs)
    parts.append(
        f"cubic3: {len(runs)} runs pass={stable.passed} min rate={min(r['rate'] for r in runs):.4f} "
        f"(need {0.8 * stable.details['b']:.3f}) max drift/|u1(0)|={drift:.2e}"
    )
    sp4 = toy.theorem1_verdict(toy.preset("spiral4"))
    checks["spiral4 verdict"] = sp4.passed
    uns = toy.theorem1_verdict(toy.preset("unstable3"))
    exits = uns.details["exit_times"]
    checks["unstable3 exits"] = uns.classification == "unstable" and uns.passed and "1e-06" in exits
    parts.append(f"unstable3 exit times {exits}")
    try:
        toy.preset("jordan2").projections()
        refused = False
    except spectral.HypothesisError:
        refused = True
    checks["jordan2 refused"] = refused
    worst = 0.0
    for name in toy.PRESETS:
        s = toy.preset(name)
        u0 = toy.default_grid(s, norms=(0.05,), n_dirs=1, seed=3)[0]
        horizon = 10.0 if name == "unstable3" else 40.0
        prod = toy.integrate_toy(s, u0, horizon, 0.01, stride=10)
        fine = toy.integrate_toy(s, u0, horizon, 0.001, stride=100)
        rel = float(np.max(np.linalg.norm(prod.u - fine.u, axis=1)) / np.max(np.linalg.norm(fine.u, axis=1)))
        worst = max(worst, rel)
        checks[f"{name} rk4 oracle"] = prod.u.shape == fine.u.shape and rel <= 1e-8
    wall = time.perf_counter() - t0
    parts.append(f"RK4 dt/10 worst relative deviation {worst:.1e}; jordan2 refused={refused}; {wall:.1f}s")
    verdict(9, checks, "; ".join(parts))


def test_criterion_10_determinism(tmp_path, capsys):
    checks = {}
    for name in ("xi_plus_default", "xi_minus_smalldata"):
        a, b = tmp_path / f"{name}_a", tmp_path / f"{name}_b"
        codes = [main(["simulate", "--config", name, "--out", str(d)]) for d in (a, b)]
        checks[f"{name} exit"] = codes == [0, 0]
        for f in ("trajectory.csv", "energy.csv"):
            checks[f"{name} {f}"] = (a / f).read_bytes() == (b / f).read_bytes()
        capsys.readouterr()
        code = main(["compare", str(a), str(b)])
        rep = experiment.compare(a, b)
        checks[f"{name} compare"] = code == 0 and rep["max_deviation"] == 0.0
    verdict(10, checks, "reruns of xi_plus_default and xi_minus_smalldata: CSVs byte-identical, compare max deviation 0")
