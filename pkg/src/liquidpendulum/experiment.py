"""Experiment orchestration: build systems from configs, run them, write
artifacts and derive verdicts."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import artifacts, decay, energy, spectral, toy
from .config import ConfigError, ExperimentConfig
from .dynamics import CoupledSystem, SolverError, perturbed_state, simulate, velocity_template
from .model import CavityGeometry, ParameterError, derive_params

log = logging.getLogger(__name__)


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# -- building blocks ----------------------------------------------------------------------


def build_system(cfg: ExperimentConfig) -> CoupledSystem:
    ph, cv = cfg["physics"], cfg["cavity"]
    try:
        cavity = CavityGeometry(cv["half_width"], cv["half_height"], (cv["center_x"], cv["center_y"]), cv["nx"], cv["ny"])
        params = derive_params(
            ph["rho"], ph["mu"], ph["c_body"], ph["beta_sq"], cavity, allow_inviscid=cfg["scenario"]["mode"] == "linear"
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    return CoupledSystem(params, cfg["scenario"]["xi"])


def excess_energy_of(state, system: CoupledSystem, convention: str = "consistent") -> float:
    rec = energy.energy_record(state, None, system, convention)
    p = system.params
    scale = p.c_total if convention == "inertia_scaled" else 1.0
    return rec.kinetic + rec.potential + scale * p.beta_sq


def build_initial(cfg: ExperimentConfig, system: CoupledSystem):
    ini = cfg["initial"]
    mode = cfg["scenario"]["mode"]
    try:
        shape = velocity_template(ini["velocity"], system, ini["seed"])
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    v = ini["velocity_amplitude"] * shape

    def state(s: float):
        return perturbed_state(system, velocity=s * v, omega=s * ini["omega"], angle=s * ini["angle"], mode=mode)

    level = ini["energy_level"]
    if level > 0:
        conv = cfg["analysis"]["energy_convention"]
        if excess_energy_of(state(1.0), system, conv) == 0.0:
            raise ConfigError("[initial] energy_level needs a nonzero velocity, omega or angle to scale")
        hi = 1.0
        while excess_energy_of(state(hi), system, conv) < level:
            hi *= 2.0
            if hi > 1e6:
                raise ConfigError(f"[initial] energy_level {level} is not reachable")
        s = brentq(lambda x: excess_energy_of(state(x), system, conv) - level, 0.0, hi, xtol=1e-15, rtol=1e-15)
        return state(s)
    return state(1.0)


def spectrum_report(cfg: ExperimentConfig, system: CoupledSystem) -> spectral.SpectrumReport:
    return spectral.spectrum(spectral.assemble_L(system), k=cfg["analysis"]["spectrum_k"])


# -- decay analysis of a trajectory -------------------------------------------------------------


def analyse(traj, cfg: ExperimentConfig, gap: float | None) -> dict:
    """Transient time, per-series fits, rate/gap comparisons and the energy audit."""
    an = cfg["analysis"]
    out: dict = {"status": traj.status}
    if traj.meta.get("mode") == "linear":
        res = energy.linear_identity_residual(traj)
        out["linear_identity"] = {"max_abs_residual": float(np.max(np.abs(res))) if res.size else 0.0, "form_drift_rate": energy.form_drift_rate(traj)}
    if len(traj) >= 2:
        out["sei_audit"] = energy.sei_audit(traj).to_dict()
    t0 = decay.detect_t0(
        traj,
        None if an["t0_threshold"] < 0 else an["t0_threshold"],
        window=None if an["t0_window"] < 0 else an["t0_window"],
    )
    out["t0"] = t0.to_dict()
    t_end = float(traj.records["t"][-1])
    start = an["fit_start"] if an["fit_start"] >= 0 else (t0.t0 if t0.t0 is not None else 0.0)
    end = an["fit_end"] if an["fit_end"] >= 0 else t_end
    fits = {}
    for name in an["fit_series"].split():
        try:
            f = decay.fit_series(traj, name, (start, end))
        except (decay.FitError, KeyError) as exc:
            fits[name] = {"error": str(exc)}
            continue
        entry = f.to_dict()
        if gap is not None and traj.meta.get("xi") == 1:
            entry["vs_gap"] = decay.rate_vs_gap(f, gap, an["gap_ratio"]).to_dict()
        fits[name] = entry
    out["fits"] = fits
    norms = decay.series(traj, "u_alpha")[1]
    above = np.nonzero(norms > an["exit_radius"])[0]
    out["exit"] = {"radius": an["exit_radius"], "time": float(traj.records["t"][above[0]]) if above.size else None}
    return out


# -- runs -----------------------------------------------------------------------------------------


@dataclass
class RunResult:
    out: Path
    files: dict[str, Path]
    trajectory: object = None
    spectrum: spectral.SpectrumReport | None = None
    analysis: dict = field(default_factory=dict)
    status: str = "completed"


def _manifest(cfg: ExperimentConfig, out: Path, files: dict[str, Path], wall: float, traj, extra: dict | None = None) -> Path:
    payload = {
        "code_version": code_version(),
        "scenario": cfg["scenario"]["name"],
        "wall_time_s": wall,
        "status": getattr(traj, "status", "completed"),
        "message": getattr(traj, "message", ""),
        "run_meta": getattr(traj, "meta", {}),
        "files": {k: {"name": p.name, "sha256": artifacts.sha256_file(p)} for k, p in files.items()},
        "config": cfg.dumps(),
    }
    if extra:
        payload.update(extra)
    return artifacts.write_json(out / artifacts.FILES["manifest"], payload, cfg.hash, "manifest")


def run_simulate(cfg: ExperimentConfig, out: str | Path) -> RunResult:
    """Simulate a pendulum scenario and write all artifacts to ``out``."""
    if cfg["scenario"]["kind"] != "pendulum":
        raise ConfigError("simulate needs a pendulum scenario")
    out = Path(out)
    start = time.perf_counter()
    system = build_system(cfg)
    initial = build_initial(cfg, system)
    t = cfg["time"]
    an = cfg["analysis"]
    h = cfg.hash
    try:
        traj = simulate(
            system,
            initial,
            t["horizon"],
            t["dt"],
            cfg["scenario"]["mode"],
            stride=t["stride"],
            snapshot_stride=t["snapshot_stride"],
            alpha=an["alpha"],
            energy_convention=an["energy_convention"],
            stop_radius=t["stop_radius"] if t["stop_radius"] > 0 else None,
        )
    except SolverError as exc:
        partial = getattr(exc, "trajectory", None)
        if partial is not None:
            files = artifacts.write_trajectory_csvs(partial, out, h)
            _manifest(cfg, out, files, time.perf_counter() - start, partial)
        raise
    files = artifacts.write_trajectory_csvs(traj, out, h)
    report = spectrum_report(cfg, system) if an["spectrum"] else None
    files["spectrum"] = artifacts.write_json(out / artifacts.FILES["spectrum"], report.to_dict() if report else {"skipped": True}, h, "spectrum")
    analysis = analyse(traj, cfg, report.gamma_gap if report else None)
    analysis["basin"] = {
        "margin": energy.basin_margin(initial, system, an["energy_convention"]),
        "inside": energy.basin_margin(initial, system, an["energy_convention"]) > an["basin_margin"],
        "initial_excess_energy": excess_energy_of(initial, system, an["energy_convention"]),
    }
    files["decay"] = artifacts.write_json(out / artifacts.FILES["decay"], analysis, h, "decay")
    if t["snapshot_stride"]:
        files["snapshots"] = out / artifacts.FILES["snapshots"]
        artifacts.atomic_write(files["snapshots"], artifacts.snapshot_bytes(traj.snapshots, h))
    files["manifest"] = _manifest(cfg, out, files, time.perf_counter() - start, traj)
    return RunResult(out, files, traj, report, analysis, traj.status)


def run_spectrum(cfg: ExperimentConfig, out: str | Path) -> RunResult:
    out = Path(out)
    start = time.perf_counter()
    system = build_system(cfg)
    report = spectrum_report(cfg, system)
    files = {"spectrum": artifacts.write_json(out / artifacts.FILES["spectrum"], report.to_dict(), cfg.hash, "spectrum")}
    files["manifest"] = _manifest(cfg, out, files, time.perf_counter() - start, None)
    return RunResult(out, files, None, report, {})


def run_fit(run_dir: str | Path, cfg: ExperimentConfig | None = None) -> dict:
    """Refit the decay series of an existing run from its CSV artifacts.

    The CSVs do not carry ``||v_t||``; it is replaced by ``sqrt(E1 / rho)``,
    an equivalent norm with the same decay rate.
    """
    run_dir = Path(run_dir)
    traj = artifacts.load_run(run_dir)
    manifest = artifacts.read_json(run_dir / artifacts.FILES["manifest"])
    cfg = cfg or ExperimentConfig.loads(manifest["config"])
    traj.records["v_t_l2"] = np.sqrt(np.maximum(traj.records["E1"], 0.0) / cfg["physics"]["rho"])
    gap = None
    spec_path = run_dir / artifacts.FILES["spectrum"]
    if spec_path.exists():
        gap = artifacts.read_json(spec_path).get("gamma_gap")
    analysis = analyse(traj, cfg, gap)
    passed = all("error" not in f and f.get("vs_gap", {}).get("passed", True) for f in analysis["fits"].values())
    analysis["passed"] = passed
    return analysis


def run_audit(run_dir: str | Path) -> dict:
    traj = artifacts.load_run(run_dir)
    a = energy.sei_audit(traj)
    out = {"sei_audit": a.to_dict(), "passed": a.passed}
    if traj.meta.get("mode") == "linear":
        res = energy.linear_identity_residual(traj)
        out["linear_identity"] = {"max_abs_residual": float(np.max(np.abs(res))) if res.size else 0.0}
    return out


def run_toy(cfg: ExperimentConfig, out: str | Path) -> dict:
    out = Path(out)
    tc = cfg["toy"]
    try:
        sys_ = toy.preset(tc["preset"])
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    report: dict = {"preset": sys_.name, "spectrum": sys_.spectrum().to_dict()}
    try:
        sys_.projections()
    except spectral.HypothesisError as exc:
        report.update({"refused": str(exc), "passed": False})
    else:
        report["h4_h5"] = toy.verify_H4_H5(sys_).to_dict()
        verdict = toy.theorem1_verdict(sys_, horizon=tc["horizon"], dt=tc["dt"], b_factor=tc["b_factor"])
        report["theorem1"] = verdict.to_dict()
        report["passed"] = bool(verdict.passed and report["h4_h5"]["passed"])
    artifacts.write_json(out / "toy.json", report, cfg.hash, "toy")
    return report


# -- comparisons and sweeps ---------------------------------------------------------------------------


def compare(run_a: str | Path, run_b: str | Path, columns=None, tol: float = 0.0, n_eigs: int = 6) -> dict:
    """Column-wise max relative deviation between two runs.

    Runs must share the CSV schema and record times. When both carry a
    spectrum report, the leading nonzero eigenvalues are compared too.
    """
    ra, rb = Path(run_a), Path(run_b)
    for r in (ra, rb):
        if not (r / artifacts.FILES["manifest"]).exists():
            raise artifacts.SchemaError(f"{r}: no manifest")
    report: dict = {"columns": {}, "tol": tol}
    for kind in ("trajectory", "energy"):
        fa, fb = ra / artifacts.FILES[kind], rb / artifacts.FILES[kind]
        if not (fa.exists() and fb.exists()):
            continue
        _, ca = artifacts.read_csv(fa)
        _, cb = artifacts.read_csv(fb)
        if list(ca) != list(cb):
            raise artifacts.SchemaError(f"{kind} schemas differ: {list(ca)} vs {list(cb)}")
        if len(ca["t"]) != len(cb["t"]) or not np.array_equal(ca["t"], cb["t"]):
            # align on common record times (dt refinement with matching output times)
            common, ia, ib = np.intersect1d(np.round(ca["t"], 9), np.round(cb["t"], 9), return_indices=True)
            if common.size == 0:
                raise artifacts.SchemaError(f"{kind}: runs share no record times")
        else:
            ia = ib = np.arange(len(ca["t"]))
        for col in ca:
            if columns and col not in columns:
                continue
            a, b = ca[col][ia], cb[col][ib]
            scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-300)
            both_nan = np.isnan(a) & np.isnan(b)
            diff = np.where(both_nan, 0.0, np.abs(a - b))
            report["columns"][f"{kind}.{col}"] = float(np.max(diff)) / scale if diff.size else 0.0
    sa, sb = ra / artifacts.FILES["spectrum"], rb / artifacts.FILES["spectrum"]
    if sa.exists() and sb.exists():
        ja, jb = artifacts.read_json(sa), artifacts.read_json(sb)
        if "eigenvalues" in ja and "eigenvalues" in jb:
            ea = _leading(ja, n_eigs)
            eb = _leading(jb, n_eigs)
            m = min(len(ea), len(eb))
            rel = np.abs(ea[:m] - eb[:m]) / np.maximum(np.abs(ea[:m]), 1e-300)
            report["eigenvalues"] = {"a": ea[:m], "b": eb[:m], "rel_dev": rel, "max_rel_dev": float(np.max(rel)) if m else 0.0}
    devs = list(report["columns"].values()) + ([report["eigenvalues"]["max_rel_dev"]] if "eigenvalues" in report and not columns else [])
    report["max_deviation"] = max(devs) if devs else 0.0
    report["passed"] = report["max_deviation"] <= tol
    return report


def _leading(spec: dict, n: int) -> np.ndarray:
    z = np.array([complex(a, b) for a, b in spec["eigenvalues"]])
    thresh = spec["tol_rank"] * spec["sigma_max"]
    z = z[np.abs(z) > thresh]
    z = z[np.lexsort((z.imag, np.abs(z)))]
    # conjugate pairs are ordered by imaginary part so both runs line up
    return z[:n]


def _sweep_one(args):
    text, out = args
    cfg = ExperimentConfig.loads(text)
    res = run_simulate(cfg, out)
    a = res.analysis
    return {
        "value": None,
        "basin_margin": a["basin"]["margin"],
        "inside": a["basin"]["inside"],
        "excess_energy": a["basin"]["initial_excess_energy"],
        "t0": a["t0"]["t0"],
        "audit_passed": a.get("sei_audit", {}).get("passed"),
        "status": res.status,
    }


def sweep(cfg: ExperimentConfig, out: str | Path, threads: int = 1) -> list[dict]:
    """Run ``cfg`` once per value of ``[sweep] parameter`` and tabulate t0 and basin data."""
    sw = cfg["sweep"]
    if not sw["parameter"] or not sw["values"].split():
        raise ConfigError("[sweep] needs parameter and values")
    out = Path(out)
    values = sw["values"].split()
    jobs = []
    for i, v in enumerate(values):
        c = cfg.with_value(sw["parameter"], v)
        jobs.append((c.dumps(), str(out / f"{i:03d}")))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    for v, r in zip(values, rows):
        r["value"] = float(v) if _is_number(v) else v
    header = ["value", "basin_margin", "inside", "excess_energy", "t0", "audit_passed", "status"]
    lines = [f"# config_hash={cfg.hash} artifact=sweep parameter={sw['parameter']}", ",".join(header)]
    for r in rows:
        lines.append(",".join(_cell(r[k]) for k in header))
    artifacts.atomic_write(out / "sweep.csv", "\n".join(lines) + "\n")
    return rows


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _cell(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)
