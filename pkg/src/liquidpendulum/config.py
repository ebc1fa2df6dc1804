"""Experiment configuration: flat INI sections with a fixed schema.

Every key has a type and a default. Floats are written with ``repr`` so a
config survives a dump/load cycle bit for bit, and the hash is taken over
that canonical text.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


class ConfigError(ValueError):
    pass


# section -> key -> (type, default, help)
SCHEMA: dict[str, dict[str, tuple[type, object, str]]] = {
    "scenario": {
        "name": (str, "unnamed", "scenario label"),
        "kind": (str, "pendulum", "pendulum | toy"),
        "mode": (str, "nonlinear", "linear | nonlinear"),
        "xi": (int, 1, "+1 perturbs the lower rest state, -1 the upper one"),
    },
    "physics": {
        "rho": (float, 1.0, "liquid density per unit depth"),
        "mu": (float, 1.0, "shear viscosity"),
        "c_body": (float, 1.0, "moment of inertia of the rigid body"),
        "beta_sq": (float, 1.0, "restoring coefficient"),
    },
    "cavity": {
        "half_width": (float, 0.5, "half extent along e1"),
        "half_height": (float, 0.5, "half extent along e2"),
        "center_x": (float, 0.0, "cavity centre offset from O along e1"),
        "center_y": (float, 0.0, "cavity centre offset from O along e2"),
        "nx": (int, 32, "cells along e1"),
        "ny": (int, 32, "cells along e2"),
    },
    "initial": {
        "velocity": (str, "zero", "velocity template: zero | vortex | stokes1 | dipole | random"),
        "velocity_amplitude": (float, 0.0, "L2 norm of the initial velocity"),
        "omega": (float, 0.0, "initial angular speed"),
        "angle": (float, 0.0, "initial angular displacement from the rest state"),
        "seed": (int, 0, "seed for the random template"),
        "energy_level": (float, 0.0, "if > 0, rescale (v, omega, angle) to this excess energy"),
    },
    "time": {
        "dt": (float, 0.01, "time step"),
        "horizon": (float, 10.0, "integration length"),
        "stride": (int, 1, "steps between CSV records"),
        "snapshot_stride": (int, 0, "steps between velocity snapshots (0: none)"),
        "stop_radius": (float, -1.0, "end the run once the alpha norm exceeds this (-1: never)"),
    },
    "analysis": {
        "alpha": (float, 0.75, "fractional power used for the alpha norm"),
        "energy_convention": (str, "consistent", "consistent | inertia_scaled"),
        "spectrum_k": (int, 40, "eigenvalues requested from Arnoldi"),
        "spectrum": (bool, True, "compute the spectrum report during simulate"),
        "fit_series": (str, "u_alpha v_h2proxy v_t_l2 omega omega_dot chi_minus_e1", "series fitted after t0"),
        "fit_start": (float, -1.0, "fit window start (-1: use t0)"),
        "fit_end": (float, -1.0, "fit window end (-1: horizon)"),
        "t0_threshold": (float, -1.0, "excess-energy threshold for t0 (-1: 1% of 2 beta^2)"),
        "t0_window": (float, -1.0, "trailing fit window for t0 (-1: quarter of the run)"),
        "gap_ratio": (float, 0.8, "minimum accepted rate / gap"),
        "exit_radius": (float, 0.5, "ball radius for instability verdicts"),
        "delta": (float, 0.2, "initial-norm bound for stability verdicts"),
        "eps": (float, 0.5, "boundedness threshold for stability verdicts"),
        "basin_margin": (float, 0.0, "required margin inside the basin condition"),
    },
    "toy": {
        "preset": (str, "cubic3", "toy preset name"),
        "horizon": (float, 40.0, "toy integration length"),
        "dt": (float, 0.01, "toy RK4 step"),
        "b_factor": (float, 0.9, "target rate as a fraction of the gap"),
    },
    "sweep": {
        "parameter": (str, "", "section.key to vary"),
        "values": (str, "", "space-separated values"),
    },
    "output": {
        "directory": (str, "runs", "default output directory"),
    },
}

CHOICES = {
    ("scenario", "kind"): ("pendulum", "toy"),
    ("scenario", "mode"): ("linear", "nonlinear"),
    ("scenario", "xi"): (1, -1),
    ("analysis", "energy_convention"): ("consistent", "inertia_scaled"),
    ("initial", "velocity"): ("zero", "vortex", "stokes1", "dipole", "random"),
}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(section: str, key: str, typ: type, text: str):
    try:
        if typ is bool:
            t = text.strip().lower()
            if t not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return t in ("true", "1", "yes")
        return typ(text.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {text!r} is not a valid {typ.__name__}") from None


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, object]] = field(default_factory=dict)

    def __post_init__(self):
        full = {s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}
        for s, kv in self.values.items():
            if s not in SCHEMA:
                raise ConfigError(f"unknown section [{s}]")
            for k, v in kv.items():
                if k not in SCHEMA[s]:
                    raise ConfigError(f"unknown key [{s}] {k}")
                typ = SCHEMA[s][k][0]
                full[s][k] = _parse(s, k, typ, v) if isinstance(v, str) and typ is not str else typ(v)
        self.values = full
        self.validate()

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def get(self, dotted: str):
        s, k = dotted.split(".")
        return self.values[s][k]

    def with_value(self, dotted: str, value) -> "ExperimentConfig":
        s, k = dotted.split(".")
        if s not in SCHEMA or k not in SCHEMA[s]:
            raise ConfigError(f"unknown parameter {dotted!r}")
        vals = {sec: dict(kv) for sec, kv in self.values.items()}
        typ = SCHEMA[s][k][0]
        vals[s][k] = _parse(s, k, typ, value) if isinstance(value, str) and typ is not str else typ(value)
        return ExperimentConfig(vals)

    def validate(self):
        for (s, k), allowed in CHOICES.items():
            if self.values[s][k] not in allowed:
                raise ConfigError(f"[{s}] {k} = {self.values[s][k]!r}; expected one of {allowed}")
        t = self.values["time"]
        if not t["dt"] > 0 or not t["horizon"] > 0:
            raise ConfigError("[time] dt and horizon must be positive")
        if t["stride"] < 1 or t["snapshot_stride"] < 0:
            raise ConfigError("[time] stride must be >= 1 and snapshot_stride >= 0")
        if not 0.0 <= self.values["analysis"]["alpha"] <= 1.0:
            raise ConfigError("[analysis] alpha must lie in [0, 1]")

    # -- serialization ----------------------------------------------------------------
    def dumps(self) -> str:
        buf = io.StringIO()
        for s, keys in SCHEMA.items():
            buf.write(f"[{s}]\n")
            for k in keys:
                buf.write(f"{k} = {_fmt(self.values[s][k])}\n")
            buf.write("\n")
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        return cls({s: dict(cp[s]) for s in cp.sections()})

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.loads(text)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def scenario_names() -> list[str]:
    root = resources.files("liquidpendulum") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def resolve(path_or_name: str) -> ExperimentConfig:
    """Load a config file, or a shipped scenario by name."""
    p = Path(path_or_name)
    if p.exists():
        return ExperimentConfig.load(p)
    root = resources.files("liquidpendulum") / "scenarios"
    cand = root / f"{path_or_name}.ini"
    if cand.is_file():
        return ExperimentConfig.loads(cand.read_text())
    raise ConfigError(f"no config file or shipped scenario named {path_or_name!r}; shipped: {scenario_names()}")


def schema_text() -> str:
    """Human-readable schema document."""
    lines = []
    for s, keys in SCHEMA.items():
        lines.append(f"[{s}]")
        for k, (typ, default, help_) in keys.items():
            lines.append(f"  {k} ({typ.__name__}, default {_fmt(default)}): {help_}")
    return "\n".join(lines) + "\n"
