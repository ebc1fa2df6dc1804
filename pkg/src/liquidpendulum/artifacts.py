"""On-disk artifacts: CSV tables, JSON reports, velocity snapshots.

All writes go to a temporary file in the target directory followed by an
atomic rename. Every file starts with the producing config hash.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .dynamics import ENERGY_COLUMNS, TRAJECTORY_COLUMNS, Trajectory

SNAPSHOT_MAGIC = b"LPSNAP01"
FILES = {
    "trajectory": "trajectory.csv",
    "energy": "energy.csv",
    "spectrum": "spectrum.json",
    "decay": "decay.json",
    "manifest": "manifest.json",
    "snapshots": "snapshots.bin",
}


class SchemaError(ValueError):
    pass


def atomic_write(path: str | Path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- CSV ----------------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def csv_text(records: dict[str, np.ndarray], columns, config_hash: str, kind: str) -> str:
    lines = [f"# config_hash={config_hash} artifact={kind}", ",".join(columns)]
    n = len(records[columns[0]])
    cols = [records[c] for c in columns]
    for i in range(n):
        lines.append(",".join(_fmt(c[i]) for c in cols))
    return "\n".join(lines) + "\n"


def read_csv(path: str | Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Return the header tags and the columns of an artifact CSV."""
    with open(path) as fh:
        first = fh.readline().strip()
        if not first.startswith("#"):
            raise SchemaError(f"{path}: missing config-hash header")
        tags = dict(kv.split("=", 1) for kv in first[1:].split())
        names = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array(rows, dtype=float).reshape(-1, len(names))
    return tags, {n: data[:, i] for i, n in enumerate(names)}


def write_trajectory_csvs(traj: Trajectory, out: Path, config_hash: str) -> dict[str, Path]:
    paths = {"trajectory": out / FILES["trajectory"], "energy": out / FILES["energy"]}
    atomic_write(paths["trajectory"], csv_text(traj.records, TRAJECTORY_COLUMNS, config_hash, "trajectory"))
    atomic_write(paths["energy"], csv_text(traj.records, ENERGY_COLUMNS, config_hash, "energy"))
    return paths


# -- JSON ---------------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def json_text(payload: dict, config_hash: str, kind: str) -> str:
    body = {"config_hash": config_hash, "artifact": kind}
    body.update(_jsonable(payload))
    return json.dumps(body, indent=2, sort_keys=False) + "\n"


def write_json(path: Path, payload: dict, config_hash: str, kind: str) -> Path:
    atomic_write(path, json_text(payload, config_hash, kind))
    return path


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


# -- snapshots ------------------------------------------------------------------------------


def snapshot_bytes(states, config_hash: str) -> bytes:
    """Self-describing binary: magic, header length, JSON header, then
    one little-endian float64 block per state (time, omega, phi, gamma1,
    gamma2, face velocities)."""
    n_faces = len(states[0].v) if states else 0
    header = {
        "config_hash": config_hash,
        "dtype": "float64",
        "endianness": "little",
        "count": len(states),
        "block": ["time", "omega", "phi", "gamma1", "gamma2", f"v[{n_faces}]"],
        "n_faces": n_faces,
    }
    h = json.dumps(header, sort_keys=True).encode()
    parts = [SNAPSHOT_MAGIC, struct.pack("<I", len(h)), h]
    for s in states:
        block = np.concatenate([[s.time, s.omega, s.phi, s.gamma[0], s.gamma[1]], s.v]).astype("<f8")
        parts.append(block.tobytes())
    return b"".join(parts)


def read_snapshots(path: str | Path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != SNAPSHOT_MAGIC:
        raise SchemaError(f"{path}: not a snapshot file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen])
    width = 5 + header["n_faces"]
    data = np.frombuffer(raw[12 + hlen :], dtype="<f8").reshape(header["count"], width)
    return header, data


# -- loading runs back ------------------------------------------------------------------------


def load_run(run_dir: str | Path) -> Trajectory:
    """Rebuild a trajectory (records and metadata) from a run directory."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / FILES["manifest"]
    if not manifest_path.exists():
        raise SchemaError(f"{run_dir}: no manifest")
    manifest = read_json(manifest_path)
    _, traj_cols = read_csv(run_dir / FILES["trajectory"])
    _, energy_cols = read_csv(run_dir / FILES["energy"])
    records = dict(traj_cols)
    records.update({k: v for k, v in energy_cols.items() if k != "t"})
    meta = dict(manifest.get("run_meta", {}))
    return Trajectory(records, [], meta, manifest.get("status", "completed"), manifest.get("message", ""), None)
