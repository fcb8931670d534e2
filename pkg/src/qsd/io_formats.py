"""File formats: record CSV/binary, trajectory CSV, JSON reports, digests.

Floats that must round-trip exactly (record increments, coordinates) are
written with repr, which Python guarantees to parse back bit-identically.
Time values are written in us with 9 significant digits, enough for ns
resolution on a us scale.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ConfigError, SimParams
from .engine import HeterodyneRecord, Trajectory
from .analytics import alpha_xi_paths

RECORD_HEADER_PREFIX = "# qsd-record v1"
RECORD_MAGIC = b"QSDR"
RECORD_BINARY_VERSION = 1


def format_time(t: float) -> str:
    return f"{t:.9g}"


def float_repr(x: float) -> str:
    return repr(float(x))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# heterodyne records
# ---------------------------------------------------------------------------

def record_header(p: SimParams, index: int) -> str:
    return (
        f"{RECORD_HEADER_PREFIX}, dt_us={float_repr(p.dt)}, "
        f"gamma1_us={float_repr(p.gamma1)}, gamma_phi_us={float_repr(p.gamma_phi)}, "
        f"eta={float_repr(p.eta)}, seed={p.master_seed}, index={index}"
    )


def write_record_csv(path, rec: HeterodyneRecord, p: SimParams, index: int) -> None:
    lines = [record_header(p, index), "t_us,dI,dQ"]
    for j, (dI, dQ) in enumerate(rec.increments):
        lines.append(f"{format_time(j * rec.dt)},{float_repr(dI)},{float_repr(dQ)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_record_header(line: str, path) -> dict:
    if not line.startswith(RECORD_HEADER_PREFIX):
        raise ConfigError(f"{path}:1: not a qsd-record v1 header")
    fields = {}
    for part in line[len(RECORD_HEADER_PREFIX):].split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"{path}:1: malformed header field {part!r}")
        key, val = part.split("=", 1)
        fields[key.strip()] = val.strip()
    for key in ("dt_us", "gamma1_us", "gamma_phi_us", "eta", "seed", "index"):
        if key not in fields:
            raise ConfigError(f"{path}:1: header missing {key}")
    return fields


def read_record_csv(path) -> tuple[HeterodyneRecord, dict]:
    """Parse a record file; returns the record and its header fields.

    Header fields are converted: dt/gamma/eta to float, seed/index to int.
    """
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ConfigError(f"{path}: empty file")
    header = _parse_record_header(lines[0], path)
    meta = {
        "dt": float(header["dt_us"]),
        "gamma1": float(header["gamma1_us"]),
        "gamma_phi": float(header["gamma_phi_us"]),
        "eta": float(header["eta"]),
        "seed": int(header["seed"]),
        "index": int(header["index"]),
    }
    if len(lines) < 2 or lines[1].strip() != "t_us,dI,dQ":
        raise ConfigError(f"{path}:2: expected column header 't_us,dI,dQ'")
    rows = []
    for ln, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ConfigError(f"{path}:{ln}: expected 3 fields, got {len(parts)}")
        try:
            rows.append((float(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise ConfigError(f"{path}:{ln}: {exc}") from None
    if not rows:
        raise ConfigError(f"{path}: record holds no increments")
    rec = HeterodyneRecord(
        dt=meta["dt"],
        increments=np.array(rows),
        seed=meta["seed"],
        index=meta["index"],
    )
    return rec, meta


def write_record_binary(path, rec: HeterodyneRecord, p: SimParams, index: int) -> None:
    n = len(rec)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sH", RECORD_MAGIC, RECORD_BINARY_VERSION))
        fh.write(struct.pack("<4d", p.dt, p.gamma1, p.gamma_phi, p.eta))
        fh.write(struct.pack("<QQQ", p.master_seed, index, n))
        fh.write(np.ascontiguousarray(rec.increments, dtype="<f8").tobytes())


def read_record_binary(path) -> tuple[HeterodyneRecord, dict]:
    path = Path(path)
    blob = path.read_bytes()
    head = struct.calcsize("<4sH4dQQQ")
    if len(blob) < head:
        raise ConfigError(f"{path}: truncated binary record")
    magic, version = struct.unpack_from("<4sH", blob, 0)
    if magic != RECORD_MAGIC:
        raise ConfigError(f"{path}: bad magic {magic!r}")
    if version != RECORD_BINARY_VERSION:
        raise ConfigError(f"{path}: unsupported version {version}")
    dt, gamma1, gamma_phi, eta = struct.unpack_from("<4d", blob, 6)
    seed, index, n = struct.unpack_from("<QQQ", blob, 6 + 32)
    expected = head + 16 * n
    if len(blob) != expected:
        raise ConfigError(f"{path}: expected {expected} bytes, got {len(blob)}")
    if n < 1:
        raise ConfigError(f"{path}: record holds no increments")
    inc = np.frombuffer(blob, dtype="<f8", offset=head).reshape(n, 2).copy()
    meta = {
        "dt": dt,
        "gamma1": gamma1,
        "gamma_phi": gamma_phi,
        "eta": eta,
        "seed": seed,
        "index": index,
    }
    return HeterodyneRecord(dt=dt, increments=inc, seed=seed, index=index), meta


def read_record_any(path) -> tuple[HeterodyneRecord, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        start = fh.read(4)
    if start == RECORD_MAGIC:
        return read_record_binary(path)
    return read_record_csv(path)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

TRAJECTORY_COLUMNS = "t_us,x,y,z,S_L,alpha,xi_x,xi_y"


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """Trajectory with derived invariants; south-pole cells left empty."""
    bloch = traj.bloch
    alpha, xi, valid = alpha_xi_paths(bloch)
    s_l = np.maximum(0.0, (1.0 - (bloch**2).sum(axis=1)) / 2.0)
    lines = [TRAJECTORY_COLUMNS]
    for i, t in enumerate(traj.times):
        x, y, z = bloch[i]
        if valid[i]:
            tail = f"{float_repr(alpha[i])},{float_repr(xi[i, 0])},{float_repr(xi[i, 1])}"
        else:
            tail = ",,"
        lines.append(
            f"{format_time(t)},{float_repr(x)},{float_repr(y)},{float_repr(z)},"
            f"{float_repr(s_l[i])},{tail}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory_csv(path) -> dict:
    """Columns of a trajectory file; south-pole cells come back as NaN."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != TRAJECTORY_COLUMNS:
        raise ConfigError(f"{path}:1: expected header {TRAJECTORY_COLUMNS!r}")
    cols = {name: [] for name in TRAJECTORY_COLUMNS.split(",")}
    names = TRAJECTORY_COLUMNS.split(",")
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(names):
            raise ConfigError(f"{path}:{ln}: expected {len(names)} fields")
        for name, val in zip(names, parts):
            try:
                cols[name].append(float(val) if val != "" else float("nan"))
            except ValueError as exc:
                raise ConfigError(f"{path}:{ln}: {exc}") from None
    return {name: np.array(vals) for name, vals in cols.items()}


# ---------------------------------------------------------------------------
# ensemble record means
# ---------------------------------------------------------------------------

MEAN_COLUMNS = "t_us,mean_dI_dt,mean_dQ_dt,stderr_dI_dt,stderr_dQ_dt,n_records"


def write_mean_record_csv(path, times, increments, dt: float) -> None:
    """Per-time ensemble mean of dI/dt and dQ/dt with standard errors.

    ``times`` are the left endpoints of the n integration steps and
    ``increments`` is the (N, n, 2) record stack.
    """
    inc = np.asarray(increments, dtype=float)
    n = inc.shape[0]
    rates = inc / dt
    mean = rates.mean(axis=0)
    stderr = rates.std(axis=0, ddof=1) / np.sqrt(n)
    lines = [MEAN_COLUMNS]
    for j, t in enumerate(times):
        lines.append(
            f"{format_time(t)},{float_repr(mean[j, 0])},{float_repr(mean[j, 1])},"
            f"{float_repr(stderr[j, 0])},{float_repr(stderr[j, 1])},{n}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_mean_record_csv(path) -> dict:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != MEAN_COLUMNS:
        raise ConfigError(f"{path}:1: expected header {MEAN_COLUMNS!r}")
    names = MEAN_COLUMNS.split(",")
    cols = {name: [] for name in names}
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(names):
            raise ConfigError(f"{path}:{ln}: expected {len(names)} fields")
        for name, val in zip(names, parts):
            cols[name].append(float(val))
    return {name: np.array(vals) for name, vals in cols.items()}


# ---------------------------------------------------------------------------
# occupancy grid CSV
# ---------------------------------------------------------------------------

GRID_COLUMNS = "t_us,ix,iy,iz,count"


def write_grid_csv(path, grid) -> None:
    lines = [GRID_COLUMNS]
    for t, ix, iy, iz, count in grid.rows():
        lines.append(f"{format_time(t)},{ix},{iy},{iz},{count}")
    Path(path).write_text("\n".join(lines) + "\n")
