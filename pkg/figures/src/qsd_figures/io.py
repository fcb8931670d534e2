"""Parsers for the toolkit's exported file schemas.

Each parser raises InputError with the offending file (and line, where it
applies) so the CLI can exit nonzero with a usable message.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

RECORD_HEADER_PREFIX = "# qsd-record v1"
TRAJECTORY_COLUMNS = "t_us,x,y,z,S_L,alpha,xi_x,xi_y"
MEAN_COLUMNS = "t_us,mean_dI_dt,mean_dQ_dt,stderr_dI_dt,stderr_dQ_dt,n_records"


class InputError(ValueError):
    pass


def _require(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    return path


def _float_columns(path, expected_header: str, allow_empty: bool = False) -> dict:
    path = _require(path)
    lines = path.read_text().splitlines()
    start = 0
    if lines and lines[0].startswith("#"):
        start = 1
    if len(lines) <= start or lines[start].strip() != expected_header:
        raise InputError(f"{path}:{start + 1}: expected header {expected_header!r}")
    names = expected_header.split(",")
    cols = {name: [] for name in names}
    for ln, line in enumerate(lines[start + 1:], start=start + 2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(names):
            raise InputError(f"{path}:{ln}: expected {len(names)} fields, got {len(parts)}")
        for name, val in zip(names, parts):
            if val == "" and allow_empty:
                cols[name].append(float("nan"))
                continue
            try:
                cols[name].append(float(val))
            except ValueError:
                raise InputError(f"{path}:{ln}: bad number {val!r}") from None
    if not cols[names[0]]:
        raise InputError(f"{path}: no data rows")
    return {name: np.array(vals) for name, vals in cols.items()}


def read_record(path) -> dict:
    """Heterodyne record: header line, then t_us,dI,dQ rows."""
    path = _require(path)
    first = path.read_text().splitlines()[:1]
    if not first or not first[0].startswith(RECORD_HEADER_PREFIX):
        raise InputError(f"{path}:1: not a qsd-record v1 file")
    cols = _float_columns(path, "t_us,dI,dQ")
    t = cols["t_us"]
    dt = float(t[1] - t[0]) if t.size > 1 else None
    if dt is None or dt <= 0:
        raise InputError(f"{path}: cannot infer a positive dt from the time column")
    return {"t": t, "dI": cols["dI"], "dQ": cols["dQ"], "dt": dt, "path": str(path)}


def read_mean_record(path) -> dict:
    cols = _float_columns(path, MEAN_COLUMNS)
    return cols


def read_trajectory(path) -> dict:
    """Trajectory CSV; south-pole cells (empty alpha/xi) come back as NaN."""
    cols = _float_columns(path, TRAJECTORY_COLUMNS, allow_empty=True)
    cols["path"] = str(path)
    return cols


def read_conditional_mean(path) -> dict:
    path = _require(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    for key in ("axis", "bins", "slope"):
        if key not in doc:
            raise InputError(f"{path}: missing {key!r}")
    if not doc["bins"]:
        raise InputError(f"{path}: report holds no bins")
    return doc


def read_occupancy(path) -> dict:
    path = _require(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    for key in ("cell_side", "times_us", "cells"):
        if key not in doc:
            raise InputError(f"{path}: missing {key!r}")
    if not doc["cells"]:
        raise InputError(f"{path}: grid holds no occupied cells")
    return doc


def read_decay_fit(path) -> dict:
    path = _require(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    for key in ("amp", "rate"):
        if key not in doc:
            raise InputError(f"{path}: missing {key!r}")
    return doc
