"""Command-line surface tying synthesis, filtering, analytics, estimation
and validation into reproducible batch runs.

Configuration is a single JSON document; any entry can be overridden on the
command line with ``--set key.path=value`` (values parsed as JSON, falling
back to strings).  The environment variable QSD_SEED takes precedence over
every other source of ``params.master_seed``.

Exit codes: 0 success, 1 threshold/check failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import curve_fit

from . import __version__
from .core import (
    ConfigError,
    DEFAULT_DT,
    DEFAULT_ETA,
    DEFAULT_GAMMA1,
    DEFAULT_GAMMA_PHI,
    SimParams,
    resolve_initial,
)
from .analytics import AtSouthPole, alpha_flow, alpha_of, alpha_xi_paths, spheroid_residual_batch
from .engine import (
    SCHEMES,
    STREAM_READOUT_X,
    STREAM_READOUT_Y,
    STREAM_READOUT_Z,
    HeterodyneRecord,
    Trajectory,
    filter_ensemble,
    filter_record,
    rho_batch_from_bloch,
    stream,
    synthesize_ensemble,
    synthesize_ensemble_parallel,
)
from .estimation import estimate_eta
from .io_formats import (
    read_mean_record_csv,
    read_record_any,
    sha256_file,
    write_grid_csv,
    write_json,
    write_mean_record_csv,
    write_record_binary,
    write_record_csv,
    write_trajectory_csv,
)
from .validation import (
    AXES,
    axis_index,
    conditional_mean_report,
    excitation_increase_stats,
    occupancy,
    simulate_readout_batch,
)


class CheckFailure(RuntimeError):
    """A configured acceptance threshold did not pass."""


OUTPUT_KINDS = ("records", "trajectories", "invariants", "grid", "tomography", "likelihood")

_READOUT_STREAMS = {"x": STREAM_READOUT_X, "y": STREAM_READOUT_Y, "z": STREAM_READOUT_Z}


def default_config() -> dict:
    return {
        "params": {
            "gamma1": DEFAULT_GAMMA1,
            "gamma_phi": DEFAULT_GAMMA_PHI,
            "eta": DEFAULT_ETA,
            "dt": DEFAULT_DT,
            "horizon": 4.0,
            "master_seed": 0,
        },
        "initial": "plus_x",
        "ensemble_size": 1000,
        "outputs": ["records"],
        "output_dir": "qsd-out",
        "scheme": "kraus",
        "record_format": "csv",
        "start_index": 0,
        "threads": 0,
        "cell_side": 0.04,
        "grid_times": None,
        "bin_half_width": 0.02,
        "min_bin_count": 40,
        "readout_fidelity": [1.0, 1.0],
        "tomography_time": None,
        "axes": list(AXES),
        "filter_eta": None,
        "estimate_grid": [0.02, 0.9, 23],
        "checks": {
            "slope_tol": 0.05,
            "diag_frac_min": 0.9,
            "rate_z_max": 3.0,
            "fail_on_boundary": True,
        },
    }


def _deep_update(base: dict, extra: dict) -> dict:
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], val)
        else:
            base[key] = val
    return base


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.strip().split(".")
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"--set path {key!r} descends through a non-object")
        node = nxt
    node[parts[-1]] = value


def load_config(path: Optional[str], sets: list[str]) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        _deep_update(cfg, loaded)
    for assignment in sets:
        _apply_set(cfg, assignment)
    env_seed = os.environ.get("QSD_SEED")
    if env_seed is not None:
        try:
            cfg["params"]["master_seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"QSD_SEED must be an integer, got {env_seed!r}") from None
    return cfg


@dataclass
class RunConfig:
    params: SimParams
    initial: object
    ensemble_size: int
    outputs: list[str]
    output_dir: Path
    scheme: str
    record_format: str
    start_index: int
    threads: int
    cell_side: float
    grid_times: list[float]
    bin_half_width: float
    min_bin_count: int
    readout_fidelity: tuple[float, float]
    tomography_time: float
    axes: list[str]
    filter_eta: Optional[float]
    estimate_grid: tuple[float, float, int]
    checks: dict
    raw: dict

    @classmethod
    def from_dict(cls, cfg: dict) -> "RunConfig":
        try:
            params = SimParams(**cfg["params"])
        except TypeError as exc:
            raise ConfigError(f"bad params block: {exc}") from None
        ensemble_size = int(cfg["ensemble_size"])
        if ensemble_size < 1:
            raise ConfigError(f"ensemble_size must be >= 1, got {ensemble_size}")
        outputs = list(cfg["outputs"])
        for kind in outputs:
            if kind not in OUTPUT_KINDS:
                raise ConfigError(f"unknown output kind {kind!r}; expected {OUTPUT_KINDS}")
        scheme = cfg["scheme"]
        if scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {scheme!r}")
        record_format = cfg["record_format"]
        if record_format not in ("csv", "binary"):
            raise ConfigError(f"record_format must be csv or binary, got {record_format!r}")
        hw = float(cfg["bin_half_width"])
        if not 0.0 < hw <= 1.0:
            raise ConfigError(f"bin_half_width must lie in (0, 1], got {hw}")
        fid = tuple(float(v) for v in cfg["readout_fidelity"])
        if len(fid) != 2 or not all(0.5 < f <= 1.0 for f in fid):
            raise ConfigError(f"readout_fidelity must be two values in (0.5, 1], got {fid}")
        cell_side = float(cfg["cell_side"])
        if abs(round(2.0 / cell_side) * cell_side - 2.0) > 1e-9:
            raise ConfigError(f"cell_side {cell_side} does not tile [-1, 1]")
        tomo_t = cfg["tomography_time"]
        tomo_t = params.horizon if tomo_t is None else float(tomo_t)
        axes = [a.lower() for a in cfg["axes"]]
        for a in axes:
            axis_index(a)
        filter_eta = cfg["filter_eta"]
        if filter_eta is not None:
            filter_eta = float(filter_eta)
            if not 0.0 <= filter_eta <= 1.0:
                raise ConfigError(f"filter_eta must lie in [0, 1], got {filter_eta}")
        grid_times = cfg["grid_times"]
        grid_times = [params.horizon] if grid_times is None else [float(t) for t in grid_times]
        eg = cfg["estimate_grid"]
        if len(eg) != 3:
            raise ConfigError(f"estimate_grid must be [lo, hi, n], got {eg}")
        threads = int(cfg["threads"])
        if threads == 0:
            threads = os.cpu_count() or 1
        return cls(
            params=params,
            initial=cfg["initial"],
            ensemble_size=ensemble_size,
            outputs=outputs,
            output_dir=Path(cfg["output_dir"]),
            scheme=scheme,
            record_format=record_format,
            start_index=int(cfg["start_index"]),
            threads=threads,
            cell_side=cell_side,
            grid_times=grid_times,
            bin_half_width=hw,
            min_bin_count=int(cfg["min_bin_count"]),
            readout_fidelity=(fid[0], fid[1]),
            tomography_time=tomo_t,
            axes=axes,
            filter_eta=filter_eta,
            estimate_grid=(float(eg[0]), float(eg[1]), int(eg[2])),
            checks=dict(cfg["checks"]),
            raw=copy.deepcopy(cfg),
        )


def _prepare_outdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


def _write_manifest(outdir: Path, command: str, cfg_echo: dict, files: list[Path],
                    wall: float, rng_note: str) -> Path:
    manifest = {
        "kind": "qsd-run-manifest",
        "version": __version__,
        "command": command,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "wall_seconds": wall,
        "rng": rng_note,
        "config": cfg_echo,
        "outputs": [
            {
                "path": str(f.relative_to(outdir)),
                "bytes": f.stat().st_size,
                "sha256": sha256_file(f),
            }
            for f in sorted(files)
        ],
    }
    path = outdir / "manifest.json"
    write_json(path, manifest)
    return path


def verify_manifest(path) -> bool:
    """True iff every digest in a manifest matches the file on disk."""
    manifest = json.loads(Path(path).read_text())
    base = Path(path).parent
    for entry in manifest["outputs"]:
        target = base / entry["path"]
        if not target.is_file() or sha256_file(target) != entry["sha256"]:
            return False
    return True


def _rng_note(cfg: RunConfig, n: int) -> str:
    return (
        f"philox(key=[master_seed={cfg.params.master_seed}, purpose<<56|index]), "
        f"indices [{cfg.start_index}, {cfg.start_index + n})"
    )


def _readout_outcomes(cfg: RunConfig, truth_bloch: np.ndarray, axis: str) -> np.ndarray:
    rng = stream(cfg.params.master_seed, _READOUT_STREAMS[axis], 0)
    return simulate_readout_batch(
        truth_bloch[:, axis_index(axis)], cfg.readout_fidelity, rng
    )


def _invariant_summary(cfg: RunConfig, times: np.ndarray, bloch: np.ndarray) -> dict:
    """Observed deviation of alpha from its deterministic flow, spheroid
    residual spread, and excitation statistics over an ensemble."""
    try:
        alpha0 = alpha_of(resolve_initial(cfg.initial))
    except AtSouthPole:
        return {"alpha0": None, "note": "initial state at |g>: alpha flow undefined"}
    expected = alpha_flow(alpha0, cfg.params, times)
    alpha, _, valid = alpha_xi_paths(bloch)
    rel = np.abs(alpha - expected[np.newaxis, :]) / expected[np.newaxis, :]
    resid = spheroid_residual_batch(bloch, expected[np.newaxis, :])
    stats = excitation_increase_stats(bloch[..., 2])
    valid_any = valid.any()
    return {
        "alpha0": alpha0,
        "alpha_max_rel_error": float(np.nanmax(np.where(valid, rel, np.nan))) if valid_any else None,
        "spheroid_residual_max_abs": float(np.max(np.abs(resid))),
        "spheroid_residual_std": float(np.std(resid)),
        "south_pole_fraction": float(1.0 - valid.mean()),
        "excitation": stats.to_dict(),
    }


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    cfg = RunConfig.from_dict(load_config(args.config, args.set or []))
    if args.output_dir:
        cfg.output_dir = Path(args.output_dir)
    outdir = _prepare_outdir(cfg.output_dir)

    need_paths = bool({"trajectories", "invariants", "grid"} & set(cfg.outputs))
    need_records = bool({"records", "likelihood"} & set(cfg.outputs))
    res = synthesize_ensemble_parallel(
        cfg.initial,
        cfg.params,
        cfg.ensemble_size,
        start_index=cfg.start_index,
        keep_paths=need_paths,
        keep_records=need_records or True,
        threads=cfg.threads,
    )

    files: list[Path] = []
    if "records" in cfg.outputs:
        for j, idx in enumerate(res.indices):
            rec = HeterodyneRecord(cfg.params.dt, res.increments[j])
            if cfg.record_format == "binary":
                path = outdir / f"rec_{idx:06d}.qsdr"
                write_record_binary(path, rec, cfg.params, int(idx))
            else:
                path = outdir / f"rec_{idx:06d}.csv"
                write_record_csv(path, rec, cfg.params, int(idx))
            files.append(path)

    if "trajectories" in cfg.outputs:
        for j, idx in enumerate(res.indices):
            traj = Trajectory(
                times=res.times,
                rhos=rho_batch_from_bloch(res.bloch[j]),
                provenance="synthesized",
                params=cfg.params,
                scheme="kraus",
            )
            path = outdir / f"traj_{idx:06d}.csv"
            write_trajectory_csv(path, traj)
            files.append(path)

    if "invariants" in cfg.outputs:
        path = outdir / "invariants.json"
        write_json(path, _invariant_summary(cfg, res.times, res.bloch))
        files.append(path)

    if "grid" in cfg.outputs:
        files.extend(_emit_grid(cfg, outdir, res.times, res.bloch))

    if "tomography" in cfg.outputs:
        i_final = res.times.shape[0] - 1
        samples = []
        for axis in cfg.axes:
            outcomes = _readout_outcomes(cfg, res.final_bloch, axis)
            samples.extend(
                {
                    "axis": axis,
                    "outcome": int(o),
                    "trajectory_index": int(idx),
                    "final_time_us": float(res.times[i_final]),
                }
                for idx, o in zip(res.indices, outcomes)
            )
        path = outdir / "tomography_samples.json"
        write_json(path, {"samples": samples})
        files.append(path)

    if "likelihood" in cfg.outputs:
        result = estimate_eta(cfg.initial, res.increments, cfg.params, cfg.estimate_grid)
        path = outdir / "likelihood.json"
        write_json(path, result.to_dict())
        files.append(path)

    manifest = _write_manifest(
        outdir, "simulate", cfg.raw, files, time.perf_counter() - t0,
        _rng_note(cfg, cfg.ensemble_size),
    )
    print(manifest)
    return 0


def _emit_grid(cfg: RunConfig, outdir: Path, times: np.ndarray, bloch: np.ndarray) -> list[Path]:
    grid = occupancy((times, bloch), cfg.grid_times, cfg.cell_side)
    try:
        alpha0 = alpha_of(resolve_initial(cfg.initial))
        alpha_by_time = {t: float(alpha_flow(alpha0, cfg.params, t)) for t in cfg.grid_times}
    except AtSouthPole:
        alpha_by_time = {t: None for t in cfg.grid_times}
    json_path = outdir / "occupancy.json"
    write_json(json_path, grid.to_dict(alpha_by_time))
    csv_path = outdir / "occupancy.csv"
    write_grid_csv(csv_path, grid)
    return [json_path, csv_path]


def _load_records(paths: list[str]) -> tuple[list[HeterodyneRecord], dict]:
    if not paths:
        raise ConfigError("no record files given")
    records = []
    meta0 = None
    for p in paths:
        if not Path(p).is_file():
            raise ConfigError(f"record file not found: {p}")
        rec, meta = read_record_any(p)
        if meta0 is None:
            meta0 = meta
        else:
            for key in ("dt", "gamma1", "gamma_phi", "eta"):
                if not math.isclose(meta[key], meta0[key], rel_tol=1e-12, abs_tol=0.0):
                    raise ConfigError(f"{p}: header {key} disagrees with {paths[0]}")
        records.append(rec)
    return records, meta0


def _params_from_records(meta: dict, records: list[HeterodyneRecord], overrides: dict) -> SimParams:
    kw = {
        "gamma1": meta["gamma1"],
        "gamma_phi": meta["gamma_phi"],
        "eta": meta["eta"],
        "dt": meta["dt"],
        "horizon": len(records[0]) * meta["dt"],
        "master_seed": meta["seed"],
    }
    kw.update(overrides)
    return SimParams(**kw)


def _param_overrides(sets: list[str]) -> dict:
    cfg: dict = {}
    for assignment in sets or []:
        _apply_set(cfg, assignment)
    overrides = cfg.get("params", {})
    unknown = set(cfg) - {"params"}
    if unknown:
        raise ConfigError(f"only params.* can be overridden here, got {sorted(unknown)}")
    return overrides


def cmd_filter(args) -> int:
    t0 = time.perf_counter()
    records, meta = _load_records(args.records)
    lengths = {len(r) for r in records}
    if len(lengths) != 1:
        raise ConfigError(f"record lengths disagree: {sorted(lengths)}")
    params = _params_from_records(meta, records, _param_overrides(args.set))
    outdir = _prepare_outdir(Path(args.output_dir))

    trajectories = [
        (Path(src).stem, filter_record(args.init, rec, params, args.scheme))
        for src, rec in zip(args.records, records)
    ]
    files = []
    for stem, traj in trajectories:
        path = outdir / f"{stem}_traj.csv"
        write_trajectory_csv(path, traj)
        files.append(path)
        if traj.diagnostics.get("positivity_violations"):
            print(
                f"warning: {stem}: euler scheme left the state ball on "
                f"{traj.diagnostics['positivity_violations']} step(s)",
                file=sys.stderr,
            )
    manifest = _write_manifest(
        outdir, "filter", {"records": list(args.records), "init": args.init,
                           "scheme": args.scheme, "params": params.__dict__},
        files, time.perf_counter() - t0, f"filtered {len(records)} record(s)",
    )
    print(manifest)
    return 0


def cmd_analyze(args) -> int:
    t0 = time.perf_counter()
    records, meta = _load_records(args.records)
    lengths = {len(r) for r in records}
    if len(lengths) != 1:
        raise ConfigError(f"record lengths disagree: {sorted(lengths)}")
    params = _params_from_records(meta, records, _param_overrides(args.set))
    outdir = _prepare_outdir(Path(args.output_dir))

    increments = np.stack([r.increments for r in records])
    times = records[0].times()
    mean_path = outdir / "ensemble_mean.csv"
    write_mean_record_csv(mean_path, times, increments, params.dt)

    cols = read_mean_record_csv(mean_path)
    expected_rate = params.gamma1 / 2.0 + params.gamma_phi
    expected_amp = math.sqrt(params.eta * params.gamma1 / 2.0)
    fit: dict = {
        "expected_amp": expected_amp,
        "expected_rate": expected_rate,
        "n_records": len(records),
    }
    failures: list[str] = []
    try:
        popt, pcov = curve_fit(
            lambda t, a, r: a * np.exp(-r * t),
            cols["t_us"],
            cols["mean_dI_dt"],
            sigma=np.maximum(cols["stderr_dI_dt"], 1e-300),
            absolute_sigma=True,
            p0=(expected_amp, expected_rate),
            maxfev=10000,
        )
        perr = np.sqrt(np.diag(pcov))
        z_rate = (popt[1] - expected_rate) / perr[1]
        fit.update(
            amp=float(popt[0]),
            amp_stderr=float(perr[0]),
            rate=float(popt[1]),
            rate_stderr=float(perr[1]),
            z_rate=float(z_rate),
        )
        if abs(z_rate) > 3.0:
            failures.append(f"decay rate off by {z_rate:.2f} standard errors")
    except RuntimeError as exc:
        fit["error"] = str(exc)
        failures.append("exponential fit did not converge")

    fit_path = outdir / "decay_fit.json"
    write_json(fit_path, fit)
    manifest = _write_manifest(
        outdir, "analyze", {"records": list(args.records)}, [mean_path, fit_path],
        time.perf_counter() - t0, f"{len(records)} record(s)",
    )
    print(manifest)
    if failures:
        for f in failures:
            print(f"check failed: {f}", file=sys.stderr)
        return 1
    return 0


def cmd_estimate(args) -> int:
    t0 = time.perf_counter()
    records, meta = _load_records(args.records)
    params = _params_from_records(meta, records, _param_overrides(args.set))
    outdir = _prepare_outdir(Path(args.output_dir))
    grid = (args.grid[0], args.grid[1], int(args.grid[2]))
    result = estimate_eta(args.init, records, params, grid)
    path = outdir / "likelihood.json"
    write_json(path, result.to_dict())
    manifest = _write_manifest(
        outdir, "estimate-eta", {"records": list(args.records), "grid": list(grid)},
        [path], time.perf_counter() - t0, f"{len(records)} record(s)",
    )
    print(manifest)
    print(f"eta_hat = {result.eta_hat:.4f}, ci95 = [{result.ci95[0]:.4f}, {result.ci95[1]:.4f}]")
    if result.boundary_warning:
        print("check failed: likelihood maximizer sits on the grid boundary "
              "(records carry no efficiency information?)", file=sys.stderr)
        return 1
    return 0


def cmd_validate(args) -> int:
    t0 = time.perf_counter()
    cfg = RunConfig.from_dict(load_config(args.config, args.set or []))
    if args.output_dir:
        cfg.output_dir = Path(args.output_dir)
    outdir = _prepare_outdir(cfg.output_dir)
    p = cfg.params.replace(horizon=cfg.tomography_time)

    res = synthesize_ensemble_parallel(
        cfg.initial, p, cfg.ensemble_size,
        start_index=cfg.start_index,
        keep_paths=False,
        keep_records=cfg.filter_eta is not None,
        threads=cfg.threads,
    )
    truth = res.final_bloch
    if cfg.filter_eta is None:
        predicted = truth
    else:
        predicted = filter_ensemble(
            cfg.initial, res.increments, p.replace(eta=cfg.filter_eta), cfg.scheme
        ).final_bloch

    files = []
    failures = []
    summary = {}
    for axis in cfg.axes:
        outcomes = _readout_outcomes(cfg, truth, axis)
        report = conditional_mean_report(
            predicted[:, axis_index(axis)],
            outcomes,
            axis,
            final_time=cfg.tomography_time,
            fidelity_pair=cfg.readout_fidelity,
            half_width=cfg.bin_half_width,
            min_count=cfg.min_bin_count,
        )
        path = outdir / f"conditional_mean_{axis}.json"
        write_json(path, report.to_dict())
        files.append(path)
        summary[axis] = {
            "slope": report.slope,
            "slope_stderr": report.slope_stderr,
            "diag_frac": report.diag_frac,
        }
        if abs(report.slope - 1.0) > cfg.checks["slope_tol"]:
            failures.append(
                f"axis {axis}: slope {report.slope:.4f} outside 1 +- {cfg.checks['slope_tol']}"
            )
        if report.diag_frac < cfg.checks["diag_frac_min"]:
            failures.append(
                f"axis {axis}: only {report.diag_frac:.0%} of bins within 3 stderr of the diagonal"
            )
    summary_path = outdir / "validate.json"
    write_json(summary_path, {"axes": summary, "failures": failures, "passed": not failures})
    files.append(summary_path)
    manifest = _write_manifest(
        outdir, "validate", cfg.raw, files, time.perf_counter() - t0,
        _rng_note(cfg, cfg.ensemble_size),
    )
    print(manifest)
    if failures:
        for f in failures:
            print(f"check failed: {f}", file=sys.stderr)
        return 1
    return 0


def cmd_grid(args) -> int:
    t0 = time.perf_counter()
    cfg = RunConfig.from_dict(load_config(args.config, args.set or []))
    if args.output_dir:
        cfg.output_dir = Path(args.output_dir)
    outdir = _prepare_outdir(cfg.output_dir)
    res = synthesize_ensemble_parallel(
        cfg.initial, cfg.params, cfg.ensemble_size,
        start_index=cfg.start_index, keep_paths=True, keep_records=False,
        threads=cfg.threads,
    )
    files = _emit_grid(cfg, outdir, res.times, res.bloch)
    manifest = _write_manifest(
        outdir, "grid", cfg.raw, files, time.perf_counter() - t0,
        _rng_note(cfg, cfg.ensemble_size),
    )
    print(manifest)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsd",
        description="Diffusive quantum trajectories of a decaying qubit "
                    "under heterodyne monitoring: simulate, filter, estimate.",
    )
    parser.add_argument("--version", action="version", version=f"qsd-toolkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp, config: bool = True):
        if config:
            sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry (JSON-parsed value)")
        sp.add_argument("--output-dir", help="where to write outputs")

    sp = sub.add_parser("simulate", help="synthesize an ensemble of records/trajectories")
    add_common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("filter", help="reconstruct trajectories from record files")
    sp.add_argument("--records", nargs="+", required=True)
    sp.add_argument("--init", default="plus_x")
    sp.add_argument("--scheme", default="kraus", choices=list(SCHEMES))
    add_common(sp, config=False)
    sp.set_defaults(func=cmd_filter, output_dir="qsd-out")

    sp = sub.add_parser("analyze", help="ensemble record means and decay fit")
    sp.add_argument("--records", nargs="+", required=True)
    add_common(sp, config=False)
    sp.set_defaults(func=cmd_analyze, output_dir="qsd-out")

    sp = sub.add_parser("estimate-eta", help="max-likelihood detection efficiency")
    sp.add_argument("--records", nargs="+", required=True)
    sp.add_argument("--init", default="plus_x")
    sp.add_argument("--grid", nargs=3, type=float, default=[0.02, 0.9, 23],
                    metavar=("LO", "HI", "N"))
    add_common(sp, config=False)
    sp.set_defaults(func=cmd_estimate, output_dir="qsd-out")

    sp = sub.add_parser("validate", help="tomography cross-validation with checks")
    add_common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("grid", help="Bloch occupancy grids")
    add_common(sp)
    sp.set_defaults(func=cmd_grid)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # argparse handles usage errors itself with exit code 2.
    if getattr(args, "output_dir", None) is None and hasattr(args, "config"):
        args.output_dir = None
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
