"""Synthetic tomography cross-validation and trajectory statistics.

Projective readout is modeled as a Bernoulli draw from the predicted
coordinate followed by an asymmetric binary confusion channel (F_g, F_e);
the channel is inverted on means before any comparison, so calibrated and
miscalibrated filters can be told apart in corrected space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ConfigError, QubitState

AXES = ("x", "y", "z")
_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}

DEFAULT_BIN_HALF_WIDTH = 0.02
DEFAULT_MIN_COUNT = 40
DEFAULT_CELL_SIDE = 0.04


def axis_index(axis: str) -> int:
    try:
        return _AXIS_INDEX[axis.lower()]
    except KeyError:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}") from None


@dataclass(frozen=True)
class TomographySample:
    axis: str
    outcome: int
    trajectory_index: int
    final_time: float

    def __post_init__(self):
        if self.outcome not in (-1, 1):
            raise ConfigError(f"outcome must be +-1, got {self.outcome}")


def _check_fidelity(fidelity_pair) -> tuple[float, float]:
    f_g, f_e = (float(v) for v in fidelity_pair)
    for name, f in (("F_g", f_g), ("F_e", f_e)):
        if not 0.5 < f <= 1.0:
            raise ConfigError(f"{name} must lie in (0.5, 1], got {f}")
    return f_g, f_e


def simulate_readout(
    state: QubitState | Sequence[float],
    axis: str,
    fidelity_pair=(1.0, 1.0),
    rng: Optional[np.random.Generator] = None,
) -> int:
    """One noisy projective outcome (+-1) along a Pauli axis."""
    coord = (state.bloch if isinstance(state, QubitState) else tuple(state))[axis_index(axis)]
    f_g, f_e = _check_fidelity(fidelity_pair)
    if rng is None:
        rng = np.random.default_rng()
    out = simulate_readout_batch(np.array([coord]), (f_g, f_e), rng)
    return int(out[0])


def simulate_readout_batch(
    coords: np.ndarray, fidelity_pair, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized outcomes for an array of predicted coordinates."""
    f_g, f_e = _check_fidelity(fidelity_pair)
    coords = np.asarray(coords, dtype=float)
    u = rng.random((2,) + coords.shape)
    ideal = np.where(u[0] < (1.0 + coords) / 2.0, 1, -1)
    p_flip = np.where(ideal == 1, 1.0 - f_e, 1.0 - f_g)
    return np.where(u[1] < p_flip, -ideal, ideal)


def correct_readout_means(raw_mean: float, fidelity_pair) -> float:
    """Invert the two-outcome confusion matrix on a mean outcome."""
    f_g, f_e = (float(v) for v in fidelity_pair)
    denom = f_e + f_g - 1.0
    if denom <= 0.0:
        raise ConfigError(f"F_e + F_g - 1 must be > 0, got {denom}")
    return (raw_mean - (f_e - f_g)) / denom


@dataclass
class BinStat:
    center: float
    half_width: float
    count: int
    mean_tomo: float
    stderr: float


@dataclass
class ConditionalMeanReport:
    """Binned tomography means against predicted coordinates, plus the
    weighted least-squares line through the kept bins."""

    axis: str
    final_time: float
    half_width: float
    min_count: int
    fidelity: tuple[float, float]
    bins: list[BinStat]
    slope: float
    slope_stderr: float
    intercept: float
    n_total: int
    diag_frac: float  # fraction of kept bins with |mean - center| <= 3 stderr

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "final_time_us": self.final_time,
            "half_width": self.half_width,
            "min_count": self.min_count,
            "fidelity": list(self.fidelity),
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "intercept": self.intercept,
            "n_total": self.n_total,
            "diag_frac": self.diag_frac,
            "bins": [
                {
                    "center": b.center,
                    "half_width": b.half_width,
                    "count": b.count,
                    "mean_tomo": b.mean_tomo,
                    "stderr": b.stderr,
                }
                for b in self.bins
            ],
        }


def conditional_mean_report(
    predicted: np.ndarray,
    outcomes: np.ndarray,
    axis: str,
    *,
    final_time: float = 0.0,
    fidelity_pair=(1.0, 1.0),
    half_width: float = DEFAULT_BIN_HALF_WIDTH,
    min_count: int = DEFAULT_MIN_COUNT,
) -> ConditionalMeanReport:
    """Bin outcomes by predicted coordinate and fit the calibration line.

    Bins tile [-1, 1] with width 2*half_width; bins holding fewer than
    min_count samples are dropped.  Outcome means are corrected for the
    readout confusion channel before comparison.
    """
    predicted = np.asarray(predicted, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    if predicted.size == 0:
        raise ConfigError("empty ensemble")
    if predicted.shape != outcomes.shape:
        raise ConfigError("predicted and outcomes must have matching shapes")
    f_g, f_e = _check_fidelity(fidelity_pair)
    denom = f_e + f_g - 1.0

    n_bins = max(1, round(1.0 / half_width))
    width = 2.0 / n_bins
    idx = np.clip(((predicted + 1.0) / width).astype(int), 0, n_bins - 1)

    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=outcomes, minlength=n_bins)
    sq_sums = np.bincount(idx, weights=outcomes * outcomes, minlength=n_bins)

    bins: list[BinStat] = []
    for j in range(n_bins):
        n = int(counts[j])
        if n < min_count:
            continue
        raw_mean = sums[j] / n
        var = max(0.0, (sq_sums[j] - n * raw_mean * raw_mean) / max(n - 1, 1))
        bins.append(
            BinStat(
                center=-1.0 + width * (j + 0.5),
                half_width=width / 2.0,
                count=n,
                mean_tomo=correct_readout_means(raw_mean, (f_g, f_e)),
                stderr=math.sqrt(var / n) / denom,
            )
        )
    if not bins:
        raise ConfigError(f"no bin reached the minimum count {min_count}")

    c = np.array([b.center for b in bins])
    m = np.array([b.mean_tomo for b in bins])
    se = np.array([b.stderr for b in bins])
    w = np.array([b.count for b in bins], dtype=float)

    c_bar = float(np.sum(w * c) / np.sum(w))
    m_bar = float(np.sum(w * m) / np.sum(w))
    sxx = float(np.sum(w * (c - c_bar) ** 2))
    if sxx <= 0.0:
        # Single occupied bin: slope undefined; report identity with no power.
        slope, slope_stderr, intercept = 1.0, math.inf, m_bar - c_bar
    else:
        slope = float(np.sum(w * (c - c_bar) * m) / sxx)
        intercept = m_bar - slope * c_bar
        slope_stderr = float(np.sqrt(np.sum((w * (c - c_bar) / sxx) ** 2 * se**2)))

    with np.errstate(invalid="ignore"):
        within = np.abs(m - c) <= 3.0 * se
    return ConditionalMeanReport(
        axis=axis.lower(),
        final_time=final_time,
        half_width=width / 2.0,
        min_count=min_count,
        fidelity=(f_g, f_e),
        bins=bins,
        slope=slope,
        slope_stderr=slope_stderr,
        intercept=float(intercept),
        n_total=int(predicted.size),
        diag_frac=float(np.mean(within)),
    )


def conditional_mean_test(
    pairs: Sequence[tuple], axis: str, final_time: float, **kw
) -> ConditionalMeanReport:
    """Wrapper over (trajectory, TomographySample) pairs.

    Each trajectory contributes its predicted coordinate at final_time;
    samples must share the requested axis and final time.
    """
    if not pairs:
        raise ConfigError("empty ensemble")
    predicted = []
    outcomes = []
    ai = axis_index(axis)
    for traj, sample in pairs:
        if sample.axis.lower() != axis.lower():
            raise ConfigError(f"sample axis {sample.axis!r} does not match {axis!r}")
        if not math.isclose(sample.final_time, final_time, rel_tol=1e-9):
            raise ConfigError("samples disagree on the final time")
        i = int(round(final_time / traj.params.dt))
        predicted.append(traj.bloch[i, ai])
        outcomes.append(sample.outcome)
    return conditional_mean_report(
        np.array(predicted), np.array(outcomes), axis, final_time=final_time, **kw
    )


@dataclass
class OccupancyGrid:
    """Counts of trajectories per cubic Bloch cell at each sampled time."""

    cell_side: float
    times: list[float]
    counts: dict  # (time, (ix, iy, iz)) -> int
    ensemble_size: int

    @property
    def n_cells_per_axis(self) -> int:
        return round(2.0 / self.cell_side)

    def total_at(self, t: float) -> int:
        return sum(n for (tt, _), n in self.counts.items() if tt == t)

    def rows(self) -> list[tuple[float, int, int, int, int]]:
        """Sorted (t, ix, iy, iz, count) rows for CSV export."""
        return sorted((t, *cell, n) for (t, cell), n in self.counts.items())

    def to_dict(self, alpha_by_time: Optional[dict] = None) -> dict:
        out = {
            "cell_side": self.cell_side,
            "times_us": list(self.times),
            "ensemble_size": self.ensemble_size,
            "cells": [
                {"t_us": t, "ix": ix, "iy": iy, "iz": iz, "count": n}
                for t, ix, iy, iz, n in self.rows()
            ],
        }
        if alpha_by_time is not None:
            out["alpha_flow"] = {repr(float(t)): v for t, v in alpha_by_time.items()}
        return out


def occupancy(
    trajectories,
    times: Sequence[float],
    cell_side: float = DEFAULT_CELL_SIDE,
) -> OccupancyGrid:
    """Histogram trajectory states into cubic Bloch cells.

    ``trajectories`` is either a list of Trajectory objects or a pair
    (sample_times, bloch) with bloch of shape (N, n+1, 3).
    """
    if isinstance(trajectories, tuple):
        sample_times, bloch = trajectories
        sample_times = np.asarray(sample_times, dtype=float)
        bloch = np.asarray(bloch, dtype=float)
    else:
        trajectories = list(trajectories)
        if not trajectories:
            raise ConfigError("empty ensemble")
        sample_times = np.asarray(trajectories[0].times, dtype=float)
        bloch = np.stack([t.bloch for t in trajectories])
    n_cells = round(2.0 / cell_side)
    if n_cells < 1 or abs(n_cells * cell_side - 2.0) > 1e-9:
        raise ConfigError(f"cell_side {cell_side} does not tile [-1, 1]")

    counts: dict = {}
    for t in times:
        matches = np.nonzero(np.isclose(sample_times, t, rtol=0, atol=1e-9))[0]
        if matches.size != 1:
            raise ConfigError(f"time {t} is not a trajectory sample time")
        pts = bloch[:, matches[0], :]
        if np.any(np.abs(pts) > 1.0 + 1e-9):
            raise ConfigError("states outside the Bloch ball cannot be binned")
        cells = np.clip(((pts + 1.0) / cell_side).astype(int), 0, n_cells - 1)
        uniq, n = np.unique(cells, axis=0, return_counts=True)
        for cell, cnt in zip(uniq, n):
            counts[(float(t), tuple(int(v) for v in cell))] = int(cnt)
    return OccupancyGrid(
        cell_side=cell_side,
        times=[float(t) for t in times],
        counts=counts,
        ensemble_size=int(bloch.shape[0]),
    )


@dataclass
class ExcitationStats:
    fraction_zpos: float
    example_indices: list[int]
    fraction_step_increase: float

    def to_dict(self) -> dict:
        return {
            "fraction_zpos": self.fraction_zpos,
            "example_indices": self.example_indices,
            "fraction_step_increase": self.fraction_step_increase,
        }


def excitation_increase_stats(
    z_paths: np.ndarray, max_examples: int = 10
) -> ExcitationStats:
    """Fraction of trajectories whose excitation rises during decay.

    fraction_zpos: max over t > 0 of <sigma_z> is positive.
    fraction_step_increase: some step after the first one increases
    <sigma_z> (the relevant statistic when starting from |e>, where the
    global maximum sits trivially at t = 0).
    """
    z = np.asarray(z_paths, dtype=float)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ConfigError(f"z_paths must be (N, n+1 >= 2), got {z.shape}")
    zpos = z[:, 1:].max(axis=1) > 0.0
    idx = np.nonzero(zpos)[0][:max_examples]
    if z.shape[1] > 2:
        steps = np.diff(z[:, 1:], axis=1)
        frac_inc = float(np.mean(steps.max(axis=1) > 0.0))
    else:
        frac_inc = 0.0
    return ExcitationStats(
        fraction_zpos=float(np.mean(zpos)),
        example_indices=[int(i) for i in idx],
        fraction_step_increase=frac_inc,
    )
