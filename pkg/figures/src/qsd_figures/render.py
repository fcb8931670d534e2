"""Figure rendering: pure functions of the input files.

A fixed style and dpi keep raster output pixel-stable under re-rendering;
the PNG Software tag is suppressed so identical inputs give identical
bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import (
    InputError,
    read_conditional_mean,
    read_decay_fit,
    read_mean_record,
    read_occupancy,
    read_record,
    read_trajectory,
)

KINDS = ("records", "trajectory", "conditional_mean", "occupancy")

STYLE = {
    "figure.dpi": 130,
    "savefig.dpi": 130,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 0.9,
    "legend.fontsize": 8,
    "svg.hashsalt": "qsd-fig",
}

RECORD_COLORS = ("#c23b22", "#2e8b57", "#8855cc", "#cc8800")
AXIS_COLORS = {"x": "#c23b22", "y": "#1f77b4", "z": "#2e8b57"}


@dataclass
class FigureSpec:
    figure_kind: str
    inputs: Sequence[str]
    out: str
    mean: Optional[str] = None
    fit: Optional[str] = None
    times: Optional[Sequence[float]] = None
    cmap: str = "magma"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.figure_kind not in KINDS:
            raise InputError(f"unknown figure kind {self.figure_kind!r}; expected {KINDS}")
        if not self.inputs:
            raise InputError("no input files given")


def _save(fig, out):
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    kwargs = {}
    if out.suffix.lower() == ".png":
        kwargs["metadata"] = {"Software": None}
    elif out.suffix.lower() == ".svg":
        kwargs["metadata"] = {"Date": None}
    fig.savefig(out, **kwargs)
    plt.close(fig)


def _render_records(spec: FigureSpec):
    records = [read_record(p) for p in spec.inputs]
    mean = read_mean_record(spec.mean) if spec.mean else None
    fit = read_decay_fit(spec.fit) if spec.fit else None

    fig, (ax_i, ax_q) = plt.subplots(2, 1, figsize=(5.2, 4.2), sharex=True)
    for j, rec in enumerate(records):
        color = RECORD_COLORS[j % len(RECORD_COLORS)]
        label = Path(rec["path"]).stem
        ax_i.plot(rec["t"], rec["dI"] / rec["dt"], ".-", ms=2.5, alpha=0.65,
                  color=color, label=label)
        ax_q.plot(rec["t"], rec["dQ"] / rec["dt"], ".-", ms=2.5, alpha=0.65,
                  color=color)
    if mean is not None:
        ax_i.errorbar(mean["t_us"], mean["mean_dI_dt"], yerr=mean["stderr_dI_dt"],
                      fmt="o", ms=3, color="#1f4e9c", zorder=5, label="ensemble mean")
        ax_q.errorbar(mean["t_us"], mean["mean_dQ_dt"], yerr=mean["stderr_dQ_dt"],
                      fmt="o", ms=3, color="#1f4e9c", zorder=5)
        if fit is not None:
            tt = np.linspace(mean["t_us"][0], mean["t_us"][-1], 200)
            ax_i.plot(tt, fit["amp"] * np.exp(-fit["rate"] * tt), "-",
                      color="#1f4e9c", zorder=6, label="exponential fit")
    ax_i.set_ylabel(r"$dI/dt$ ($\mu s^{-1/2}$)")
    ax_q.set_ylabel(r"$dQ/dt$ ($\mu s^{-1/2}$)")
    ax_q.set_xlabel(r"$t$ ($\mu$s)")
    ax_i.legend(loc="upper right")
    fig.tight_layout()
    return fig


def _render_trajectory(spec: FigureSpec):
    trajs = [read_trajectory(p) for p in spec.inputs]
    fig, axes = plt.subplots(3, 1, figsize=(5.2, 5.4), sharex=True)
    for j, traj in enumerate(trajs):
        color = RECORD_COLORS[j % len(RECORD_COLORS)]
        label = Path(traj["path"]).stem
        for ax, coord in zip(axes, ("x", "y", "z")):
            ax.plot(traj["t_us"], traj[coord], ".-", ms=2.5, color=color,
                    label=label if coord == "x" else None)
    for ax, coord in zip(axes, ("x", "y", "z")):
        ax.set_ylabel(coord)
        ax.set_ylim(-1.05, 1.05)
        ax.axhline(0.0, color="k", lw=0.5, alpha=0.4)
    axes[0].legend(loc="upper right")
    axes[-1].set_xlabel(r"$t$ ($\mu$s)")
    fig.tight_layout()
    return fig


def _render_conditional_mean(spec: FigureSpec):
    reports = [read_conditional_mean(p) for p in spec.inputs]
    fig, ax = plt.subplots(figsize=(4.6, 4.4))
    ax.plot([-1, 1], [-1, 1], "-", color="0.3", lw=1.0, zorder=1)
    for rep in reports:
        axis = rep["axis"]
        centers = [b["center"] for b in rep["bins"]]
        means = [b["mean_tomo"] for b in rep["bins"]]
        errs = [b["stderr"] for b in rep["bins"]]
        ax.errorbar(centers, means, yerr=errs, fmt="o", ms=3.5,
                    color=AXIS_COLORS.get(axis, "#555555"),
                    label=f"{axis}: slope {rep['slope']:.3f}")
    ax.set_xlabel("predicted coordinate (binned)")
    ax.set_ylabel("tomography mean")
    ax.set_xlim(-1.05, 1.05)
    ax.set_ylim(-1.05, 1.05)
    ax.set_aspect("equal")
    ax.legend(loc="upper left")
    fig.tight_layout()
    return fig


def _meridian(alpha: float):
    """x-z cross-section (y = 0) of the confinement spheroid."""
    theta = np.linspace(0, 2 * np.pi, 256)
    return np.cos(theta) / np.sqrt(alpha), -1.0 + 1.0 / alpha + np.sin(theta) / alpha


def _render_occupancy(spec: FigureSpec):
    grid = read_occupancy(spec.inputs[0])
    side = float(grid["cell_side"])
    n_cells = round(2.0 / side)
    available = [float(t) for t in grid["times_us"]]
    times = available if spec.times is None else [float(t) for t in spec.times]
    for t in times:
        if not any(abs(t - a) < 1e-9 for a in available):
            raise InputError(f"time {t} not present in the grid (has {available})")

    alpha_by_time = grid.get("alpha_flow", {})
    fig, axes = plt.subplots(1, len(times), figsize=(3.0 * len(times), 3.4),
                             squeeze=False)
    for ax, t in zip(axes[0], times):
        img = np.zeros((n_cells, n_cells))
        total = 0
        for cell in grid["cells"]:
            if abs(float(cell["t_us"]) - t) < 1e-9:
                img[cell["iz"], cell["ix"]] += cell["count"]  # project over y
                total += cell["count"]
        if total == 0:
            raise InputError(f"{spec.inputs[0]}: no occupied cells at t = {t}")
        with np.errstate(divide="ignore"):
            logimg = np.where(img > 0, np.log10(img), np.nan)
        ax.imshow(logimg, origin="lower", extent=(-1, 1, -1, 1), cmap=spec.cmap,
                  interpolation="nearest")
        circle = np.linspace(0, 2 * np.pi, 256)
        ax.plot(np.cos(circle), np.sin(circle), "-", color="0.4", lw=0.8)
        alpha = alpha_by_time.get(repr(float(t)))
        if alpha is not None:
            mx, mz = _meridian(float(alpha))
            ax.plot(mx, mz, "-", color="#00d0d0", lw=1.1)
        ax.set_title(rf"$t = {t:g}\,\mu$s")
        ax.set_xlabel("x")
        ax.set_ylabel("z")
        ax.set_xlim(-1.05, 1.05)
        ax.set_ylim(-1.05, 1.05)
        ax.grid(False)
    fig.tight_layout()
    return fig


_RENDERERS = {
    "records": _render_records,
    "trajectory": _render_trajectory,
    "conditional_mean": _render_conditional_mean,
    "occupancy": _render_occupancy,
}


def render(spec: FigureSpec) -> Path:
    """Render one figure; returns the output path.

    All inputs are parsed and validated before anything is written, so a
    bad input never leaves a partial file behind.
    """
    with plt.rc_context(STYLE):
        fig = _RENDERERS[spec.figure_kind](spec)
        _save(fig, spec.out)
    return Path(spec.out)
