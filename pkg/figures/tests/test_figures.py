import json
import math
import os
from pathlib import Path

import matplotlib.image as mpimg
import numpy as np
import pytest

from qsd_figures.cli import main
from qsd_figures.io import InputError, read_record, read_trajectory
from qsd_figures.render import FigureSpec, render

ACCEPT_DIR = Path(os.environ.get(
    "QSD_ACCEPT_DIR",
    Path(__file__).resolve().parents[2] / "acceptance_out",
))


# ---------------------------------------------------------------------------
# miniature schema-correct fixtures (independent of the toolkit package)
# ---------------------------------------------------------------------------

@pytest.fixture
def record_files(tmp_path):
    rng = np.random.default_rng(0)
    paths = []
    for idx in range(2):
        lines = [
            "# qsd-record v1, dt_us=0.2, gamma1_us=0.24096385542168675, "
            f"gamma_phi_us=0.02857142857142857, eta=0.24, seed=5, index={idx}",
            "t_us,dI,dQ",
        ]
        for k in range(20):
            dI = 0.17 * math.exp(-0.15 * k * 0.2) * 0.2 + rng.normal(0, math.sqrt(0.2))
            dQ = rng.normal(0, math.sqrt(0.2))
            lines.append(f"{k * 0.2:.9g},{dI!r},{dQ!r}")
        p = tmp_path / f"rec_{idx:06d}.csv"
        p.write_text("\n".join(lines) + "\n")
        paths.append(p)
    return paths


@pytest.fixture
def mean_file(tmp_path):
    lines = ["t_us,mean_dI_dt,mean_dQ_dt,stderr_dI_dt,stderr_dQ_dt,n_records"]
    for k in range(20):
        t = k * 0.2
        lines.append(f"{t:.9g},{0.17 * math.exp(-0.149 * t)!r},0.0,0.007,0.007,100000")
    p = tmp_path / "ensemble_mean.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


@pytest.fixture
def fit_file(tmp_path):
    p = tmp_path / "decay_fit.json"
    p.write_text(json.dumps({"amp": 0.17, "rate": 0.149}))
    return p


@pytest.fixture
def trajectory_file(tmp_path):
    rng = np.random.default_rng(1)
    lines = ["t_us,x,y,z,S_L,alpha,xi_x,xi_y"]
    x, y, z = 1.0, 0.0, 0.0
    for k in range(21):
        t = k * 0.2
        s_l = max(0.0, (1 - x * x - y * y - z * z) / 2)
        if z > -1 + 1e-6:
            alpha = f"{1 + 2 * s_l / ((1 + z) / 2) ** 2 / 4!r}"
            xi = f"{x / (1 + z)!r},{y / (1 + z)!r}"
            tail = f"{alpha},{xi}"
        else:
            tail = ",,"
        lines.append(f"{t:.9g},{x!r},{y!r},{z!r},{s_l!r},{tail}")
        x = 0.97 * x + rng.normal(0, 0.05)
        y = 0.97 * y + rng.normal(0, 0.05)
        z = max(-1.0, z - 0.04 + rng.normal(0, 0.04))
    p = tmp_path / "traj_000000.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


@pytest.fixture
def conditional_file(tmp_path):
    bins = [
        {"center": -1 + 0.04 * (j + 0.5), "half_width": 0.02, "count": 100 + 10 * j,
         "mean_tomo": -1 + 0.04 * (j + 0.5) + 0.01, "stderr": 0.03}
        for j in range(10, 40)
    ]
    doc = {"axis": "x", "final_time_us": 4.0, "half_width": 0.02, "min_count": 40,
           "fidelity": [1.0, 1.0], "slope": 1.002, "slope_stderr": 0.01,
           "intercept": 0.01, "n_total": 100000, "diag_frac": 1.0, "bins": bins}
    p = tmp_path / "conditional_mean_x.json"
    p.write_text(json.dumps(doc))
    return p


@pytest.fixture
def grid_file(tmp_path):
    rng = np.random.default_rng(2)
    cells = []
    for t, alpha in ((1.0, 1.21), (4.0, 2.24)):
        for _ in range(200):
            theta = rng.uniform(0, 2 * np.pi)
            x = math.cos(theta) / math.sqrt(alpha)
            z = -1 + 1 / alpha + math.sin(theta) / alpha
            cells.append({
                "t_us": t,
                "ix": min(49, int((x + 1) / 0.04)),
                "iy": min(49, int((rng.normal(0, 0.05) + 1) / 0.04)),
                "iz": min(49, int((z + 1) / 0.04)),
                "count": int(rng.integers(1, 30)),
            })
    doc = {"cell_side": 0.04, "times_us": [1.0, 4.0], "ensemble_size": 100000,
           "cells": cells, "alpha_flow": {"1.0": 1.21, "4.0": 2.24}}
    p = tmp_path / "occupancy.json"
    p.write_text(json.dumps(doc))
    return p


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def pixels(path):
    return mpimg.imread(path)


def test_records_figure(tmp_path, record_files, mean_file, fit_file):
    out = tmp_path / "records.png"
    code = main(["records", "--in", *map(str, record_files),
                 "--mean", str(mean_file), "--fit", str(fit_file),
                 "--out", str(out)])
    assert code == 0
    assert out.stat().st_size > 0


def test_trajectory_figure(tmp_path, trajectory_file):
    out = tmp_path / "traj.png"
    assert main(["trajectory", "--in", str(trajectory_file), "--out", str(out)]) == 0
    assert out.is_file()


def test_conditional_mean_figure(tmp_path, conditional_file):
    out = tmp_path / "cond.png"
    assert main(["conditional-mean", "--in", str(conditional_file), "--out", str(out)]) == 0
    assert out.is_file()


def test_occupancy_figure_with_time_subset(tmp_path, grid_file):
    out = tmp_path / "occ.png"
    assert main(["occupancy", "--in", str(grid_file), "--times", "4.0",
                 "--out", str(out)]) == 0
    assert out.is_file()


def test_render_is_pixel_stable(tmp_path, record_files, mean_file, fit_file):
    out1 = tmp_path / "a.png"
    out2 = tmp_path / "b.png"
    spec = dict(figure_kind="records", inputs=[str(p) for p in record_files],
                mean=str(mean_file), fit=str(fit_file))
    render(FigureSpec(out=str(out1), **spec))
    render(FigureSpec(out=str(out2), **spec))
    assert out1.read_bytes() == out2.read_bytes()
    assert np.array_equal(pixels(out1), pixels(out2))


def test_missing_input_exits_2(tmp_path, capsys):
    out = tmp_path / "x.png"
    code = main(["trajectory", "--in", str(tmp_path / "nope.csv"), "--out", str(out)])
    assert code == 2
    assert "nope.csv" in capsys.readouterr().err
    assert not out.exists()


def test_empty_grid_errors_and_writes_nothing(tmp_path, capsys):
    bad = tmp_path / "empty.json"
    bad.write_text(json.dumps({"cell_side": 0.04, "times_us": [1.0], "cells": []}))
    out = tmp_path / "occ.png"
    assert main(["occupancy", "--in", str(bad), "--out", str(out)]) == 2
    assert "no occupied cells" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_time_rejected(tmp_path, grid_file):
    out = tmp_path / "occ.png"
    assert main(["occupancy", "--in", str(grid_file), "--times", "2.5",
                 "--out", str(out)]) == 2
    assert not out.exists()


def test_malformed_record_names_file_and_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("# qsd-record v1, dt_us=0.2\nt_us,dI,dQ\n0.0,1.0\n")
    assert main(["records", "--in", str(bad), "--out", str(tmp_path / "o.png")]) == 2
    assert "bad.csv:3" in capsys.readouterr().err


def test_parsers_reject_wrong_headers(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("t_us,dI\n0.0,0.1\n")
    with pytest.raises(InputError):
        read_record(p)
    with pytest.raises(InputError):
        read_trajectory(p)


# ---------------------------------------------------------------------------
# [SECONDARY] acceptance: render the real criteria-2/8 outputs
# ---------------------------------------------------------------------------

needs_accept = pytest.mark.skipif(
    not (ACCEPT_DIR / "ensemble_mean.csv").is_file(),
    reason="acceptance_out/ not found; run the toolkit acceptance suite first "
           "(pytest tests/test_acceptance.py in the repository root)",
)


@needs_accept
def test_criterion_13_figures_from_acceptance_outputs(tmp_path):
    jobs = [
        (["records",
          "--in", str(ACCEPT_DIR / "rec_000000.csv"), str(ACCEPT_DIR / "rec_000001.csv"),
          "--mean", str(ACCEPT_DIR / "ensemble_mean.csv"),
          "--fit", str(ACCEPT_DIR / "decay_fit.json")], "records.png"),
        (["trajectory",
          "--in", str(ACCEPT_DIR / "traj_000000.csv"), str(ACCEPT_DIR / "traj_000001.csv")],
         "trajectory.png"),
        (["conditional-mean",
          "--in", str(ACCEPT_DIR / "conditional_mean_x.json"),
          str(ACCEPT_DIR / "conditional_mean_y.json"),
          str(ACCEPT_DIR / "conditional_mean_z.json")], "conditional_mean.png"),
        (["occupancy", "--in", str(ACCEPT_DIR / "occupancy.json")], "occupancy.png"),
    ]
    for argv, name in jobs:
        first = tmp_path / name
        again = tmp_path / ("re_" + name)
        assert main([*argv, "--out", str(first)]) == 0
        assert main([*argv, "--out", str(again)]) == 0
        assert first.stat().st_size > 0
        assert np.array_equal(pixels(first), pixels(again)), name
    print("[criterion 13] figure-regeneration: PASS "
          f"(4 kinds rendered pixel-stable from {ACCEPT_DIR})")
