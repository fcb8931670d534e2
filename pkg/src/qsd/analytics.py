"""Closed-form invariants of monitored relaxation.

For gamma_phi = 0 the quantity alpha = 1 + S_L / (2 p_e^2) evolves
deterministically, alpha(t) = eta + (alpha(0) - eta) exp(gamma1 t),
independent of the measurement record, and the state is confined to the
spheroid

    alpha (x^2 + y^2) + alpha^2 (z + 1 - 1/alpha)^2 = 1

through the south pole.  The position on the spheroid, xi = (x, y)/(z+1),
is an exponentially weighted integral of the raw record, so trajectories
can be reconstructed without integrating the master equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import AtSouthPole, QubitState, SimParams, bloch_from_density
from .engine import HeterodyneRecord

# Convergence floors: below either one the state is declared absorbed at
# |g>, which lies on every spheroid.  Both alpha_of and xi_of share the
# same predicate so they signal for exactly the same states.
EPS_PE = 1e-6
EPS_Z = 1e-9

StateLike = Union[QubitState, np.ndarray]


def _bloch(state: StateLike) -> np.ndarray:
    if isinstance(state, QubitState):
        return np.array(state.bloch)
    arr = np.asarray(state)
    if arr.shape == (2, 2):
        return bloch_from_density(arr)
    return np.asarray(arr, dtype=float)


def at_south_pole(state: StateLike, eps_pe: float = EPS_PE, eps_z: float = EPS_Z) -> bool:
    """True when the state is numerically absorbed at |g>."""
    z = _bloch(state)[2]
    return (1.0 + z) / 2.0 <= eps_pe or z <= -1.0 + eps_z


def alpha_of(state: StateLike) -> float:
    """alpha = 1 + S_L / (2 p_e^2) >= 1; raises AtSouthPole near |g>."""
    x, y, z = _bloch(state)
    if at_south_pole((x, y, z)):
        raise AtSouthPole(f"p_e = {(1.0 + z) / 2.0:.3g}: alpha undefined at |g>")
    w = 1.0 + z
    # S_L/(2 p_e^2) = (1 - x^2 - y^2 - z^2)/(1+z)^2 with (1-z^2) factored
    # through (1+z) to avoid cancellation near the pole.
    return 1.0 + ((1.0 - z) * w - x * x - y * y) / (w * w)


def alpha_flow(alpha0: float, p: SimParams, t) -> Union[float, np.ndarray]:
    """Deterministic evolution alpha(t) = eta + (alpha0 - eta) e^{gamma1 t}."""
    if alpha0 < 1.0 - 1e-9:
        raise ValueError(f"alpha0 must be >= 1, got {alpha0}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    out = p.eta + (alpha0 - p.eta) * np.exp(p.gamma1 * t)
    return float(out) if out.ndim == 0 else out


def spheroid_residual(state: StateLike, alpha: float) -> float:
    """Signed residual of the spheroid equation; 0 iff the state lies on it."""
    if alpha < 1.0 - 1e-9:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    x, y, z = _bloch(state)
    return float(alpha * (x * x + y * y) + alpha**2 * (z + 1.0 - 1.0 / alpha) ** 2 - 1.0)


def spheroid_residual_batch(bloch: np.ndarray, alpha) -> np.ndarray:
    x, y, z = bloch[..., 0], bloch[..., 1], bloch[..., 2]
    alpha = np.asarray(alpha, dtype=float)
    return alpha * (x * x + y * y) + alpha**2 * (z + 1.0 - 1.0 / alpha) ** 2 - 1.0


def xi_of(state: StateLike) -> tuple[float, float]:
    """Spheroid position (x, y)/(z + 1); raises AtSouthPole near |g>."""
    x, y, z = _bloch(state)
    if at_south_pole((x, y, z)):
        raise AtSouthPole(f"z = {z:.9g}: xi undefined at |g>")
    return (x / (z + 1.0), y / (z + 1.0))


def alpha_xi_paths(bloch: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized (alpha, xi, valid) over a (..., 3) Bloch array.

    Entries flagged invalid are at the south pole; alpha/xi are NaN there.
    """
    x, y, z = bloch[..., 0], bloch[..., 1], bloch[..., 2]
    w = 1.0 + z
    valid = ((1.0 + z) / 2.0 > EPS_PE) & (z > -1.0 + EPS_Z)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(valid, 1.0 + ((1.0 - z) * w - x * x - y * y) / (w * w), np.nan)
        xi = np.stack(
            [np.where(valid, x / w, np.nan), np.where(valid, y / w, np.nan)], axis=-1
        )
    return alpha, xi, valid


def xi_path_from_record(
    xi0: tuple[float, float], rec: HeterodyneRecord, p: SimParams
) -> np.ndarray:
    """xi at every grid time from the record alone (no filtering).

    Left-point (Ito) discretization of the convolution integral: the
    increment over [t_j, t_j + dt] enters with weight e^{gamma1 (t - t_j)/2},
    via the recurrence xi_{n+1} = e^{gamma1 dt / 2} (xi_n + k * d(I,Q)_n).
    """
    if not math.isclose(rec.dt, p.dt, rel_tol=1e-12, abs_tol=0.0):
        raise ValueError(f"record dt {rec.dt!r} does not match params dt {p.dt!r}")
    k = math.sqrt(p.eta * p.gamma1 / 2.0)
    growth = math.exp(p.gamma1 * p.dt / 2.0)
    n = len(rec)
    out = np.empty((n + 1, 2))
    out[0] = xi0
    cur = np.array(xi0, dtype=float)
    for j in range(n):
        cur = growth * (cur + k * rec.increments[j])
        out[j + 1] = cur
    return out


def xi_from_record(
    xi0: tuple[float, float], rec: HeterodyneRecord, p: SimParams, t: float
) -> tuple[float, float]:
    """Record-only xi(t); t must be a grid time within the record."""
    steps = t / p.dt
    n = round(steps)
    if abs(steps - n) > 1e-6 or n < 0 or n > len(rec):
        raise ValueError(f"t = {t} is not a grid multiple of dt within the record")
    path = xi_path_from_record(xi0, rec, p)
    return (float(path[n, 0]), float(path[n, 1]))


@dataclass(frozen=True)
class SpheroidCoord:
    """(alpha, xi) pair; determines a unique Bloch point with z > -1."""

    alpha: float
    xi_x: float
    xi_y: float


def state_from_spheroid(c: SpheroidCoord) -> QubitState:
    """Invert (alpha, xi) to the Bloch point on the spheroid.

    Solving alpha r^2 w^2 + alpha^2 (w - 1/alpha)^2 = 1 for w = z + 1 gives
    the unique positive root w = 2 / (alpha + |xi|^2).
    """
    if c.alpha < 1.0 - 1e-9:
        raise ValueError(f"alpha must be >= 1, got {c.alpha}")
    denom = c.alpha + c.xi_x**2 + c.xi_y**2
    assert denom > 0.0, "no positive root; unreachable for alpha >= 1"
    w = 2.0 / denom
    return QubitState.from_bloch((c.xi_x * w, c.xi_y * w, w - 1.0))


def bloch_from_spheroid_batch(alpha, xi: np.ndarray) -> np.ndarray:
    """Vectorized spheroid inversion: (alpha, xi (..., 2)) -> (..., 3)."""
    alpha = np.asarray(alpha, dtype=float)
    w = 2.0 / (alpha + xi[..., 0] ** 2 + xi[..., 1] ** 2)
    return np.stack([xi[..., 0] * w, xi[..., 1] * w, w - 1.0], axis=-1)
