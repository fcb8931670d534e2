"""Maximum-likelihood estimation of the detection efficiency.

The likelihood of a record is assembled by prediction-error decomposition:
the filter is run at the candidate efficiency, and each quadrature
increment is scored against the Gaussian innovation law

    dI_k ~ N( sqrt(eta*gamma1/2) <sigma_x>_{rho_k} dt, dt )

with rho_k the filtered state entering step k.  gamma1 and gamma_phi are
taken as known; only eta is fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .core import ConfigError, InitialLike, SimParams, resolve_initial
from .engine import HeterodyneRecord, _kraus_step_arrays

# 95% profile-likelihood interval: drop of chi2_{0.95,1}/2 below the peak.
CI95_DROP = 1.9207


@dataclass
class LikelihoodResult:
    eta_hat: float
    log_likelihood_curve: list[tuple[float, float]]
    ci95: tuple[float, float]
    boundary_warning: bool = False
    n_records: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "eta_hat": self.eta_hat,
            "ci95": list(self.ci95),
            "boundary_warning": self.boundary_warning,
            "n_records": self.n_records,
            "curve": [[e, v] for e, v in self.log_likelihood_curve],
        }


def _per_record_log_likelihood(
    init: InitialLike, increments: np.ndarray, p: SimParams
) -> np.ndarray:
    """(N,) innovation log-likelihoods for a (N, n, 2) increment batch."""
    n_traj, n_steps = increments.shape[0], increments.shape[1]
    dt = p.dt
    k = math.sqrt(p.eta * p.gamma1 / 2.0)
    state0 = resolve_initial(init)

    # Predicted <sigma_x>, <sigma_y> entering each step.
    if p.eta == 0.0:
        pred = np.zeros((n_traj, n_steps, 2))
    else:
        pred = np.empty((n_traj, n_steps, 2))
        rho = np.broadcast_to(state0.rho, (n_traj, 2, 2)).copy()
        for j in range(n_steps):
            b = rho[..., 0, 1]
            pred[:, j, 0] = 2.0 * b.real
            pred[:, j, 1] = -2.0 * b.imag
            rho = _kraus_step_arrays(rho, increments[:, j, 0], increments[:, j, 1], p)

    resid = increments - k * pred * dt
    const = -0.5 * math.log(2.0 * math.pi * dt)
    ll = const * (2 * n_steps) - 0.5 * (resid * resid).sum(axis=(1, 2)) / dt
    return ll


def record_log_likelihood(
    init: InitialLike, rec: HeterodyneRecord, p: SimParams
) -> float:
    """Innovation log-likelihood of one record under candidate params."""
    if not math.isclose(rec.dt, p.dt, rel_tol=1e-12, abs_tol=0.0):
        raise ConfigError(f"record dt {rec.dt!r} does not match params dt {p.dt!r}")
    return float(_per_record_log_likelihood(init, rec.increments[np.newaxis], p)[0])


def ensemble_log_likelihood(
    init: InitialLike, increments: np.ndarray, p: SimParams
) -> float:
    """Summed log-likelihood over a (N, n, 2) record batch.

    Per-record terms are summed in sorted order, so the total is exactly
    invariant under permutations of the record set.
    """
    per = _per_record_log_likelihood(init, np.asarray(increments, dtype=float), p)
    return float(np.sort(per).sum())


def _golden_max(f, lo: float, hi: float, tol: float):
    """Golden-section maximization of a unimodal f on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return ((a + b) / 2.0, max(fc, fd))


def estimate_eta(
    init: InitialLike,
    recs: Sequence[HeterodyneRecord] | np.ndarray,
    p: SimParams,
    grid: tuple[float, float, int] = (0.02, 0.9, 23),
) -> LikelihoodResult:
    """Grid-then-golden-section MLE of eta from a set of records.

    ``p.eta`` is ignored; gamma1, gamma_phi and dt are taken from ``p``.
    The 95% interval comes from the +-1.92 profile-likelihood drop; if the
    curve never drops below the threshold before a grid edge, the interval
    is clipped there.
    """
    lo, hi, n_grid = grid
    if not (0.0 <= lo < hi <= 1.0):
        raise ConfigError(f"grid bounds must satisfy 0 <= lo < hi <= 1, got {grid}")
    if n_grid < 3:
        raise ConfigError("grid needs at least 3 points")
    if isinstance(recs, np.ndarray):
        increments = np.asarray(recs, dtype=float)
    else:
        recs = list(recs)
        if not recs:
            raise ConfigError("need at least one record")
        dts = {r.dt for r in recs}
        if len(dts) != 1:
            raise ConfigError(f"records disagree on dt: {sorted(dts)}")
        if not math.isclose(recs[0].dt, p.dt, rel_tol=1e-12, abs_tol=0.0):
            raise ConfigError(f"record dt {recs[0].dt!r} does not match params dt {p.dt!r}")
        lengths = {len(r) for r in recs}
        if len(lengths) != 1:
            raise ConfigError(f"records disagree on length: {sorted(lengths)}")
        increments = np.stack([r.increments for r in recs])

    def total_ll(eta: float) -> float:
        return ensemble_log_likelihood(init, increments, p.replace(eta=float(eta)))

    etas = np.linspace(lo, hi, n_grid)
    lls = np.array([total_ll(e) for e in etas])
    i_max = int(np.argmax(lls))
    boundary = i_max in (0, n_grid - 1)

    bracket_lo = etas[max(i_max - 1, 0)]
    bracket_hi = etas[min(i_max + 1, n_grid - 1)]
    eta_hat, ll_hat = _golden_max(total_ll, float(bracket_lo), float(bracket_hi), 1e-4)
    if ll_hat < lls[i_max]:  # flat or degenerate curve: keep the grid point
        eta_hat, ll_hat = float(etas[i_max]), float(lls[i_max])

    threshold = ll_hat - CI95_DROP

    def drop(eta: float) -> float:
        return total_ll(eta) - threshold

    ci_lo = lo
    if drop(lo) < 0.0:
        ci_lo = float(brentq(drop, lo, eta_hat, xtol=1e-5))
    ci_hi = hi
    if drop(hi) < 0.0:
        ci_hi = float(brentq(drop, eta_hat, hi, xtol=1e-5))

    return LikelihoodResult(
        eta_hat=float(eta_hat),
        log_likelihood_curve=[(float(e), float(v)) for e, v in zip(etas, lls)],
        ci95=(ci_lo, ci_hi),
        boundary_warning=boundary,
        n_records=increments.shape[0],
    )


__all__ = [
    "CI95_DROP",
    "LikelihoodResult",
    "ensemble_log_likelihood",
    "estimate_eta",
    "record_log_likelihood",
]
