"""Heterodyne record synthesis and trajectory filtering.

The measurement record over one step of length dt is

    dI = sqrt(eta*gamma1/2) <sigma_x> dt + dW_I
    dQ = sqrt(eta*gamma1/2) <sigma_y> dt + dW_Q

with independent Gaussian dW of variance dt.  Conditioned states follow the
Ito stochastic master equation

    drho = (gamma1 D[sm] + gamma_phi/2 D[sz]) rho dt
         + sqrt(eta*gamma1/2) M[sm]  rho dW_I
         + sqrt(eta*gamma1/2) M[i sm] rho dW_Q

where D[L]r = L r L+ - (L+L r + r L+L)/2 and M[L]r = (L - <L>)r + r(L - <L>)+.

Two interchangeable discretizations are provided:

* ``kraus``: a completely positive update
      rho' = (M rho M+ + (1-eta) gamma1 sm rho sp dt + gamma_phi/2 sz rho sz dt) / tr
      M    = 1 - [(gamma1/2) sp sm + (gamma_phi/4) 1] dt
             + sqrt(eta*gamma1/2) (dI + s*i*dQ) sm
  which keeps states positive for arbitrary record values.  The quadrature
  sign s = QUADRATURE_SIGN is pinned by the first-order expansion test in
  the test suite, not assumed.
* ``euler``: the literal first-order Euler-Maruyama step of the equation
  above.  It can leave the state ball for coarse dt; violations are counted
  in the trajectory diagnostics instead of being hidden.

With eta = 0 the record carries no information and both schemes reduce to
the closed-form Lindblad relaxation, which is then used directly.

Every trajectory draws its noise from a counter-based Philox stream keyed
by (master_seed, purpose << 56 | trajectory_index), so ensembles are
reproducible bit-for-bit regardless of execution order or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import (
    ConfigError,
    InitialLike,
    NumericalBlowupError,
    QubitState,
    SimParams,
    resolve_initial,
)

# Fixed by the sign-convention test: the +i dQ coupling reproduces the
# M[i sm] dW_Q term of the Euler step at first order.
QUADRATURE_SIGN = 1.0

# Purpose byte of the per-trajectory stream id (low 56 bits: trajectory index).
STREAM_RECORD_NOISE = 0
STREAM_READOUT_X = 1
STREAM_READOUT_Y = 2
STREAM_READOUT_Z = 3

_INDEX_BITS = 56
_INDEX_MASK = (1 << _INDEX_BITS) - 1

SCHEMES = ("kraus", "euler")

# A Gaussian increment path is a plain (n, 2) float array with Var = dt.
NoisePath = np.ndarray


def stream(master_seed: int, purpose: int, index: int) -> np.random.Generator:
    """Counter-based RNG stream for one (purpose, trajectory) pair."""
    if index < 0 or index > _INDEX_MASK:
        raise ConfigError(f"trajectory index {index} outside [0, 2^56)")
    key = np.array([master_seed, (purpose << _INDEX_BITS) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def noise_path(params: SimParams, trajectory_index: int) -> NoisePath:
    """The (n_steps, 2) Wiener increments (dW_I, dW_Q) of one trajectory."""
    rng = stream(params.master_seed, STREAM_RECORD_NOISE, trajectory_index)
    return rng.standard_normal((params.n_steps, 2)) * math.sqrt(params.dt)


@dataclass(frozen=True)
class HeterodyneRecord:
    """Normalized quadrature increments; Var(dI) = Var(dQ) = dt."""

    dt: float
    increments: np.ndarray  # (n, 2) float64, columns (dI, dQ)
    seed: Optional[int] = None
    index: Optional[int] = None

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[1] != 2 or inc.shape[0] < 1:
            raise ConfigError(f"increments must be (n>=1, 2), got {inc.shape}")
        object.__setattr__(self, "increments", inc)

    def __len__(self) -> int:
        return self.increments.shape[0]

    @property
    def horizon(self) -> float:
        return len(self) * self.dt

    def times(self) -> np.ndarray:
        """Left endpoints of the integration intervals."""
        return np.arange(len(self)) * self.dt


@dataclass
class Trajectory:
    """Time-indexed conditioned states plus integration diagnostics."""

    times: np.ndarray          # (n+1,)
    rhos: np.ndarray           # (n+1, 2, 2) complex
    provenance: str            # "synthesized" | "filtered"
    params: SimParams
    scheme: str = "kraus"
    diagnostics: dict = field(default_factory=dict)

    @property
    def states(self) -> list[QubitState]:
        return [QubitState.from_rho(r, validate=False) for r in self.rhos]

    def state_at(self, i: int) -> QubitState:
        return QubitState.from_rho(self.rhos[i], validate=False)

    @property
    def bloch(self) -> np.ndarray:
        return bloch_batch(self.rhos)

    def __len__(self) -> int:
        return self.rhos.shape[0]


def bloch_batch(rhos: np.ndarray) -> np.ndarray:
    """(..., 2, 2) density matrices -> (..., 3) Bloch coordinates."""
    b = rhos[..., 0, 1]
    return np.stack(
        [2.0 * b.real, -2.0 * b.imag, rhos[..., 0, 0].real - rhos[..., 1, 1].real],
        axis=-1,
    )


def rho_batch_from_bloch(bloch: np.ndarray) -> np.ndarray:
    bloch = np.asarray(bloch, dtype=float)
    out = np.empty(bloch.shape[:-1] + (2, 2), dtype=complex)
    x, y, z = bloch[..., 0], bloch[..., 1], bloch[..., 2]
    out[..., 0, 0] = (1.0 + z) / 2.0
    out[..., 1, 1] = (1.0 - z) / 2.0
    out[..., 0, 1] = (x - 1.0j * y) / 2.0
    out[..., 1, 0] = (x + 1.0j * y) / 2.0
    return out


def min_eig_batch(rhos: np.ndarray) -> np.ndarray:
    """Smaller eigenvalue of each 2x2 Hermitian matrix, closed form."""
    a = rhos[..., 0, 0].real
    d = rhos[..., 1, 1].real
    return (a + d) / 2.0 - np.hypot((a - d) / 2.0, np.abs(rhos[..., 0, 1]))


# ---------------------------------------------------------------------------
# single-step kernels
# ---------------------------------------------------------------------------

def _kraus_step_arrays(rho, dI, dQ, p: SimParams, sign: float = QUADRATURE_SIGN):
    """Positivity-preserving update on a (..., 2, 2) batch.

    The numerator is a sum of completely positive maps, so the output is
    positive semidefinite and exactly unit trace for any record values.
    """
    dt = p.dt
    k = math.sqrt(p.eta * p.gamma1 / 2.0)
    m00 = 1.0 - (p.gamma1 / 2.0 + p.gamma_phi / 4.0) * dt
    m11 = 1.0 - (p.gamma_phi / 4.0) * dt
    deph = 0.5 * p.gamma_phi * dt

    a = rho[..., 0, 0].real
    d = rho[..., 1, 1].real
    b = rho[..., 0, 1]
    c = np.asarray(dI) + 1.0j * sign * np.asarray(dQ)

    n00 = (m00 * m00 + deph) * a
    n01 = m00 * (k * np.conj(c) * a + m11 * b) - deph * b
    n11 = (
        (k * k) * (c.real * c.real + c.imag * c.imag) * a
        + 2.0 * m11 * k * (c * b).real
        + m11 * m11 * d
        + (1.0 - p.eta) * p.gamma1 * dt * a
        + deph * d
    )
    tr = n00 + n11
    out = np.empty(np.broadcast(a, c).shape + (2, 2), dtype=complex)
    out[..., 0, 0] = n00 / tr
    out[..., 0, 1] = n01 / tr
    out[..., 1, 0] = np.conj(n01) / tr
    out[..., 1, 1] = n11 / tr
    return out


def _euler_step_arrays(rho, dI, dQ, p: SimParams):
    """Literal Euler-Maruyama step; returns (rho', trace deviation).

    The innovation dW is the record increment minus the current predicted
    drift.  Trace is conserved analytically; the deviation reported here is
    pure roundoff unless the step diverged.
    """
    dt = p.dt
    k = math.sqrt(p.eta * p.gamma1 / 2.0)
    a = rho[..., 0, 0].real
    d = rho[..., 1, 1].real
    b = rho[..., 0, 1]
    x = 2.0 * b.real
    y = -2.0 * b.imag

    dWI = np.asarray(dI) - k * x * dt
    dWQ = np.asarray(dQ) - k * y * dt

    # D[sm]rho = [[-a, -b/2], [-b*/2, a]];  D[sz]rho = [[0, -2b], [-2b*, 0]]
    # M[sm]rho = [[-x a, a - x b], [., x(1-a-d... ) -> x - x d]]
    # M[i sm]rho = [[-y a, -i a - y b], [., y - y d]]
    na = a + p.gamma1 * dt * (-a) + k * dWI * (-x * a) + k * dWQ * (-y * a)
    nd = d + p.gamma1 * dt * a + k * dWI * (x - x * d) + k * dWQ * (y - y * d)
    nb = (
        b
        + p.gamma1 * dt * (-0.5 * b)
        + p.gamma_phi * dt * (-b)
        + k * dWI * (a - x * b)
        + k * dWQ * (-1.0j * a - y * b)
    )
    tr = na + nd
    dev = np.abs(tr - 1.0)
    out = np.empty(np.broadcast(a, dWI).shape + (2, 2), dtype=complex)
    out[..., 0, 0] = na / tr
    out[..., 0, 1] = nb / tr
    out[..., 1, 0] = np.conj(nb) / tr
    out[..., 1, 1] = nd / tr
    return out, dev


def kraus_step(state: QubitState, dI: float, dQ: float, p: SimParams) -> QubitState:
    """One positivity-preserving filter update for a single state."""
    rho = _kraus_step_arrays(state.rho[np.newaxis], np.array([dI]), np.array([dQ]), p)
    return QubitState.from_rho(rho[0], validate=False)


def euler_step(state: QubitState, dI: float, dQ: float, p: SimParams) -> QubitState:
    """One literal first-order update; may leave the Bloch ball."""
    rho, dev = _euler_step_arrays(state.rho[np.newaxis], np.array([dI]), np.array([dQ]), p)
    if dev[0] > 0.1:
        raise NumericalBlowupError(f"euler step trace deviation {dev[0]:.3g} > 0.1")
    return QubitState.from_rho(rho[0], validate=False)


# ---------------------------------------------------------------------------
# deterministic (unmonitored) limit
# ---------------------------------------------------------------------------

def lindblad_bloch(bloch0, p: SimParams, times) -> np.ndarray:
    """Closed-form unmonitored relaxation of a Bloch vector.

    x, y decay at gamma1/2 + gamma_phi; z relaxes to -1 at gamma1.
    """
    t = np.asarray(times, dtype=float)
    x0, y0, z0 = (float(v) for v in bloch0)
    transverse = np.exp(-(p.gamma1 / 2.0 + p.gamma_phi) * t)
    out = np.empty(t.shape + (3,))
    out[..., 0] = x0 * transverse
    out[..., 1] = y0 * transverse
    out[..., 2] = -1.0 + (z0 + 1.0) * np.exp(-p.gamma1 * t)
    return out


def lindblad_solve(init: InitialLike, p: SimParams, t: float) -> QubitState:
    """Unconditioned state at time t >= 0."""
    if t < 0:
        raise ConfigError(f"t must be >= 0, got {t}")
    b = lindblad_bloch(resolve_initial(init).bloch, p, float(t))
    return QubitState.from_rho(rho_batch_from_bloch(b), validate=False)


# ---------------------------------------------------------------------------
# multi-step drivers
# ---------------------------------------------------------------------------

@dataclass
class EnsembleResult:
    """Vectorized synthesis/filtering output for a batch of trajectories."""

    times: np.ndarray                      # (n+1,)
    final_bloch: np.ndarray                # (N, 3)
    indices: Optional[np.ndarray] = None   # (N,) trajectory indices
    increments: Optional[np.ndarray] = None  # (N, n, 2) records
    bloch: Optional[np.ndarray] = None     # (N, n+1, 3) full paths
    rhos: Optional[np.ndarray] = None      # (N, n+1, 2, 2) exact state paths
    min_eig: Optional[float] = None        # smallest eigenvalue seen (if tracked)
    trace_dev_max: float = 0.0             # euler only
    positivity_violations: int = 0         # euler only, steps with eig < -1e-12


def _run_filter(
    rho0: np.ndarray,
    increments: np.ndarray,
    p: SimParams,
    scheme: str,
    keep_paths: bool,
    track_min_eig: bool = False,
    sign: float = QUADRATURE_SIGN,
    keep_rhos: bool = False,
) -> EnsembleResult:
    """Propagate a (N, 2, 2) batch through a (N, n, 2) increment array."""
    n_traj, n_steps = increments.shape[0], increments.shape[1]
    rho = np.broadcast_to(rho0, (n_traj, 2, 2)).copy()
    paths = np.empty((n_traj, n_steps + 1, 3)) if keep_paths else None
    rho_paths = np.empty((n_traj, n_steps + 1, 2, 2), dtype=complex) if keep_rhos else None
    if keep_paths:
        paths[:, 0] = bloch_batch(rho)
    if keep_rhos:
        rho_paths[:, 0] = rho
    min_eig = np.inf
    trace_dev_max = 0.0
    violations = 0
    for kstep in range(n_steps):
        dI = increments[:, kstep, 0]
        dQ = increments[:, kstep, 1]
        if scheme == "kraus":
            rho = _kraus_step_arrays(rho, dI, dQ, p, sign)
        else:
            rho, dev = _euler_step_arrays(rho, dI, dQ, p)
            dmax = float(dev.max())
            trace_dev_max = max(trace_dev_max, dmax)
            if dmax > 0.1:
                raise NumericalBlowupError(
                    f"euler trace deviation {dmax:.3g} > 0.1 at step {kstep}"
                )
            violations += int(np.count_nonzero(min_eig_batch(rho) < -1e-12))
        if track_min_eig:
            min_eig = min(min_eig, float(min_eig_batch(rho).min()))
        if keep_paths:
            paths[:, kstep + 1] = bloch_batch(rho)
        if keep_rhos:
            rho_paths[:, kstep + 1] = rho
    return EnsembleResult(
        times=np.arange(n_steps + 1) * p.dt,
        final_bloch=bloch_batch(rho),
        bloch=paths,
        rhos=rho_paths,
        min_eig=None if not track_min_eig else min_eig,
        trace_dev_max=trace_dev_max,
        positivity_violations=violations,
    )


def _lindblad_result(
    bloch0, p: SimParams, n_steps: int, keep_paths: bool, keep_rhos: bool = False
) -> EnsembleResult:
    times = np.arange(n_steps + 1) * p.dt
    # rho is primary so Bloch views stay bitwise consistent everywhere
    rho_path = rho_batch_from_bloch(lindblad_bloch(bloch0, p, times))
    path = bloch_batch(rho_path)
    return EnsembleResult(
        times=times,
        final_bloch=path[-1][np.newaxis].copy(),
        bloch=path[np.newaxis].copy() if keep_paths else None,
        rhos=rho_path[np.newaxis].copy() if keep_rhos else None,
    )


def filter_record(
    init: InitialLike,
    rec: HeterodyneRecord,
    p: SimParams,
    scheme: str = "kraus",
) -> Trajectory:
    """Reconstruct the conditioned trajectory from one measurement record.

    With eta = 0 the record is ignored and the closed-form Lindblad solution
    is returned (the measurement terms vanish identically).
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if not math.isclose(rec.dt, p.dt, rel_tol=1e-12, abs_tol=0.0):
        raise ConfigError(f"record dt {rec.dt!r} does not match params dt {p.dt!r}")
    state0 = resolve_initial(init)
    inc = rec.increments[np.newaxis]
    n_steps = inc.shape[1]
    if p.eta == 0.0:
        res = _lindblad_result(state0.bloch, p, n_steps, keep_paths=False, keep_rhos=True)
    else:
        res = _run_filter(state0.rho, inc, p, scheme, keep_paths=False, keep_rhos=True)
    diagnostics = {
        "trace_dev_max": res.trace_dev_max,
        "positivity_violations": res.positivity_violations,
    }
    return Trajectory(
        times=res.times,
        rhos=res.rhos[0],
        provenance="filtered",
        params=p,
        scheme=scheme,
        diagnostics=diagnostics,
    )


def _synthesize_paths(
    bloch0: np.ndarray,
    p: SimParams,
    noise: np.ndarray,
    keep_paths: bool,
    keep_rhos: bool = False,
) -> tuple[np.ndarray, EnsembleResult]:
    """Generate records and conditioned (kraus) trajectories from noise.

    noise: (N, n, 2) Wiener increments.  Returns (records, result); the
    record increments are drift + noise with the drift evaluated at the
    left point, matching the Ito convention of the filter.
    """
    n_traj, n_steps = noise.shape[0], noise.shape[1]
    k = math.sqrt(p.eta * p.gamma1 / 2.0)
    if p.eta == 0.0:
        res = _lindblad_result(bloch0, p, n_steps, keep_paths, keep_rhos)
        res.final_bloch = np.broadcast_to(res.final_bloch[0], (n_traj, 3)).copy()
        if keep_paths:
            res.bloch = np.broadcast_to(res.bloch[0], (n_traj, n_steps + 1, 3)).copy()
        if keep_rhos:
            res.rhos = np.broadcast_to(res.rhos[0], (n_traj, n_steps + 1, 2, 2)).copy()
        return noise.copy(), res

    rho = np.broadcast_to(rho_batch_from_bloch(bloch0), (n_traj, 2, 2)).copy()
    records = np.empty_like(noise)
    paths = np.empty((n_traj, n_steps + 1, 3)) if keep_paths else None
    rho_paths = np.empty((n_traj, n_steps + 1, 2, 2), dtype=complex) if keep_rhos else None
    if keep_paths:
        paths[:, 0] = bloch_batch(rho)
    if keep_rhos:
        rho_paths[:, 0] = rho
    for kstep in range(n_steps):
        b = rho[..., 0, 1]
        dI = k * (2.0 * b.real) * p.dt + noise[:, kstep, 0]
        dQ = k * (-2.0 * b.imag) * p.dt + noise[:, kstep, 1]
        records[:, kstep, 0] = dI
        records[:, kstep, 1] = dQ
        rho = _kraus_step_arrays(rho, dI, dQ, p)
        if keep_paths:
            paths[:, kstep + 1] = bloch_batch(rho)
        if keep_rhos:
            rho_paths[:, kstep + 1] = rho
    res = EnsembleResult(
        times=np.arange(n_steps + 1) * p.dt,
        final_bloch=bloch_batch(rho),
        bloch=paths,
        rhos=rho_paths,
    )
    return records, res


def synthesize(
    init: InitialLike,
    p: SimParams,
    trajectory_index: int,
) -> tuple[HeterodyneRecord, Trajectory]:
    """Forward-simulate one record and its true conditioned trajectory.

    The pair is self-consistent: filtering the returned record with the
    same parameters reproduces the returned trajectory exactly (identical
    arithmetic), and the result depends only on (master_seed,
    trajectory_index).
    """
    state0 = resolve_initial(init)
    noise = noise_path(p, trajectory_index)[np.newaxis]
    records, res = _synthesize_paths(
        np.array(state0.bloch), p, noise, keep_paths=False, keep_rhos=True
    )
    rec = HeterodyneRecord(
        dt=p.dt, increments=records[0], seed=p.master_seed, index=trajectory_index
    )
    traj = Trajectory(
        times=res.times,
        rhos=res.rhos[0],
        provenance="synthesized",
        params=p,
        scheme="kraus",
        diagnostics={},
    )
    return rec, traj


def synthesize_ensemble(
    init: InitialLike,
    p: SimParams,
    n_traj: int,
    *,
    start_index: int = 0,
    indices: Optional[Iterable[int]] = None,
    keep_paths: bool = False,
    keep_records: bool = True,
) -> EnsembleResult:
    """Vectorized forward simulation of many trajectories.

    Per-trajectory noise comes from the same keyed streams as
    ``synthesize``, so lane j of the result is bit-identical to
    ``synthesize(init, p, indices[j])``.
    """
    if indices is None:
        idx = np.arange(start_index, start_index + n_traj, dtype=np.int64)
    else:
        idx = np.fromiter(indices, dtype=np.int64)
    state0 = resolve_initial(init)
    n = p.n_steps
    noise = np.empty((len(idx), n, 2))
    for j, i in enumerate(idx):
        noise[j] = noise_path(p, int(i))
    records, res = _synthesize_paths(np.array(state0.bloch), p, noise, keep_paths)
    res.indices = idx
    if keep_records:
        res.increments = records
    return res


def _synthesize_chunk(job):
    bloch0, p, idx, keep_paths, keep_records = job
    noise = np.empty((len(idx), p.n_steps, 2))
    for j, i in enumerate(idx):
        noise[j] = noise_path(p, int(i))
    records, res = _synthesize_paths(bloch0, p, noise, keep_paths)
    return records if keep_records else None, res


def synthesize_ensemble_parallel(
    init: InitialLike,
    p: SimParams,
    n_traj: int,
    *,
    start_index: int = 0,
    keep_paths: bool = False,
    keep_records: bool = True,
    threads: int = 1,
) -> EnsembleResult:
    """Chunked multi-process ensemble synthesis.

    Results are bit-identical for any worker count because each trajectory
    owns its keyed noise stream; chunking only changes scheduling.
    """
    idx = np.arange(start_index, start_index + n_traj, dtype=np.int64)
    if threads <= 1 or n_traj < 4096:
        return synthesize_ensemble(
            init, p, n_traj, start_index=start_index,
            keep_paths=keep_paths, keep_records=keep_records,
        )
    import multiprocessing

    bloch0 = np.array(resolve_initial(init).bloch)
    n_chunks = min(threads * 4, max(1, n_traj // 1024))
    jobs = [
        (bloch0, p, chunk, keep_paths, keep_records)
        for chunk in np.array_split(idx, n_chunks)
        if len(chunk)
    ]
    with multiprocessing.Pool(processes=threads) as pool:
        parts = pool.map(_synthesize_chunk, jobs)
    res = EnsembleResult(
        times=parts[0][1].times,
        final_bloch=np.concatenate([r.final_bloch for _, r in parts]),
        indices=idx,
    )
    if keep_records:
        res.increments = np.concatenate([rec for rec, _ in parts])
    if keep_paths:
        res.bloch = np.concatenate([r.bloch for _, r in parts])
    return res


def filter_ensemble(
    init: InitialLike,
    increments: np.ndarray,
    p: SimParams,
    scheme: str = "kraus",
    *,
    keep_paths: bool = False,
    track_min_eig: bool = False,
) -> EnsembleResult:
    """Filter a (N, n, 2) array of records in one vectorized pass."""
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 3 or increments.shape[2] != 2:
        raise ConfigError(f"increments must be (N, n, 2), got {increments.shape}")
    state0 = resolve_initial(init)
    if p.eta == 0.0:
        res = _lindblad_result(state0.bloch, p, increments.shape[1], keep_paths)
        n_traj = increments.shape[0]
        res.final_bloch = np.broadcast_to(res.final_bloch[0], (n_traj, 3)).copy()
        if keep_paths:
            res.bloch = np.broadcast_to(
                res.bloch[0], (n_traj,) + res.bloch.shape[1:]
            ).copy()
        return res
    return _run_filter(state0.rho, increments, p, scheme, keep_paths, track_min_eig)
