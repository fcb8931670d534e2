"""Qubit state representation, Pauli algebra and the scalar functionals
(linear entropy, excitation probability) used throughout the toolkit.

Basis convention: index 0 is the excited state |e> (Bloch z = +1), index 1
is the ground state |g> (z = -1).  The lowering operator is sigma_minus =
|g><e|, so the excitation probability is p_e = (1 + <sigma_z>)/2.

Units: time in microseconds, rates in 1/us.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np


class InvalidStateError(ValueError):
    """A density matrix / Bloch vector violates the physical-state bounds."""


class ConfigError(ValueError):
    """Inconsistent parameters, file contents or CLI configuration."""


class NumericalBlowupError(RuntimeError):
    """An integration scheme left the physically meaningful regime."""


class AtSouthPole(ValueError):
    """State is numerically indistinguishable from |g>; spheroid
    coordinates (alpha, xi) are undefined there."""


# Pauli matrices in the (|e>, |g>) ordering.
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
SIGMA_MINUS = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)  # |g><e|
SIGMA_PLUS = SIGMA_MINUS.conj().T
IDENTITY = np.eye(2, dtype=complex)
for _m in (SIGMA_X, SIGMA_Y, SIGMA_Z, SIGMA_MINUS, SIGMA_PLUS, IDENTITY):
    _m.setflags(write=False)

# Tolerances for state validation.
TRACE_ATOL = 1e-12
HERM_ATOL = 1e-12
EIG_ATOL = 1e-12
BLOCH_NORM_ATOL = 1e-9


def bloch_components(rho: np.ndarray) -> tuple[float, float, float]:
    """(x, y, z) = (<sigma_x>, <sigma_y>, <sigma_z>) of a 2x2 density matrix."""
    b = rho[..., 0, 1]
    return (
        float(2.0 * b.real),
        float(-2.0 * b.imag),
        float(rho[..., 0, 0].real - rho[..., 1, 1].real),
    )


def rho_from_bloch(b) -> np.ndarray:
    """Dense 2x2 matrix (1 + x sx + y sy + z sz)/2 without validation."""
    x, y, z = (float(v) for v in b)
    return np.array(
        [
            [(1.0 + z) / 2.0, (x - 1.0j * y) / 2.0],
            [(x + 1.0j * y) / 2.0, (1.0 - z) / 2.0],
        ],
        dtype=complex,
    )


@dataclass(frozen=True, eq=False)
class QubitState:
    """Two-level density matrix; the Bloch vector is a derived view."""

    rho: np.ndarray

    @classmethod
    def from_rho(cls, rho, validate: bool = True) -> "QubitState":
        arr = np.array(rho, dtype=complex, copy=True)
        if arr.shape != (2, 2):
            raise InvalidStateError(f"density matrix must be 2x2, got {arr.shape}")
        arr.setflags(write=False)
        state = cls(arr)
        if validate:
            state.validate()
        return state

    @classmethod
    def from_bloch(cls, b) -> "QubitState":
        return density_from_bloch(b)

    @property
    def bloch(self) -> tuple[float, float, float]:
        return bloch_components(self.rho)

    def purity(self) -> float:
        a = self.rho[0, 0].real
        d = self.rho[1, 1].real
        return float(a * a + d * d + 2.0 * abs(self.rho[0, 1]) ** 2)

    def min_eigenvalue(self) -> float:
        a = self.rho[0, 0].real
        d = self.rho[1, 1].real
        return float((a + d) / 2.0 - math.hypot((a - d) / 2.0, abs(self.rho[0, 1])))

    def validate(self) -> "QubitState":
        r = self.rho
        if abs(r[0, 0].real + r[1, 1].real - 1.0) > TRACE_ATOL:
            raise InvalidStateError(f"trace {r[0,0].real + r[1,1].real!r} != 1")
        if (
            abs(r[0, 1] - r[1, 0].conjugate()) > HERM_ATOL
            or abs(r[0, 0].imag) > HERM_ATOL
            or abs(r[1, 1].imag) > HERM_ATOL
        ):
            raise InvalidStateError("density matrix is not Hermitian")
        if self.min_eigenvalue() < -EIG_ATOL:
            raise InvalidStateError(f"negative eigenvalue {self.min_eigenvalue()!r}")
        x, y, z = self.bloch
        if x * x + y * y + z * z > 1.0 + BLOCH_NORM_ATOL:
            raise InvalidStateError("Bloch vector outside the unit ball")
        return self


def density_from_bloch(b) -> QubitState:
    """Map a Bloch triple onto a density matrix.

    Accepts |b| up to 1 + 1e-9; the sliver above 1 is treated as roundoff
    and rescaled onto the sphere so every returned state is positive
    semidefinite.
    """
    x, y, z = (float(v) for v in b)
    norm2 = x * x + y * y + z * z
    if norm2 > 1.0 + BLOCH_NORM_ATOL:
        raise InvalidStateError(f"Bloch vector norm {math.sqrt(norm2)!r} exceeds 1")
    if norm2 > 1.0:
        scale = 1.0 / math.sqrt(norm2)
        x, y, z = x * scale, y * scale, z * scale
    return QubitState.from_rho(rho_from_bloch((x, y, z)), validate=False)


def bloch_from_density(state: Union[QubitState, np.ndarray]) -> np.ndarray:
    rho = state.rho if isinstance(state, QubitState) else np.asarray(state)
    return np.array(bloch_components(rho))


def linear_entropy(state: Union[QubitState, np.ndarray]) -> float:
    """S_L = 1 - Tr(rho^2), in [0, 1/2]; equals (1 - |b|^2)/2."""
    rho = state.rho if isinstance(state, QubitState) else np.asarray(state)
    a = rho[0, 0].real
    d = rho[1, 1].real
    s = 1.0 - (a * a + d * d + 2.0 * abs(rho[0, 1]) ** 2)
    return max(0.0, float(s))


def excited_prob(state: Union[QubitState, np.ndarray]) -> float:
    """p_e = (1 + <sigma_z>)/2, clamped into [0, 1] against roundoff."""
    rho = state.rho if isinstance(state, QubitState) else np.asarray(state)
    return min(1.0, max(0.0, float(rho[0, 0].real)))


class InitialState(enum.Enum):
    PLUS_X = "plus_x"
    EXCITED = "excited"
    GROUND = "ground"


_NAMED_BLOCH = {
    InitialState.PLUS_X: (1.0, 0.0, 0.0),
    InitialState.EXCITED: (0.0, 0.0, 1.0),
    InitialState.GROUND: (0.0, 0.0, -1.0),
}

InitialLike = Union[InitialState, QubitState, str, Sequence[float]]


def resolve_initial(init: InitialLike) -> QubitState:
    """Accept an InitialState, a state, a name string or a Bloch triple."""
    if isinstance(init, QubitState):
        return init
    if isinstance(init, InitialState):
        return density_from_bloch(_NAMED_BLOCH[init])
    if isinstance(init, str):
        try:
            return density_from_bloch(_NAMED_BLOCH[InitialState(init.lower())])
        except ValueError:
            raise ConfigError(
                f"unknown initial state {init!r}; expected one of "
                f"{[e.value for e in InitialState]} or a Bloch triple"
            ) from None
    seq = list(init)
    if len(seq) != 3:
        raise ConfigError(f"Bloch triple must have 3 components, got {len(seq)}")
    return density_from_bloch(seq)


# Default operating point: T1 = 4.15 us, Tphi = 35 us, eta = 0.24, dt = 200 ns.
DEFAULT_GAMMA1 = 1.0 / 4.15
DEFAULT_GAMMA_PHI = 1.0 / 35.0
DEFAULT_ETA = 0.24
DEFAULT_DT = 0.2

GAMMA1_DT_WARN = 0.05


@dataclass(frozen=True)
class SimParams:
    """Physical and detection parameters shared by every integrator.

    gamma1, gamma_phi in 1/us; dt and horizon in us.  The horizon must be
    an integer number of time steps.
    """

    gamma1: float
    gamma_phi: float
    eta: float
    dt: float
    horizon: float
    master_seed: int = 0

    def __post_init__(self):
        if not self.gamma1 > 0:
            raise ConfigError(f"gamma1 must be > 0, got {self.gamma1}")
        if self.gamma_phi < 0:
            raise ConfigError(f"gamma_phi must be >= 0, got {self.gamma_phi}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0.0 < self.dt <= self.horizon:
            raise ConfigError(f"need 0 < dt <= horizon, got dt={self.dt} horizon={self.horizon}")
        n = round(self.horizon / self.dt)
        if n < 1 or abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ConfigError(
                f"horizon {self.horizon} is not an integer multiple of dt {self.dt}"
            )
        if self.master_seed < 0 or self.master_seed > 0xFFFFFFFFFFFFFFFF:
            raise ConfigError("master_seed must fit in 64 bits")
        if self.gamma1 * self.dt > GAMMA1_DT_WARN:
            warnings.warn(
                f"gamma1*dt = {self.gamma1 * self.dt:.3g} exceeds {GAMMA1_DT_WARN}; "
                "discretization error grows with the step",
                stacklevel=2,
            )

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.dt)

    def times(self) -> np.ndarray:
        """Sample times 0, dt, ..., horizon (n_steps + 1 points)."""
        return np.arange(self.n_steps + 1) * self.dt

    def replace(self, **kw) -> "SimParams":
        return replace(self, **kw)


def default_params(horizon: float = 4.0, master_seed: int = 0, **overrides) -> SimParams:
    kw = dict(
        gamma1=DEFAULT_GAMMA1,
        gamma_phi=DEFAULT_GAMMA_PHI,
        eta=DEFAULT_ETA,
        dt=DEFAULT_DT,
        horizon=horizon,
        master_seed=master_seed,
    )
    kw.update(overrides)
    return SimParams(**kw)
