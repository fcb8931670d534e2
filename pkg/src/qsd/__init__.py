"""Simulator, filter and estimator for diffusive quantum trajectories of a
single decaying qubit under heterodyne fluorescence monitoring."""

__version__ = "0.1.0"

from .core import (
    AtSouthPole,
    ConfigError,
    InitialState,
    InvalidStateError,
    NumericalBlowupError,
    QubitState,
    SimParams,
    bloch_from_density,
    default_params,
    density_from_bloch,
    excited_prob,
    linear_entropy,
    resolve_initial,
)
from .engine import (
    HeterodyneRecord,
    Trajectory,
    euler_step,
    filter_ensemble,
    filter_record,
    kraus_step,
    lindblad_solve,
    noise_path,
    synthesize,
    synthesize_ensemble,
)
from .analytics import (
    SpheroidCoord,
    alpha_flow,
    alpha_of,
    spheroid_residual,
    state_from_spheroid,
    xi_from_record,
    xi_of,
)
from .estimation import LikelihoodResult, estimate_eta, record_log_likelihood
from .validation import (
    ConditionalMeanReport,
    OccupancyGrid,
    TomographySample,
    conditional_mean_report,
    correct_readout_means,
    excitation_increase_stats,
    occupancy,
    simulate_readout,
)

__all__ = [name for name in dir() if not name.startswith("_")]
