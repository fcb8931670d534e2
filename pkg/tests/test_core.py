import math

import numpy as np
import pytest

from qsd.core import (
    ConfigError,
    IDENTITY,
    InitialState,
    InvalidStateError,
    QubitState,
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    SimParams,
    bloch_from_density,
    default_params,
    density_from_bloch,
    excited_prob,
    linear_entropy,
    resolve_initial,
)


def test_pauli_identities_exact():
    assert np.array_equal(SIGMA_MINUS @ SIGMA_PLUS + SIGMA_PLUS @ SIGMA_MINUS, IDENTITY)
    assert np.array_equal(SIGMA_MINUS @ SIGMA_MINUS, np.zeros((2, 2)))
    assert np.array_equal(SIGMA_X @ SIGMA_Y - SIGMA_Y @ SIGMA_X, 2j * SIGMA_Z)
    # basis convention: sigma_minus lowers |e> (index 0) to |g> (index 1)
    assert SIGMA_MINUS[1, 0] == 1.0 and SIGMA_Z[0, 0] == 1.0


def test_density_from_bloch_examples():
    assert np.allclose(density_from_bloch((0, 0, 0)).rho, IDENTITY / 2)

    plus_x = density_from_bloch((1, 0, 0))
    eig = np.linalg.eigvalsh(plus_x.rho)
    assert np.allclose(sorted(eig), [0.0, 1.0], atol=1e-15)
    assert np.allclose(plus_x.rho, np.full((2, 2), 0.5))

    ground = density_from_bloch((0, 0, -1))
    assert np.allclose(ground.rho, np.diag([0.0, 1.0]))


def test_bloch_round_trip_property():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        b = rng.normal(size=3)
        b *= rng.random() ** (1 / 3) / np.linalg.norm(b)
        back = bloch_from_density(density_from_bloch(b))
        assert np.abs(back - b).max() < 1e-12


def test_bloch_norm_rejected_beyond_tolerance():
    with pytest.raises(InvalidStateError):
        density_from_bloch((1.0 + 1e-6, 0, 0))
    # the 1e-9 sliver is treated as roundoff and lands on the sphere
    s = density_from_bloch((1.0 + 1e-10, 0, 0))
    s.validate()


def test_linear_entropy():
    assert linear_entropy(density_from_bloch((0, 1, 0))) == pytest.approx(0.0, abs=1e-15)
    assert linear_entropy(density_from_bloch((0, 0, 0))) == pytest.approx(0.5)
    # (1 - 0.36)/2 via the Bloch formula
    assert linear_entropy(density_from_bloch((0.6, 0, 0))) == pytest.approx(0.32)

    rng = np.random.default_rng(8)
    for _ in range(300):
        b = rng.normal(size=3)
        b /= np.linalg.norm(b)
        r = rng.random()
        s_l = linear_entropy(density_from_bloch(r * b))
        assert s_l >= 0.0
        assert (s_l < 1e-10) == (abs(r - 1.0) < 1e-10 or (1 - r * r) / 2 < 1e-10)


def test_excited_prob():
    assert excited_prob(resolve_initial(InitialState.EXCITED)) == 1.0
    assert excited_prob(resolve_initial(InitialState.GROUND)) == 0.0
    assert excited_prob(resolve_initial(InitialState.PLUS_X)) == pytest.approx(0.5)


def test_state_validation_catches_bad_matrices():
    with pytest.raises(InvalidStateError):
        QubitState.from_rho(np.array([[0.6, 0], [0, 0.6]]))
    with pytest.raises(InvalidStateError):
        QubitState.from_rho(np.array([[0.5, 0.2], [0.3, 0.5]]))
    with pytest.raises(InvalidStateError):
        QubitState.from_rho(np.array([[1.2, 0], [0, -0.2]]))


def test_resolve_initial():
    assert resolve_initial("plus_x").bloch == pytest.approx((1, 0, 0))
    assert resolve_initial("excited").bloch == pytest.approx((0, 0, 1))
    assert resolve_initial("ground").bloch == pytest.approx((0, 0, -1))
    assert resolve_initial((0.1, 0.2, 0.3)).bloch == pytest.approx((0.1, 0.2, 0.3))
    with pytest.raises(ConfigError):
        resolve_initial("sideways")


def test_sim_params_validation():
    default_params()  # defaults are self-consistent
    with pytest.raises(ConfigError):
        SimParams(gamma1=0.0, gamma_phi=0, eta=0.5, dt=0.1, horizon=1.0)
    with pytest.raises(ConfigError):
        SimParams(gamma1=1.0, gamma_phi=-0.1, eta=0.5, dt=0.1, horizon=1.0)
    with pytest.raises(ConfigError):
        SimParams(gamma1=1.0, gamma_phi=0, eta=1.5, dt=0.1, horizon=1.0)
    with pytest.raises(ConfigError):
        SimParams(gamma1=1.0, gamma_phi=0, eta=0.5, dt=2.0, horizon=1.0)
    with pytest.raises(ConfigError):
        SimParams(gamma1=1.0, gamma_phi=0, eta=0.5, dt=0.3, horizon=1.0)


def test_sim_params_warns_on_coarse_step():
    with pytest.warns(UserWarning, match="gamma1"):
        SimParams(gamma1=1.0, gamma_phi=0, eta=0.5, dt=0.1, horizon=1.0)


def test_times_grid():
    p = SimParams(gamma1=0.2, gamma_phi=0, eta=0.5, dt=0.25, horizon=1.0)
    assert p.n_steps == 4
    assert np.allclose(p.times(), [0, 0.25, 0.5, 0.75, 1.0])


def test_default_params_values():
    p = default_params()
    assert p.gamma1 == pytest.approx(1 / 4.15)
    assert p.gamma_phi == pytest.approx(1 / 35)
    assert p.eta == 0.24
    assert p.dt == 0.2
