import numpy as np
import pytest

from sddpc.lti import (ArxModel, ExtendedState, extended_matrices, pce_step,
                       sample_disturbance, simulate, step_realization)
from sddpc.pce import PceVector, build_joint_basis, disturbance_pce, sample_germ_values


def test_extended_matrices_scalar_system(scalar_model):
    em = extended_matrices(scalar_model)
    assert np.allclose(em.A_tilde, [[0.0, 0.0], [1.0, 0.5]])
    assert np.allclose(em.B_tilde, [[1.0], [0.0]])
    assert np.allclose(em.E_tilde, [[0.0], [1.0]])


def test_extended_matrices_zero_system():
    model = ArxModel(Phi=np.zeros((1, 4)), D=np.zeros((1, 1)), T_ini=2,
                     Sigma_W=np.zeros((1, 1)), n_x=2)
    em = extended_matrices(model)
    assert np.allclose(em.A_tilde[-1], 0.0)
    assert np.allclose(em.A_tilde[:-1], em.A_bar)


def test_extended_matrices_aircraft_dimensions(aircraft_model):
    assert aircraft_model.n_z == 8
    em = extended_matrices(aircraft_model)
    assert em.A_tilde.shape == (8, 8)
    assert em.B_tilde.shape == (8, 1)
    assert em.E_tilde.shape == (8, 3)
    # shift blocks carry only 0/1 entries
    assert set(np.unique(em.A_bar)) <= {0.0, 1.0}
    assert set(np.unique(em.B_bar)) <= {0.0, 1.0}


def test_step_realization_zero(scalar_model):
    y, z_next = step_realization(scalar_model, np.zeros(2), np.zeros(1), np.zeros(1))
    assert np.allclose(y, 0.0)
    assert np.allclose(z_next, 0.0)


def test_step_realization_hand_value(scalar_model):
    y, z_next = step_realization(scalar_model, np.array([1.0, 2.0]),
                                 np.zeros(1), np.zeros(1))
    assert np.isclose(y[0], 2.0)
    assert np.allclose(z_next, [0.0, 2.0])


def test_step_realization_matches_state_space(aircraft_model):
    em = extended_matrices(aircraft_model)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        z = rng.standard_normal(8)
        u = rng.standard_normal(1)
        w = rng.standard_normal(3)
        y, z_next = step_realization(aircraft_model, z, u, w)
        z_ss = em.A_tilde @ z + em.B_tilde @ u + em.E_tilde @ w
        assert np.array_equal(z_next[-3:], y)
        assert np.allclose(z_next, z_ss, atol=0.0)
        assert np.allclose(em.E_tilde.T @ z_next, y, atol=0.0)


def test_simulate_zero(scalar_model):
    traj = simulate(scalar_model, np.zeros(2), np.zeros((1, 5)), np.zeros((1, 5)))
    assert np.allclose(traj.y, 0.0)
    assert traj.T == 5 and traj.T_ini == 1


def test_simulate_geometric_response(scalar_model):
    # impulse in the first input, no noise: y_k = 0.5^(k-1) for k >= 1
    T = 8
    u = np.zeros((1, T))
    u[0, 0] = 1.0
    traj = simulate(scalar_model, np.zeros(2), u, np.zeros((1, T)))
    expected = np.array([0.0] + [0.5 ** (k - 1) for k in range(1, T)])
    assert np.allclose(traj.y[0], expected, atol=1e-14)


def test_simulate_golden_fixture(scalar_model):
    rng = np.random.default_rng(2024)
    u = rng.uniform(-1, 1, (1, 6))
    w = sample_disturbance(scalar_model, rng, size=6)
    traj = simulate(scalar_model, np.array([0.1, -0.2]), u, w)
    golden = np.array([0.17227018358809, 0.53963512752574, 0.06052108109844,
                       -0.20066670305661, 0.62655075280765, 1.15861506988891])
    assert np.allclose(traj.y[0], golden, atol=1e-11)


def test_simulate_shift_consistency(aircraft_model):
    rng = np.random.default_rng(3)
    T = 15
    u = rng.uniform(-1, 1, (1, T))
    w = sample_disturbance(aircraft_model, rng, size=T)
    z = rng.standard_normal(8)
    z_run = z.copy()
    for k in range(T):
        y, z_next = step_realization(aircraft_model, z_run, u[:, k], w[:, k])
        # overlap blocks shift exactly
        assert np.array_equal(z_next[0], z_run[1])      # u history
        assert np.array_equal(z_next[2:5], z_run[5:8])  # y history
        z_run = z_next


def test_sample_disturbance_zero_cov():
    model = ArxModel(Phi=np.zeros((1, 2)), D=np.zeros((1, 1)), T_ini=1,
                     Sigma_W=np.zeros((1, 1)), n_x=1)
    assert sample_disturbance(model, np.random.default_rng(0))[0] == 0.0


def test_sample_disturbance_statistics(aircraft_model):
    rng = np.random.default_rng(11)
    n = 100_000
    draws = sample_disturbance(aircraft_model, rng, size=n)
    Sigma_W = aircraft_model.Sigma_W
    for c in range(3):
        se_mean = np.sqrt(Sigma_W[c, c] / n)
        assert abs(draws[c].mean()) <= 3 * se_mean
        se_var = Sigma_W[c, c] * np.sqrt(2.0 / n)
        assert abs(draws[c].var() - Sigma_W[c, c]) <= 3 * se_var


def test_sample_disturbance_uniform_family(aircraft_model):
    rng = np.random.default_rng(12)
    draws = sample_disturbance(aircraft_model, rng, size=50_000, family="legendre")
    assert np.allclose(np.cov(draws), aircraft_model.Sigma_W, atol=0.02)
    # bounded support distinguishes the family
    assert np.abs(draws[1]).max() <= np.sqrt(3.0) + 1e-12


def test_pce_step_deterministic_reduction(scalar_model):
    basis = build_joint_basis(3, 2, 2)
    z = np.array([0.4, -1.2])
    u = np.array([0.3])
    zc = np.zeros((2, basis.L)); zc[:, 0] = z
    uc = np.zeros((1, basis.L)); uc[:, 0] = u
    wc = np.zeros((1, basis.L))
    y_c, z_next_c = pce_step(scalar_model, PceVector(2, zc), PceVector(1, uc),
                             PceVector(1, wc))
    y, z_next = step_realization(scalar_model, z, u, np.zeros(1))
    assert np.allclose(y_c.coeffs[:, 0], y)
    assert np.allclose(z_next_c.coeffs[:, 0], z_next)
    assert np.allclose(y_c.coeffs[:, 1:], 0.0)


def test_pce_step_disturbance_passthrough(scalar_model):
    basis = build_joint_basis(3, 2, 2)
    zc = PceVector(2, np.zeros((2, basis.L)))
    uc = PceVector(1, np.zeros((1, basis.L)))
    w = disturbance_pce(np.array([[1.0]]), basis, 0)
    y_c, _ = pce_step(scalar_model, zc, uc, w)
    j = list(basis.dist_block(0))[0]
    assert np.isclose(y_c.coeffs[0, j], 1.0)


def test_pce_step_commutes_with_realization(scalar_model):
    basis = build_joint_basis(3, 2, 4)
    rng = np.random.default_rng(9)
    zc = PceVector(2, rng.standard_normal((2, basis.L)))
    uc = PceVector(1, rng.standard_normal((1, basis.L)))
    wc = disturbance_pce(scalar_model.Sigma_W, basis, 1)
    y_c, z_next_c = pce_step(scalar_model, zc, uc, wc)
    for _ in range(50):
        draw = sample_germ_values(basis, rng)
        y_direct, z_direct = step_realization(
            scalar_model, zc.coeffs @ draw, uc.coeffs @ draw, wc.coeffs @ draw)
        assert np.allclose(y_c.coeffs @ draw, y_direct, atol=1e-12)
        assert np.allclose(z_next_c.coeffs @ draw, z_direct, atol=1e-12)


def test_extended_state_from_history():
    u_hist = np.array([[1.0, 2.0]])
    y_hist = np.array([[3.0, 4.0], [5.0, 6.0]])
    st = ExtendedState.from_history(u_hist, y_hist)
    assert np.allclose(st.z, [1.0, 2.0, 3.0, 5.0, 4.0, 6.0])


def test_model_validation():
    with pytest.raises(ValueError):
        ArxModel(Phi=np.zeros((1, 3)), D=np.zeros((1, 1)), T_ini=1,
                 Sigma_W=np.zeros((1, 1)), n_x=1)
    with pytest.raises(ValueError):
        ArxModel(Phi=np.zeros((1, 2)), D=np.zeros((1, 1)), T_ini=1,
                 Sigma_W=np.array([[-1.0]]), n_x=1)


def test_step_realization_dimension_mismatch(scalar_model):
    with pytest.raises(ValueError):
        step_realization(scalar_model, np.zeros(3), np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        step_realization(scalar_model, np.zeros(2), np.zeros(2), np.zeros(1))


def test_simulate_length_mismatch(scalar_model):
    with pytest.raises(ValueError):
        simulate(scalar_model, np.zeros(2), np.zeros((1, 5)), np.zeros((1, 4)))
