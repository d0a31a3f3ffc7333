import numpy as np
import pytest

from sddpc.data import build_design_matrices, collect_data, uniform_input_sampler
from sddpc.lti import extended_matrices
from sddpc.terminal import (Box, CalibrationError, SynthesisError,
                            calibrate_epsilon_z, compute_gamma, load_ingredients,
                            riccati_oracle, save_ingredients, solve_lqr_sdp,
                            spectral_radius, stein_solve, surrogate_M, synthesize)


def test_stein_zero_matrix():
    Q = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert np.allclose(stein_solve(np.zeros((2, 2)), Q), Q)


def test_stein_scalar_closed_form():
    X = stein_solve(np.array([[0.5]]), np.array([[1.0]]))
    assert np.isclose(X[0, 0], 4.0 / 3.0)


def test_stein_requires_schur():
    with pytest.raises(ValueError):
        stein_solve(np.array([[1.0]]), np.array([[1.0]]))


def test_stein_residual_on_random_schur():
    rng = np.random.default_rng(0)
    for _ in range(10):
        A = rng.standard_normal((5, 5))
        A *= 0.9 / max(1e-9, spectral_radius(A))
        Q = rng.standard_normal((5, 5))
        Q = Q @ Q.T
        X = stein_solve(A, Q)
        assert np.linalg.norm(A.T @ X @ A - X + Q) <= 1e-8 * max(1.0, np.abs(X).max())


def test_compute_gamma_zero_noise():
    Gamma = np.eye(3) * 2.0
    E = np.vstack([np.zeros((1, 2)), np.eye(2)])
    assert compute_gamma(Gamma, np.zeros((2, 2)), E) == 0.0


def test_compute_gamma_identity_weight():
    E = np.vstack([np.zeros((1, 2)), np.eye(2)])
    Sigma_W = np.diag([0.3, 0.7])
    assert np.isclose(compute_gamma(np.eye(3), Sigma_W, E), 1.0)


def test_riccati_oracle_scalar_closed_form(scalar_model):
    # the lagged single-output plant reduces to x+ = a x + v (a = 0.5) with
    # v = u applied one step ahead; the closed form of that scalar recursion
    # pins the extended-state gain to f * Phi
    em = extended_matrices(scalar_model)
    q, R = 1.0, 0.2
    a = 0.5
    c = R - q - a * a * R
    P = 0.5 * (-c + np.sqrt(c * c + 4 * q * R))
    f = -a * P / (R + P)
    K = riccati_oracle(em, em.E_tilde @ np.array([[q]]) @ em.E_tilde.T,
                       np.array([[R]]))
    assert np.allclose(K, f * scalar_model.Phi, atol=1e-10)


def test_riccati_oracle_stable_uncontrolled():
    from sddpc.lti import ArxModel
    model = ArxModel(Phi=np.array([[0.0, 0.3]]), D=np.zeros((1, 1)), T_ini=1,
                     Sigma_W=np.eye(1), n_x=1)
    em = extended_matrices(model)
    em2 = type(em)(em.A_bar, em.B_bar, em.A_tilde, np.zeros((2, 1)), em.E_tilde)
    K = riccati_oracle(em2, em.E_tilde @ em.E_tilde.T, np.array([[1.0]]))
    assert np.allclose(K, 0.0, atol=1e-12)


def _scalar_design(scalar_model, seed=7, T=30):
    rng = np.random.default_rng(seed)
    sampler = uniform_input_sampler([-1.0], [1.0])
    traj = collect_data(scalar_model, T, sampler, rng)
    return build_design_matrices(traj)


def test_surrogate_matches_model_closed_loop(scalar_model):
    dm = _scalar_design(scalar_model)
    em = extended_matrices(scalar_model)
    M = surrogate_M(dm, em)
    rng = np.random.default_rng(3)
    for _ in range(5):
        K = rng.standard_normal((1, 2))
        target = np.vstack([np.eye(2), K])
        H, *_ = np.linalg.lstsq(np.vstack([dm.Z_dd, dm.U_dd]), target, rcond=None)
        A_K = em.A_tilde + em.B_tilde @ K
        assert np.linalg.norm(M @ H - A_K) <= 1e-10 * max(1.0, np.abs(A_K).max())


def test_surrogate_rejects_rank_deficient(scalar_model):
    from sddpc.lti import Trajectory
    traj = Trajectory(np.zeros((1, 10)), np.zeros((1, 10)), np.zeros((1, 10)),
                      np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(SynthesisError):
        surrogate_M(build_design_matrices(traj), extended_matrices(scalar_model))


def test_surrogate_aircraft_shape(aircraft_model, aircraft_em):
    rng = np.random.default_rng(1)
    sampler = uniform_input_sampler([-1.0], [1.0])
    dm = build_design_matrices(collect_data(aircraft_model, 22, sampler, rng))
    assert surrogate_M(dm, aircraft_em).shape == (8, 22)


def test_lqr_sdp_scalar_closed_form(scalar_model):
    dm = _scalar_design(scalar_model)
    em = extended_matrices(scalar_model)
    M = surrogate_M(dm, em)
    q, R = 1.0, 0.2
    Q_tilde = em.E_tilde @ np.array([[q]]) @ em.E_tilde.T
    K, H = solve_lqr_sdp(M, dm.Z_dd, dm.U_dd, Q_tilde, np.array([[R]]),
                         em.E_tilde)
    a = 0.5
    c = R - q - a * a * R
    P = 0.5 * (-c + np.sqrt(c * c + 4 * q * R))
    f = -a * P / (R + P)
    assert np.linalg.norm(K - f * scalar_model.Phi, 2) <= 1e-6
    assert np.linalg.norm(np.vstack([dm.Z_dd, dm.U_dd]) @ H
                          - np.vstack([np.eye(2), K])) <= 1e-7
    assert spectral_radius(M @ H) < 1.0


def test_lqr_sdp_expensive_input_shrinks_gain(scalar_model):
    dm = _scalar_design(scalar_model)
    em = extended_matrices(scalar_model)
    M = surrogate_M(dm, em)
    Q_tilde = em.E_tilde @ em.E_tilde.T
    K1, _ = solve_lqr_sdp(M, dm.Z_dd, dm.U_dd, Q_tilde, np.array([[1.0]]),
                          em.E_tilde)
    K2, _ = solve_lqr_sdp(M, dm.Z_dd, dm.U_dd, Q_tilde, np.array([[1e6]]),
                          em.E_tilde)
    assert np.linalg.norm(K2) < np.linalg.norm(K1)


def test_synthesize_residuals(scalar_setup):
    cfg, spec, ti, report = scalar_setup
    assert report["lyapunov_residual_P"] <= 1e-8
    assert report["lyapunov_residual_Gamma"] <= 1e-8
    assert report["rho_MH"] < 1.0
    assert ti.gamma > 0.0
    assert report["Gamma_min_eig"] > 0.0
    assert report["P_min_eig"] >= -1e-8


def test_lyapunov_equations_hold(scalar_setup, scalar_model):
    cfg, spec, ti, _ = scalar_setup
    em = extended_matrices(scalar_model)
    Q_tilde = em.E_tilde @ cfg.Q @ em.E_tilde.T
    A_K = ti.A_K
    assert np.linalg.norm(A_K.T @ ti.P @ A_K - ti.P + ti.K.T @ cfg.R @ ti.K
                          + A_K.T @ Q_tilde @ A_K) <= 1e-8
    assert np.linalg.norm(A_K.T @ ti.Gamma @ A_K - ti.Gamma + np.eye(2)) <= 1e-8
    lam = np.linalg.eigvalsh(ti.Gamma).max()
    expected = lam * np.trace(cfg.Sigma_W @ em.E_tilde.T @ ti.Gamma @ em.E_tilde)
    assert np.isclose(ti.gamma, expected, rtol=1e-12)


def test_ellipsoid_invariance_under_closed_loop(scalar_setup):
    _, _, ti, _ = scalar_setup
    rng = np.random.default_rng(8)
    evP, VP = np.linalg.eigh(ti.P)
    evP = np.clip(evP, 1e-12, None)
    A_K = ti.A_K
    # sample the boundary and interior of {z' P z <= eps_z}
    raw = rng.standard_normal((10_000, 2))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    radii = rng.uniform(0, 1, (10_000, 1)) ** 0.5
    pts = (VP @ (raw * radii / np.sqrt(evP)).T).T * np.sqrt(ti.eps_z)
    before = np.einsum("ij,jk,ik->i", pts, ti.P, pts)
    after_pts = pts @ A_K.T
    after = np.einsum("ij,jk,ik->i", after_pts, ti.P, after_pts)
    assert before.max() <= ti.eps_z * (1 + 1e-9)
    assert np.all(after <= before + 1e-10)


def test_covariance_budget_contracts(scalar_setup, scalar_model):
    """One closed-loop step plus fresh noise keeps the weighted covariance
    budget satisfied, replayed on random coefficient sets."""
    cfg, spec, ti, _ = scalar_setup
    em = extended_matrices(scalar_model)
    rng = np.random.default_rng(21)
    F = np.linalg.cholesky(cfg.Sigma_W)
    for _ in range(50):
        Zc = rng.standard_normal((2, 6))
        w = np.sqrt(ti.gamma) / max(np.sqrt(np.sum((Zc.T @ ti.Gamma.T) * Zc.T)), 1e-12)
        Zc *= w * rng.uniform(0.0, 1.0)
        budget = np.trace(Zc.T @ ti.Gamma @ Zc)
        assert budget <= ti.gamma + 1e-9
        Z_next = ti.A_K @ Zc
        fresh = em.E_tilde @ F
        new_budget = np.trace(Z_next.T @ ti.Gamma @ Z_next) + np.trace(
            fresh.T @ ti.Gamma @ fresh)
        assert new_budget <= ti.gamma + 1e-7 * max(1.0, ti.gamma)


def test_calibration_unbounded_boxes(scalar_setup, scalar_model):
    _, _, ti, _ = scalar_setup
    em = extended_matrices(scalar_model)
    eps = calibrate_epsilon_z(ti, em, scalar_model.Sigma_W, Box.unbounded(1),
                              Box.unbounded(1), 3.0, 3.0)
    assert eps == 1e3


def test_calibration_certified_by_sampling(scalar_setup, scalar_model):
    """Re-verify the certified terminal conditions by dense sampling."""
    cfg, _, ti, report = scalar_setup
    em = extended_matrices(scalar_model)
    assert not report["eps_z_overridden"]
    eps_z = ti.eps_z
    assert eps_z > 0
    rng = np.random.default_rng(5)
    evP, VP = np.linalg.eigh(ti.P)
    evP = np.clip(evP, 1e-15, None)
    raw = rng.standard_normal((10_000, 2))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    pts = (VP @ (raw / np.sqrt(evP)).T).T * np.sqrt(eps_z)
    from sddpc.pipeline import sigmas
    sig_u, sig_y = sigmas(cfg)
    Gamma_inv = np.linalg.inv(ti.Gamma)
    S = (em.E_tilde.T @ ti.A_K)[0]
    std = sig_y * np.sqrt(ti.gamma * float(S @ Gamma_inv @ S)
                          + scalar_model.Sigma_W[0, 0])
    vals = pts @ S + std
    assert np.all(vals <= cfg.y_ub[0] + 1e-8)
    assert np.all(-pts @ S + std <= -cfg.y_lb[0] + 1e-8)


def test_calibration_tiny_boxes_fail(scalar_setup, scalar_model):
    _, _, ti, _ = scalar_setup
    em = extended_matrices(scalar_model)
    tiny = Box(np.array([-1e-6]), np.array([1e-6]))
    with pytest.raises(CalibrationError):
        calibrate_epsilon_z(ti, em, scalar_model.Sigma_W, tiny, tiny, 3.0, 3.0)


def test_calibration_aircraft_budget_infeasible(aircraft_setup, aircraft_em,
                                                aircraft_cfg):
    """The worst-case covariance budget exceeds the unit output box for the
    benchmark plant, so the full certification must report failure and the
    shipped level must come from the configured override."""
    cfg, spec, ti, report = aircraft_setup
    assert report["eps_z_overridden"]
    assert report["calibration_error"] is not None
    from sddpc.pipeline import sigmas
    sig_u, sig_y = sigmas(aircraft_cfg)
    with pytest.raises(CalibrationError):
        calibrate_epsilon_z(ti, aircraft_em, aircraft_cfg.Sigma_W,
                            aircraft_cfg.u_box(), aircraft_cfg.y_box(),
                            sig_u, sig_y)


def test_aircraft_gamma_regression(aircraft_setup):
    """Covariance budget of the shipped benchmark pipeline, frozen at the
    first verified build (seeded, so bit-stable up to solver determinism)."""
    _, _, ti, _ = aircraft_setup
    assert np.isclose(ti.gamma, 46691100.27, rtol=1e-6)
    lam = float(np.linalg.eigvalsh(ti.Gamma).max())
    assert np.isclose(lam, 30169.338, rtol=1e-6)


def test_ingredients_roundtrip(tmp_path, scalar_setup):
    _, _, ti, _ = scalar_setup
    path = tmp_path / "ti.json"
    save_ingredients(ti, path)
    back = load_ingredients(path)
    assert np.array_equal(back.K, ti.K)
    assert np.array_equal(back.P, ti.P)
    assert np.array_equal(back.Gamma, ti.Gamma)
    assert np.array_equal(back.M, ti.M)
    assert back.gamma == ti.gamma
    assert back.eps_z == ti.eps_z
