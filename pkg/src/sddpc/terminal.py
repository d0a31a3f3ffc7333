"""Data-driven synthesis of terminal ingredients for the horizon OCP.

From recorded (z, u, y, w) data the pipeline produces a stabilizing
output-feedback gain K via a semidefinite program, a data surrogate M H of
the closed-loop matrix, the terminal cost weight P and covariance weight
Gamma from discrete Lyapunov equations, the covariance budget gamma, and a
mean-set level eps_z certifying the terminal conditions.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .conic import ZERO, ConeBlock, ConicProgram, psd_block_from_fn, solve
from .data import DesignMatrices, rank_assumption_check
from .lti import ExtendedMatrices


class SynthesisError(RuntimeError):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Box:
    """Per-component interval bounds; +-inf marks an unconstrained side."""

    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb = np.atleast_1d(np.asarray(self.lb, dtype=float))
        ub = np.atleast_1d(np.asarray(self.ub, dtype=float))
        if lb.shape != ub.shape:
            raise ValueError("bound arrays differ in shape")
        if np.any(lb > ub):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @staticmethod
    def unbounded(n: int) -> "Box":
        return Box(np.full(n, -np.inf), np.full(n, np.inf))

    @property
    def n(self) -> int:
        return self.lb.shape[0]


@dataclass(frozen=True)
class TerminalIngredients:
    K: np.ndarray
    H: np.ndarray
    P: np.ndarray
    Gamma: np.ndarray
    gamma: float
    eps_z: float
    M: np.ndarray

    @property
    def A_K(self) -> np.ndarray:
        return self.M @ self.H


def spectral_radius(A: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvals(A)).max())


def surrogate_M(dm: DesignMatrices, em: ExtendedMatrices) -> np.ndarray:
    """Data matrix M with M H equal to the closed loop for any H solving
    [Z; U] H = [I; K]; requires the stacked data to have full row rank."""
    if not rank_assumption_check(dm):
        raise SynthesisError("[Z; U] data matrix is rank deficient; "
                             "collect richer (disturbed) data")
    return np.vstack([em.A_bar @ dm.Z_dd + em.B_bar @ dm.U_dd,
                      dm.Y_dd - dm.W_dd])


def stein_solve(A: np.ndarray, Q_rhs: np.ndarray) -> np.ndarray:
    """Unique symmetric X with A' X A - X = -Q_rhs, for Schur A.

    Solved densely through Kronecker vectorization; fine for the extended
    state sizes this package targets (a squared-iteration scheme is the
    natural replacement once n_z grows past a few dozen).
    """
    A = np.asarray(A, dtype=float)
    Q_rhs = np.asarray(Q_rhs, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or Q_rhs.shape != (n, n):
        raise ValueError("A and Q_rhs must be square and equally sized")
    if not np.allclose(Q_rhs, Q_rhs.T, atol=1e-10 * max(1.0, np.abs(Q_rhs).max())):
        raise ValueError("Q_rhs must be symmetric")
    if spectral_radius(A) >= 1.0:
        raise ValueError("A is not Schur; the equation has no unique solution")
    lhs = np.eye(n * n) - np.kron(A.T, A.T)
    X = np.linalg.solve(lhs, Q_rhs.reshape(-1, order="F")).reshape(n, n, order="F")
    return 0.5 * (X + X.T)


def compute_gamma(Gamma: np.ndarray, Sigma_W: np.ndarray, E_tilde: np.ndarray) -> float:
    """Covariance budget lambda_max(Gamma) * trace(Sigma_W E' Gamma E)."""
    lam = float(np.linalg.eigvalsh(0.5 * (Gamma + Gamma.T)).max())
    return lam * float(np.trace(Sigma_W @ E_tilde.T @ Gamma @ E_tilde))


def solve_lqr_sdp(M: np.ndarray, Z_dd: np.ndarray, U_dd: np.ndarray,
                  Q_tilde: np.ndarray, R: np.ndarray, E_tilde: np.ndarray,
                  tol: float = 1e-11):
    """Feedback gain and data selector from the covariance-parameterized LQR
    semidefinite program; returns (K, H).

    The T x n_z decision matrix X2 enters the program only through
    [Z; U] X2, so the solve runs over the reduced variable Theta = [Z; U] X2
    and recovers the minimum-norm X2 afterwards; without the reduction the
    program carries a flat null space of dimension (T - n_z - n_u) * n_z
    that defeats interior-point solvers.
    """
    M = np.asarray(M, dtype=float)
    Z_dd = np.atleast_2d(np.asarray(Z_dd, dtype=float))
    U_dd = np.atleast_2d(np.asarray(U_dd, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    # the gain is invariant under joint scaling of the weights; normalizing
    # keeps extreme input penalties from wrecking the program conditioning
    w_scale = max(1.0, float(np.abs(R).max()))
    Q_tilde = np.asarray(Q_tilde, dtype=float) / w_scale
    R = R / w_scale
    n_z, n_u = Z_dd.shape[0], U_dd.shape[0]
    ZU = np.vstack([Z_dd, U_dd])
    ZU_pinv = np.linalg.pinv(ZU)
    Mr = M @ ZU_pinv
    Rhalf = np.linalg.cholesky(R).T
    EEt = E_tilde @ E_tilde.T

    n_th = (n_z + n_u) * n_z
    n_vars = n_th + n_u * n_u

    def unpack(x):
        Th = x[:n_th].reshape(n_z + n_u, n_z)
        X1 = x[n_th:].reshape(n_u, n_u)
        return Th, X1

    q = np.zeros(n_vars)
    q[:n_th] = np.vstack([Q_tilde.T, np.zeros((n_u, n_z))]).reshape(-1)
    q[n_th:] = np.eye(n_u).reshape(-1)

    blocks = []
    rows, cols, vals = [], [], []
    r = 0
    for i in range(n_z):
        for j in range(i + 1, n_z):
            rows += [r, r]
            cols += [i * n_z + j, j * n_z + i]
            vals += [1.0, -1.0]
            r += 1
    for i in range(n_u):
        for j in range(i + 1, n_u):
            rows += [r, r]
            cols += [n_th + i * n_u + j, n_th + j * n_u + i]
            vals += [1.0, -1.0]
            r += 1
    if r:
        blocks.append(ConeBlock(ZERO, sparse.csc_matrix((vals, (rows, cols)),
                                                        shape=(r, n_vars)),
                                np.zeros(r)))

    def stability_lmi(x):
        Th, _ = unpack(x)
        Tz = 0.5 * (Th[:n_z] + Th[:n_z].T)
        MT = Mr @ Th
        return np.block([[Tz - EEt, MT], [MT.T, Tz]])

    def cost_lmi(x):
        Th, X1 = unpack(x)
        Tz = 0.5 * (Th[:n_z] + Th[:n_z].T)
        RU = Rhalf @ Th[n_z:]
        return np.block([[0.5 * (X1 + X1.T), RU], [RU.T, Tz]])

    blocks.append(psd_block_from_fn(stability_lmi, n_vars, 2 * n_z))
    blocks.append(psd_block_from_fn(cost_lmi, n_vars, n_u + n_z))

    program = ConicProgram(n_vars, sparse.csc_matrix((n_vars, n_vars)),
                           q, 0.0, tuple(blocks))
    sol = solve(program, tol=tol)
    if not sol.is_optimal:
        raise SynthesisError(f"feedback synthesis program ended with status "
                             f"{sol.status.value}; the data looks inadequate")
    Th, _ = unpack(sol.primal)
    Tz = 0.5 * (Th[:n_z] + Th[:n_z].T)
    cond = np.linalg.cond(Tz)
    if not np.isfinite(cond) or cond > 1e12:
        raise SynthesisError("Z_dd X2 is numerically singular; cannot recover K")
    Tz_inv = np.linalg.inv(Tz)
    K = Th[n_z:] @ Tz_inv
    X2 = ZU_pinv @ Th
    H = X2 @ Tz_inv
    return K, H


def riccati_oracle(em: ExtendedMatrices, Q_tilde: np.ndarray, R: np.ndarray,
                   rel_tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Reference gain from iterating the Riccati recursion to a fixed point.

    Model-based; used to validate the data-driven synthesis, never inside it.
    """
    A, B = em.A_tilde, em.B_tilde
    R = np.atleast_2d(np.asarray(R, dtype=float))
    X = np.asarray(Q_tilde, dtype=float).copy()
    for _ in range(max_iter):
        BX = B.T @ X
        G = np.linalg.solve(R + BX @ B, BX @ A)
        X_next = A.T @ X @ A - A.T @ X @ B @ G + Q_tilde
        X_next = 0.5 * (X_next + X_next.T)
        delta = np.abs(X_next - X).max() / max(1.0, np.abs(X_next).max())
        X = X_next
        if delta <= rel_tol:
            BX = B.T @ X
            return -np.linalg.solve(R + BX @ B, BX @ A)
    raise SynthesisError("Riccati recursion did not converge")


def _ellipsoid_support_sq(P_eigvals, P_eigvecs, S_row, rtol=1e-10):
    """(sup_{z' P z <= 1} S z)^2, or inf when S leaves the range of P."""
    coeff = P_eigvecs.T @ S_row
    scale = max(P_eigvals.max(), 1.0)
    null = P_eigvals <= rtol * scale
    if np.any(np.abs(coeff[null]) > rtol * max(1.0, np.linalg.norm(S_row))):
        return np.inf
    live = ~null
    return float(np.sum(coeff[live] ** 2 / P_eigvals[live]))


def calibrate_epsilon_z(ti: TerminalIngredients, em: ExtendedMatrices,
                        Sigma_W: np.ndarray, u_box: Box, y_box: Box,
                        sigma_u: float, sigma_y: float,
                        cap: float = 1e3, iters: int = 60) -> float:
    """Largest certified level for the terminal mean set, by bisection.

    A level eps_z is certified when, for every finitely-bounded input or
    output component, the support of the row over the mean ellipsoid plus a
    worst-case standard-deviation term budgeted by gamma fits inside the
    box.  The ellipsoid-invariance part needs no check: the terminal cost
    weight already contracts under the synthesized closed loop, and the box
    part of the set is an intersection by definition.
    """
    A_K = ti.A_K
    P = 0.5 * (ti.P + ti.P.T)
    Gamma = 0.5 * (ti.Gamma + ti.Gamma.T)
    evP, VP = np.linalg.eigh(P)
    evP = np.clip(evP, 0.0, None)
    Gamma_inv = np.linalg.inv(Gamma)
    EA = em.E_tilde.T @ A_K

    rows = []
    for c in range(u_box.n):
        limit = min(u_box.ub[c], -u_box.lb[c])
        if np.isfinite(limit):
            rows.append((ti.K[c], 0.0, sigma_u, limit))
    for c in range(y_box.n):
        limit = min(y_box.ub[c], -y_box.lb[c])
        if np.isfinite(limit):
            rows.append((EA[c], float(Sigma_W[c, c]), sigma_y, limit))
    if not rows:
        return cap

    checks = []
    for S_row, var_add, sig, limit in rows:
        sup_sq = _ellipsoid_support_sq(evP, VP, S_row)
        std = sig * np.sqrt(ti.gamma * float(S_row @ Gamma_inv @ S_row) + var_add)
        checks.append((sup_sq, std, limit))

    def certified(eps):
        for sup_sq, std, limit in checks:
            if np.sqrt(eps * sup_sq) + std > limit:
                return False
        return True

    if not certified(0.0):
        raise CalibrationError(
            "no positive terminal level is certifiable: the worst-case "
            "standard-deviation terms alone exceed a constraint box")
    lo, hi = 0.0, cap
    if certified(hi):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if certified(mid):
            lo = mid
        else:
            hi = mid
    if lo <= 0.0:
        raise CalibrationError("no positive terminal level is certifiable")
    return lo


def synthesize(dm: DesignMatrices, em: ExtendedMatrices, Q: np.ndarray,
               R: np.ndarray, Sigma_W: np.ndarray, u_box: Box, y_box: Box,
               sigma_u: float, sigma_y: float,
               eps_z_override: float | None = None,
               sdp_tol: float = 1e-11):
    """Full synthesis pipeline; returns (TerminalIngredients, report dict).

    With ``eps_z_override`` the bisection calibration is skipped and the
    given level recorded as such; the certification outcome is still noted
    in the report.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    E = em.E_tilde
    Q_tilde = E @ Q @ E.T
    M = surrogate_M(dm, em)
    K, H = solve_lqr_sdp(M, dm.Z_dd, dm.U_dd, Q_tilde, R, E, tol=sdp_tol)
    A_K = M @ H
    rho = spectral_radius(A_K)
    if rho >= 1.0:
        raise SynthesisError(f"synthesized closed loop is not Schur (radius {rho:.6f})")
    P = stein_solve(A_K, K.T @ R @ K + A_K.T @ Q_tilde @ A_K)
    Gamma = stein_solve(A_K, np.eye(A_K.shape[0]))
    gamma = compute_gamma(Gamma, Sigma_W, E)

    ti = TerminalIngredients(K, H, P, Gamma, gamma, np.nan, M)
    calibration_error = None
    if eps_z_override is not None:
        eps_z = float(eps_z_override)
        try:
            calibrated = calibrate_epsilon_z(ti, em, Sigma_W, u_box, y_box,
                                             sigma_u, sigma_y)
        except CalibrationError as exc:
            calibrated = None
            calibration_error = str(exc)
    else:
        eps_z = calibrate_epsilon_z(ti, em, Sigma_W, u_box, y_box,
                                    sigma_u, sigma_y)
        calibrated = eps_z
    ti = TerminalIngredients(K, H, P, Gamma, gamma, eps_z, M)

    resid_P = np.linalg.norm(A_K.T @ P @ A_K - P + K.T @ R @ K
                             + A_K.T @ Q_tilde @ A_K)
    resid_G = np.linalg.norm(A_K.T @ Gamma @ A_K - Gamma + np.eye(A_K.shape[0]))
    report = {
        "rho_MH": rho,
        "lyapunov_residual_P": float(resid_P),
        "lyapunov_residual_Gamma": float(resid_G),
        "gamma": gamma,
        "P_min_eig": float(np.linalg.eigvalsh(P).min()),
        "Gamma_min_eig": float(np.linalg.eigvalsh(Gamma).min()),
        "eps_z": eps_z,
        "eps_z_calibrated": calibrated,
        "eps_z_overridden": eps_z_override is not None,
        "calibration_error": calibration_error,
    }
    return ti, report


def save_ingredients(ti: TerminalIngredients, path) -> None:
    """JSON bundle with explicit shapes for every matrix."""
    def enc(M):
        M = np.asarray(M)
        return {"shape": list(M.shape), "data": M.ravel().tolist()}

    payload = {
        "K": enc(ti.K), "H": enc(ti.H), "P": enc(ti.P), "Gamma": enc(ti.Gamma),
        "M": enc(ti.M), "gamma": ti.gamma, "eps_z": ti.eps_z,
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_ingredients(path) -> TerminalIngredients:
    payload = json.loads(Path(path).read_text())

    def dec(obj):
        return np.array(obj["data"], dtype=float).reshape(obj["shape"])

    return TerminalIngredients(dec(payload["K"]), dec(payload["H"]),
                               dec(payload["P"]), dec(payload["Gamma"]),
                               float(payload["gamma"]), float(payload["eps_z"]),
                               dec(payload["M"]))
