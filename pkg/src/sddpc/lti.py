"""Stochastic ARX plant, its extended-state realization and simulation.

The extended state stacks the last T_ini inputs and outputs (oldest first,
inputs before outputs) and evolves through a fixed shift structure; only the
newest output row depends on the unknown system matrices.
"""

from dataclasses import dataclass

import numpy as np

from .pce import PceVector


@dataclass(frozen=True)
class ArxModel:
    """ARX plant y_k = Phi z_k + D u_k + w_k with known disturbance statistics.

    n_x is the minimal state dimension of an equivalent state-space
    realization; it only enters persistency-of-excitation orders.
    """

    Phi: np.ndarray
    D: np.ndarray
    T_ini: int
    Sigma_W: np.ndarray
    n_x: int

    def __post_init__(self):
        Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        Sigma_W = np.atleast_2d(np.asarray(self.Sigma_W, dtype=float))
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "Sigma_W", Sigma_W)
        if self.T_ini < 1:
            raise ValueError("T_ini must be >= 1")
        n_y, n_u = D.shape
        n_z = self.T_ini * (n_u + n_y)
        if Phi.shape != (n_y, n_z):
            raise ValueError(f"Phi must be {n_y} x {n_z}, got {Phi.shape}")
        if Sigma_W.shape != (n_y, n_y):
            raise ValueError(f"Sigma_W must be {n_y} x {n_y}")
        if not np.allclose(Sigma_W, Sigma_W.T):
            raise ValueError("Sigma_W must be symmetric")
        if np.linalg.eigvalsh(Sigma_W).min() < -1e-12 * max(1.0, np.abs(Sigma_W).max()):
            raise ValueError("Sigma_W must be positive semidefinite")

    @property
    def n_u(self) -> int:
        return self.D.shape[1]

    @property
    def n_y(self) -> int:
        return self.D.shape[0]

    @property
    def n_w(self) -> int:
        return self.n_y

    @property
    def n_z(self) -> int:
        return self.T_ini * (self.n_u + self.n_y)


@dataclass(frozen=True)
class ExtendedState:
    """Stacked (u, y) history of length T_ini forming the measurable state."""

    z: np.ndarray

    @staticmethod
    def from_history(u_hist: np.ndarray, y_hist: np.ndarray) -> "ExtendedState":
        """Stack u_hist (n_u x T_ini) and y_hist (n_y x T_ini), oldest column first."""
        u_hist = np.atleast_2d(u_hist)
        y_hist = np.atleast_2d(y_hist)
        return ExtendedState(np.concatenate([u_hist.flatten(order="F"),
                                             y_hist.flatten(order="F")]))


@dataclass(frozen=True)
class ExtendedMatrices:
    """Shift-structured state-space matrices of the extended-state realization."""

    A_bar: np.ndarray
    B_bar: np.ndarray
    A_tilde: np.ndarray
    B_tilde: np.ndarray
    E_tilde: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Recorded (u, w, y) realization with its (u, y) initialization window."""

    u: np.ndarray
    w: np.ndarray
    y: np.ndarray
    u_ini: np.ndarray
    y_ini: np.ndarray

    def __post_init__(self):
        T = self.u.shape[1]
        if self.w.shape[1] != T or self.y.shape[1] != T:
            raise ValueError("u, w, y must have the same number of columns")
        if self.u_ini.shape[1] != self.y_ini.shape[1]:
            raise ValueError("prefix blocks must have equal length")

    @property
    def T(self) -> int:
        return self.u.shape[1]

    @property
    def T_ini(self) -> int:
        return self.u_ini.shape[1]


def extended_matrices(model: ArxModel) -> ExtendedMatrices:
    """Build the 0/1 shift blocks and the stacked system matrices."""
    n_u, n_y, l, n_z = model.n_u, model.n_y, model.T_ini, model.n_z
    A_bar = np.zeros((n_z - n_y, n_z))
    # shift the input history; the u_k row comes from B_bar and stays zero here
    A_bar[: (l - 1) * n_u, n_u: l * n_u] = np.eye((l - 1) * n_u)
    y_rows = slice(l * n_u, l * n_u + (l - 1) * n_y)
    A_bar[y_rows, l * n_u + n_y: n_z] = np.eye((l - 1) * n_y)
    B_bar = np.zeros((n_z - n_y, n_u))
    B_bar[(l - 1) * n_u: l * n_u, :] = np.eye(n_u)
    A_tilde = np.vstack([A_bar, model.Phi])
    B_tilde = np.vstack([B_bar, model.D])
    E_tilde = np.vstack([np.zeros((n_z - n_y, n_y)), np.eye(n_y)])
    return ExtendedMatrices(A_bar, B_bar, A_tilde, B_tilde, E_tilde)


def step_realization(model: ArxModel, z: np.ndarray, u: np.ndarray, w: np.ndarray):
    """One step of the realization dynamics: returns (y, z_next)."""
    z = np.asarray(z, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if z.shape != (model.n_z,):
        raise ValueError(f"z must have length {model.n_z}")
    if u.shape != (model.n_u,) or w.shape != (model.n_w,):
        raise ValueError("u/w dimension mismatch")
    y = model.Phi @ z + model.D @ u + w
    nu, l = model.n_u, model.T_ini
    z_next = np.concatenate([z[nu: l * nu], u, z[l * nu + model.n_y:], y])
    return y, z_next


def simulate(model: ArxModel, z_ini: np.ndarray, u_seq: np.ndarray,
             w_seq: np.ndarray) -> Trajectory:
    """Roll the plant forward under given inputs and disturbances."""
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    w_seq = np.atleast_2d(np.asarray(w_seq, dtype=float))
    if u_seq.shape[0] != model.n_u:
        raise ValueError("u_seq must be n_u x T")
    if w_seq.shape != (model.n_w, u_seq.shape[1]):
        raise ValueError("w_seq must be n_w x T, matching u_seq")
    z = np.asarray(z_ini, dtype=float)
    if z.shape != (model.n_z,):
        raise ValueError(f"z_ini must have length {model.n_z}")
    l, nu = model.T_ini, model.n_u
    u_ini = z[: l * nu].reshape(nu, l, order="F")
    y_ini = z[l * nu:].reshape(model.n_y, l, order="F")
    T = u_seq.shape[1]
    y_seq = np.empty((model.n_y, T))
    for k in range(T):
        y_seq[:, k], z = step_realization(model, z, u_seq[:, k], w_seq[:, k])
    return Trajectory(u_seq.copy(), w_seq.copy(), y_seq, u_ini, y_ini)


def sample_disturbance(model: ArxModel, rng: np.random.Generator,
                       size: int | None = None, family: str = "hermite") -> np.ndarray:
    """Zero-mean draw(s) with covariance Sigma_W (Gaussian or uniform germs)."""
    from .pce import psd_sqrt
    F = psd_sqrt(model.Sigma_W)
    n = 1 if size is None else size
    if family == "hermite":
        xi = rng.standard_normal((model.n_w, n))
    elif family == "legendre":
        xi = np.sqrt(3.0) * (2.0 * rng.uniform(size=(model.n_w, n)) - 1.0)
    else:
        raise ValueError(f"unknown disturbance family {family!r}")
    out = F @ xi
    return out[:, 0] if size is None else out


def pce_step(model: ArxModel, z_coeffs: PceVector, u_coeffs: PceVector,
             w_coeffs: PceVector):
    """Column-wise coefficient dynamics: returns (y_coeffs, z_next_coeffs).

    Each basis term propagates through the same matrices as a realization,
    which is what makes the Hankel representation of coefficient
    trajectories possible in the first place.
    """
    if z_coeffs.dim != model.n_z or u_coeffs.dim != model.n_u or w_coeffs.dim != model.n_w:
        raise ValueError("coefficient dimensions do not match the model")
    L = z_coeffs.n_terms
    if u_coeffs.n_terms != L or w_coeffs.n_terms != L:
        raise ValueError("all coefficient arrays must share one basis")
    y = model.Phi @ z_coeffs.coeffs + model.D @ u_coeffs.coeffs + w_coeffs.coeffs
    nu, l = model.n_u, model.T_ini
    z_next = np.vstack([
        z_coeffs.coeffs[nu: l * nu, :],
        u_coeffs.coeffs,
        z_coeffs.coeffs[l * nu + model.n_y:, :],
        y,
    ])
    return PceVector(model.n_y, y), PceVector(model.n_z, z_next)
