"""Offline trajectory archive: Hankel matrices, design matrices, rank checks.

Signals are stored as (dimension x time) arrays.  Column c of a depth-t
block Hankel stacks the signal values at steps c..c+t-1, so its columns
enumerate all length-t windows of the recorded data.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lti import (ArxModel, ExtendedState, Trajectory, sample_disturbance,
                  simulate, step_realization)

RANK_RTOL = 1e-8  # singular values below this fraction of the largest count as zero

# The synthesis rank requirement uses a coarser cut than the plain 1e-8
# rank rule: the semidefinite program works with quadratic forms in the
# stacked data, so a row-space direction resolved at relative level s only
# contributes s^2 conditioning and directions near the double-precision
# noise floor are synthesis-unusable.  1e-6 separates disturbance-resolved
# directions (noise floor sigma_w over the data scale) from the residue a
# nominally deficient noise-free record leaves behind.
A4_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class HankelSet:
    """Data blocks encoding the coefficient dynamics over one horizon window.

    Compared by identity so that derived factorizations can be cached.
    """

    Hu: np.ndarray
    Hy: np.ndarray
    Hw: np.ndarray
    N: int
    T_ini: int
    n_u: int
    n_y: int
    n_w: int

    @property
    def g_dim(self) -> int:
        return self.Hu.shape[1]


@dataclass(frozen=True)
class DesignMatrices:
    """Column-aligned (z, u, y, w) data used for feedback synthesis."""

    Z_dd: np.ndarray
    U_dd: np.ndarray
    Y_dd: np.ndarray
    W_dd: np.ndarray

    @property
    def T(self) -> int:
        return self.Z_dd.shape[1]


def hankel(seq: np.ndarray, depth: int) -> np.ndarray:
    """Block-Hankel matrix of a (n x T) signal with T - depth + 1 columns."""
    seq = np.atleast_2d(np.asarray(seq, dtype=float))
    n, T = seq.shape
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if depth > T:
        raise ValueError(f"depth {depth} exceeds signal length {T}")
    cols = T - depth + 1
    H = np.empty((n * depth, cols))
    for c in range(cols):
        H[:, c] = seq[:, c: c + depth].flatten(order="F")
    return H


def numerical_rank(A: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def pe_order_check(seq: np.ndarray, order: int, rtol: float = RANK_RTOL) -> bool:
    """True iff the depth-`order` Hankel of the signal has full row rank."""
    seq = np.atleast_2d(np.asarray(seq, dtype=float))
    n, T = seq.shape
    if order > T:
        return False
    H = hankel(seq, order)
    return numerical_rank(H, rtol) == n * order


def build_ocp_hankels(traj: Trajectory, N: int, T_ini: int, n_x: int,
                      check_pe: bool = True) -> HankelSet:
    """Hankel blocks for the horizon OCP.

    The u/y blocks have depth N + T_ini; the w block has depth N and is
    built from the disturbance tail starting at step T_ini, so that each
    column pairs a full (u, y) window with the disturbances acting on its
    last N steps.
    """
    if traj.T < N + T_ini:
        raise ValueError(f"need at least N + T_ini = {N + T_ini} steps, have {traj.T}")
    if check_pe:
        # identically-zero disturbance rows carry no excitation rank
        stacked = (np.vstack([traj.u, traj.w]) if np.any(traj.w != 0.0)
                   else traj.u)
        order = n_x + N + T_ini
        if not pe_order_check(stacked, order):
            raise ValueError(f"(u, w) data is not persistently exciting of order {order}")
    Hu = hankel(traj.u, N + T_ini)
    Hy = hankel(traj.y, N + T_ini)
    Hw = hankel(traj.w[:, T_ini:], N)
    assert Hu.shape[1] == Hy.shape[1] == Hw.shape[1]
    return HankelSet(Hu, Hy, Hw, N, T_ini,
                     traj.u.shape[0], traj.y.shape[0], traj.w.shape[0])


def build_design_matrices(traj: Trajectory) -> DesignMatrices:
    """Per-step data matrices: column t of Z_dd is the extended state z_t."""
    if traj.T_ini < 1:
        raise ValueError("trajectory has no initialization window")
    T_ini = traj.T_ini
    u_full = np.hstack([traj.u_ini, traj.u])
    y_full = np.hstack([traj.y_ini, traj.y])
    Z_dd = np.vstack([
        hankel(u_full[:, : T_ini + traj.T - 1], T_ini),
        hankel(y_full[:, : T_ini + traj.T - 1], T_ini),
    ])
    return DesignMatrices(Z_dd, traj.u.copy(), traj.y.copy(), traj.w.copy())


def rank_assumption_check(dm: DesignMatrices, rtol: float = A4_RTOL) -> bool:
    """True iff the stacked [Z; U] data matrix has full row rank at a level
    the feedback synthesis can actually use."""
    stacked = np.vstack([dm.Z_dd, dm.U_dd])
    return numerical_rank(stacked, rtol) == stacked.shape[0]


def uniform_input_sampler(low, high):
    """I.i.d. uniform input sampler on a box, for offline excitation."""
    low = np.atleast_1d(np.asarray(low, dtype=float))
    high = np.atleast_1d(np.asarray(high, dtype=float))

    def sampler(rng: np.random.Generator, n_u: int, T: int) -> np.ndarray:
        return rng.uniform(low[:, None], high[:, None], size=(n_u, T))

    return sampler


def collect_data(model: ArxModel, T: int, input_sampler, rng: np.random.Generator,
                 N: int | None = None, pe_order: int | None = None,
                 retries: int = 20, z_ini: np.ndarray | None = None,
                 feedback: np.ndarray | None = None) -> Trajectory:
    """Excite the plant until the persistency-of-excitation gate passes.

    The gate checks the stacked (u, w) signal at order n_x + N + T_ini when
    a horizon is given (or at an explicit pe_order); with neither, a single
    draw is returned unchecked, which is what short synthesis records need.

    By default the inputs are drawn i.i.d. from the sampler.  For plants
    that are open-loop unstable, long records explode and their Hankel data
    becomes numerically useless; passing a stabilizing ``feedback`` gain
    adds u = feedback z on top of the sampled dither, which keeps the record
    bounded while the rank gate still decides whether it is rich enough.
    """
    if pe_order is None and N is not None:
        pe_order = model.n_x + N + model.T_ini
    if z_ini is None:
        z_ini = np.zeros(model.n_z)
    # degenerate noise contributes no excitation rank: gate on inputs alone
    stochastic = np.any(model.Sigma_W != 0.0)
    for _ in range(retries):
        w = sample_disturbance(model, rng, size=T)
        if feedback is None:
            u = input_sampler(rng, model.n_u, T)
            traj = simulate(model, z_ini, u, w)
        else:
            dither = input_sampler(rng, model.n_u, T)
            u = np.empty((model.n_u, T))
            y = np.empty((model.n_y, T))
            z = np.asarray(z_ini, dtype=float).copy()
            l, nu = model.T_ini, model.n_u
            u_ini = z[: l * nu].reshape(nu, l, order="F")
            y_ini = z[l * nu:].reshape(model.n_y, l, order="F")
            for k in range(T):
                u[:, k] = feedback @ z + dither[:, k]
                y[:, k], z = step_realization(model, z, u[:, k], w[:, k])
            traj = Trajectory(u, w, y, u_ini, y_ini)
        signal = np.vstack([traj.u, traj.w]) if stochastic else traj.u
        if pe_order is None or pe_order_check(signal, pe_order):
            return traj
    raise RuntimeError(f"persistency of excitation at order {pe_order} failed "
                       f"{retries} times; input sampler or T={T} look inadequate")


def save_trajectory(traj: Trajectory, path) -> None:
    """Write one CSV row per step plus a separate prefix file (exact repr floats)."""
    path = Path(path)
    n_u, n_w, n_y = traj.u.shape[0], traj.w.shape[0], traj.y.shape[0]
    header = ([f"u{i}" for i in range(n_u)] + [f"w{i}" for i in range(n_w)]
              + [f"y{i}" for i in range(n_y)])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for k in range(traj.T):
            row = np.concatenate([traj.u[:, k], traj.w[:, k], traj.y[:, k]])
            wr.writerow([repr(float(v)) for v in row])
    prefix_path = path.with_suffix(path.suffix + ".prefix")
    with open(prefix_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"u{i}" for i in range(n_u)] + [f"y{i}" for i in range(n_y)])
        for k in range(traj.T_ini):
            row = np.concatenate([traj.u_ini[:, k], traj.y_ini[:, k]])
            wr.writerow([repr(float(v)) for v in row])


def load_trajectory(path, n_u: int, n_w: int, n_y: int) -> Trajectory:
    """Inverse of save_trajectory; bit-exact for values written by it."""
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        for row in rd:
            rows.append([float(v) for v in row])
    body = np.array(rows).T
    u = body[:n_u]
    w = body[n_u: n_u + n_w]
    y = body[n_u + n_w:]
    prows = []
    with open(path.with_suffix(path.suffix + ".prefix"), newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        for row in rd:
            prows.append([float(v) for v in row])
    pre = np.array(prows).T
    return Trajectory(u, w, y, pre[:n_u], pre[n_u:])


def extended_state_from(traj: Trajectory, t: int) -> np.ndarray:
    """Extended state z_t from a prefixed trajectory, for 0 <= t <= T."""
    T_ini = traj.T_ini
    u_full = np.hstack([traj.u_ini, traj.u])
    y_full = np.hstack([traj.y_ini, traj.y])
    return ExtendedState.from_history(u_full[:, t: t + T_ini],
                                      y_full[:, t: t + T_ini]).z
