"""Assembly of the stochastic horizon OCP as a conic program.

Decision variables per basis term j: a Hankel combination vector g^j plus
the stacked input/output coefficient windows it generates.  Equality blocks
tie the windows to the data matrices, pin the initial window and enforce
causality zeros; second-order cones express the two-sided chance
constraints and the terminal mean/covariance sets; the objective is the
norm-weighted quadratic of all predicted coefficients.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .conic import NONNEG, SOC, ZERO, ConeBlock, ConicProgram, Solution
from .data import HankelSet
from .pce import BasisSpec, PceVector, disturbance_pce, psd_sqrt
from .terminal import Box, TerminalIngredients


def chance_sigma(eps: float) -> float:
    """Distribution-free two-sided tightening factor sqrt((2 - eps) / eps)."""
    if not 0.0 < eps < 1.0:
        raise ValueError("risk level must lie in (0, 1)")
    return float(np.sqrt((2.0 - eps) / eps))


def gaussian_chance_sigma(eps: float) -> float:
    """Gaussian-quantile alternative for symmetric two-sided constraints."""
    from scipy.stats import norm
    if not 0.0 < eps < 1.0:
        raise ValueError("risk level must lie in (0, 1)")
    return float(norm.ppf(1.0 - eps / 2.0))


@dataclass(frozen=True)
class OcpSpec:
    """Everything needed to assemble one horizon problem."""

    N: int
    T_ini: int
    Q: np.ndarray
    R: np.ndarray
    ti: TerminalIngredients
    hankels: HankelSet
    basis: BasisSpec
    eps_u: float
    eps_y: float
    sigma_u: float
    sigma_y: float
    u_box: Box
    y_box: Box
    w_pce: tuple
    norm_half: bool = False

    def __post_init__(self):
        if self.basis.N != self.N:
            raise ValueError("basis horizon and OCP horizon differ")
        if self.hankels.N != self.N or self.hankels.T_ini != self.T_ini:
            raise ValueError("Hankel window does not match the OCP horizon")
        if len(self.w_pce) != self.N:
            raise ValueError("need one disturbance expansion per horizon step")

    @property
    def n_u(self) -> int:
        return self.hankels.n_u

    @property
    def n_y(self) -> int:
        return self.hankels.n_y

    @property
    def n_z(self) -> int:
        return self.T_ini * (self.n_u + self.n_y)

    @property
    def n_steps(self) -> int:
        return self.N + self.T_ini

    @property
    def conv_factor(self) -> float:
        return 0.5 if self.norm_half else 1.0


def build_ocp_spec(hankels: HankelSet, basis: BasisSpec, ti: TerminalIngredients,
                   Q, R, Sigma_W, eps_u: float, eps_y: float,
                   u_box: Box, y_box: Box, gaussian_sigma: bool = False,
                   norm_half: bool = False) -> OcpSpec:
    """Convenience constructor deriving sigma values and disturbance terms."""
    sig = gaussian_chance_sigma if gaussian_sigma else chance_sigma
    w_pce = tuple(disturbance_pce(Sigma_W, basis, i) for i in range(basis.N))
    return OcpSpec(hankels.N, hankels.T_ini, np.atleast_2d(np.asarray(Q, float)),
                   np.atleast_2d(np.asarray(R, float)), ti, hankels, basis,
                   eps_u, eps_y, sig(eps_u), sig(eps_y), u_box, y_box,
                   w_pce, norm_half)


@dataclass(frozen=True)
class InitialCondition:
    """Pinned coefficients of the initial window: a mean column plus
    L_ini - 1 stochastic columns (all zero in the measured variant)."""

    kind: str                 # "measured" | "backup"
    mean: np.ndarray          # n_z
    cols: np.ndarray          # n_z x (L_ini - 1)

    @property
    def A_z(self) -> np.ndarray:
        return self.cols


def measured_init(z_k: np.ndarray, basis: BasisSpec) -> InitialCondition:
    """Deterministic initial condition from the measured extended state."""
    z_k = np.asarray(z_k, dtype=float).ravel()
    return InitialCondition("measured", z_k.copy(),
                            np.zeros((z_k.shape[0], basis.L_ini - 1)))


def backup_init(pred: PceVector, basis: BasisSpec) -> InitialCondition:
    """Moment-matched initial condition from a one-step prediction.

    ``pred`` carries the prediction in the grown basis: the constant column,
    the L_ini - 1 initial-condition columns and L_w - 1 columns inherited
    from the disturbance of the previous step.  Its second moment is
    reassembled exactly by the symmetric square-root columns, which keeps
    the basis dimension constant across the loop.
    """
    n_z = pred.dim
    if basis.L_ini != n_z + 1:
        raise ValueError("the moment-matched start needs one independent "
                         "Gaussian germ per extended-state component "
                         f"(L_ini = n_z + 1, got L_ini={basis.L_ini}, n_z={n_z})")
    grown = basis.L_ini + basis.L_w - 1
    if pred.n_terms != grown:
        raise ValueError(f"prediction must carry {grown} columns, has {pred.n_terms}")
    mean = pred.coeffs[:, 0].copy()
    rest = pred.coeffs[:, 1:]
    Q_rhs = rest @ rest.T
    A_z = psd_sqrt(Q_rhs)
    return InitialCondition("backup", mean, A_z)


@dataclass(frozen=True)
class OcpSolution:
    """Extracted coefficient trajectories over the full window."""

    u: np.ndarray             # n_u x n_steps x L
    y: np.ndarray             # n_y x n_steps x L
    g: np.ndarray             # g_dim x L
    cost: float
    hankel_residual: float
    T_ini: int

    def z_at(self, i: int) -> PceVector:
        """Extended state coefficients at absolute step i in [0, N]."""
        t = i + self.T_ini
        if not self.T_ini <= t <= self.u.shape[1]:
            raise ValueError(f"step {i} outside the prediction window")
        u_win = self.u[:, t - self.T_ini: t, :]
        y_win = self.y[:, t - self.T_ini: t, :]
        n_u, _, L = u_win.shape
        n_y = y_win.shape[0]
        z = np.vstack([u_win.reshape(n_u * self.T_ini, L, order="F"),
                       y_win.reshape(n_y * self.T_ini, L, order="F")])
        return PceVector(z.shape[0], z)

    def u_step(self, i: int) -> np.ndarray:
        """Input coefficients at absolute step i, shape n_u x L."""
        return self.u[:, i + self.T_ini, :]


@lru_cache(maxsize=32)
def _trajectory_basis(hankels: HankelSet, rtol: float = 1e-8):
    """Orthonormal basis of the window space spanned by the Hankel columns.

    The stacked Hankel has many more columns than its rank (every extra data
    column adds a flat direction for the combination vector), which leaves
    interior-point KKT systems nearly singular.  The solve therefore runs in
    orthonormal range coordinates; ``G_rec`` maps them back to the
    minimum-norm combination vector so the Hankel identity can be reported
    in the original variables.
    """
    Hs = np.vstack([hankels.Hu, hankels.Hy, hankels.Hw])
    U, s, Vt = np.linalg.svd(Hs, full_matrices=False)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    B = U[:, :rank]
    G_rec = Vt[:rank].T / s[:rank]
    m_u = hankels.Hu.shape[0]
    m_y = hankels.Hy.shape[0]
    return B[:m_u], B[m_u:m_u + m_y], B[m_u + m_y:], G_rec, rank


class _Layout:
    """Index bookkeeping for the stacked decision vector."""

    def __init__(self, spec: OcpSpec, g_dim: int):
        self.g_dim = g_dim
        self.n_u, self.n_y = spec.n_u, spec.n_y
        self.n_steps = spec.n_steps
        self.L = spec.basis.L
        self.block = self.g_dim + self.n_steps * (self.n_u + self.n_y)
        self.n_core = self.block * self.L

    def g(self, j):
        return j * self.block

    def u(self, j, t, c=0):
        return j * self.block + self.g_dim + t * self.n_u + c

    def y(self, j, t, c=0):
        return j * self.block + self.g_dim + self.n_steps * self.n_u + t * self.n_y + c

    def u_slice(self, j):
        base = j * self.block + self.g_dim
        return base, base + self.n_steps * self.n_u

    def y_slice(self, j):
        base = j * self.block + self.g_dim + self.n_steps * self.n_u
        return base, base + self.n_steps * self.n_y

    def z_N_indices(self, j, N, T_ini):
        idx = [self.u(j, t, c) for t in range(N, N + T_ini) for c in range(self.n_u)]
        idx += [self.y(j, t, c) for t in range(N, N + T_ini) for c in range(self.n_y)]
        return np.array(idx, dtype=int)


def _causality_zero_terms(spec: OcpSpec, i: int):
    """Basis terms whose input coefficient is pinned at prediction step i."""
    first_free_excl = spec.basis.L_ini + i * (spec.basis.L_w - 1) + 1
    return range(first_free_excl, spec.basis.L)


def assemble(spec: OcpSpec, init: InitialCondition) -> ConicProgram:
    """Build the conic program for one initial condition."""
    Bu, By, Bw, _, rank = _trajectory_basis(spec.hankels)
    lay = _Layout(spec, rank)
    L, g_dim = lay.L, lay.g_dim
    N, T_ini = spec.N, spec.T_ini
    n_u, n_y, n_steps = spec.n_u, spec.n_y, spec.n_steps
    norms = spec.basis.norms_sq
    if init.mean.shape[0] != spec.n_z or init.cols.shape != (spec.n_z, spec.basis.L_ini - 1):
        raise ValueError("initial condition does not match the problem dimensions")

    # epigraph variables for the chance constraints, one per bounded row/step
    u_rows = [c for c in range(n_u)
              if np.isfinite(spec.u_box.lb[c]) or np.isfinite(spec.u_box.ub[c])]
    y_rows = [c for c in range(n_y)
              if np.isfinite(spec.y_box.lb[c]) or np.isfinite(spec.y_box.ub[c])]
    t_index = {}
    n_vars = lay.n_core
    for i in range(N):
        for c in u_rows:
            t_index[("u", i, c)] = n_vars
            n_vars += 1
        for c in y_rows:
            t_index[("y", i, c)] = n_vars
            n_vars += 1

    # per-term equality template: [Bu g - u; By g - y; Bw g] rows, tiled over
    # the basis terms with constant row/column offsets
    hu_r, hu_c = np.nonzero(Bu)
    hy_r, hy_c = np.nonzero(By)
    hw_r, hw_c = np.nonzero(Bw)
    m_u, m_y, m_w = Bu.shape[0], By.shape[0], Bw.shape[0]
    m_blk = m_u + m_y + m_w
    u_off = g_dim
    y_off = g_dim + n_steps * n_u
    tmpl_rows = np.concatenate([
        hu_r, np.arange(m_u),
        m_u + hy_r, m_u + np.arange(m_y),
        m_u + m_y + hw_r,
    ])
    tmpl_cols = np.concatenate([
        hu_c, u_off + np.arange(m_u),
        hy_c, y_off + np.arange(m_y),
        hw_c,
    ])
    tmpl_vals = np.concatenate([
        Bu[hu_r, hu_c], np.full(m_u, -1.0),
        By[hy_r, hy_c], np.full(m_y, -1.0),
        Bw[hw_r, hw_c],
    ])
    j_arr = np.arange(L)
    rows_link = (tmpl_rows[None, :] + (j_arr * m_blk)[:, None]).ravel()
    cols_link = (tmpl_cols[None, :] + (j_arr * lay.block)[:, None]).ravel()
    vals_link = np.tile(tmpl_vals, L)
    rhs_link = np.zeros((L, m_blk))
    for i in range(N):
        rhs_link[:, m_u + m_y + i * spec.hankels.n_w:
                 m_u + m_y + (i + 1) * spec.hankels.n_w] = -spec.w_pce[i].coeffs.T
    row = L * m_blk

    # initial window pinning (zero for every term outside the start block)
    init_cols = np.hstack([init.mean[:, None], init.cols])
    init_tmpl_cols = np.concatenate([
        u_off + np.arange(T_ini * n_u),
        y_off + np.arange(T_ini * n_y),
    ])
    n_pin = init_tmpl_cols.shape[0]
    rows_init = row + np.arange(L * n_pin)
    cols_init = (init_tmpl_cols[None, :] + (j_arr * lay.block)[:, None]).ravel()
    vals_init = np.ones(L * n_pin)
    rhs_init = np.zeros((L, n_pin))
    rhs_init[: init_cols.shape[1], :] = -init_cols.T
    row += L * n_pin

    # causality: inputs may not depend on disturbance terms of later steps
    ca_rows, ca_cols = [], []
    for i in range(N):
        for j in _causality_zero_terms(spec, i):
            for c in range(n_u):
                ca_rows.append(row)
                ca_cols.append(lay.u(j, T_ini + i, c))
                row += 1

    A_eq = sparse.csc_matrix(
        (np.concatenate([vals_link, vals_init, np.ones(len(ca_rows))]),
         (np.concatenate([rows_link, rows_init, np.array(ca_rows, dtype=int)]),
          np.concatenate([cols_link, cols_init, np.array(ca_cols, dtype=int)]))),
        shape=(row, n_vars))
    b_eq = np.concatenate([rhs_link.ravel(), rhs_init.ravel(),
                           np.zeros(len(ca_rows))])
    blocks = [ConeBlock(ZERO, A_eq, b_eq)]

    # chance constraints: mean +- sigma * t inside the box, SOC ties t to the
    # norm of the stochastic coefficients
    nn_rows, nn_cols, nn_vals, nn_rhs = [], [], [], []
    nrow = 0
    weights = np.sqrt(norms[1:])
    for i in range(N):
        t_abs = T_ini + i
        for kind, rows_sel, box, sigma in (("u", u_rows, spec.u_box, spec.sigma_u),
                                           ("y", y_rows, spec.y_box, spec.sigma_y)):
            for c in rows_sel:
                tvar = t_index[(kind, i, c)]
                vidx = (lay.u(0, t_abs, c) if kind == "u" else lay.y(0, t_abs, c))
                soc_rows, soc_cols, soc_vals = [0], [tvar], [1.0]
                for j in range(1, L):
                    soc_rows.append(j)
                    soc_cols.append((lay.u(j, t_abs, c) if kind == "u"
                                     else lay.y(j, t_abs, c)))
                    soc_vals.append(weights[j - 1])
                A_soc = sparse.csc_matrix((soc_vals, (soc_rows, soc_cols)),
                                          shape=(L, n_vars))
                blocks.append(ConeBlock(SOC, A_soc, np.zeros(L)))
                if np.isfinite(box.ub[c]):
                    nn_rows += [nrow, nrow]
                    nn_cols += [vidx, tvar]
                    nn_vals += [-1.0, -sigma]
                    nn_rhs.append(box.ub[c])
                    nrow += 1
                if np.isfinite(box.lb[c]):
                    nn_rows += [nrow, nrow]
                    nn_cols += [vidx, tvar]
                    nn_vals += [1.0, -sigma]
                    nn_rhs.append(-box.lb[c])
                    nrow += 1
    if nrow:
        A_nn = sparse.csc_matrix((nn_vals, (nn_rows, nn_cols)), shape=(nrow, n_vars))
        blocks.append(ConeBlock(NONNEG, A_nn, np.array(nn_rhs)))

    # terminal mean set: || P^(1/2) z_N^0 || <= sqrt(eps_z)
    evP, VP = np.linalg.eigh(0.5 * (spec.ti.P + spec.ti.P.T))
    Lp = (VP * np.sqrt(np.clip(evP, 0.0, None))).T
    zN0 = lay.z_N_indices(0, N, T_ini)
    mrows, mcols, mvals = [], [], []
    for r in range(spec.n_z):
        for k, col in enumerate(zN0):
            if Lp[r, k] != 0.0:
                mrows.append(1 + r)
                mcols.append(col)
                mvals.append(Lp[r, k])
    b_mean = np.zeros(1 + spec.n_z)
    b_mean[0] = np.sqrt(max(spec.ti.eps_z, 0.0))
    blocks.append(ConeBlock(SOC, sparse.csc_matrix((mvals, (mrows, mcols)),
                                                   shape=(1 + spec.n_z, n_vars)),
                            b_mean))

    # terminal covariance budget: weighted Gamma-norms of terms j >= 1
    Lg = np.linalg.cholesky(0.5 * (spec.ti.Gamma + spec.ti.Gamma.T)).T
    crows, ccols, cvals = [], [], []
    r0 = 1
    for j in range(1, L):
        zNj = lay.z_N_indices(j, N, T_ini)
        wj = np.sqrt(norms[j])
        for r in range(spec.n_z):
            for k, col in enumerate(zNj):
                if Lg[r, k] != 0.0:
                    crows.append(r0 + r)
                    ccols.append(col)
                    cvals.append(wj * Lg[r, k])
        r0 += spec.n_z
    b_cov = np.zeros(1 + (L - 1) * spec.n_z)
    b_cov[0] = np.sqrt(max(spec.ti.gamma, 0.0))
    blocks.append(ConeBlock(SOC, sparse.csc_matrix((cvals, (crows, ccols)),
                                                   shape=(b_cov.shape[0], n_vars)),
                            b_cov))

    # objective: norm-weighted stage costs plus the terminal quadratic
    f = spec.conv_factor
    hrows, hcols, hvals = [], [], []
    Q, R, P = spec.Q, spec.R, 0.5 * (spec.ti.P + spec.ti.P.T)
    for j in range(L):
        m = 2.0 * f * norms[j]
        for i in range(N):
            t_abs = T_ini + i
            for a in range(n_u):
                for b in range(n_u):
                    if R[a, b] != 0.0:
                        hrows.append(lay.u(j, t_abs, a))
                        hcols.append(lay.u(j, t_abs, b))
                        hvals.append(m * R[a, b])
            for a in range(n_y):
                for b in range(n_y):
                    if Q[a, b] != 0.0:
                        hrows.append(lay.y(j, t_abs, a))
                        hcols.append(lay.y(j, t_abs, b))
                        hvals.append(m * Q[a, b])
        zNj = lay.z_N_indices(j, N, T_ini)
        for a in range(spec.n_z):
            for b in range(spec.n_z):
                if P[a, b] != 0.0:
                    hrows.append(zNj[a])
                    hcols.append(zNj[b])
                    hvals.append(m * P[a, b])
    H = sparse.csc_matrix((hvals, (hrows, hcols)), shape=(n_vars, n_vars))
    return ConicProgram(n_vars, H, np.zeros(n_vars), 0.0, tuple(blocks))


def extract_solution(spec: OcpSpec, solution: Solution) -> OcpSolution:
    """Read back coefficient trajectories; causality zeros are snapped exact."""
    if not solution.is_optimal:
        raise RuntimeError(f"cannot extract from status {solution.status.value}")
    _, _, _, G_rec, rank = _trajectory_basis(spec.hankels)
    lay = _Layout(spec, rank)
    x = solution.primal
    L, n_steps = lay.L, lay.n_steps
    u = np.empty((spec.n_u, n_steps, L))
    y = np.empty((spec.n_y, n_steps, L))
    g = np.empty((spec.hankels.g_dim, L))
    for j in range(L):
        g[:, j] = G_rec @ x[lay.g(j): lay.g(j) + lay.g_dim]
        us, ue = lay.u_slice(j)
        u[:, :, j] = x[us:ue].reshape(spec.n_u, n_steps, order="F")
        ys, ye = lay.y_slice(j)
        y[:, :, j] = x[ys:ye].reshape(spec.n_y, n_steps, order="F")
    for i in range(spec.N):
        for j in _causality_zero_terms(spec, i):
            u[:, spec.T_ini + i, j] = 0.0
    resid = 0.0
    for j in range(L):
        resid = max(resid, np.abs(spec.hankels.Hu @ g[:, j]
                                  - u[:, :, j].reshape(-1, order="F")).max())
        resid = max(resid, np.abs(spec.hankels.Hy @ g[:, j]
                                  - y[:, :, j].reshape(-1, order="F")).max())
    return OcpSolution(u, y, g, solution.objective_value, float(resid), spec.T_ini)


def cost_value(spec: OcpSpec, u: np.ndarray, y: np.ndarray, z_N: np.ndarray,
               norms: np.ndarray | None = None) -> float:
    """Objective of given coefficient trajectories (columns = basis terms).

    ``u``/``y`` cover prediction steps 0..N-1 with shape (n, N, L'); z_N is
    n_z x L'.  Shared by the shifted-candidate bookkeeping so the candidate
    cost and the solver objective come from one formula.
    """
    if norms is None:
        norms = np.ones(u.shape[2])
    f = spec.conv_factor
    total = 0.0
    for j in range(u.shape[2]):
        s = 0.0
        for i in range(u.shape[1]):
            s += float(u[:, i, j] @ spec.R @ u[:, i, j])
            s += float(y[:, i, j] @ spec.Q @ y[:, i, j])
        s += float(z_N[:, j] @ spec.ti.P @ z_N[:, j])
        total += f * norms[j] * s
    return total
