"""Model-based counterpart of the horizon OCP, used as a verification oracle.

Encodes the coefficient dynamics explicitly through the known system
matrices instead of through data Hankel blocks.  Kept deliberately separate
from the data-driven assembly so the two can cross-check each other.
"""

import numpy as np
from scipy import sparse

from .conic import NONNEG, SOC, ZERO, ConeBlock, ConicProgram
from .lti import ArxModel, extended_matrices
from .ocp import InitialCondition, OcpSpec, _causality_zero_terms


def assemble_reference(spec: OcpSpec, init: InitialCondition,
                       model: ArxModel) -> ConicProgram:
    """Same objective and constraint set as the data-driven program, with the
    coefficient dynamics written out step by step."""
    em = extended_matrices(model)
    A_t, B_t, E_t = em.A_tilde, em.B_tilde, em.E_tilde
    N = spec.N
    L = spec.basis.L
    n_u, n_y, n_z = model.n_u, model.n_y, model.n_z
    norms = spec.basis.norms_sq

    blk = N * n_u + N * n_y + (N + 1) * n_z

    def u_idx(j, i, c=0):
        return j * blk + i * n_u + c

    def y_idx(j, i, c=0):
        return j * blk + N * n_u + i * n_y + c

    def z_idx(j, i, c=0):
        return j * blk + N * (n_u + n_y) + i * n_z + c

    u_rows = [c for c in range(n_u)
              if np.isfinite(spec.u_box.lb[c]) or np.isfinite(spec.u_box.ub[c])]
    y_rows = [c for c in range(n_y)
              if np.isfinite(spec.y_box.lb[c]) or np.isfinite(spec.y_box.ub[c])]
    n_vars = blk * L
    t_index = {}
    for i in range(N):
        for c in u_rows:
            t_index[("u", i, c)] = n_vars
            n_vars += 1
        for c in y_rows:
            t_index[("y", i, c)] = n_vars
            n_vars += 1

    rows, cols, vals, rhs = [], [], [], []
    row = 0

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    init_cols = np.hstack([init.mean[:, None], init.cols])
    for j in range(L):
        z0 = init_cols[:, j] if j < init_cols.shape[1] else np.zeros(n_z)
        for c in range(n_z):
            add(row, z_idx(j, 0, c), 1.0)
            rhs.append(-z0[c])
            row += 1
        for i in range(N):
            w_j = spec.w_pce[i].coeffs[:, j]
            for r in range(n_z):
                add(row, z_idx(j, i + 1, r), 1.0)
                for c in range(n_z):
                    if A_t[r, c] != 0.0:
                        add(row, z_idx(j, i, c), -A_t[r, c])
                for c in range(n_u):
                    if B_t[r, c] != 0.0:
                        add(row, u_idx(j, i, c), -B_t[r, c])
                rhs.append(-float(E_t[r] @ w_j))
                row += 1
            for r in range(n_y):
                add(row, y_idx(j, i, r), 1.0)
                for c in range(n_z):
                    if model.Phi[r, c] != 0.0:
                        add(row, z_idx(j, i, c), -model.Phi[r, c])
                for c in range(n_u):
                    if model.D[r, c] != 0.0:
                        add(row, u_idx(j, i, c), -model.D[r, c])
                rhs.append(-w_j[r])
                row += 1
    for i in range(N):
        for j in _causality_zero_terms(spec, i):
            for c in range(n_u):
                add(row, u_idx(j, i, c), 1.0)
                rhs.append(0.0)
                row += 1

    blocks = [ConeBlock(ZERO, sparse.csc_matrix((vals, (rows, cols)),
                                                shape=(row, n_vars)),
                        np.array(rhs))]

    nn_rows, nn_cols, nn_vals, nn_rhs = [], [], [], []
    nrow = 0
    weights = np.sqrt(norms[1:])
    for i in range(N):
        for kind, rows_sel, box, sigma in (("u", u_rows, spec.u_box, spec.sigma_u),
                                           ("y", y_rows, spec.y_box, spec.sigma_y)):
            for c in rows_sel:
                tvar = t_index[(kind, i, c)]
                vidx0 = u_idx(0, i, c) if kind == "u" else y_idx(0, i, c)
                s_rows, s_cols, s_vals = [0], [tvar], [1.0]
                for j in range(1, L):
                    s_rows.append(j)
                    s_cols.append(u_idx(j, i, c) if kind == "u" else y_idx(j, i, c))
                    s_vals.append(weights[j - 1])
                blocks.append(ConeBlock(SOC, sparse.csc_matrix(
                    (s_vals, (s_rows, s_cols)), shape=(L, n_vars)), np.zeros(L)))
                if np.isfinite(box.ub[c]):
                    nn_rows += [nrow, nrow]
                    nn_cols += [vidx0, tvar]
                    nn_vals += [-1.0, -sigma]
                    nn_rhs.append(box.ub[c])
                    nrow += 1
                if np.isfinite(box.lb[c]):
                    nn_rows += [nrow, nrow]
                    nn_cols += [vidx0, tvar]
                    nn_vals += [1.0, -sigma]
                    nn_rhs.append(-box.lb[c])
                    nrow += 1
    if nrow:
        blocks.append(ConeBlock(NONNEG, sparse.csc_matrix(
            (nn_vals, (nn_rows, nn_cols)), shape=(nrow, n_vars)), np.array(nn_rhs)))

    evP, VP = np.linalg.eigh(0.5 * (spec.ti.P + spec.ti.P.T))
    Lp = (VP * np.sqrt(np.clip(evP, 0.0, None))).T
    m_rows, m_cols, m_vals = [], [], []
    for r in range(n_z):
        for c in range(n_z):
            if Lp[r, c] != 0.0:
                m_rows.append(1 + r)
                m_cols.append(z_idx(0, N, c))
                m_vals.append(Lp[r, c])
    b_mean = np.zeros(1 + n_z)
    b_mean[0] = np.sqrt(max(spec.ti.eps_z, 0.0))
    blocks.append(ConeBlock(SOC, sparse.csc_matrix(
        (m_vals, (m_rows, m_cols)), shape=(1 + n_z, n_vars)), b_mean))

    Lg = np.linalg.cholesky(0.5 * (spec.ti.Gamma + spec.ti.Gamma.T)).T
    c_rows, c_cols, c_vals = [], [], []
    r0 = 1
    for j in range(1, L):
        wj = np.sqrt(norms[j])
        for r in range(n_z):
            for c in range(n_z):
                if Lg[r, c] != 0.0:
                    c_rows.append(r0 + r)
                    c_cols.append(z_idx(j, N, c))
                    c_vals.append(wj * Lg[r, c])
        r0 += n_z
    b_cov = np.zeros(1 + (L - 1) * n_z)
    b_cov[0] = np.sqrt(max(spec.ti.gamma, 0.0))
    blocks.append(ConeBlock(SOC, sparse.csc_matrix(
        (c_vals, (c_rows, c_cols)), shape=(b_cov.shape[0], n_vars)), b_cov))

    f = spec.conv_factor
    h_rows, h_cols, h_vals = [], [], []
    P = 0.5 * (spec.ti.P + spec.ti.P.T)
    for j in range(L):
        m = 2.0 * f * norms[j]
        for i in range(N):
            for a in range(n_u):
                for b in range(n_u):
                    if spec.R[a, b] != 0.0:
                        h_rows.append(u_idx(j, i, a))
                        h_cols.append(u_idx(j, i, b))
                        h_vals.append(m * spec.R[a, b])
            for a in range(n_y):
                for b in range(n_y):
                    if spec.Q[a, b] != 0.0:
                        h_rows.append(y_idx(j, i, a))
                        h_cols.append(y_idx(j, i, b))
                        h_vals.append(m * spec.Q[a, b])
        for a in range(n_z):
            for b in range(n_z):
                if P[a, b] != 0.0:
                    h_rows.append(z_idx(j, N, a))
                    h_cols.append(z_idx(j, N, b))
                    h_vals.append(m * P[a, b])
    H = sparse.csc_matrix((h_vals, (h_rows, h_cols)), shape=(n_vars, n_vars))
    return ConicProgram(n_vars, H, np.zeros(n_vars), 0.0, tuple(blocks))
