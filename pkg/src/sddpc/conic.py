"""Thin conic-programming layer over the Clarabel interior-point solver.

A program is a quadratic objective 0.5 x'Hx + q'x + c0 over affine cone
blocks s = A x + b with s required in {0}, the nonnegative orthant, a
second-order cone (s0 >= ||s1:||) or the PSD cone in scaled-triangle
vectorization.  Assembly is pure; solving never mutates the program.
"""

import io
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import sparse

import clarabel

ZERO, NONNEG, SOC, PSD = "zero", "nonneg", "soc", "psd"
_KINDS = (ZERO, NONNEG, SOC, PSD)


class Status(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class ConeBlock:
    kind: str
    A: sparse.csc_matrix
    b: np.ndarray
    side: int = 0  # matrix side, PSD blocks only

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown cone kind {self.kind!r}")
        A = sparse.csc_matrix(self.A)
        b = np.asarray(self.b, dtype=float).ravel()
        if A.shape[0] != b.shape[0]:
            raise ValueError("A and b row counts differ")
        if self.kind == PSD:
            need = self.side * (self.side + 1) // 2
            if b.shape[0] != need:
                raise ValueError(f"PSD block of side {self.side} needs {need} rows")
        if self.kind == SOC and b.shape[0] < 1:
            raise ValueError("second-order cone block needs at least one row")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def rows(self) -> int:
        return self.b.shape[0]


@dataclass(frozen=True)
class ConicProgram:
    n_vars: int
    hessian: sparse.csc_matrix
    q: np.ndarray
    constant: float
    blocks: tuple

    def __post_init__(self):
        H = sparse.csc_matrix(self.hessian)
        if H.shape != (self.n_vars, self.n_vars):
            raise ValueError("hessian has wrong shape")
        q = np.asarray(self.q, dtype=float).ravel()
        if q.shape[0] != self.n_vars:
            raise ValueError("q has wrong length")
        for blk in self.blocks:
            if blk.A.shape[1] != self.n_vars:
                raise ValueError("constraint block column count differs from n_vars")
        object.__setattr__(self, "hessian", H)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "blocks", tuple(self.blocks))


@dataclass(frozen=True)
class Solution:
    status: Status
    primal: np.ndarray | None
    objective_value: float | None
    max_residual: float | None = None

    @property
    def is_optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def svec(S: np.ndarray) -> np.ndarray:
    """Scaled upper-triangle vectorization (off-diagonals times sqrt(2))."""
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    out = np.empty(n * (n + 1) // 2)
    k = 0
    rt2 = np.sqrt(2.0)
    for j in range(n):
        for i in range(j + 1):
            out[k] = S[i, j] * (1.0 if i == j else rt2)
            k += 1
    return out


def smat(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of svec."""
    S = np.empty((n, n))
    k = 0
    rt2 = np.sqrt(2.0)
    for j in range(n):
        for i in range(j + 1):
            val = v[k] if i == j else v[k] / rt2
            S[i, j] = val
            S[j, i] = val
            k += 1
    return S


def psd_block_from_fn(fn, n_vars: int, side: int,
                      support: "list[int] | None" = None) -> ConeBlock:
    """PSD block for an affine symmetric matrix expression S(x) >= 0.

    ``fn`` maps a length-n_vars vector to the side x side symmetric matrix;
    its linear coefficient columns are extracted by probing the variables in
    ``support`` (all of them when omitted) with unit vectors.
    """
    x0 = np.zeros(n_vars)
    C = np.asarray(fn(x0), dtype=float)
    if C.shape != (side, side):
        raise ValueError("expression has wrong matrix side")
    m = side * (side + 1) // 2
    idxs = range(n_vars) if support is None else support
    cols, col_idx = [], []
    for i in idxs:
        x0[i] = 1.0
        Fi = np.asarray(fn(x0), dtype=float) - C
        x0[i] = 0.0
        if np.any(Fi):
            cols.append(svec(0.5 * (Fi + Fi.T)))
            col_idx.append(i)
    A = sparse.lil_matrix((m, n_vars))
    for i, col in zip(col_idx, cols):
        A[:, i] = col[:, None]
    return ConeBlock(PSD, sparse.csc_matrix(A), svec(0.5 * (C + C.T)), side=side)


def _cone_of(blk: ConeBlock):
    if blk.kind == ZERO:
        return clarabel.ZeroConeT(blk.rows)
    if blk.kind == NONNEG:
        return clarabel.NonnegativeConeT(blk.rows)
    if blk.kind == SOC:
        return clarabel.SecondOrderConeT(blk.rows)
    return clarabel.PSDTriangleConeT(blk.side)


def block_residual(blk: ConeBlock, x: np.ndarray) -> float:
    """Primal infeasibility of x for one block (0 when feasible)."""
    s = blk.A @ x + blk.b
    if blk.kind == ZERO:
        return float(np.abs(s).max(initial=0.0))
    if blk.kind == NONNEG:
        return float(np.maximum(-s, 0.0).max(initial=0.0))
    if blk.kind == SOC:
        return float(max(0.0, np.linalg.norm(s[1:]) - s[0]))
    evs = np.linalg.eigvalsh(smat(s, blk.side))
    return float(max(0.0, -evs.min()))


_STATUS_MAP = {
    "Solved": Status.OPTIMAL,
    "AlmostSolved": Status.OPTIMAL,
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
    "DualInfeasible": Status.UNBOUNDED,
    "AlmostDualInfeasible": Status.UNBOUNDED,
}


def solve(program: ConicProgram, tol: float = 1e-8, max_iter: int = 200,
          verbose: bool = False) -> Solution:
    """Solve the program; feasibility residuals are re-verified on the result.

    Second-order cone blocks are normalized by their constant radius before
    the call (cone membership is scale invariant; large fixed budgets
    otherwise stall the interior-point iteration).  A failed solve is
    retried once with stronger static regularization, which rescues
    degenerate instances without changing well-posed ones.
    """
    n = program.n_vars
    if program.blocks:
        A_parts, b_parts = [], []
        for blk in program.blocks:
            scale = max(1.0, abs(blk.b[0])) if blk.kind == SOC else 1.0
            A_parts.append(-blk.A / scale if scale != 1.0 else -blk.A)
            b_parts.append(blk.b / scale)
        A = sparse.vstack(A_parts, format="csc")
        b = np.concatenate(b_parts)
        cones = [_cone_of(blk) for blk in program.blocks]
    else:
        A = sparse.csc_matrix((0, n))
        b = np.zeros(0)
        cones = []
    P = sparse.triu(program.hessian, format="csc")

    def attempt(reg: float | None):
        settings = clarabel.DefaultSettings()
        settings.verbose = verbose
        settings.max_iter = max_iter
        settings.tol_feas = tol
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        if reg is not None:
            settings.static_regularization_constant = reg
        raw = clarabel.DefaultSolver(P, program.q, A, b, cones, settings).solve()
        return _STATUS_MAP.get(str(raw.status), Status.NUMERICAL_FAILURE), raw

    status, raw = attempt(None)
    if status is Status.NUMERICAL_FAILURE:
        status, raw = attempt(1e-7)
    if status is not Status.OPTIMAL:
        return Solution(status, None, None)
    x = np.asarray(raw.x)
    resid = max((block_residual(blk, x) for blk in program.blocks), default=0.0)
    obj = float(raw.obj_val) + program.constant
    return Solution(Status.OPTIMAL, x, obj, resid)


def dump(program: ConicProgram) -> str:
    """Plain-text triplet dump for debugging; not a stable format."""
    out = io.StringIO()
    out.write(f"vars {program.n_vars} constant {program.constant!r}\n")
    H = sparse.coo_matrix(program.hessian)
    out.write(f"hessian nnz {H.nnz}\n")
    for i, j, v in zip(H.row, H.col, H.data):
        out.write(f"H {i} {j} {v!r}\n")
    for i, v in enumerate(program.q):
        if v != 0.0:
            out.write(f"q {i} {v!r}\n")
    for bi, blk in enumerate(program.blocks):
        out.write(f"block {bi} {blk.kind} rows {blk.rows} side {blk.side}\n")
        Ac = sparse.coo_matrix(blk.A)
        for i, j, v in zip(Ac.row, Ac.col, Ac.data):
            out.write(f"A {bi} {i} {j} {v!r}\n")
        for i, v in enumerate(blk.b):
            if v != 0.0:
                out.write(f"b {bi} {i} {v!r}\n")
    return out.getvalue()
