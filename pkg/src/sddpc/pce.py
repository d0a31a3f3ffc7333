"""Joint polynomial chaos bases and coefficient arrays.

A basis covers one initial-condition germ block plus one germ block per
predicted disturbance step.  Only exact, degree-one encodings are used:
normalized probabilists' Hermite polynomials for Gaussian germs and
normalized shifted Legendre polynomials for uniform germs, so every basis
term has unit L2 norm.
"""

from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("hermite", "legendre")


@dataclass(frozen=True)
class BasisSpec:
    """Layout of a joint polynomial chaos basis.

    Index 0 is the constant term, indices [1, L_ini-1] the initial-condition
    block, followed by N contiguous blocks of L_w-1 disturbance terms each.
    """

    ini_family: str
    dist_family: str
    L_ini: int
    L_w: int
    N: int
    L: int
    norms_sq: np.ndarray = field(repr=False)

    def ini_indices(self) -> range:
        return range(1, self.L_ini)

    def dist_block(self, i: int) -> range:
        """Column indices of the germ block for disturbance step i."""
        if not 0 <= i < self.N:
            raise ValueError(f"block index {i} outside [0, {self.N - 1}]")
        w = self.L_w - 1
        start = self.L_ini + i * w
        return range(start, start + w)


@dataclass(frozen=True)
class PceVector:
    """Coefficients of one vector-valued random variable, one column per term."""

    dim: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[0] != self.dim:
            raise ValueError(f"coefficient array must be {self.dim} x L, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @property
    def n_terms(self) -> int:
        return self.coeffs.shape[1]


def build_joint_basis(L_ini: int, L_w: int, N: int,
                      ini_family: str = "hermite",
                      dist_family: str = "hermite") -> BasisSpec:
    """Construct the joint basis with L = L_ini + N*(L_w - 1) terms."""
    if L_ini < 1 or L_w < 1 or N < 1:
        raise ValueError("L_ini, L_w and N must all be >= 1")
    for fam in (ini_family, dist_family):
        if fam not in FAMILIES:
            raise ValueError(f"unknown germ family {fam!r}, expected one of {FAMILIES}")
    L = L_ini + N * (L_w - 1)
    return BasisSpec(ini_family, dist_family, L_ini, L_w, N, L, np.ones(L))


def moments(v: PceVector, basis: BasisSpec):
    """Mean and covariance of the random variable represented by ``v``.

    mean is the constant-term column; the covariance sums the outer products
    of the remaining columns weighted by the squared term norms.
    """
    if v.n_terms != basis.L:
        raise ValueError(f"coefficients have {v.n_terms} columns, basis has L={basis.L}")
    mean = v.coeffs[:, 0].copy()
    rest = v.coeffs[:, 1:]
    cov = (rest * basis.norms_sq[1:]) @ rest.T
    return mean, 0.5 * (cov + cov.T)


def psd_sqrt(S: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues below -tol * max(|eig|) are rejected; small negatives are
    clamped to zero so rank-deficient covariances factor cleanly.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(S, S.T, atol=1e-10 * max(1.0, np.abs(S).max())):
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    scale = max(np.abs(vals).max(), 1.0)
    if vals.min() < -tol * scale:
        raise ValueError(f"matrix is not PSD (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def disturbance_pce(Sigma_W: np.ndarray, basis: BasisSpec, block_index: int) -> PceVector:
    """Exact PCE of one zero-mean disturbance with covariance ``Sigma_W``.

    The nonzero columns sit in the germ block of the given step and form a
    symmetric factor F with F F^T = Sigma_W, so moments() recovers
    (0, Sigma_W) exactly.
    """
    Sigma_W = np.asarray(Sigma_W, dtype=float)
    n_w = Sigma_W.shape[0]
    if n_w != basis.L_w - 1:
        raise ValueError(f"Sigma_W is {n_w}-dimensional but the basis has "
                         f"L_w-1 = {basis.L_w - 1} germ terms per block")
    F = psd_sqrt(Sigma_W)
    coeffs = np.zeros((n_w, basis.L))
    coeffs[:, basis.dist_block(block_index)] = F
    return PceVector(n_w, coeffs)


def sample_realization(v: PceVector, germ_draw: np.ndarray) -> np.ndarray:
    """Evaluate the expansion at one vector of basis-term values (term 0 = 1)."""
    germ_draw = np.asarray(germ_draw, dtype=float)
    if germ_draw.shape != (v.n_terms,):
        raise ValueError(f"germ draw must have length {v.n_terms}, got {germ_draw.shape}")
    return v.coeffs @ germ_draw


def _germ_values(family: str, raw: np.ndarray) -> np.ndarray:
    # raw is standard normal; transform per family so each term has unit norm
    if family == "hermite":
        return raw
    # normalized degree-1 shifted Legendre on U[0,1]: sqrt(3)*(2u - 1)
    from scipy.special import ndtr
    return np.sqrt(3.0) * (2.0 * ndtr(raw) - 1.0)


def sample_germ_values(basis: BasisSpec, rng: np.random.Generator,
                       size: int | None = None) -> np.ndarray:
    """Draw evaluated basis-term vectors: shape (L,) or (size, L).

    Entry 0 is always 1; the other entries are independent unit-norm
    degree-one germ polynomial values of the configured families.
    """
    n = 1 if size is None else size
    out = np.empty((n, basis.L))
    out[:, 0] = 1.0
    raw = rng.standard_normal((n, basis.L - 1))
    ini = slice(1, basis.L_ini)
    out[:, ini] = _germ_values(basis.ini_family, raw[:, : basis.L_ini - 1])
    out[:, basis.L_ini:] = _germ_values(basis.dist_family, raw[:, basis.L_ini - 1:])
    return out[0] if size is None else out
