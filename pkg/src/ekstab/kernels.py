"""Sparse and dense linear-algebra kernels.

Saddle-point factorization and solve, block Gram-Schmidt with conditional
reorthogonalization, thin QR with breakdown detection, plus thin wrappers
around the dense decompositions used for truncation and spectrum checks.

Factorizations and matrices are immutable after construction; solves
against a shared factorization may run concurrently.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import (
    DimensionMismatch,
    NoConvergence,
    RankDeficient,
    SingularSaddle,
)

# Relative diagonal threshold signalling Arnoldi breakdown in thin_qr.
RANK_TOL = 1e-12
# Kahan-Parlett style norm-drop ratio triggering one extra Gram-Schmidt pass.
REORTH_RATIO = 0.7
# |u_ii| / max_j |u_jj| below this flags the factored saddle as singular.
PIVOT_RATIO = 1e-13


@dataclass(frozen=True)
class SaddleFactorization:
    """Sparse LU factors of the block matrix [[W, G], [G^T, 0]].

    ``kind`` labels which leading block was factored ("mass", "stiffness",
    "shifted", "euler"); ``shift`` carries the scalar for shifted blocks.
    The n_p = 0 degenerate case factors W alone.
    """

    kind: str
    n_v: int
    n_p: int
    shift: complex | None = None
    _lu: object = field(default=None, repr=False, compare=False)

    @property
    def is_complex(self):
        return np.issubdtype(self._lu.U.dtype, np.complexfloating)


def factor_saddle(W, G, kind="custom", shift=None):
    """Factor the saddle-point matrix [[W, G], [G^T, 0]] once for reuse.

    Parameters
    ----------
    W : sparse or dense n_v x n_v matrix
        Leading block; the mass matrix, the system matrix, or a shifted
        combination of the two.
    G : sparse or dense n_v x n_p matrix
        Constraint block, full column rank.
    kind, shift
        Metadata stored on the factorization.

    Returns
    -------
    SaddleFactorization

    Raises
    ------
    SingularSaddle
        If the LU factorization fails or a pivot falls below the tiny-pivot
        ratio, signalling a rank-deficient G or a singular projected W.
    """
    W = sp.csc_matrix(W)
    G = sp.csc_matrix(G)
    n_v = W.shape[0]
    if W.shape[0] != W.shape[1]:
        raise DimensionMismatch(f"leading block must be square, got {W.shape}")
    if G.shape[0] != n_v:
        raise DimensionMismatch(
            f"constraint block has {G.shape[0]} rows, expected {n_v}"
        )
    n_p = G.shape[1]
    if n_p == 0:
        K = W
    else:
        K = sp.bmat([[W, G], [G.T, None]], format="csc")
    try:
        lu = splu(K)
    except RuntimeError as exc:
        raise SingularSaddle(f"saddle factorization ({kind}) failed: {exc}") from exc
    d = np.abs(lu.U.diagonal())
    if d.size and d.min() <= PIVOT_RATIO * d.max():
        raise SingularSaddle(
            f"saddle factorization ({kind}) has a tiny pivot "
            f"(ratio {d.min() / d.max():.2e})"
        )
    return SaddleFactorization(kind=kind, n_v=n_v, n_p=n_p, shift=shift, _lu=lu)


def solve_saddle(fact, rhs):
    """Solve [[W, G], [G^T, 0]] [x; *] = [rhs; 0] and return x.

    Only the first n_v rows of the block solve are returned; the
    multiplier block is discarded.  Accepts a vector or an n_v x k
    matrix right-hand side; the result matches the input shape.
    """
    rhs = np.asarray(rhs)
    one_d = rhs.ndim == 1
    if one_d:
        rhs = rhs[:, None]
    if rhs.ndim != 2 or rhs.shape[0] != fact.n_v:
        raise DimensionMismatch(
            f"rhs has shape {rhs.shape}, expected ({fact.n_v}, k)"
        )
    full = np.zeros((fact.n_v + fact.n_p, rhs.shape[1]), dtype=rhs.dtype)
    full[: fact.n_v] = rhs
    if np.iscomplexobj(full) and not fact.is_complex:
        x = fact._lu.solve(full.real) + 1j * fact._lu.solve(full.imag)
    else:
        x = fact._lu.solve(np.asarray(full, dtype=fact._lu.U.dtype))
    x = x[: fact.n_v]
    return x[:, 0] if one_d else x


@dataclass(frozen=True)
class BlockQR:
    """Economy QR factors with the R diagonal forced nonnegative."""

    q: np.ndarray
    r: np.ndarray


def thin_qr(X, rank_scale=None):
    """Economy QR with a deterministic sign convention and rank check.

    The diagonal of R is made nonnegative by column sign flips so bases
    are reproducible across runs.  A diagonal entry below
    ``RANK_TOL * rank_scale`` raises RankDeficient; ``rank_scale``
    defaults to the 2-norm of X and should be set to the
    pre-orthogonalization scale when detecting Arnoldi breakdown.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, k = X.shape
    if n < k:
        raise DimensionMismatch(f"thin_qr needs n >= k, got {X.shape}")
    q, r = la.qr(X, mode="economic")
    flip = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    q = q * flip
    r = flip[:, None] * r
    if rank_scale is None:
        rank_scale = la.norm(X, 2) if X.size else 0.0
    if k and (rank_scale == 0.0 or np.min(np.diag(r)) < RANK_TOL * rank_scale):
        raise RankDeficient(
            f"thin_qr diagonal {np.min(np.diag(r)):.3e} below "
            f"{RANK_TOL:.0e} * {rank_scale:.3e}"
        )
    return BlockQR(q=q, r=r)


def block_gram_schmidt(candidate, existing):
    """Orthogonalize a block against a list of orthonormal blocks.

    One classical Gram-Schmidt pass, with a single reorthogonalization
    applied when any column norm drops by more than REORTH_RATIO.
    Returns the coefficient blocks (one per existing block, second-pass
    corrections accumulated) and the orthogonalized candidate.
    """
    W = np.array(candidate, dtype=float, copy=True)
    if not existing:
        return [], W
    coeffs = []
    before = la.norm(W, axis=0)
    for V in existing:
        h = V.T @ W
        W -= V @ h
        coeffs.append(h)
    after = la.norm(W, axis=0)
    scale = np.where(before > 0.0, before, 1.0)
    if np.any(after < REORTH_RATIO * scale):
        for i, V in enumerate(existing):
            h = V.T @ W
            W -= V @ h
            coeffs[i] += h
    return coeffs, W


def dense_svd(X):
    """Thin SVD wrapper; raises NoConvergence instead of LinAlgError."""
    try:
        return la.svd(np.asarray(X, dtype=float), full_matrices=False)
    except la.LinAlgError as exc:
        raise NoConvergence(f"SVD failed to converge: {exc}") from exc


def dense_schur_real(X, sort=None):
    """Real Schur form X = Q S Q^T with optional eigenvalue reordering.

    Returns (Q, S) or (Q, S, sdim) when ``sort`` is given; ``sort``
    follows scipy conventions ('lhp', 'rhp', or a callable on
    (re, im)).
    """
    try:
        if sort is None:
            S, Q = la.schur(np.asarray(X, dtype=float), output="real")
            return Q, S
        S, Q, sdim = la.schur(np.asarray(X, dtype=float), output="real", sort=sort)
        return Q, S, sdim
    except la.LinAlgError as exc:
        raise NoConvergence(f"Schur decomposition failed: {exc}") from exc


def dense_generalized_eigen(A, B):
    """Generalized eigenvalues of the pencil (A, B) with infinity flags.

    Returns ``(values, finite)`` where ``finite`` marks eigenvalues whose
    beta exceeds 1e-12 * ||B||; the remaining entries of ``values`` are
    set to complex infinity.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    try:
        ab = la.eig(A, B, right=False, homogeneous_eigvals=True)
    except la.LinAlgError as exc:
        raise NoConvergence(f"QZ iteration failed: {exc}") from exc
    alpha, beta = ab[0], ab[1]
    finite = np.abs(beta) > 1e-12 * la.norm(B, 2)
    values = np.full(alpha.shape, np.inf + 0j, dtype=complex)
    values[finite] = alpha[finite] / beta[finite]
    return values, finite
