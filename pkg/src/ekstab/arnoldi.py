"""Extended block Arnoldi process driven by sparse saddle-point solves.

Builds an orthonormal basis of the extended block Krylov subspace of the
projected operator pair without ever forming the dense projector: every
application of the operator or its inverse is one solve against a cached
saddle-point factorization.  Alongside the basis the process accumulates
the Gram-Schmidt Hessenberg matrix and, by explicit projection of the
operator images, the projected-operator Hessenberg matrix (one extra
mass-block solve per step for the inverse-branch columns).
"""

import numpy as np

from . import kernels
from .errors import Breakdown, DimensionMismatch, RankDeficient
from .sysmodel import DescriptorSystem

FORWARD = "forward"
ADJOINT = "adjoint"


class OperatorPair:
    """Saddle-solve realization of the projected operator pair.

    ForwardPair operates with (A, B); AdjointPair with (A^T, C^T).  Both
    saddle factorizations are computed once and reused for every
    iteration.  Any object exposing the same attributes can drive the
    Arnoldi process (the closed-loop module substitutes a feedback-
    corrected variant).
    """

    def __init__(self, sys_, adjoint=False):
        self.sys = sys_
        self.adjoint = adjoint
        self._a = (sys_.A.T if adjoint else sys_.A).tocsc()
        self.start = np.asarray(sys_.C.T if adjoint else sys_.B, dtype=float)
        self.fact_mass = kernels.factor_saddle(sys_.M, sys_.G, kind="mass")
        self.fact_stiff = kernels.factor_saddle(self._a, sys_.G, kind="stiffness")

    @property
    def n_v(self):
        return self.sys.n_v

    def apply(self, X):
        """Matrix product with the (possibly transposed) system matrix."""
        return self._a @ X

    def apply_mass(self, X):
        return self.sys.M @ X

    def solve_mass(self, rhs):
        return kernels.solve_saddle(self.fact_mass, rhs)

    def solve_stiff(self, rhs):
        return kernels.solve_saddle(self.fact_stiff, rhs)

    def reproject(self, X):
        """Constraint cleanup via one mass-block solve: X -> M^-1 Pi M X.

        The identity Pi M = M Pi^T makes this the oblique projection onto
        the constraint manifold, an exact no-op on blocks that already
        satisfy G^T X = 0; applying it after Gram-Schmidt cancellation
        keeps the off-manifold rounding noise from being amplified when a
        nearly exhausted candidate block is normalized.
        """
        return kernels.solve_saddle(self.fact_mass, self.apply_mass(X))


class ExtendedBasis:
    """Orthonormal blocks plus Hessenberg data from the extended Arnoldi process.

    ``blocks[j]`` is the j-th n_v x 2b orthonormal block; ``m`` counts the
    blocks, so the projection space of order k uses the first k blocks.
    ``lam`` is the 2b x 2b triangular factor of the initial QR.  The
    projected-operator columns are stored per step and assembled on
    demand into the square or rectangular block Hessenberg matrix.
    """

    def __init__(self, ops, mode, blocks, lam):
        self.ops = ops
        self.mode = mode
        self.blocks = blocks
        self.lam = lam
        self.hcols = []
        self.tcols = []
        self.breakdown_at = None

    @property
    def m(self):
        return len(self.blocks)

    @property
    def width(self):
        """Block width 2b."""
        return self.blocks[0].shape[1]

    @property
    def lam11(self):
        b = self.width // 2
        return self.lam[:b, :b]

    def V(self, m=None):
        """The orthonormal matrix formed by the first m blocks."""
        m = self.m if m is None else m
        if not 1 <= m <= self.m:
            raise DimensionMismatch(f"basis holds {self.m} blocks, requested {m}")
        return np.column_stack(self.blocks[:m])

    def steps_completed(self):
        return len(self.tcols)

    def Tbar(self, m=None):
        """Rectangular projected-operator Hessenberg, 2(m+1)b x 2mb."""
        m = min(self.steps_completed(), self.m - 1) if m is None else m
        if m > self.steps_completed() or m + 1 > self.m:
            raise DimensionMismatch(
                f"Tbar({m}) needs {m} completed steps and {m + 1} blocks; "
                f"have {self.steps_completed()} and {self.m}"
            )
        w = self.width
        tbar = np.zeros(((m + 1) * w, m * w))
        for j in range(m):
            col = self.tcols[j]
            tbar[: col.shape[0], j * w : (j + 1) * w] = col[:, :]
        return tbar

    def Tm(self, m=None):
        """Square leading block of the projected-operator Hessenberg."""
        m = self.steps_completed() if m is None else m
        if m > self.steps_completed():
            raise DimensionMismatch(
                f"Tm({m}) needs {m} completed steps, have {self.steps_completed()}"
            )
        w = self.width
        t = np.zeros((m * w, m * w))
        for j in range(m):
            col = self.tcols[j]
            rows = min(col.shape[0], m * w)
            t[:rows, j * w : (j + 1) * w] = col[:rows, :]
        return t

    def t_next(self, m):
        """Subdiagonal continuation block T_{m+1,m}; zero after breakdown."""
        w = self.width
        col = self.tcols[m - 1]
        if col.shape[0] < (m + 1) * w:
            return np.zeros((w, w))
        return col[m * w : (m + 1) * w, :]

    def H(self, m=None):
        """Gram-Schmidt coefficient Hessenberg, 2(m+1)b x 2mb."""
        m = self.steps_completed() if m is None else m
        if m > len(self.hcols):
            raise DimensionMismatch(f"H({m}) exceeds {len(self.hcols)} step columns")
        w = self.width
        h = np.zeros(((m + 1) * w, m * w))
        for j in range(m):
            col = self.hcols[j]
            h[: col.shape[0], j * w : (j + 1) * w] = col
        return h


def ekba_init(source, mode=FORWARD):
    """Run the starting saddle solves and first QR of the Arnoldi process.

    ``source`` is a DescriptorSystem or a prebuilt operator pair.  The two
    start blocks solve [[M, G], [G^T, 0]] [x; *] = [S; 0] and
    [[A, G], [G^T, 0]] [x; *] = [S; 0] with S the input map (the output
    map transposed in adjoint mode); their joint QR yields the first
    basis block and the triangular factor reused throughout.
    """
    if isinstance(source, DescriptorSystem):
        ops = OperatorPair(source, adjoint=(mode == ADJOINT))
    else:
        ops = source
    s = ops.start
    v1 = ops.solve_mass(s)
    v2 = ops.solve_stiff(s)
    first = np.column_stack([v1, v2])
    qr = kernels.thin_qr(first)
    return ExtendedBasis(ops=ops, mode=mode, blocks=[qr.q], lam=qr.r)


def ekba_step(basis):
    """Advance the process by one block, updating the Hessenberg data in place.

    The forward branch solves the mass-block saddle with right-hand side
    A V_j^(1); the inverse branch solves the stiffness-block saddle with
    right-hand side M V_j^(2).  The same mass-block solve also carries
    A V_j^(2), whose projection supplies the operator-Hessenberg column.
    On a rank-deficient candidate the step raises Breakdown after
    recording that column, so the square projected operator of the basis
    built so far stays available.
    """
    if basis.breakdown_at is not None:
        raise Breakdown(
            f"process already broke down at step {basis.breakdown_at}",
            iteration=basis.breakdown_at,
        )
    j = basis.m
    vj = basis.blocks[-1]
    b = basis.width // 2
    images = basis.ops.solve_mass(basis.ops.apply(vj))
    inverse = basis.ops.solve_stiff(basis.ops.apply_mass(vj[:, b:]))
    cand = np.column_stack([images[:, :b], inverse])
    scale = np.linalg.norm(cand, 2)
    coeffs, w = kernels.block_gram_schmidt(cand, basis.blocks)
    w = basis.ops.reproject(w)
    extra, w = kernels.block_gram_schmidt(w, basis.blocks)
    for h, dh in zip(coeffs, extra):
        h += dh
    try:
        qr = kernels.thin_qr(w, rank_scale=scale)
    except RankDeficient as exc:
        basis.tcols.append(basis.V(j).T @ images)
        basis.breakdown_at = j
        raise Breakdown(
            f"rank-deficient candidate block at step {j}", iteration=j
        ) from exc
    basis.blocks.append(qr.q)
    basis.hcols.append(np.vstack(coeffs + [qr.r]) if coeffs else qr.r)
    basis.tcols.append(basis.V(j + 1).T @ images)
    return basis


def ekba_basis(source, m, mode=FORWARD, allow_breakdown=True):
    """Initialize and run ``m`` Arnoldi steps, tolerating exhaustion.

    Returns a basis with up to m+1 blocks.  When the subspace exhausts
    before the requested order, the basis built so far is returned with
    ``breakdown_at`` set (or Breakdown propagates if not allowed).
    """
    basis = ekba_init(source, mode)
    for _ in range(m):
        try:
            ekba_step(basis)
        except Breakdown:
            if not allow_breakdown:
                raise
            break
    return basis


def assemble_T(basis, m=None):
    """Rectangular block Hessenberg of the projected operator (see Tbar)."""
    return basis.Tbar(m)


def projected_input(basis, m=None):
    """Projected input map [Lambda^{11}; 0; ...; 0] of the reduced systems.

    Equals V_m^T M^-1 Pi S with S the start block, by the triangular
    structure of the initial QR; no product with the system matrices is
    performed.
    """
    m = basis.m if m is None else m
    if m < 1 or m > basis.m:
        raise DimensionMismatch(f"projected_input order {m} out of range")
    b = basis.width // 2
    out = np.zeros((m * basis.width, b))
    out[:b] = basis.lam11
    return out
