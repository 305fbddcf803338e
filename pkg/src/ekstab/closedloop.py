"""Stabilized-system machinery: SMW solves, closed-loop reduction, simulation.

The feedback-corrected saddle problems [[W - c B K, G], [G^T, 0]] are
solved with the factorization of the uncorrected block plus a rank-n_b
Sherman-Morrison-Woodbury update, so the dense product B K is never
assembled.  The same correctors drive the closed-loop Arnoldi reduction
and the implicit-Euler time stepping of the index-2 DAE.
"""

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from . import kernels
from .arnoldi import FORWARD, ekba_basis
from .errors import (
    DimensionMismatch,
    InvalidInitialState,
    ParseError,
    SimulationDiverged,
    SingularCapture,
)
from .reduction import STATE_SPACE, build_reduced

_CAPTURE_COND_CAP = 1e12


class _SmwCorrector:
    """Solves [[W - c B K, G], [G^T, 0]] through the factorization of W's block.

    Caches the block solve of B and the n_b x n_b capture matrix
    I - c K W_blk^-1 B; each corrected solve then costs one base solve
    plus a small dense solve.
    """

    def __init__(self, fact, B, K, c):
        self.fact = fact
        self.K = K
        self.c = c
        self.ainv_b = kernels.solve_saddle(fact, B)
        n_b = B.shape[1]
        self.capture = np.eye(n_b) - c * (K @ self.ainv_b)
        # The capture matrix is a perturbation of the identity, so absolute
        # near-singularity matters as much as the condition number.
        sv = la.svdvals(self.capture)
        if sv[-1] <= 1e-12 * max(1.0, sv[0]) or sv[0] > _CAPTURE_COND_CAP * sv[-1]:
            raise SingularCapture(
                f"capture matrix is numerically singular "
                f"(singular values {sv[0]:.2e} .. {sv[-1]:.2e})"
            )
        self.capture_lu = la.lu_factor(self.capture)

    def solve(self, rhs):
        x = kernels.solve_saddle(self.fact, rhs)
        corr = la.lu_solve(self.capture_lu, self.c * (self.K @ x))
        return x + self.ainv_b @ corr


class ClosedLoopSystem:
    """Descriptor system with a low-rank LQR feedback A -> A - B K.

    Holds the base saddle factorizations and the stiffness-block SMW
    corrector eagerly; shifted correctors (implicit Euler, transfer
    shifts) are built per use.  All caches are read-only after
    construction.
    """

    def __init__(self, sys_, gain):
        if gain.n_v != sys_.n_v or gain.n_b != sys_.n_b:
            raise DimensionMismatch(
                f"gain is {gain.n_b} x {gain.n_v}, system needs "
                f"{sys_.n_b} x {sys_.n_v}"
            )
        self.sys = sys_
        self.gain = gain
        self.k_matrix = gain.matrix()
        self.fact_mass = kernels.factor_saddle(sys_.M, sys_.G, kind="mass")
        self.fact_stiff = kernels.factor_saddle(sys_.A, sys_.G, kind="stiffness")
        self.stiff_smw = _SmwCorrector(
            self.fact_stiff, np.asarray(sys_.B, dtype=float), self.k_matrix, 1.0
        )

    def euler_corrector(self, h):
        """Corrector for M - h (A - B K)  =  (M - h A) + h B K."""
        fact = kernels.factor_saddle(
            (self.sys.M - h * self.sys.A).tocsc(), self.sys.G, kind="euler"
        )
        return _SmwCorrector(fact, np.asarray(self.sys.B), self.k_matrix, -h)


def smw_solve(cl, rhs, kind="stiffness", h=None):
    """Feedback-corrected saddle solve returning the first n_v rows.

    ``kind`` selects the corrected leading block: "stiffness" for
    A - B K, "euler" (with step ``h``) for M - h (A - B K).
    """
    if kind == "stiffness":
        return cl.stiff_smw.solve(rhs)
    if kind == "euler":
        if h is None:
            raise DimensionMismatch("euler kind requires the step h")
        return cl.euler_corrector(h).solve(rhs)
    raise DimensionMismatch(f"unknown corrected-block kind {kind!r}")


class _ClosedLoopOps:
    """Operator pair of the stabilized system for the Arnoldi process.

    The forward product applies A - B K through its factors; inverse-
    branch solves are routed through the SMW corrector.  Matches the
    OperatorPair protocol.
    """

    def __init__(self, cl):
        self.cl = cl
        self.sys = cl.sys
        self.start = np.asarray(cl.sys.B, dtype=float)
        self.fact_mass = cl.fact_mass

    @property
    def n_v(self):
        return self.sys.n_v

    def apply(self, X):
        return self.sys.A @ X - self.sys.B @ (self.cl.k_matrix @ X)

    def apply_mass(self, X):
        return self.sys.M @ X

    def solve_mass(self, rhs):
        return kernels.solve_saddle(self.fact_mass, rhs)

    def solve_stiff(self, rhs):
        return self.cl.stiff_smw.solve(rhs)

    def reproject(self, X):
        return kernels.solve_saddle(self.fact_mass, self.apply_mass(X))


def reduce_closed_loop(cl, m, form=STATE_SPACE):
    """Extended Arnoldi reduction of the stabilized system.

    Identical to the open-loop process with A replaced by A - B K
    everywhere; returns the basis and the reduced model.
    """
    basis = ekba_basis(_ClosedLoopOps(cl), m, FORWARD)
    return basis, build_reduced(basis, form)


def constant_input(values):
    """u(t) = values for all t."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    return lambda t: values


def step_input(values, t_on=0.0):
    """u(t) = values once t >= t_on, zero before."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    off = np.zeros_like(values)
    return lambda t: values if t >= t_on else off


def zero_input(n_b):
    off = np.zeros(n_b)
    return lambda t: off


def sampled_input(times, values):
    """Zero-order hold through sample points (zero before the first)."""
    times = np.asarray(times, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    zero = np.zeros(values.shape[1])

    def u(t):
        i = np.searchsorted(times, t, side="right") - 1
        return values[i] if i >= 0 else zero

    return u


def read_input_csv(path):
    """Input signal from a CSV with columns t, u_1..u_nb (zero-order hold)."""
    times, rows = [], []
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or not header or header[0].strip() != "t":
                raise ParseError(f"input CSV {path} must start with a 't' header")
            for row in reader:
                if not row:
                    continue
                times.append(float(row[0]))
                rows.append([float(v) for v in row[1:]])
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read input CSV {path}: {exc}") from exc
    return sampled_input(np.asarray(times), np.asarray(rows))


def _as_signal(u, n_b):
    if u is None:
        return zero_input(n_b)
    if callable(u):
        return u
    values = np.atleast_1d(np.asarray(u, dtype=float))
    if values.size == 1 and n_b > 1:
        values = np.full(n_b, values[0])
    if values.size != n_b:
        raise DimensionMismatch(f"input has {values.size} entries, expected {n_b}")
    return constant_input(values)


@dataclass(frozen=True)
class Trajectory:
    """Uniform-grid simulation record: outputs y(t_k) and applied inputs u(t_k).

    ``states`` holds the velocity iterates when requested, None otherwise.
    """

    times: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    states: np.ndarray | None = None


def simulate_dae(sys_or_cl, u, h, t_end, v0=None, blowup=1e100, keep_states=False):
    """Implicit Euler on the index-2 DAE, one factorization for the run.

    Each step solves the stepping saddle system
    [[M - h A', G], [G^T, 0]] [v_{ k+1 }; *] = [M v_k + h B u_{k+1}; 0]
    with A' = A (open loop) or A - B K (through the SMW corrector); the
    multiplier block is discarded, outputs are y_k = C v_k.  The scaling
    of the constraint blocks does not affect the returned velocity rows.
    """
    closed = isinstance(sys_or_cl, ClosedLoopSystem)
    sys_ = sys_or_cl.sys if closed else sys_or_cl
    if h <= 0 or t_end <= 0:
        raise DimensionMismatch(f"need h > 0 and t_end > 0, got {h}, {t_end}")
    signal = _as_signal(u, sys_.n_b)
    n_steps = int(round(t_end / h))
    times = h * np.arange(n_steps + 1)
    if v0 is None:
        v = np.zeros(sys_.n_v)
    else:
        v = np.asarray(v0, dtype=float).copy()
        gnorm = np.linalg.norm(sys_.G.toarray(), 2) if sys_.n_p else 0.0
        if sys_.n_p and np.linalg.norm(sys_.G.T @ v) > 1e-8 * max(
            np.linalg.norm(v), 1e-30
        ) * max(gnorm, 1e-30):
            raise InvalidInitialState("initial state violates G^T v0 = 0")
    if closed:
        stepper = sys_or_cl.euler_corrector(h)
        solve = stepper.solve
    else:
        fact = kernels.factor_saddle(
            (sys_.M - h * sys_.A).tocsc(), sys_.G, kind="euler"
        )
        solve = lambda rhs: kernels.solve_saddle(fact, rhs)
    outputs = np.empty((n_steps + 1, sys_.n_c))
    inputs = np.empty((n_steps + 1, sys_.n_b))
    states = np.empty((n_steps + 1, sys_.n_v)) if keep_states else None
    outputs[0] = sys_.C @ v
    inputs[0] = signal(times[0])
    if keep_states:
        states[0] = v
    for k in range(1, n_steps + 1):
        uk = signal(times[k])
        rhs = sys_.M @ v + h * (sys_.B @ uk)
        v = solve(rhs)
        if not np.all(np.isfinite(v)) or np.linalg.norm(v) > blowup:
            raise SimulationDiverged(f"state blew up at t = {times[k]:.6g}")
        outputs[k] = sys_.C @ v
        inputs[k] = uk
        if keep_states:
            states[k] = v
    return Trajectory(times=times, outputs=outputs, inputs=inputs, states=states)


def simulate_reduced(model, u, h, t_end, blowup=1e100):
    """Implicit Euler on a reduced model from a zero initial state."""
    if h <= 0 or t_end <= 0:
        raise DimensionMismatch(f"need h > 0 and t_end > 0, got {h}, {t_end}")
    signal = _as_signal(u, model.n_inputs)
    n_steps = int(round(t_end / h))
    times = h * np.arange(n_steps + 1)
    mass = np.eye(model.order) if model.mass is None else model.mass
    lhs = la.lu_factor(mass - h * model.a)
    v = np.zeros(model.order)
    outputs = np.empty((n_steps + 1, model.n_outputs))
    inputs = np.empty((n_steps + 1, model.n_inputs))
    outputs[0] = model.c @ v
    inputs[0] = signal(times[0])
    for k in range(1, n_steps + 1):
        uk = signal(times[k])
        v = la.lu_solve(lhs, mass @ v + h * (model.b @ uk))
        if not np.all(np.isfinite(v)) or np.linalg.norm(v) > blowup:
            raise SimulationDiverged(f"reduced state blew up at t = {times[k]:.6g}")
        outputs[k] = model.c @ v
        inputs[k] = uk
    return Trajectory(times=times, outputs=outputs, inputs=inputs)


def cost_quadrature(traj):
    """Trapezoidal quadrature of (1/2) integral (y^T y + u^T u) dt."""
    integrand = np.sum(traj.outputs**2, axis=1) + np.sum(traj.inputs**2, axis=1)
    if not np.all(np.isfinite(integrand)):
        raise SimulationDiverged("trajectory contains non-finite samples")
    return 0.5 * float(np.trapezoid(integrand, traj.times))


def write_trajectory_csv(path, traj):
    """Columns t, y_1..y_nc, u_1..u_nb; one row per grid point."""
    n_c = traj.outputs.shape[1]
    n_b = traj.inputs.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["t"]
            + [f"y_{i + 1}" for i in range(n_c)]
            + [f"u_{i + 1}" for i in range(n_b)]
        )
        for k, t in enumerate(traj.times):
            writer.writerow(
                [f"{t:.17g}"]
                + [f"{v:.17g}" for v in traj.outputs[k]]
                + [f"{v:.17g}" for v in traj.inputs[k]]
            )
