"""State-space models and linear fractional transformation (LFT) algebra.

Continuous-time real state-space systems, two-channel partitioned systems,
the Redheffer star product, and loop-closure operations for repeated-scalar
parametric uncertainty and structured controllers.

Conventions
-----------
An uncertain design plant carries three input/output channel pairs, ordered

    inputs  = (p, w, u)   uncertainty / performance / control
    outputs = (q, z, y)   uncertainty / performance / measurement

The uncertainty loop is closed on top (``p = Delta q``), the controller loop
at the bottom (``u = K y``).  Parameters are normalized so that ``delta = 0``
is the nominal plant and the uncertainty box is ``[-1, 1]^m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import AlgebraicLoopError, DimensionError, WellPosednessError

__all__ = [
    "StateSpace",
    "PartitionedSystem",
    "Plant",
    "UncertainClosedLoop",
    "ClosedLoopChannels",
    "UncertaintyStructure",
    "ControllerStructure",
    "star_product",
    "build_delta_matrix",
    "realize_controller",
    "close_controller",
    "close_uncertainty",
    "closed_loop_a",
]

#: Relative singular-value cutoff below which an algebraic loop is singular.
SINGULARITY_RTOL = 1e-12


def _as_matrix(x, rows=None, cols=None, name="matrix"):
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        a = np.atleast_2d(a)
    if a.size == 0 and rows is not None and cols is not None:
        a = a.reshape(rows, cols)
    if rows is not None and a.shape[0] != rows:
        raise DimensionError(f"{name}: expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise DimensionError(f"{name}: expected {cols} columns, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise DimensionError(f"{name}: entries must be finite")
    return a


def _solve_loop(x, rhs, context):
    """Solve ``x @ out = rhs`` guarding against a near-singular loop matrix."""
    if x.shape[0] == 0:
        return rhs
    svals = np.linalg.svd(x, compute_uv=False)
    smax = svals[0] if len(svals) else 0.0
    smin = svals[-1] if len(svals) else 0.0
    if smax == 0.0 or smin < SINGULARITY_RTOL * smax:
        raise AlgebraicLoopError(
            f"algebraic loop not well-posed while {context} "
            f"(min singular value {smin:.3e})",
            min_singular_value=smin,
        )
    return np.linalg.solve(x, rhs)


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Real continuous-time state-space model ``(A, B, C, D)``.

    Zero-state (purely static) models are allowed: ``A`` is then ``0 x 0``
    and the model reduces to the gain ``D``.  Arrays are normalized to
    two-dimensional float arrays and must not be mutated after construction.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, name="A")
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        n = A.shape[0]
        D = _as_matrix(self.D, name="D")
        p, m = D.shape
        B = _as_matrix(self.B, rows=n, cols=m, name="B")
        C = _as_matrix(self.C, rows=p, cols=n, name="C")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @classmethod
    def static(cls, D):
        """Wrap a constant gain matrix as a zero-state model."""
        D = np.atleast_2d(np.asarray(D, dtype=float))
        n0 = np.zeros((0, 0))
        return cls(n0, np.zeros((0, D.shape[1])), np.zeros((D.shape[0], 0)), D)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.D.shape[1]

    @property
    def n_outputs(self):
        return self.D.shape[0]

    @property
    def is_static(self):
        return self.n_states == 0

    def poles(self):
        return np.linalg.eigvals(self.A)

    def freq_response(self, omega):
        """Frequency response ``C (jw I - A)^-1 B + D`` at a single frequency.

        ``omega = inf`` returns the feedthrough ``D`` (the high-frequency
        limit), which makes the frequency axis ``[0, inf]`` usable as a
        compact domain.
        """
        if self.n_states == 0 or np.isinf(omega):
            return self.D.astype(complex)
        s = 1j * float(omega)
        resolvent = np.linalg.solve(s * np.eye(self.n_states) - self.A, self.B)
        return self.C @ resolvent + self.D


@dataclass(frozen=True, eq=False)
class PartitionedSystem:
    """State-space model with inputs and outputs split into two channels.

    Channel 1 comes first in the input/output ordering.  Widths may be zero,
    which is how single-channel systems are embedded for the star product.
    """

    sys: StateSpace
    in1: int
    in2: int
    out1: int
    out2: int

    def __post_init__(self):
        if min(self.in1, self.in2, self.out1, self.out2) < 0:
            raise DimensionError("channel widths must be nonnegative")
        if self.in1 + self.in2 != self.sys.n_inputs:
            raise DimensionError(
                f"input channel widths {self.in1}+{self.in2} != {self.sys.n_inputs}"
            )
        if self.out1 + self.out2 != self.sys.n_outputs:
            raise DimensionError(
                f"output channel widths {self.out1}+{self.out2} != {self.sys.n_outputs}"
            )

    # Block accessors use the conventional 2x2 names.
    @property
    def A(self):
        return self.sys.A

    @property
    def B1(self):
        return self.sys.B[:, : self.in1]

    @property
    def B2(self):
        return self.sys.B[:, self.in1 :]

    @property
    def C1(self):
        return self.sys.C[: self.out1, :]

    @property
    def C2(self):
        return self.sys.C[self.out1 :, :]

    @property
    def D11(self):
        return self.sys.D[: self.out1, : self.in1]

    @property
    def D12(self):
        return self.sys.D[: self.out1, self.in1 :]

    @property
    def D21(self):
        return self.sys.D[self.out1 :, : self.in1]

    @property
    def D22(self):
        return self.sys.D[self.out1 :, self.in1 :]

    def subsystem(self, out_channel, in_channel):
        """Extract one channel pair as a StateSpace (shares the A matrix)."""
        rows = slice(0, self.out1) if out_channel == 1 else slice(self.out1, None)
        cols = slice(0, self.in1) if in_channel == 1 else slice(self.in1, None)
        return StateSpace(self.sys.A, self.sys.B[:, cols], self.sys.C[rows, :], self.sys.D[rows, cols])

    def freq_blocks(self, omega):
        """Frequency response split into the four channel blocks."""
        F = self.sys.freq_response(omega)
        return (
            F[: self.out1, : self.in1],
            F[: self.out1, self.in1 :],
            F[self.out1 :, : self.in1],
            F[self.out1 :, self.in1 :],
        )


def two_port_static(D11, D12, D21, D22):
    """Assemble a static 2x2 partitioned system from its four gain blocks."""
    D11 = np.atleast_2d(np.asarray(D11, dtype=float))
    D12 = np.atleast_2d(np.asarray(D12, dtype=float))
    D21 = np.atleast_2d(np.asarray(D21, dtype=float))
    D22 = np.atleast_2d(np.asarray(D22, dtype=float))
    top = np.hstack([D11, D12])
    bot = np.hstack([D21, D22])
    sys = StateSpace.static(np.vstack([top, bot]))
    return PartitionedSystem(sys, D11.shape[1], D12.shape[1], D11.shape[0], D21.shape[0])


def _wrap_upper_block(block: StateSpace) -> PartitionedSystem:
    """Embed a system as channel 2 only, for use as a star-product upper factor."""
    return PartitionedSystem(block, 0, block.n_inputs, 0, block.n_outputs)


def _wrap_lower_block(block: StateSpace) -> PartitionedSystem:
    """Embed a system as channel 1 only, for use as a star-product lower factor."""
    return PartitionedSystem(block, block.n_inputs, 0, block.n_outputs, 0)


def star_product(upper: PartitionedSystem, lower: PartitionedSystem) -> PartitionedSystem:
    """Redheffer star product of two partitioned systems.

    The second channel of ``upper`` is connected in feedback with the first
    channel of ``lower``: upper channel-2 outputs drive lower channel-1
    inputs and vice versa.  The result keeps ``upper``'s channel 1 as its
    first channel and ``lower``'s channel 2 as its second channel, with the
    state vector stacked as (upper states, lower states).

    Raises
    ------
    DimensionError
        If the interconnected channel widths do not match.
    AlgebraicLoopError
        If the static loop ``I - D22_upper @ D11_lower`` is singular
        (minimum singular value below ``1e-12`` times the maximum).
    """
    if upper.in2 != lower.out1:
        raise DimensionError(
            f"upper channel-2 input width {upper.in2} != lower channel-1 output width {lower.out1}"
        )
    if upper.out2 != lower.in1:
        raise DimensionError(
            f"upper channel-2 output width {upper.out2} != lower channel-1 input width {lower.in1}"
        )

    As, Bt = upper.sys.A, lower.sys.A
    Bs1, Bs2 = upper.B1, upper.B2
    Cs1, Cs2 = upper.C1, upper.C2
    Ds11, Ds12, Ds21, Ds22 = upper.D11, upper.D12, upper.D21, upper.D22
    At = lower.sys.A
    Bt1, Bt2 = lower.B1, lower.B2
    Ct1, Ct2 = lower.C1, lower.C2
    Dt11, Dt12, Dt21, Dt22 = lower.D11, lower.D12, lower.D21, lower.D22

    loop = np.eye(upper.out2) - Ds22 @ Dt11
    if loop.shape[0]:
        svals = np.linalg.svd(loop, compute_uv=False)
        if svals[0] == 0.0 or svals[-1] < SINGULARITY_RTOL * svals[0]:
            raise AlgebraicLoopError(
                "algebraic loop not well-posed in star product "
                f"(min singular value {svals[-1]:.3e})",
                min_singular_value=svals[-1],
            )

    # Eu = (I - Dt11 Ds22)^-1 acts on the u2 loop signal, Ev on the v1 signal.
    iu = np.eye(upper.in2)
    iv = np.eye(lower.in1)
    Eu = _solve_loop(iu - Dt11 @ Ds22, iu, "star product")
    Ev = _solve_loop(iv - Ds22 @ Dt11, iv, "star product")

    ns, nt = As.shape[0], At.shape[0]
    n = ns + nt
    m = upper.in1 + lower.in2
    p = upper.out1 + lower.out2

    A = np.zeros((n, n))
    A[:ns, :ns] = As + Bs2 @ Eu @ Dt11 @ Cs2
    A[:ns, ns:] = Bs2 @ Eu @ Ct1
    A[ns:, :ns] = Bt1 @ Ev @ Cs2
    A[ns:, ns:] = At + Bt1 @ Ds22 @ Eu @ Ct1

    B = np.zeros((n, m))
    B[:ns, : upper.in1] = Bs1 + Bs2 @ Eu @ Dt11 @ Ds21
    B[:ns, upper.in1 :] = Bs2 @ Eu @ Dt12
    B[ns:, : upper.in1] = Bt1 @ Ev @ Ds21
    B[ns:, upper.in1 :] = Bt2 + Bt1 @ Ds22 @ Eu @ Dt12

    C = np.zeros((p, n))
    C[: upper.out1, :ns] = Cs1 + Ds12 @ Eu @ Dt11 @ Cs2
    C[: upper.out1, ns:] = Ds12 @ Eu @ Ct1
    C[upper.out1 :, :ns] = Dt21 @ Ev @ Cs2
    C[upper.out1 :, ns:] = Ct2 + Dt21 @ Ds22 @ Eu @ Ct1

    D = np.zeros((p, m))
    D[: upper.out1, : upper.in1] = Ds11 + Ds12 @ Eu @ Dt11 @ Ds21
    D[: upper.out1, upper.in1 :] = Ds12 @ Eu @ Dt12
    D[upper.out1 :, : upper.in1] = Dt21 @ Ev @ Ds21
    D[upper.out1 :, upper.in1 :] = Dt22 + Dt21 @ Ds22 @ Eu @ Dt12

    sys = StateSpace(A, B, C, D)
    return PartitionedSystem(sys, upper.in1, lower.in2, upper.out1, lower.out2)


def close_upper(ps: PartitionedSystem, block: StateSpace) -> StateSpace:
    """Close channel 1 of ``ps`` with ``block`` (upper LFT), keep channel 2."""
    closed = star_product(_wrap_upper_block(block), ps)
    return closed.subsystem(2, 2)


def close_lower(ps: PartitionedSystem, block: StateSpace) -> StateSpace:
    """Close channel 2 of ``ps`` with ``block`` (lower LFT), keep channel 1."""
    closed = star_product(ps, _wrap_lower_block(block))
    return closed.subsystem(1, 1)


# ---------------------------------------------------------------------------
# Uncertainty structure


@dataclass(frozen=True)
class UncertaintyStructure:
    """Repeated-scalar diagonal uncertainty ``Delta = diag(delta_i * I_ri)``.

    ``block_sizes[i]`` is the repetition count of the i-th real parameter.
    The normalized parameter box is ``[-1, 1]^m``.
    """

    block_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(r) for r in self.block_sizes)
        if len(sizes) == 0 or any(r < 1 for r in sizes):
            raise DimensionError("block sizes must be positive integers")
        object.__setattr__(self, "block_sizes", sizes)

    @property
    def n_params(self):
        return len(self.block_sizes)

    @property
    def n_delta(self):
        """Total width of the uncertainty channel."""
        return sum(self.block_sizes)

    @property
    def block_slices(self):
        out = []
        start = 0
        for r in self.block_sizes:
            out.append(slice(start, start + r))
            start += r
        return out

    def check_delta(self, delta):
        d = np.asarray(delta, dtype=float).reshape(-1)
        if d.shape[0] != self.n_params:
            raise DimensionError(
                f"delta has {d.shape[0]} entries, structure expects {self.n_params}"
            )
        if not np.all(np.isfinite(d)):
            raise DimensionError("delta entries must be finite")
        return d

    def expand(self, values):
        """Repeat per-parameter values along the uncertainty channel diagonal."""
        v = np.asarray(values, dtype=float).reshape(-1)
        return np.repeat(v, self.block_sizes)


def build_delta_matrix(structure: UncertaintyStructure, delta) -> np.ndarray:
    """Diagonal uncertainty matrix for a parameter vector.

    Linear in ``delta``: ``Delta(a x + b y) = a Delta(x) + b Delta(y)``.
    """
    d = structure.check_delta(delta)
    return np.diag(structure.expand(d))


# ---------------------------------------------------------------------------
# Plant with three channel pairs


@dataclass(frozen=True, eq=False)
class Plant:
    """Design plant with uncertainty, performance, and control channels.

    Inputs are ordered ``(p, w, u)`` and outputs ``(q, z, y)``.  The widths
    of the ``p`` and ``q`` channels must agree (square uncertainty loop).
    """

    sys: StateSpace
    n_delta: int
    n_perf_in: int
    n_ctrl_in: int
    n_perf_out: int
    n_meas_out: int

    def __post_init__(self):
        if self.n_delta + self.n_perf_in + self.n_ctrl_in != self.sys.n_inputs:
            raise DimensionError("plant input channel widths do not sum to input count")
        if self.n_delta + self.n_perf_out + self.n_meas_out != self.sys.n_outputs:
            raise DimensionError("plant output channel widths do not sum to output count")

    @classmethod
    def from_blocks(cls, A, Bp, Bw, Bu, Cq, Cz, Cy, D):
        """Assemble from the nine-block form.

        ``D`` is a mapping with keys ``qp, qw, qu, zp, zw, zu, yp, yw, yu``.
        """
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]

        def blk(x, rows, cols, name):
            if x is None:
                return np.zeros((rows, cols))
            return _as_matrix(x, rows=rows, cols=cols, name=name)

        def chan(x, name):
            a = np.asarray(x, dtype=float)
            if a.ndim != 2:
                a = np.atleast_2d(a)
            if not np.all(np.isfinite(a)):
                raise DimensionError(f"{name}: entries must be finite")
            return a

        Bp, Bw, Bu = chan(Bp, "Bp"), chan(Bw, "Bw"), chan(Bu, "Bu")
        Cq, Cz, Cy = chan(Cq, "Cq"), chan(Cz, "Cz"), chan(Cy, "Cy")
        for name, mat in (("Bp", Bp), ("Bw", Bw), ("Bu", Bu)):
            if mat.shape[0] != n:
                raise DimensionError(f"{name}: expected {n} rows, got {mat.shape[0]}")
        for name, mat in (("Cq", Cq), ("Cz", Cz), ("Cy", Cy)):
            if mat.shape[1] != n:
                raise DimensionError(f"{name}: expected {n} columns, got {mat.shape[1]}")
        nd, mw, mu = Bp.shape[1], Bw.shape[1], Bu.shape[1]
        pq, pz, py = Cq.shape[0], Cz.shape[0], Cy.shape[0]
        if pq != nd:
            raise DimensionError(f"uncertainty channel not square: p width {nd}, q width {pq}")
        Drow_q = np.hstack([blk(D.get("qp"), pq, nd, "Dqp"), blk(D.get("qw"), pq, mw, "Dqw"), blk(D.get("qu"), pq, mu, "Dqu")])
        Drow_z = np.hstack([blk(D.get("zp"), pz, nd, "Dzp"), blk(D.get("zw"), pz, mw, "Dzw"), blk(D.get("zu"), pz, mu, "Dzu")])
        Drow_y = np.hstack([blk(D.get("yp"), py, nd, "Dyp"), blk(D.get("yw"), py, mw, "Dyw"), blk(D.get("yu"), py, mu, "Dyu")])
        sys = StateSpace(
            A,
            np.hstack([Bp, Bw, Bu]),
            np.vstack([Cq, Cz, Cy]),
            np.vstack([Drow_q, Drow_z, Drow_y]),
        )
        return cls(sys, nd, mw, mu, pz, py)

    @property
    def n_states(self):
        return self.sys.n_states

    def control_view(self) -> PartitionedSystem:
        """Partition as ((p, w), u) -> ((q, z), y) for closing the controller."""
        return PartitionedSystem(
            self.sys,
            self.n_delta + self.n_perf_in,
            self.n_ctrl_in,
            self.n_delta + self.n_perf_out,
            self.n_meas_out,
        )

    def uncertainty_view(self) -> PartitionedSystem:
        """Partition as (p, (w, u)) -> (q, (z, y)) for closing the uncertainty."""
        return PartitionedSystem(
            self.sys,
            self.n_delta,
            self.n_perf_in + self.n_ctrl_in,
            self.n_delta,
            self.n_perf_out + self.n_meas_out,
        )


# ---------------------------------------------------------------------------
# Controller structure


@dataclass(frozen=True, eq=False)
class ControllerStructure:
    """Structured controller parametrization, affine in the free parameters.

    The controller ``K(s) = C_K (sI - A_K)^-1 B_K + D_K`` of fixed order
    ``n_states`` reads its free entries from a parameter vector ``kappa``.
    Boolean masks mark free entries; fixed entries keep the values given in
    the companion arrays.  Packing order of ``kappa`` is row-major over
    ``A_K``, then ``B_K``, then ``C_K``, then ``D_K``.
    """

    n_states: int
    n_meas: int
    n_ctrl: int
    free_A: np.ndarray
    free_B: np.ndarray
    free_C: np.ndarray
    free_D: np.ndarray
    fixed_A: np.ndarray
    fixed_B: np.ndarray
    fixed_C: np.ndarray
    fixed_D: np.ndarray

    def __post_init__(self):
        nk, ny, nu = self.n_states, self.n_meas, self.n_ctrl
        if nk < 0 or ny < 1 or nu < 1:
            raise DimensionError("controller needs nonnegative order, >=1 measurement and control")
        shapes = {
            "A": (nk, nk),
            "B": (nk, ny),
            "C": (nu, nk),
            "D": (nu, ny),
        }
        for name, shape in shapes.items():
            free = np.asarray(getattr(self, "free_" + name), dtype=bool).reshape(shape)
            fixed = np.asarray(getattr(self, "fixed_" + name), dtype=float).reshape(shape)
            object.__setattr__(self, "free_" + name, free)
            object.__setattr__(self, "fixed_" + name, fixed)

    @classmethod
    def full_order(cls, n_states, n_meas, n_ctrl):
        """All controller entries free (dense structured controller)."""
        nk = n_states
        return cls(
            nk, n_meas, n_ctrl,
            np.ones((nk, nk), bool), np.ones((nk, n_meas), bool),
            np.ones((n_ctrl, nk), bool), np.ones((n_ctrl, n_meas), bool),
            np.zeros((nk, nk)), np.zeros((nk, n_meas)),
            np.zeros((n_ctrl, nk)), np.zeros((n_ctrl, n_meas)),
        )

    @classmethod
    def static_gain(cls, n_meas, n_ctrl):
        """Order-zero controller: a free static gain ``D_K``."""
        return cls.full_order(0, n_meas, n_ctrl)

    @classmethod
    def tridiagonal(cls, n_states, n_meas, n_ctrl):
        """Full structure except ``A_K`` restricted to its tridiagonal band."""
        base = cls.full_order(n_states, n_meas, n_ctrl)
        free_A = np.zeros((n_states, n_states), bool)
        for i in range(n_states):
            for j in range(max(0, i - 1), min(n_states, i + 2)):
                free_A[i, j] = True
        return cls(
            n_states, n_meas, n_ctrl,
            free_A, base.free_B, base.free_C, base.free_D,
            base.fixed_A, base.fixed_B, base.fixed_C, base.fixed_D,
        )

    @classmethod
    def pid(cls, filter_time_constant=0.1):
        """SISO PID template with a filtered derivative.

        Order-2 structure with the integrator and filter poles fixed at
        ``0`` and ``-1/tau``; the injection and output entries are free.
        """
        tau = float(filter_time_constant)
        if tau <= 0:
            raise DimensionError("filter time constant must be positive")
        fixed_A = np.array([[0.0, 0.0], [0.0, -1.0 / tau]])
        return cls(
            2, 1, 1,
            np.zeros((2, 2), bool), np.ones((2, 1), bool),
            np.ones((1, 2), bool), np.ones((1, 1), bool),
            fixed_A, np.zeros((2, 1)), np.zeros((1, 2)), np.zeros((1, 1)),
        )

    @property
    def n_params(self):
        return int(self.free_A.sum() + self.free_B.sum() + self.free_C.sum() + self.free_D.sum())

    def _blocks(self, kappa):
        kappa = np.asarray(kappa, dtype=float).reshape(-1)
        if kappa.shape[0] != self.n_params:
            raise DimensionError(
                f"kappa has {kappa.shape[0]} entries, structure expects {self.n_params}"
            )
        out = []
        pos = 0
        for free, fixed in (
            (self.free_A, self.fixed_A),
            (self.free_B, self.fixed_B),
            (self.free_C, self.fixed_C),
            (self.free_D, self.fixed_D),
        ):
            block = fixed.copy()
            count = int(free.sum())
            block[free] = kappa[pos : pos + count]
            pos += count
            out.append(block)
        return out

    def kmat(self, kappa):
        """Controller data as the single gain ``[[A_K, B_K], [C_K, D_K]]``."""
        Ak, Bk, Ck, Dk = self._blocks(kappa)
        nk = self.n_states
        out = np.zeros((nk + self.n_ctrl, nk + self.n_meas))
        out[:nk, :nk] = Ak
        out[:nk, nk:] = Bk
        out[nk:, :nk] = Ck
        out[nk:, nk:] = Dk
        return out

    def grad_to_kappa(self, kmat_grad):
        """Project a gradient with respect to the full controller gain onto kappa."""
        nk = self.n_states
        G = np.asarray(kmat_grad, dtype=float)
        gA = G[:nk, :nk]
        gB = G[:nk, nk:]
        gC = G[nk:, :nk]
        gD = G[nk:, nk:]
        return np.concatenate([
            gA[self.free_A], gB[self.free_B], gC[self.free_C], gD[self.free_D],
        ])


def realize_controller(structure: ControllerStructure, kappa) -> StateSpace:
    """Realize the controller state-space model for a parameter vector.

    The map ``kappa -> (A_K, B_K, C_K, D_K)`` is affine with unit
    coefficients: each free entry is a single parameter, fixed entries are
    constants.
    """
    Ak, Bk, Ck, Dk = structure._blocks(kappa)
    return StateSpace(Ak, Bk, Ck, Dk)


# ---------------------------------------------------------------------------
# Loop closure


@dataclass(frozen=True, eq=False)
class UncertainClosedLoop:
    """Controller loop closed, uncertainty channel still open.

    Wraps a partitioned system with the uncertainty channel first,
    ``(p, w) -> (q, z)``.
    """

    ps: PartitionedSystem

    def __post_init__(self):
        if self.ps.in1 != self.ps.out1:
            raise DimensionError(
                f"uncertainty channel must be square, got {self.ps.in1} x {self.ps.out1}"
            )

    @property
    def n_delta(self):
        return self.ps.in1

    @property
    def n_states(self):
        return self.ps.sys.n_states

    # State-space blocks of the uncertainty LFT A(delta) = AA + Bp D (I - Dqp D)^-1 Cq.
    @property
    def AA(self):
        return self.ps.sys.A

    @property
    def Bp(self):
        return self.ps.B1

    @property
    def Bw(self):
        return self.ps.B2

    @property
    def Cq(self):
        return self.ps.C1

    @property
    def Cz(self):
        return self.ps.C2

    @property
    def Dqp(self):
        return self.ps.D11

    @property
    def Dqw(self):
        return self.ps.D12

    @property
    def Dzp(self):
        return self.ps.D21

    @property
    def Dzw(self):
        return self.ps.D22


@dataclass(frozen=True, eq=False)
class ClosedLoopChannels:
    """Transfer models after closing the uncertainty loop at a parameter point.

    ``t_zw`` is the performance channel; ``t_qw`` and ``t_zp`` are the
    half-closed maps used by subgradient formulas.  ``combined`` holds all
    blocks in one partitioned system sharing a single state matrix.
    """

    t_zw: StateSpace
    t_qw: StateSpace
    t_zp: StateSpace
    combined: PartitionedSystem


def close_controller(plant: Plant, controller: StateSpace) -> UncertainClosedLoop:
    """Close the control channel ``u = K y`` of the plant.

    Returns the closed loop with the uncertainty channel first and the
    performance channel second.  Raises a well-posedness error if the
    control loop ``I - D_yu D_K`` is singular.
    """
    if controller.n_inputs != plant.n_meas_out or controller.n_outputs != plant.n_ctrl_in:
        raise DimensionError(
            f"controller is {controller.n_outputs} x {controller.n_inputs}, plant control "
            f"channels are {plant.n_ctrl_in} x {plant.n_meas_out}"
        )
    try:
        closed = close_lower(plant.control_view(), controller)
    except AlgebraicLoopError as exc:
        raise WellPosednessError(
            f"control loop ill-posed: {exc}", exc.min_singular_value
        ) from exc
    ps = PartitionedSystem(closed, plant.n_delta, plant.n_perf_in, plant.n_delta, plant.n_perf_out)
    return UncertainClosedLoop(ps)


def close_uncertainty(M: UncertainClosedLoop, structure: UncertaintyStructure, delta) -> ClosedLoopChannels:
    """Close the uncertainty loop ``p = Delta(delta) q`` of a closed loop.

    Computed as the star product of the constant two-port
    ``[[0, I], [I, Delta]]`` with ``M``, so that the returned blocks are
    ``[[*, T_qw], [T_zp, T_zw]]``.  Requires ``I - Delta Dqp`` nonsingular.
    """
    if structure.n_delta != M.n_delta:
        raise DimensionError(
            f"structure width {structure.n_delta} != closed-loop uncertainty width {M.n_delta}"
        )
    Delta = build_delta_matrix(structure, delta)
    nd = M.n_delta
    eye = np.eye(nd)
    two_port = two_port_static(np.zeros((nd, nd)), eye, eye, Delta)
    try:
        combined = star_product(two_port, M.ps)
    except AlgebraicLoopError as exc:
        raise WellPosednessError(
            f"uncertainty loop ill-posed at delta={np.asarray(delta).tolist()}: {exc}",
            exc.min_singular_value,
        ) from exc
    return ClosedLoopChannels(
        t_zw=combined.subsystem(2, 2),
        t_qw=combined.subsystem(1, 2),
        t_zp=combined.subsystem(2, 1),
        combined=combined,
    )


def closed_loop_a(M: UncertainClosedLoop, structure: UncertaintyStructure, delta) -> np.ndarray:
    """Closed-loop state matrix ``A(delta) = AA + Bp Delta (I - Dqp Delta)^-1 Cq``.

    Agrees with the state matrix produced by :func:`close_uncertainty` and
    reduces to ``AA`` at ``delta = 0``.
    """
    d = structure.check_delta(delta)
    Delta = np.diag(structure.expand(d))
    X = np.eye(M.n_delta) - M.Dqp @ Delta
    try:
        inner = _solve_loop(X, M.Cq, f"closing uncertainty at delta={d.tolist()}")
    except AlgebraicLoopError as exc:
        raise WellPosednessError(
            f"uncertainty loop ill-posed at delta={d.tolist()}: {exc}",
            exc.min_singular_value,
        ) from exc
    return M.AA + M.Bp @ Delta @ inner
