"""Shared fixtures and independent reference oracles.

Everything here is deliberately naive: dense scans, finite differences,
and grid enumeration.  The point is to check the fast library answers
against slow answers obtained a completely different way.
"""

import numpy as np

from robsyn.lft import (
    ControllerStructure,
    PartitionedSystem,
    Plant,
    StateSpace,
    UncertainClosedLoop,
    UncertaintyStructure,
)


# ---------------------------------------------------------------------------
# Reference oracles


def grid_hinf(sys, n_grid=10_000, refine=True):
    """Dense log-grid H-infinity estimate, optionally sharpened at the peak.

    Scans sigma_max over a logarithmic frequency grid anchored at the pole
    magnitudes, then runs a golden-section pass on the bracketing interval.
    Slow but free of Hamiltonian machinery, so it cross-checks hinf_norm.
    """
    poles = sys.poles()
    mags = np.abs(poles[np.isfinite(poles)]) if poles.size else np.array([])
    mags = mags[mags > 0]
    lo = 10 ** (np.log10(mags.min()) - 3) if mags.size else 1e-3
    hi = 10 ** (np.log10(mags.max()) + 3) if mags.size else 1e3
    grid = np.concatenate([[0.0], np.geomspace(lo, hi, n_grid)])
    vals = np.array([sigma_at(sys, w) for w in grid])
    j = int(np.argmax(vals))
    best_w, best = float(grid[j]), float(vals[j])

    if refine and 0 < j < len(grid) - 1:
        a, b = grid[j - 1], grid[j + 1]
        phi = 0.5 * (3.0 - np.sqrt(5.0))
        x1, x2 = a + phi * (b - a), b - phi * (b - a)
        f1, f2 = sigma_at(sys, x1), sigma_at(sys, x2)
        for _ in range(200):
            if f1 < f2:
                a, x1, f1 = x1, x2, f2
                x2 = b - phi * (b - a)
                f2 = sigma_at(sys, x2)
            else:
                b, x2, f2 = x2, x1, f1
                x1 = a + phi * (b - a)
                f1 = sigma_at(sys, x1)
            if b - a <= 1e-13 * (1.0 + b):
                break
        for w, v in ((x1, f1), (x2, f2)):
            if v > best:
                best_w, best = float(w), float(v)

    d_gain = float(np.linalg.norm(sys.D, 2)) if sys.D.size else 0.0
    if d_gain > best:
        best_w, best = np.inf, d_gain
    return best, best_w


def sigma_at(sys, omega):
    """Largest singular value of the frequency response at one point."""
    F = sys.freq_response(omega)
    return float(np.linalg.norm(F, 2)) if F.size else 0.0


def fd_gradient(fn, x, step=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (fn(x + e) - fn(x - e)) / (2.0 * step)
    return g


def alpha_of(A):
    """Spectral abscissa by plain eigenvalue computation."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(A).real))


def grid_box_max(fn, lo, hi, per_axis=41):
    """Brute-force maximum of ``fn`` over a box by dense enumeration."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(lo.size)]
    best_val, best_pt = -np.inf, None
    for pt in np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size):
        v = fn(pt)
        if v > best_val:
            best_val, best_pt = v, pt
    return best_val, best_pt


# ---------------------------------------------------------------------------
# Fixtures


def scalar_alpha_loop(a0=-0.4):
    """One-state loop with A(delta) = a0 + delta on every channel."""
    sys = StateSpace(
        np.array([[a0]]), np.array([[1.0, 1.0]]), np.array([[1.0], [1.0]]), np.zeros((2, 2))
    )
    return UncertainClosedLoop(PartitionedSystem(sys, 1, 1, 1, 1)), UncertaintyStructure([1])


def scalar_perf_loop():
    """T_zw(delta) = 1/(s + 1 - delta): nominal norm 1, unstable at delta >= 1."""
    sys = StateSpace(
        np.array([[-1.0]]), np.array([[1.0, 1.0]]), np.array([[1.0], [1.0]]), np.zeros((2, 2))
    )
    return UncertainClosedLoop(PartitionedSystem(sys, 1, 1, 1, 1)), UncertaintyStructure([1])


def singular_loop(dqp):
    """Scalar loop whose uncertainty channel has feedthrough ``dqp``."""
    sys = StateSpace(
        np.array([[-1.0]]),
        np.array([[1.0, 1.0]]),
        np.array([[1.0], [1.0]]),
        np.array([[dqp, 0.0], [0.0, 0.0]]),
    )
    return UncertainClosedLoop(PartitionedSystem(sys, 1, 1, 1, 1)), UncertaintyStructure([1])


def toy_static_plant():
    """Memoryless plant whose controller closure gives T_zw = delta - kappa."""
    z = np.zeros
    D = {
        "qp": [[0.0]], "qw": [[1.0]], "qu": [[0.0]],
        "zp": [[1.0]], "zw": [[0.0]], "zu": [[-1.0]],
        "yp": [[0.0]], "yw": [[1.0]], "yu": [[0.0]],
    }
    plant = Plant.from_blocks(
        z((0, 0)), z((0, 1)), z((0, 1)), z((0, 1)), z((1, 0)), z((1, 0)), z((1, 0)), D
    )
    return plant, UncertaintyStructure([1]), ControllerStructure.static_gain(1, 1)


def msd_plant():
    """Three-state oscillator with uncertain stiffness and damping.

    delta_1 perturbs the restoring force, delta_2 the damping; w drives the
    plant through a fast first-order filter, z collects position and a small
    control-effort penalty, and a one-state controller measures position.
    """
    A = np.array([[0.0, 1.0, 0.0], [-1.0, -0.5, 1.0], [0.0, 0.0, -5.0]])
    Bp = np.array([[0.0, 0.0], [-0.3, -0.2], [0.0, 0.0]])
    Bw = np.array([[0.0], [0.0], [5.0]])
    Bu = np.array([[0.0], [1.0], [0.0]])
    Cq = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    Cz = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    Cy = np.array([[1.0, 0.0, 0.0]])
    D = {
        "qp": np.zeros((2, 2)), "qw": np.zeros((2, 1)), "qu": np.zeros((2, 1)),
        "zp": np.zeros((2, 2)), "zw": np.zeros((2, 1)), "zu": np.array([[0.0], [0.1]]),
        "yp": np.zeros((1, 2)), "yw": np.zeros((1, 1)), "yu": np.zeros((1, 1)),
    }
    plant = Plant.from_blocks(A, Bp, Bw, Bu, Cq, Cz, Cy, D)
    return plant, UncertaintyStructure([1, 1]), ControllerStructure.full_order(1, 1, 1)


def random_stable_system(rng, n_max=8, p_max=3, m_max=3, margin=0.2):
    """Random strictly stable state space with bounded dimensions."""
    n = int(rng.integers(1, n_max + 1))
    p = int(rng.integers(1, p_max + 1))
    m = int(rng.integers(1, m_max + 1))
    A = rng.normal(size=(n, n))
    A -= (alpha_of(A) + margin + float(rng.uniform(0.0, 1.0))) * np.eye(n)
    B = rng.normal(size=(n, m))
    C = rng.normal(size=(p, n))
    D = rng.normal(size=(p, m)) if rng.uniform() < 0.5 else np.zeros((p, m))
    return StateSpace(A, B, C, D)


def random_plant(rng, n_max=5, nd_max=3):
    """Random well-posed plant for interconnection identities.

    Keeps D_yu = 0 (standard assumption) and scales the uncertainty
    feedthrough so unit-box deltas never make the loop singular.
    """
    n = int(rng.integers(1, n_max + 1))
    nd = int(rng.integers(1, nd_max + 1))
    nw = int(rng.integers(1, 3))
    nu = int(rng.integers(1, 3))
    nz = int(rng.integers(1, 3))
    ny = int(rng.integers(1, 3))
    A = rng.normal(size=(n, n))
    A -= (alpha_of(A) + 1.0) * np.eye(n)
    blocks = {
        "qp": 0.3 * rng.normal(size=(nd, nd)) / nd,
        "qw": rng.normal(size=(nd, nw)),
        "qu": rng.normal(size=(nd, nu)),
        "zp": rng.normal(size=(nz, nd)),
        "zw": rng.normal(size=(nz, nw)),
        "zu": rng.normal(size=(nz, nu)),
        "yp": rng.normal(size=(ny, nd)),
        "yw": rng.normal(size=(ny, nw)),
        "yu": np.zeros((ny, nu)),
    }
    plant = Plant.from_blocks(
        A,
        rng.normal(size=(n, nd)),
        rng.normal(size=(n, nw)),
        rng.normal(size=(n, nu)),
        rng.normal(size=(nd, n)),
        rng.normal(size=(nz, n)),
        rng.normal(size=(ny, n)),
        blocks,
    )
    structure = UncertaintyStructure([1] * nd)
    return plant, structure
