"""Nonsmooth descent over a box for min-of-smooth (upper-C1) objectives.

The worst-case search problems minimize functions like the negative spectral
abscissa or the negative closed-loop norm over the normalized parameter box.
These objectives are minima of smooth branches: kinks are concave, so a
proximal step against one subgradient already gives descent, and cutting
planes generated by support-function maximizers sharpen the step when the
oracle can supply them.

The engine is a proximal descent loop with a small working set of planes
(current subgradient, latest cut, aggregate, previous aggregate), an
acceptance quotient with backtracking on the proximal parameter, and a
two-quotient update in the strict (cut-generating) mode.  The tangent
subproblem is solved through its simplex dual; the same routine serves the
multi-scenario bundle in the synthesis module, which passes nonzero
downshifted linearization errors.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import Subgradient
from .exceptions import DimensionError, OracleDomainError

__all__ = [
    "Box",
    "MinMinParams",
    "OracleEval",
    "TangentSolution",
    "MinMinResult",
    "project_simplex",
    "solve_tangent_program",
    "kkt_residual",
    "minimize_minmin",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with elementwise bounds."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionError("box bounds must have equal length")
        if np.any(lo > hi):
            raise DimensionError("box has lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unit(cls, m):
        """The normalized uncertainty box ``[-1, 1]^m``."""
        return cls(-np.ones(m), np.ones(m))

    @classmethod
    def cube(cls, m, radius):
        return cls(-radius * np.ones(m), radius * np.ones(m))

    @property
    def dim(self):
        return self.lo.shape[0]

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def project(self, x):
        return np.clip(np.asarray(x, dtype=float).reshape(-1), self.lo, self.hi)

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float).reshape(-1)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def vertices(self):
        """All corner points, enumerated lexicographically.  Exponential in dim."""
        if self.dim > 20:
            raise DimensionError(f"refusing to enumerate 2^{self.dim} vertices")
        corners = itertools.product(*[(lo, hi) for lo, hi in zip(self.lo, self.hi)])
        return np.array(list(corners))

    def sample(self, rng, n=1):
        """Uniform interior samples from a numpy Generator, shape (n, dim)."""
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))


@dataclass(frozen=True)
class MinMinParams:
    """Tuning constants of the descent loop.

    ``gamma`` accepts a trial step when the actual-to-predicted decrease
    quotient reaches it; ``gamma_tilde`` is the secondary quotient bound
    that triggers proximal backtracking in strict mode; ``big_gamma`` is
    the quotient above which the proximal memory is expanded for the next
    serious step.  ``theta`` is the aggressive backtracking factor of this
    loop; ``big_theta`` is the milder factor used by the bundle variant.
    """

    gamma: float = 1e-4
    gamma_tilde: float = 2e-4
    big_gamma: float = 0.1
    theta: float = 0.25
    big_theta: float = 0.75
    tol1: float = 1e-4
    tol2: float = 1e-4
    k_max: int = 50
    max_serious: int = 300
    max_planes: int = 4
    small_reject_limit: int = 5


@dataclass(frozen=True, eq=False)
class OracleEval:
    """One oracle answer: function value and subdifferential element."""

    value: float
    subgrad: Subgradient


@dataclass(frozen=True, eq=False)
class TangentSolution:
    """Solution of one proximal tangent subproblem."""

    eta: np.ndarray           # trial point in the box
    lam: np.ndarray           # simplex multipliers over the planes
    aggregate: np.ndarray     # lam-weighted plane, valid plane itself
    aggregate_err: float      # lam-weighted downshift error
    model_decrease: float     # center value minus model value at eta, >= 0


def project_simplex(v):
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float).reshape(-1)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    cond = u - css / idx > 0
    rho = int(np.nonzero(cond)[0][-1])
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def solve_tangent_program(planes, errors, center, t, box: Box) -> TangentSolution:
    """Minimize ``max_j(<g_j, eta - x> - e_j) + |eta - x|^2 / 2t`` over the box.

    Solved through the concave dual over the simplex: for multipliers
    ``lam`` the inner minimizer is the clamp ``P(x - t * G^T lam)``, and the
    dual is maximized by projected gradient ascent with a fixed step sized
    by the plane Gram matrix.  A single plane reduces to the closed-form
    proximal clamp.
    """
    G = np.atleast_2d(np.asarray(planes, dtype=float))
    e = np.zeros(G.shape[0]) if errors is None else np.asarray(errors, dtype=float).reshape(-1)
    x = np.asarray(center, dtype=float).reshape(-1)
    k = G.shape[0]

    def primal(lam):
        return box.project(x - t * (lam @ G))

    if k == 1:
        lam = np.ones(1)
    else:
        lip = t * float(np.linalg.norm(G, 2)) ** 2 + 1e-12
        step = 1.0 / lip
        lam = np.ones(k) / k
        for _ in range(200):
            eta = primal(lam)
            grad = G @ (eta - x) - e
            lam_next = project_simplex(lam + step * grad)
            if np.linalg.norm(lam_next - lam) <= 1e-10:
                lam = lam_next
                break
            lam = lam_next

    eta = primal(lam)
    model = float(np.max(G @ (eta - x) - e))
    return TangentSolution(
        eta=eta,
        lam=lam,
        aggregate=lam @ G,
        aggregate_err=float(lam @ e),
        model_decrease=-model,
    )


def kkt_residual(center, g, box: Box) -> float:
    """Stationarity measure ``|x - P(x - g)|_inf`` for box-constrained descent."""
    x = np.asarray(center, dtype=float).reshape(-1)
    return float(np.max(np.abs(x - box.project(x - np.asarray(g).reshape(-1)))))


@dataclass(eq=False)
class MinMinResult:
    """Outcome of a descent run."""

    delta: np.ndarray
    value: float
    status: str
    kkt: float
    n_serious: int
    n_oracle: int
    history: list = field(default_factory=list)

    @property
    def converged(self):
        return self.status in ("stationary", "small_step", "small_trials")


class _CachedOracle:
    """Exact-match memo around the oracle; counts real evaluations."""

    def __init__(self, oracle):
        self._oracle = oracle
        self._memo = {}
        self.calls = 0

    def __call__(self, delta) -> OracleEval:
        key = np.asarray(delta, dtype=float).tobytes()
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        self.calls += 1
        value, sub = self._oracle(np.asarray(delta, dtype=float))
        ev = OracleEval(float(value), sub)
        self._memo[key] = ev
        return ev


def minimize_minmin(oracle, delta0, box: Box, params: MinMinParams = MinMinParams(),
                    strict: Optional[bool] = None) -> MinMinResult:
    """Descend an upper-C1 objective over a box from a starting point.

    Parameters
    ----------
    oracle : callable
        ``oracle(delta) -> (value, Subgradient)``.  May raise an
        oracle-domain error at points where the value is undefined (for
        example performance of an unstable loop); such trials are rejected
        and the step shortened.  Any other exception propagates.
    delta0 : array
        Starting point, projected onto the box.
    box : Box
        Feasible set.
    params : MinMinParams
        Tuning constants.
    strict : bool, optional
        Force or forbid cut generation; by default cuts are generated
        whenever the starting subgradient carries a support maximizer.

    Returns
    -------
    MinMinResult
        Final point, value, stop status (``stationary``, ``small_step``,
        ``small_trials``, ``stalled``, or ``max_serious``), stationarity
        residual, counters, and the serious-step history.
    """
    cached = _CachedOracle(oracle)
    x = box.project(delta0)
    ev = cached(x)
    if strict is None:
        strict = ev.subgrad.toward is not None

    t_sharp = 1.0 / (1.0 + float(np.linalg.norm(ev.subgrad.g)))
    history = [(x.copy(), ev.value)]
    status = "max_serious"
    n_serious = 0

    for _ in range(params.max_serious):
        f0, sub0 = ev.value, ev.subgrad
        res = kkt_residual(x, sub0.g, box)
        if res <= params.tol1:
            status = "stationary"
            break

        use_cuts = strict and sub0.toward is not None
        t = t_sharp
        cut = None
        aggregate = None
        prev_aggregate = None
        accepted = False
        stationary_model = False
        small_rejects = 0

        for _k in range(params.k_max):
            # Working model: fresh subgradient, latest cut, and the two most
            # recent aggregates -- all anchored at the current center, so
            # the set empties out again after every accepted step.  Without
            # cuts the model stays {g0} and the loop is a projected-gradient
            # backtracking linesearch.
            work = [sub0.g]
            if cut is not None:
                work.append(cut)
            if aggregate is not None:
                work.append(aggregate)
            if prev_aggregate is not None:
                work.append(prev_aggregate)
            sol = solve_tangent_program(work[: params.max_planes], None, x, t, box)
            eta, pred = sol.eta, sol.model_decrease
            step_size = float(np.max(np.abs(eta - x)))
            if pred <= 0.0 or step_size == 0.0:
                # Every plane is a subgradient at the center, so a
                # non-improving model minimum certifies box stationarity.
                stationary_model = True
                break

            try:
                trial = cached(eta)
                f_eta = trial.value
            except OracleDomainError:
                trial, f_eta = None, np.inf

            rho = (f0 - f_eta) / pred if np.isfinite(f_eta) else -np.inf
            if rho >= params.gamma:
                accepted = True
                t_sharp = t / params.theta if rho >= params.big_gamma else t
                x, ev = eta, trial
                n_serious += 1
                history.append((x.copy(), ev.value))
                if (
                    step_size <= params.tol1 * (1.0 + float(np.max(np.abs(x))))
                    and f0 - f_eta <= params.tol2 * (1.0 + abs(f0))
                ):
                    status = "small_step"
                break

            # Null step.  Count consecutive rejected trials that sit inside
            # both the step and the value tolerance; five in a row mean the
            # current iterate is as good as the oracle resolves.
            if (
                np.isfinite(f_eta)
                and step_size <= params.tol1 * (1.0 + float(np.max(np.abs(x))))
                and abs(f0 - f_eta) <= params.tol2 * (1.0 + abs(f0))
            ):
                small_rejects += 1
                if small_rejects >= params.small_reject_limit:
                    break
            else:
                small_rejects = 0

            if not np.isfinite(f_eta):
                # Oracle hole at the trial point: treat as +inf and retreat.
                t *= params.theta
                continue
            if use_cuts:
                cut = sub0.toward(eta - x)
                m_plus = max(float(g @ (eta - x)) for g in work + [cut])
                # Secondary quotient: decrease promised by the enriched
                # model at the same trial point, against the old promise.
                # Near 1 the cut changed nothing, so the step length is to
                # blame and t shrinks; near 0 the richer model will redirect
                # the next trial on its own.
                rho_tilde = -m_plus / pred
                if rho_tilde >= params.gamma_tilde:
                    t *= params.theta
                prev_aggregate, aggregate = aggregate, sol.aggregate
            else:
                t *= params.theta
        else:
            status = "stalled"
            break

        if stationary_model:
            status = "stationary"
            break
        if accepted:
            if status == "small_step":
                break
            continue
        if small_rejects >= params.small_reject_limit:
            status = "small_trials"
            break
        status = "stalled"
        break

    final_res = kkt_residual(x, ev.subgrad.g, box)
    logger.debug(
        "minmin: status=%s value=%.6g kkt=%.3g serious=%d oracle=%d",
        status, ev.value, final_res, n_serious, cached.calls,
    )
    return MinMinResult(
        delta=x,
        value=ev.value,
        status=status,
        kkt=final_res,
        n_serious=n_serious,
        n_oracle=cached.calls,
        history=history,
    )
