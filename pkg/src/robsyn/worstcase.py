"""Worst-case searches over the normalized uncertainty box.

Drivers locating destabilizing parameter values, worst performance points,
near-singular uncertainty loops, and the two robustness radii (distance to
instability, performance radius).  All searches are multi-start descents of
the corresponding negative objective; starting points combine the nominal
point, box vertices, seeded random interior samples, and caller-supplied
extras (typically the active scenario set).

Escalation: an instability or loss of well-posedness discovered while
searching for worst *performance* invalidates the question being asked, so
it is raised as :class:`InstabilityFound` rather than returned — the design
loop catches it and falls back to the stabilization phase.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import (
    Subgradient,
    a_minus_with_subgrad,
    h_minus_with_subgrad,
    spectral_abscissa,
    hinf_norm,
    wellposedness_measure,
)
from .exceptions import (
    DerogatoryEigenvalueError,
    NumericalError,
    OracleDomainError,
    UnstableClosedLoopError,
    WellPosednessError,
)
from .lft import (
    UncertainClosedLoop,
    UncertaintyStructure,
    build_delta_matrix,
    close_uncertainty,
    closed_loop_a,
)
from .minmin import Box, MinMinParams, minimize_minmin

__all__ = [
    "InstabilityFound",
    "WorstCaseResult",
    "RadiusResult",
    "starting_points",
    "alpha_objective",
    "performance_objective",
    "destabilize",
    "worst_performance",
    "wellposedness_scan",
    "distance_to_instability",
    "performance_radius",
]

logger = logging.getLogger(__name__)

ILL_POSED_MEASURE = -1e6


class InstabilityFound(Exception):
    """A stability boundary was crossed during a performance-type search.

    Carries the offending parameter point and the spectral abscissa there
    (``inf`` when the uncertainty loop itself is singular).
    """

    def __init__(self, delta, alpha, ill_posed=False):
        self.delta = np.asarray(delta, dtype=float)
        self.alpha = float(alpha)
        self.ill_posed = bool(ill_posed)
        kind = "ill-posed loop" if ill_posed else f"alpha={alpha:.6g}"
        super().__init__(f"instability at delta={self.delta.tolist()} ({kind})")


@dataclass(eq=False)
class WorstCaseResult:
    """Best point of a box-constrained worst-case search.

    ``value`` is the maximized quantity (spectral abscissa, closed-loop
    norm, or negative well-posedness measure depending on the driver);
    ``candidates`` lists the per-start outcomes, best first, for callers
    that need tied maximizers.
    """

    delta: np.ndarray
    value: float
    status: str
    n_oracle: int
    ill_posed: bool = False
    candidates: list = field(default_factory=list)

    def tied(self, rel_tol=1e-6, distinct_tol=1e-8):
        """All candidates within tolerance of the best, mutually distinct."""
        out = []
        for d, v in self.candidates:
            if v < self.value - rel_tol * (1.0 + abs(self.value)):
                continue
            if any(np.max(np.abs(d - p)) <= distinct_tol for p, _ in out):
                continue
            out.append((d, v))
        return out


@dataclass(eq=False)
class RadiusResult:
    """Smallest box radius at which a constraint is violated.

    ``delta`` is a certificate on the violating side (``strict`` marks that
    the violation holds there, not only in the limit); ``radius`` is its
    sup-norm.  ``scan_bound`` is the largest scanned radius at which the
    multi-start search saw no violation, when the search failed entirely.
    """

    radius: float
    delta: Optional[np.ndarray]
    direction: Optional[np.ndarray]
    strict: bool
    status: str
    n_oracle: int
    multiplier: Optional[float] = None
    scan_bound: Optional[float] = None

    @property
    def found(self):
        return np.isfinite(self.radius)


class _CountedOracle:
    """Exact-match memo shared across starts; counts distinct evaluations."""

    def __init__(self, fn):
        self._fn = fn
        self._memo = {}
        self.calls = 0

    def __call__(self, delta):
        key = np.asarray(delta, dtype=float).tobytes()
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        self.calls += 1
        out = self._fn(np.asarray(delta, dtype=float))
        self._memo[key] = out
        return out


def starting_points(box: Box, rng, n_random=10, extra=(), max_vertices=1024):
    """Multi-start pool: nominal, extras, vertices, random interior points."""
    pts = [box.project(np.zeros(box.dim))]
    for p in extra:
        pts.append(box.project(p))
    if 2 ** box.dim <= max_vertices:
        pts.extend(box.vertices())
    else:
        picks = rng.integers(0, 2, size=(max_vertices, box.dim))
        pts.extend(np.where(picks == 0, box.lo, box.hi))
    if n_random > 0:
        pts.extend(box.sample(rng, n_random))
    out = []
    for p in pts:
        if not any(np.max(np.abs(p - q)) <= 1e-12 for q in out):
            out.append(np.asarray(p, dtype=float))
    return out


def alpha_objective(M: UncertainClosedLoop, structure: UncertaintyStructure):
    """Oracle for minimizing ``-alpha(A(delta))``.

    Loss of well-posedness escalates (the loop is broken there, which is at
    least as bad as instability); a defective active eigenvalue becomes an
    oracle-domain rejection so the descent backs off.
    """

    def fn(delta):
        try:
            return a_minus_with_subgrad(M, structure, delta)
        except WellPosednessError:
            raise InstabilityFound(delta, np.inf, ill_posed=True)
        except DerogatoryEigenvalueError as exc:
            raise OracleDomainError(str(exc)) from exc

    return fn


def performance_objective(M: UncertainClosedLoop, structure: UncertaintyStructure, rel_tol=1e-8):
    """Oracle for minimizing ``-|T_zw(delta)|_inf``; instability escalates."""

    def fn(delta):
        try:
            return h_minus_with_subgrad(M, structure, delta, rel_tol=rel_tol)
        except UnstableClosedLoopError:
            alpha = spectral_abscissa(closed_loop_a(M, structure, delta)).alpha
            raise InstabilityFound(delta, alpha)
        except WellPosednessError:
            raise InstabilityFound(delta, np.inf, ill_posed=True)

    return fn


def _multistart(oracle, box, rng, n_random, extra, params, negate=True,
                stop_early_at=None):
    """Run the descent from every start; collect (point, maximized value)."""
    counted = _CountedOracle(oracle)
    starts = starting_points(box, rng, n_random=n_random, extra=extra)
    candidates = []
    failures = 0
    last_exc = None
    for x0 in starts:
        try:
            res = minimize_minmin(counted, x0, box, params)
        except OracleDomainError as exc:
            failures += 1
            last_exc = exc
            continue
        value = -res.value if negate else res.value
        candidates.append((res.delta, value))
        if stop_early_at is not None and value >= stop_early_at:
            break
    if not candidates:
        raise NumericalError(
            "every start point failed to evaluate "
            f"({failures} failures, last: {last_exc}); "
            "run wellposedness_scan to locate singular loop regions"
        )
    candidates.sort(key=lambda t: -t[1])
    return candidates, counted.calls


def destabilize(M: UncertainClosedLoop, structure: UncertaintyStructure, *,
                box: Optional[Box] = None, seed=0, n_random=10, extra_starts=(),
                params: Optional[MinMinParams] = None,
                stop_at_destabilizing=False) -> WorstCaseResult:
    """Maximize the closed-loop spectral abscissa over the box.

    A point where the uncertainty loop is singular counts as a
    destabilization with value ``inf`` and sets the ``ill_posed`` flag.
    A loop without states is stable everywhere and returns ``-inf``.
    """
    box = box if box is not None else Box.unit(structure.n_params)
    params = params if params is not None else MinMinParams()
    if M.n_states == 0:
        return WorstCaseResult(
            delta=box.project(np.zeros(box.dim)), value=-np.inf,
            status="static_loop", n_oracle=0,
        )
    rng = np.random.default_rng(seed)
    oracle = alpha_objective(M, structure)
    try:
        candidates, calls = _multistart(
            oracle, box, rng, n_random, extra_starts, params,
            stop_early_at=0.0 if stop_at_destabilizing else None,
        )
    except InstabilityFound as found:
        return WorstCaseResult(
            delta=found.delta, value=np.inf, status="ill_posed",
            n_oracle=0, ill_posed=True, candidates=[(found.delta, np.inf)],
        )
    best_delta, best_value = candidates[0]
    logger.info("destabilize: alpha*=%.6g at %s", best_value, best_delta.tolist())
    return WorstCaseResult(
        delta=best_delta, value=best_value, status="ok",
        n_oracle=calls, candidates=candidates,
    )


def worst_performance(M: UncertainClosedLoop, structure: UncertaintyStructure, *,
                      box: Optional[Box] = None, seed=0, n_random=10,
                      extra_starts=(), params: Optional[MinMinParams] = None,
                      rel_tol=1e-8) -> WorstCaseResult:
    """Maximize the closed-loop performance norm over the box.

    Raises :class:`InstabilityFound` if any evaluation crosses the
    stability boundary: the worst-case norm is then unbounded and the
    caller should return to stabilization.
    """
    box = box if box is not None else Box.unit(structure.n_params)
    params = params if params is not None else MinMinParams()
    rng = np.random.default_rng(seed)
    oracle = performance_objective(M, structure, rel_tol=rel_tol)
    candidates, calls = _multistart(oracle, box, rng, n_random, extra_starts, params)
    best_delta, best_value = candidates[0]
    logger.info("worst_performance: v*=%.6g at %s", best_value, best_delta.tolist())
    return WorstCaseResult(
        delta=best_delta, value=best_value, status="ok",
        n_oracle=calls, candidates=candidates,
    )


def wellposedness_scan(M: UncertainClosedLoop, structure: UncertaintyStructure, *,
                       box: Optional[Box] = None, seed=0, n_random=10,
                       params: Optional[MinMinParams] = None,
                       fd_step=1e-6) -> WorstCaseResult:
    """Search the box for near-singular uncertainty loops.

    Minimizes the measure ``-1/sigma_min(I - Delta Dqp)`` and reports its
    most negative value (``-1`` means the loop term vanishes, ``-inf`` a
    certified singular point); ``ill_posed`` is set at or below ``-1e6``.
    Subgradients are central finite differences — the measure is cheap and
    this scan is diagnostic, not part of the certification path.  Because
    ``Delta(s*delta) = s*Delta(delta)``, singular points along the best ray
    sit exactly at reciprocals of the real eigenvalues of
    ``Delta(delta) @ Dqp``; any such point inside the box sharpens the
    descent answer to an exact certificate.
    """
    box = box if box is not None else Box.unit(structure.n_params)
    params = params if params is not None else MinMinParams()
    m = structure.n_params

    def fn(delta):
        val = wellposedness_measure(M, structure, delta)
        if not np.isfinite(val):
            return val, Subgradient(np.zeros(m), True)
        g = np.zeros(m)
        for i in range(m):
            step = np.zeros(m)
            step[i] = fd_step
            hi = wellposedness_measure(M, structure, delta + step)
            lo = wellposedness_measure(M, structure, delta - step)
            if not (np.isfinite(hi) and np.isfinite(lo)):
                return val, Subgradient(np.zeros(m), True)
            g[i] = (hi - lo) / (2.0 * fd_step)
        return val, Subgradient(g, True)

    rng = np.random.default_rng(seed)
    candidates, calls = _multistart(fn, box, rng, n_random, (), params)
    candidates = [(d, -v) for d, v in candidates]
    best_delta, best_value = candidates[0]

    dqp = M.Dqp
    if dqp.size and np.any(best_delta):
        dm = build_delta_matrix(structure, best_delta) @ dqp
        for lam in np.linalg.eigvals(dm):
            if abs(lam.imag) > 1e-9 * (1.0 + abs(lam)) or lam.real == 0.0:
                continue
            cand = best_delta / lam.real
            if box.contains(cand):
                best_delta, best_value = box.project(cand), -np.inf
                break

    return WorstCaseResult(
        delta=best_delta, value=best_value, status="ok", n_oracle=calls,
        ill_posed=bool(best_value <= ILL_POSED_MEASURE),
        candidates=candidates,
    )


# ---------------------------------------------------------------------------
# Robustness radii


def _first_crossing(violation, direction, s_hi, n_scan=256, counters=None):
    """First radius along ``s * direction`` where the violation turns >= 0.

    Grid prescan followed by sign bisection; returns ``(s_lo, s_hi)`` with
    the violation negative at ``s_lo`` and nonnegative at ``s_hi``.
    """
    grid = np.linspace(0.0, s_hi, n_scan + 1)
    prev = 0.0
    hit = None
    for s in grid[1:]:
        if violation(s * direction) >= 0.0:
            hit = s
            break
        prev = s
    if hit is None:
        return None
    lo, hi = prev, hit
    while hi - lo > 1e-10 * (1.0 + hi):
        mid = 0.5 * (lo + hi)
        if violation(mid * direction) >= 0.0:
            hi = mid
        else:
            lo = mid
    return lo, hi


def _inf_norm_subgrad(delta):
    g = np.zeros(delta.shape[0])
    if delta.size == 0 or np.all(delta == 0.0):
        return g
    i = int(np.argmax(np.abs(delta)))
    g[i] = np.sign(delta[i])
    return g


def _radius_search(M, structure, violation, infeasibility_oracle, finder, *,
                   scales=(1.0, 2.0, 5.0, 10.0), seed=0,
                   params: Optional[MinMinParams] = None,
                   penalty_rounds=6, rho0=10.0) -> RadiusResult:
    """Shared engine for the two radius computations.

    ``violation(delta) >= 0`` marks the target set (instability or
    performance loss).  ``infeasibility_oracle(delta)`` returns the amount
    by which the constraint is *not yet* violated together with a
    subgradient, for the exterior penalty phase.  ``finder(box, seed)``
    returns violating candidate points inside a scaled box, or ``[]``.
    """
    m = structure.n_params
    params = params if params is not None else MinMinParams()
    n_eval = [0]

    def viol(delta):
        n_eval[0] += 1
        return violation(delta)

    if viol(np.zeros(m)) >= 0.0:
        return RadiusResult(
            radius=0.0, delta=np.zeros(m), direction=None, strict=True,
            status="violated_at_nominal", n_oracle=n_eval[0],
        )

    violating = []
    scan_bound = 0.0
    for scale in scales:
        found, calls = finder(Box.cube(m, scale), seed)
        n_eval[0] += calls
        violating = [d for d in found if viol(d) >= 0.0]
        if violating:
            break
        scan_bound = scale
    if not violating:
        return RadiusResult(
            radius=np.inf, delta=None, direction=None, strict=False,
            status="no_violation_in_scan", n_oracle=n_eval[0],
            scan_bound=scan_bound,
        )

    # Multistarts frequently converge to the same point; crossing searches
    # are expensive, so repeat rays are answered from an exact-match memo.
    crossings = {}

    def crossing_along(direction, s_hi):
        key = (direction.tobytes(), float(s_hi))
        if key not in crossings:
            crossings[key] = _first_crossing(viol, direction, s_hi)
        return crossings[key]

    # Pull each violating candidate back along its ray to the boundary.
    best = None
    for d in violating:
        r = float(np.max(np.abs(d)))
        if r == 0.0:
            continue
        direction = d / r
        crossing = crossing_along(direction, r)
        if crossing is None:
            continue
        _, s_hi = crossing
        if best is None or s_hi < best[0]:
            best = (s_hi, direction)
    if best is None:
        d = violating[0]
        return RadiusResult(
            radius=float(np.max(np.abs(d))), delta=d,
            direction=None, strict=True, status="no_crossing_refinement",
            n_oracle=n_eval[0],
        )
    radius, direction = best

    # Exterior penalty rounds pivot the certificate off the initial ray.
    multiplier = None
    current = radius * direction
    rho = rho0
    for _ in range(penalty_rounds):
        def pen_oracle(delta, _rho=rho):
            miss, sub = infeasibility_oracle(delta)
            gap = max(0.0, miss)
            val = float(np.max(np.abs(delta))) + _rho * gap**2
            g = _inf_norm_subgrad(delta) + 2.0 * _rho * gap * sub.g
            return val, Subgradient(g, False)

        res = minimize_minmin(pen_oracle, current, Box.cube(m, max(radius * 2.0, 1e-6)), params)
        n_eval[0] += res.n_oracle
        cand = res.delta
        r = float(np.max(np.abs(cand)))
        miss, _ = infeasibility_oracle(cand)
        multiplier = 2.0 * rho * max(0.0, miss)
        if r > 1e-14:
            crossing = crossing_along(cand / r, max(r, radius) * 1.5)
            if crossing is not None and crossing[1] < radius:
                radius = crossing[1]
                direction = cand / r
                current = radius * direction
        rho *= 10.0

    certificate = radius * direction
    strict = viol(certificate) >= 0.0
    if not strict:
        # The bisection guarantees a violating point within tolerance above.
        bumped = (radius * (1.0 + 1e-9)) * direction
        if viol(bumped) >= 0.0:
            certificate, strict = bumped, True
            radius = float(np.max(np.abs(bumped)))
    return RadiusResult(
        radius=radius, delta=certificate, direction=direction, strict=strict,
        status="converged", n_oracle=n_eval[0], multiplier=multiplier,
    )


def distance_to_instability(M: UncertainClosedLoop, structure: UncertaintyStructure, *,
                            scales=(1.0, 2.0, 5.0, 10.0), seed=0, n_random=10,
                            params: Optional[MinMinParams] = None) -> RadiusResult:
    """Smallest sup-norm of a destabilizing (or loop-breaking) parameter.

    Searches expanding boxes for instability, pulls each find back to the
    stability boundary along its ray, then shrinks the certificate with an
    exterior penalty on the stable-side residual.  Values above the largest
    scanned scale are reported as ``inf`` with the scan bound attached.
    """
    if M.n_states == 0:
        return RadiusResult(
            radius=np.inf, delta=None, direction=None, strict=False,
            status="static_loop", n_oracle=0, scan_bound=scales[-1],
        )

    def violation(delta):
        try:
            return spectral_abscissa(closed_loop_a(M, structure, delta)).alpha
        except WellPosednessError:
            return np.inf

    def infeasibility(delta):
        # Amount of remaining stability margin, with subgradient.
        try:
            val, sub = a_minus_with_subgrad(M, structure, delta)
        except WellPosednessError:
            return -np.inf, Subgradient(np.zeros(structure.n_params), True)
        except DerogatoryEigenvalueError as exc:
            raise OracleDomainError(str(exc)) from exc
        return val, sub

    def finder(box, seed):
        res = destabilize(M, structure, box=box, seed=seed, n_random=n_random,
                          params=params, stop_at_destabilizing=True)
        pts = [d for d, v in res.candidates if v >= 0.0]
        return pts, res.n_oracle

    return _radius_search(M, structure, violation, infeasibility, finder,
                          scales=scales, seed=seed, params=params)


def performance_radius(M: UncertainClosedLoop, structure: UncertaintyStructure,
                       level: float, *, scales=(1.0, 2.0, 5.0, 10.0), seed=0,
                       n_random=10, params: Optional[MinMinParams] = None,
                       rel_tol=1e-8) -> RadiusResult:
    """Smallest sup-norm of a parameter driving the norm to ``level`` or beyond.

    Instability and loop singularity count as performance loss, so the
    radius is never larger than the distance to instability.
    """
    if level <= 0.0:
        raise ValueError(f"performance level must be positive, got {level}")

    def violation(delta):
        try:
            channels = close_uncertainty(M, structure, delta)
            data = hinf_norm(channels.t_zw, rel_tol=rel_tol)
        except WellPosednessError:
            return np.inf
        if data.unstable:
            return np.inf
        return data.hinf - level

    def infeasibility(delta):
        # Shortfall of the norm below the level, with subgradient.
        try:
            h_val, sub = h_minus_with_subgrad(M, structure, delta, rel_tol=rel_tol)
        except (UnstableClosedLoopError, WellPosednessError):
            return -np.inf, Subgradient(np.zeros(structure.n_params), True)
        return h_val + level, sub

    def finder(box, seed):
        try:
            res = worst_performance(M, structure, box=box, seed=seed,
                                    n_random=n_random, params=params, rel_tol=rel_tol)
        except InstabilityFound as found:
            return [found.delta], 0
        pts = [d for d, v in res.candidates if v >= level]
        return pts, res.n_oracle

    return _radius_search(M, structure, violation, infeasibility, finder,
                          scales=scales, seed=seed, params=params)
