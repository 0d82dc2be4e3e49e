"""Outer design loop: dynamic accumulation of worst-case scenarios.

The robust design problem — minimize the worst closed-loop norm over the
whole uncertainty box — is approached from inside: a finite scenario set is
maintained, the controller is optimized against it (min-max synthesis), and
worst-case searches over the box either certify the current controller or
return new scenarios that the set was missing.  Stability has priority:
destabilizing parameter points are added and resolved before performance
degradation points are considered.

The loop stops when the box-wide worst-case value ``v_upper`` is within a
relative ``eps`` of the scenario value ``v_star``, i.e. the inner
approximation has caught up with the outer one.  Post-processing attaches
the distance to instability and the radius at which the certified
performance level is first lost.

Reports are plain JSON plus an optional per-iteration CSV.  All effort
figures are deterministic oracle-call counters — reports produced from the
same problem and seed are bytewise identical.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import hinf_norm, spectral_abscissa
from .exceptions import SynthesisFailureError, WellPosednessError
from .lft import (
    build_delta_matrix,
    close_controller,
    close_uncertainty,
    closed_loop_a,
    realize_controller,
)
from .problem import ProblemFile
from .synthesis import SynthesisParams, synthesize_structured
from .worstcase import (
    InstabilityFound,
    destabilize,
    distance_to_instability,
    performance_radius,
    worst_performance,
)

__all__ = [
    "Scenario",
    "RunReport",
    "GridCertificate",
    "run_dynamic_inner_approximation",
    "grid_certify",
    "write_report",
    "write_history_csv",
    "load_report",
]

logger = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-8
PRUNE_FRACTION = 0.5
MAX_STABILIZATION_ROUNDS = 10


@dataclass(eq=False)
class Scenario:
    """One frozen uncertainty point of the active set."""

    delta: np.ndarray
    origin: str          # "nominal", "destabilizing", or "degradation"
    value: float         # abscissa or norm observed when the point was found
    added_iter: int

    def to_dict(self):
        return {
            "delta": np.asarray(self.delta).tolist(),
            "origin": self.origin,
            "value": float(self.value),
            "added_iter": int(self.added_iter),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["delta"], dtype=float), str(d["origin"]),
            float(d["value"]), int(d["added_iter"]),
        )


@dataclass(eq=False)
class RunReport:
    """Outcome of a design run, serializable to JSON."""

    name: str
    status: str                 # "converged", "max_outer", or "aborted"
    eps: float
    seed: int
    v_star: float               # scenario (inner) value at the final controller
    v_upper: float              # box-wide worst-case value at the final controller
    alpha_star: float           # box-wide worst-case abscissa at the final controller
    d_star: float               # distance to instability
    h_star: float               # radius at which the certified level is lost
    kappa: np.ndarray
    controller: dict
    scenarios: list
    iterations: list
    active_frequencies: list
    effort: dict
    reason: str = ""

    @property
    def exit_code(self):
        if self.status == "aborted":
            return 3
        if self.status == "converged" and self.d_star >= 1.0:
            return 0
        return 2

    @property
    def certified(self):
        return self.exit_code == 0

    def to_dict(self):
        return {
            "name": self.name,
            "status": self.status,
            "exit_code": self.exit_code,
            "reason": self.reason,
            "eps": self.eps,
            "seed": self.seed,
            "v_star": self.v_star,
            "v_upper": self.v_upper,
            "alpha_star": self.alpha_star,
            "d_star": self.d_star,
            "h_star": self.h_star,
            "kappa": np.asarray(self.kappa).tolist(),
            "controller": self.controller,
            "scenarios": [s.to_dict() for s in self.scenarios],
            "iterations": self.iterations,
            "active_frequencies": self.active_frequencies,
            "effort": self.effort,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            name=d.get("name", ""),
            status=d["status"],
            eps=float(d["eps"]),
            seed=int(d["seed"]),
            v_star=float(d["v_star"]),
            v_upper=float(d["v_upper"]),
            alpha_star=float(d["alpha_star"]),
            d_star=float(d["d_star"]),
            h_star=float(d["h_star"]),
            kappa=np.asarray(d["kappa"], dtype=float),
            controller=d.get("controller", {}),
            scenarios=[Scenario.from_dict(s) for s in d.get("scenarios", [])],
            iterations=list(d.get("iterations", [])),
            active_frequencies=list(d.get("active_frequencies", [])),
            effort=dict(d.get("effort", {})),
            reason=d.get("reason", ""),
        )


def _is_duplicate(delta, scenarios, tol=DUPLICATE_TOL):
    return any(np.max(np.abs(delta - s.delta)) <= tol for s in scenarios)


def _controller_dict(cstructure, kappa):
    K = realize_controller(cstructure, kappa)
    return {"A": K.A.tolist(), "B": K.B.tolist(), "C": K.C.tolist(), "D": K.D.tolist()}


def run_dynamic_inner_approximation(problem: ProblemFile, *, eps=None, seed=None,
                                    max_outer=None, starts=None,
                                    synthesis_params: Optional[SynthesisParams] = None,
                                    rel_tol=1e-8) -> RunReport:
    """Design a structured controller robust over the uncertainty box.

    Alternates min-max synthesis on the active scenario set with worst-case
    searches over the whole box.  Destabilizing points found by the
    spectral-abscissa search are appended and resolved first (at most
    ``MAX_STABILIZATION_ROUNDS`` per outer iteration); then the worst
    performance point either certifies ``v_upper < (1 + eps) v_star`` or
    all tied maximizers enter the scenario set.  After each synthesis,
    performance scenarios whose value has fallen below half the current
    level are dropped — stability scenarios are never pruned.

    The run aborts (exit code 3) when a found destabilizing point is
    already in the scenario set (synthesis cannot resolve it), when the
    plant's own uncertainty loop is singular at a found point, or when no
    stabilizing controller exists for the current set.
    """
    opts = problem.options
    eps = opts.eps if eps is None else float(eps)
    seed = opts.seed if seed is None else int(seed)
    max_outer = opts.max_outer if max_outer is None else int(max_outer)
    n_random = opts.starts if starts is None else int(starts)
    params = synthesis_params if synthesis_params is not None else SynthesisParams()

    plant, structure, cstructure = problem.plant, problem.structure, problem.cstructure
    m = structure.n_params
    scenarios = [Scenario(np.zeros(m), "nominal", np.nan, 0)]
    kappa = problem.kappa0
    effort = {"synthesis": 0, "destabilize": 0, "performance": 0, "radius": 0}
    iterations = []
    status, reason = "max_outer", ""
    v_star = np.nan
    v_upper = np.inf
    alpha_star = np.nan
    last_worst_delta = None
    M = None

    def resynthesize(kappa_init):
        nonlocal kappa, v_star, M, scenarios
        synth = synthesize_structured(
            plant, cstructure, structure, [s.delta for s in scenarios],
            kappa0=kappa_init, params=params, rel_tol=rel_tol,
        )
        effort["synthesis"] += synth.n_oracle
        kappa = synth.kappa
        v_star = synth.value
        keep = []
        for s, val in zip(scenarios, synth.per_scenario):
            if s.origin == "destabilizing" or val >= PRUNE_FRACTION * v_star:
                keep.append(s)
        if keep:
            scenarios = keep
        M = close_controller(plant, realize_controller(cstructure, kappa))

    def append_destabilizing(delta, alpha, outer):
        """Returns an abort reason, or None when the scenario was added."""
        nonlocal scenarios
        if _is_duplicate(delta, scenarios):
            return (
                f"destabilizing point {np.asarray(delta).tolist()} is already a "
                "scenario; synthesis cannot stabilize it"
            )
        # The scenario is usable only if the plant's own loop closes there
        # (the controller cannot repair a singular plant-level loop).
        Delta = build_delta_matrix(structure, delta)
        X = np.eye(structure.n_delta) - Delta @ plant.sys.D[: structure.n_delta, : structure.n_delta]
        svals = np.linalg.svd(X, compute_uv=False) if X.size else np.ones(1)
        if svals[-1] < 1e-12 * max(1.0, svals[0]):
            return (
                f"the plant's uncertainty loop is singular at "
                f"{np.asarray(delta).tolist()}; no controller can repair it"
            )
        scenarios.append(Scenario(np.asarray(delta, dtype=float), "destabilizing",
                                  float(alpha), outer))
        return None

    try:
        resynthesize(kappa)
    except SynthesisFailureError as exc:
        return _aborted_report(problem, eps, seed, scenarios, iterations, effort,
                               f"initial synthesis failed: {exc}")

    outer = 0
    for outer in range(1, max_outer + 1):
        # Stabilization rounds: resolve destabilizing points first.
        aborted = None
        for _round in range(MAX_STABILIZATION_ROUNDS + 1):
            wc = destabilize(M, structure, seed=seed, n_random=n_random,
                             extra_starts=[s.delta for s in scenarios])
            effort["destabilize"] += wc.n_oracle
            alpha_star = wc.value
            if not (alpha_star >= 0.0):
                break
            if _round == MAX_STABILIZATION_ROUNDS:
                aborted = "stabilization rounds exceeded"
                break
            aborted = append_destabilizing(wc.delta, alpha_star, outer)
            if aborted is not None:
                break
            logger.info("outer %d: destabilizing point %s (alpha=%.4g)",
                        outer, wc.delta.tolist(), alpha_star)
            try:
                resynthesize(kappa)
            except SynthesisFailureError as exc:
                aborted = f"synthesis failed: {exc}"
                break
        if aborted is not None:
            status, reason = "aborted", aborted
            break

        # Worst performance over the box.
        try:
            wc = worst_performance(M, structure, seed=seed, n_random=n_random,
                                   extra_starts=[s.delta for s in scenarios],
                                   rel_tol=rel_tol)
        except InstabilityFound as found:
            iterations.append({
                "iter": outer, "n_scenarios": len(scenarios),
                "v_star": float(v_star), "alpha_star": float(found.alpha),
                "v_upper": np.inf,
            })
            aborted = append_destabilizing(found.delta, found.alpha, outer)
            if aborted is not None:
                status, reason = "aborted", aborted
                break
            logger.info("outer %d: instability during performance search at %s",
                        outer, found.delta.tolist())
            try:
                resynthesize(kappa)
            except SynthesisFailureError as exc:
                status, reason = "aborted", f"synthesis failed: {exc}"
                break
            continue

        effort["performance"] += wc.n_oracle
        v_upper = wc.value
        last_worst_delta = wc.delta
        iterations.append({
            "iter": outer, "n_scenarios": len(scenarios),
            "v_star": float(v_star), "alpha_star": float(alpha_star),
            "v_upper": float(v_upper),
        })
        logger.info("outer %d: v_star=%.6g v_upper=%.6g alpha_star=%.4g",
                    outer, v_star, v_upper, alpha_star)

        if v_upper < (1.0 + eps) * v_star:
            status = "converged"
            break

        new_points = [
            (d, v) for d, v in wc.tied()
            if not _is_duplicate(d, scenarios)
        ]
        if not new_points:
            status, reason = "aborted", (
                "worst performance points are already scenarios but the gap "
                f"persists (v_star={v_star:.6g}, v_upper={v_upper:.6g})"
            )
            break
        for d, v in new_points:
            scenarios.append(Scenario(np.asarray(d, dtype=float), "degradation",
                                      float(v), outer))
        try:
            resynthesize(kappa)
        except SynthesisFailureError as exc:
            status, reason = "aborted", f"synthesis failed: {exc}"
            break

    if status == "aborted":
        return _aborted_report(problem, eps, seed, scenarios, iterations, effort,
                               reason, kappa=kappa, cstructure=cstructure,
                               v_star=v_star, v_upper=v_upper, alpha_star=alpha_star)

    # Post-processing on the final closed loop.  The performance radius is
    # taken at the certified level (a hair below it, so the level set is
    # attained rather than grazed); crossing at the nominal point reports 0.
    dist = distance_to_instability(M, structure, seed=seed, n_random=n_random)
    effort["radius"] += dist.n_oracle
    d_star = dist.radius
    h_star = np.nan
    if np.isfinite(v_upper):
        level = v_upper * (1.0 - 1e-8)
        perf = performance_radius(M, structure, level, seed=seed,
                                  n_random=n_random, rel_tol=rel_tol)
        effort["radius"] += perf.n_oracle
        h_star = perf.radius

    freqs = []
    if np.isfinite(v_upper) and last_worst_delta is not None:
        try:
            data = hinf_norm(close_uncertainty(M, structure, last_worst_delta).t_zw,
                             rel_tol=rel_tol)
            freqs = [float(p.omega) for p in data.peaks]
        except WellPosednessError:
            freqs = []

    return RunReport(
        name=problem.name,
        status=status,
        eps=eps,
        seed=seed,
        v_star=float(v_star),
        v_upper=float(v_upper),
        alpha_star=float(alpha_star),
        d_star=float(d_star),
        h_star=float(h_star),
        kappa=np.asarray(kappa, dtype=float),
        controller=_controller_dict(cstructure, kappa),
        scenarios=scenarios,
        iterations=iterations,
        active_frequencies=freqs,
        effort=effort,
        reason=reason,
    )


def _aborted_report(problem, eps, seed, scenarios, iterations, effort, reason,
                    kappa=None, cstructure=None, v_star=np.nan, v_upper=np.nan,
                    alpha_star=np.nan) -> RunReport:
    if kappa is None:
        kappa = np.zeros(problem.cstructure.n_params)
    ctrl = _controller_dict(problem.cstructure if cstructure is None else cstructure, kappa)
    return RunReport(
        name=problem.name, status="aborted", eps=eps, seed=seed,
        v_star=float(v_star), v_upper=float(v_upper), alpha_star=float(alpha_star),
        d_star=np.nan, h_star=np.nan, kappa=np.asarray(kappa, dtype=float),
        controller=ctrl, scenarios=scenarios, iterations=iterations,
        active_frequencies=[], effort=effort, reason=reason,
    )


@dataclass(eq=False)
class GridCertificate:
    """Brute-force check of stability and a performance level on a grid."""

    certified: bool
    level: float
    n_points: int
    points_per_axis: int
    worst_alpha: float
    worst_alpha_delta: np.ndarray
    worst_norm: float
    worst_norm_delta: np.ndarray
    n_unstable: int


def grid_certify(M, structure, level, points_per_axis=11, cap=1_000_000,
                 rel_tol=1e-6) -> GridCertificate:
    """Evaluate stability and the closed-loop norm on a uniform grid.

    The grid is capped at ``cap`` total points by reducing the per-axis
    count when necessary.  Ill-posed or unstable points count against
    certification and are reported through ``worst_alpha``.
    """
    m = structure.n_params
    per = max(2, int(points_per_axis))
    while per > 2 and per**m > cap:
        per -= 1
    axis = np.linspace(-1.0, 1.0, per)
    worst_alpha, worst_alpha_delta = -np.inf, np.zeros(m)
    worst_norm, worst_norm_delta = 0.0, np.zeros(m)
    n_unstable = 0
    n_points = 0
    for combo in itertools.product(axis, repeat=m):
        delta = np.array(combo)
        n_points += 1
        try:
            alpha = spectral_abscissa(closed_loop_a(M, structure, delta)).alpha
        except WellPosednessError:
            alpha = np.inf
        if alpha > worst_alpha:
            worst_alpha, worst_alpha_delta = alpha, delta
        if alpha >= 0.0:
            n_unstable += 1
            continue
        norm = hinf_norm(close_uncertainty(M, structure, delta).t_zw, rel_tol=rel_tol).hinf
        if norm > worst_norm:
            worst_norm, worst_norm_delta = norm, delta
    certified = n_unstable == 0 and worst_norm <= level
    return GridCertificate(
        certified=bool(certified), level=float(level), n_points=n_points,
        points_per_axis=per, worst_alpha=float(worst_alpha),
        worst_alpha_delta=worst_alpha_delta, worst_norm=float(worst_norm),
        worst_norm_delta=worst_norm_delta, n_unstable=n_unstable,
    )


def write_report(report: RunReport, path):
    """Write a run report as JSON."""
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_history_csv(report: RunReport, path):
    """Write the per-iteration table as ``iter,v_star,alpha_star,v_upper``."""
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "v_star", "alpha_star", "v_upper"])
        for row in report.iterations:
            writer.writerow([
                row["iter"], repr(float(row["v_star"])),
                repr(float(row["alpha_star"])), repr(float(row["v_upper"])),
            ])


def load_report(path) -> RunReport:
    """Read a run report written by :func:`write_report`."""
    with open(Path(path), "r", encoding="utf-8") as fh:
        return RunReport.from_dict(json.load(fh))
