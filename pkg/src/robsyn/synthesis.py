"""Structured controller synthesis against a finite scenario set.

Minimizes ``F(kappa) = max_s ||T_zw(delta_s; kappa)||_inf`` over the free
controller parameters, where each scenario ``delta_s`` is a frozen point of
the uncertainty box.  The engine is a proximal bundle method for max-of-max
functions: cutting planes are collected per active frequency of the worst
scenario, linearization errors are downshifted at the current center so the
working model stays below the center value, and an aggregate plane carries
the dual information across steps.

A preparatory phase minimizes the worst-case closed-loop spectral abscissa
until every scenario is stabilized; only then is the norm finite and the
performance phase meaningful.  Scenario plants are augmented once (the
uncertainty loop is closed and controller states are appended), so each
trial controller costs one static loop closure per scenario.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import (
    alpha_kappa_with_subgrad,
    close_with_gain,
    hinf_kappa_with_subgrad,
    hinf_norm,
    uncertain_synthesis_form,
)
from .exceptions import (
    DerogatoryEigenvalueError,
    OracleDomainError,
    SynthesisFailureError,
    UnstableClosedLoopError,
    WellPosednessError,
)
from .lft import ControllerStructure, Plant, UncertaintyStructure
from .minmin import Box, solve_tangent_program

__all__ = [
    "SynthesisParams",
    "SynthesisResult",
    "ScenarioSet",
    "multimodel_objective",
    "stabilize_scenarios",
    "synthesize_structured",
]

logger = logging.getLogger(__name__)

_KAPPA_BOUND = 1e12


@dataclass(frozen=True)
class SynthesisParams:
    """Bundle tuning constants.

    The acceptance ladder mirrors the descent solver: ``gamma`` accepts,
    ``gamma_tilde`` arbitrates between adding cuts and tightening the
    proximal parameter at null steps (``big_theta`` is the mild tightening
    used there), and ``big_gamma`` triggers the aggressive ``1/theta``
    relaxation after a strong serious step.
    """

    gamma: float = 1e-4
    gamma_tilde: float = 2e-4
    big_gamma: float = 0.1
    theta: float = 0.25
    big_theta: float = 0.75
    tol: float = 1e-4
    max_serious: int = 300
    max_null: int = 50
    max_planes: int = 10
    stability_margin: float = 1e-4
    tau_min: float = 1e-12
    tau_max: float = 1e10


@dataclass(eq=False)
class SynthesisResult:
    """Synthesized controller parameters and the certification snapshot."""

    kappa: np.ndarray
    value: float
    per_scenario: np.ndarray
    status: str
    n_serious: int
    n_oracle: int
    stabilized: bool
    history: list = field(default_factory=list)

    @property
    def converged(self):
        return self.status in ("converged", "target_reached")


class ScenarioSet:
    """Scenario plants in synthesis form, augmented once and reused.

    Each scenario's uncertainty loop is closed at its frozen parameter
    point and the controller states are appended, so evaluating a trial
    controller is a static gain closure per scenario.
    """

    def __init__(self, plant: Plant, cstructure: ControllerStructure,
                 structure: UncertaintyStructure, scenarios, rel_tol=1e-8):
        self.plant = plant
        self.cstructure = cstructure
        self.structure = structure
        self.scenarios = [structure.check_delta(s) for s in scenarios]
        if not self.scenarios:
            raise SynthesisFailureError("scenario set is empty")
        self.rel_tol = rel_tol
        self.augs = [
            uncertain_synthesis_form(plant, structure, s, cstructure.n_states)
            for s in self.scenarios
        ]

    @property
    def n_scenarios(self):
        return len(self.scenarios)

    def alpha_eval(self, kappa):
        """Worst spectral abscissa over scenarios, with per-eigenvalue cuts."""
        values = []
        all_planes = []
        for aug in self.augs:
            alpha, _, planes = alpha_kappa_with_subgrad(self.cstructure, kappa, aug)
            values.append(alpha)
            all_planes.append(planes)
        values = np.array(values)
        worst = int(np.argmax(values))
        cuts = [(np.asarray(kappa, dtype=float), values[worst], g) for g in all_planes[worst]]
        return float(values[worst]), cuts, values

    def norm_eval(self, kappa):
        """Worst closed-loop norm over scenarios, one cut per active frequency."""
        values = []
        all_planes = []
        for s, aug in zip(self.scenarios, self.augs):
            try:
                hinf, _, planes = hinf_kappa_with_subgrad(
                    self.plant, self.cstructure, kappa, self.structure, s,
                    rel_tol=self.rel_tol, aug=aug,
                )
            except (UnstableClosedLoopError, WellPosednessError):
                return np.inf, [], None
            values.append(hinf)
            all_planes.append(planes)
        values = np.array(values)
        worst = int(np.argmax(values))
        kc = np.asarray(kappa, dtype=float)
        cuts = [
            (kc, sigma, k_planes[0])
            for (_, sigma, k_planes) in all_planes[worst]
            if k_planes
        ]
        return float(values[worst]), cuts, values

    def per_scenario_norms(self, kappa):
        """Value-only snapshot; unstable scenarios report ``inf``."""
        kmat = self.cstructure.kmat(kappa)
        out = np.empty(self.n_scenarios)
        for i, aug in enumerate(self.augs):
            try:
                out[i] = hinf_norm(close_with_gain(aug, kmat), rel_tol=self.rel_tol).hinf
            except WellPosednessError:
                out[i] = np.inf
        return out


def multimodel_objective(plant, cstructure, structure, scenarios, kappa, rel_tol=1e-8):
    """Max-over-scenarios closed-loop norm at one controller point.

    Returns ``(value, per_scenario)``; unstable scenarios make the value
    infinite.  Convenience wrapper, mainly for diagnostics and tests — the
    synthesis loop itself reuses augmented scenario plants.
    """
    ss = ScenarioSet(plant, cstructure, structure, scenarios, rel_tol=rel_tol)
    per = ss.per_scenario_norms(kappa)
    return float(np.max(per)), per


@dataclass(eq=False)
class _BundleOutcome:
    kappa: np.ndarray
    value: float
    status: str
    n_serious: int
    n_eval: int
    history: list


def _plane_errors(planes, center, f_center):
    """Downshifted linearization errors of the stored planes at the center."""
    if not planes:
        return np.zeros((0, center.shape[0])), np.zeros(0)
    G = np.array([g for (_, _, g) in planes])
    e = np.array([
        max(0.0, f_center - (f_anchor + float(g @ (center - anchor))))
        for (anchor, f_anchor, g) in planes
    ])
    return G, e


def _proximal_bundle(evaluate, kappa0, params: SynthesisParams, *,
                     stop_below=None, label="bundle") -> _BundleOutcome:
    """Minimize a max-of-smooth function of the controller parameters.

    ``evaluate(kappa)`` returns ``(value, cuts)`` where each cut is a
    ``(anchor, branch_value, gradient)`` triple; an infinite value with no
    cuts marks an invalid trial (rejected with an aggressive proximal
    tightening).  ``stop_below`` stops as soon as the center value drops
    strictly below it (used by the stabilization phase).
    """
    x = np.asarray(kappa0, dtype=float).copy()
    n = x.shape[0]
    box = Box.cube(n, _KAPPA_BOUND)
    n_eval = [0]

    def ev(kappa):
        n_eval[0] += 1
        return evaluate(kappa)

    f_x, cuts = ev(x)
    if not np.isfinite(f_x):
        raise OracleDomainError(f"{label}: objective is infinite at the starting point")
    history = [(x.copy(), f_x)]
    if stop_below is not None and f_x < stop_below:
        return _BundleOutcome(x, f_x, "target_reached", 0, n_eval[0], history)

    planes = list(cuts)
    g0 = planes[-1][2] if planes else np.zeros(n)
    tau = 1.0 / (1.0 + float(np.linalg.norm(g0)))
    aggregate = None
    status = "max_serious"
    n_serious = 0
    nulls = 0

    for _ in range(params.max_serious * (params.max_null + 1)):
        work = list(planes)
        if aggregate is not None:
            work = work + [aggregate]
        G, e = _plane_errors(work, x, f_x)
        sol = solve_tangent_program(G, e, x, tau, box)
        eta = sol.eta
        dec = sol.model_decrease
        g_star = (x - eta) / tau
        if (
            float(np.linalg.norm(g_star)) <= params.tol * (1.0 + abs(f_x))
            and sol.aggregate_err <= params.tol * (1.0 + abs(f_x))
        ):
            status = "converged"
            break
        aggregate = (x.copy(), f_x - sol.aggregate_err, sol.aggregate)
        if dec <= 0.0:
            status = "converged"
            break

        try:
            f_eta, cuts_eta = ev(eta)
        except OracleDomainError:
            f_eta, cuts_eta = np.inf, []

        if np.isfinite(f_eta):
            rho = (f_x - f_eta) / dec
        else:
            rho = -np.inf

        if rho >= params.gamma:
            x, f_x = eta.copy(), f_eta
            planes.extend(cuts_eta)
            if len(planes) > params.max_planes:
                planes = planes[-params.max_planes :]
            if rho >= params.big_gamma:
                tau = min(tau / params.theta, params.tau_max)
            n_serious += 1
            nulls = 0
            history.append((x.copy(), f_x))
            if stop_below is not None and f_x < stop_below:
                status = "target_reached"
                break
            if n_serious >= params.max_serious:
                status = "max_serious"
                break
            continue

        # Null step.
        nulls += 1
        if nulls > params.max_null:
            status = "stalled"
            break
        if cuts_eta:
            planes.extend(cuts_eta)
            if len(planes) > params.max_planes:
                planes = planes[-params.max_planes :]
            work_plus = list(planes) + ([aggregate] if aggregate is not None else [])
            Gp, ep = _plane_errors(work_plus, x, f_x)
            m_plus = float(np.max(Gp @ (eta - x) - ep))
            rho_tilde = -m_plus / dec
            if rho_tilde >= params.gamma_tilde:
                tau = max(tau * params.big_theta, params.tau_min)
        else:
            tau = max(tau * params.theta, params.tau_min)

    logger.debug(
        "%s: status=%s value=%.6g serious=%d evals=%d",
        label, status, f_x, n_serious, n_eval[0],
    )
    return _BundleOutcome(x, f_x, status, n_serious, n_eval[0], history)


def stabilize_scenarios(scenario_set: ScenarioSet, kappa0,
                        params: SynthesisParams = SynthesisParams()) -> _BundleOutcome:
    """Drive the worst scenario spectral abscissa below the stability margin.

    Raises a synthesis failure if the bundle cannot reach a controller
    that places every scenario's closed loop strictly in the open left
    half plane.
    """

    def evaluate(kappa):
        try:
            value, cuts, _ = scenario_set.alpha_eval(kappa)
        except DerogatoryEigenvalueError as exc:
            raise OracleDomainError(str(exc)) from exc
        return value, cuts

    outcome = _proximal_bundle(
        evaluate, kappa0, params,
        stop_below=-params.stability_margin, label="stabilize",
    )
    if outcome.value >= -params.stability_margin:
        raise SynthesisFailureError(
            f"no stabilizing controller found (worst abscissa {outcome.value:.3e})",
            scenarios=list(scenario_set.scenarios),
        )
    return outcome


def synthesize_structured(plant: Plant, cstructure: ControllerStructure,
                          structure: UncertaintyStructure, scenarios, *,
                          kappa0=None, params: SynthesisParams = SynthesisParams(),
                          rel_tol=1e-8) -> SynthesisResult:
    """Min-max synthesis of a structured controller over a scenario set.

    Phase one stabilizes every scenario (skipped when the starting
    controller already does); phase two minimizes the worst-case norm with
    the bundle iteration.  The returned snapshot re-evaluates every
    scenario at the final parameters.

    Raises
    ------
    SynthesisFailureError
        If no stabilizing controller is found for the scenario set.
    """
    ss = ScenarioSet(plant, cstructure, structure, scenarios, rel_tol=rel_tol)
    if kappa0 is None:
        kappa0 = np.zeros(cstructure.n_params)
    kappa0 = np.asarray(kappa0, dtype=float).reshape(-1)
    if kappa0.shape[0] != cstructure.n_params:
        raise SynthesisFailureError(
            f"kappa0 has {kappa0.shape[0]} entries, controller structure has "
            f"{cstructure.n_params} free parameters"
        )

    if cstructure.n_params == 0:
        per = ss.per_scenario_norms(kappa0)
        value = float(np.max(per))
        return SynthesisResult(
            kappa=kappa0, value=value, per_scenario=per,
            status="fixed_controller", n_serious=0, n_oracle=ss.n_scenarios,
            stabilized=bool(np.all(np.isfinite(per))),
        )

    n_oracle = 0
    alpha0, _, _ = ss.alpha_eval(kappa0)
    n_oracle += 1
    kappa = kappa0
    stab_history = []
    if alpha0 >= -params.stability_margin:
        outcome = stabilize_scenarios(ss, kappa0, params)
        kappa = outcome.kappa
        n_oracle += outcome.n_eval
        stab_history = outcome.history
        logger.info(
            "stabilization: abscissa %.4g -> %.4g in %d serious steps",
            alpha0, outcome.value, outcome.n_serious,
        )

    def evaluate(kappa):
        value, cuts, _ = ss.norm_eval(kappa)
        return value, cuts

    outcome = _proximal_bundle(evaluate, kappa, params, label="synthesis")
    n_oracle += outcome.n_eval
    per = ss.per_scenario_norms(outcome.kappa)
    value = float(np.max(per))
    logger.info(
        "synthesis: F=%.6g over %d scenario(s), status=%s",
        value, ss.n_scenarios, outcome.status,
    )
    return SynthesisResult(
        kappa=outcome.kappa, value=value, per_scenario=per,
        status=outcome.status, n_serious=outcome.n_serious, n_oracle=n_oracle,
        stabilized=bool(np.all(np.isfinite(per))),
        history=stab_history + outcome.history,
    )
