"""Robust structured controller synthesis over real parameter boxes.

The package models uncertain feedback loops as linear fractional
interconnections of a plant, a structured controller, and a diagonal block
of normalized real parameters.  On top of that core it provides worst-case
analysis (spectral abscissa, H-infinity performance, robustness radii),
min-max synthesis of structured controllers against scenario sets, and an
outer loop that grows the scenario set from worst-case searches until the
design is certified on the box.
"""

from .exceptions import (
    AlgebraicLoopError,
    DerogatoryEigenvalueError,
    DimensionError,
    NumericalError,
    OracleDomainError,
    SynthesisFailureError,
    UnstableClosedLoopError,
    WellPosednessError,
)
from .lft import (
    ClosedLoopChannels,
    ControllerStructure,
    PartitionedSystem,
    Plant,
    StateSpace,
    UncertainClosedLoop,
    UncertaintyStructure,
    build_delta_matrix,
    close_controller,
    close_lower,
    close_uncertainty,
    close_upper,
    closed_loop_a,
    realize_controller,
    star_product,
    two_port_static,
)
from .analysis import (
    ActiveEigenData,
    ActiveFrequencyData,
    Subgradient,
    hinf_norm,
    spectral_abscissa,
    subgrad_a_minus_delta,
    subgrad_h_minus_delta,
    subgrad_hinf_kappa,
    wellposedness_measure,
)
from .minmin import Box, MinMinParams, MinMinResult, minimize_minmin
from .worstcase import (
    InstabilityFound,
    RadiusResult,
    WorstCaseResult,
    destabilize,
    distance_to_instability,
    performance_radius,
    wellposedness_scan,
    worst_performance,
)
from .synthesis import (
    SynthesisParams,
    SynthesisResult,
    multimodel_objective,
    synthesize_structured,
)
from .problem import ProblemFile, ProblemOptions, load_problem, save_problem
from .design import (
    GridCertificate,
    RunReport,
    Scenario,
    grid_certify,
    load_report,
    run_dynamic_inner_approximation,
    write_report,
)

__version__ = "0.1.0"

__all__ = [
    "AlgebraicLoopError",
    "DerogatoryEigenvalueError",
    "DimensionError",
    "NumericalError",
    "OracleDomainError",
    "SynthesisFailureError",
    "UnstableClosedLoopError",
    "WellPosednessError",
    "ClosedLoopChannels",
    "ControllerStructure",
    "PartitionedSystem",
    "Plant",
    "StateSpace",
    "UncertainClosedLoop",
    "UncertaintyStructure",
    "build_delta_matrix",
    "close_controller",
    "close_lower",
    "close_uncertainty",
    "close_upper",
    "closed_loop_a",
    "realize_controller",
    "star_product",
    "two_port_static",
    "ActiveEigenData",
    "ActiveFrequencyData",
    "Subgradient",
    "hinf_norm",
    "spectral_abscissa",
    "subgrad_a_minus_delta",
    "subgrad_h_minus_delta",
    "subgrad_hinf_kappa",
    "wellposedness_measure",
    "Box",
    "MinMinParams",
    "MinMinResult",
    "minimize_minmin",
    "InstabilityFound",
    "RadiusResult",
    "WorstCaseResult",
    "destabilize",
    "distance_to_instability",
    "performance_radius",
    "wellposedness_scan",
    "worst_performance",
    "SynthesisParams",
    "SynthesisResult",
    "multimodel_objective",
    "synthesize_structured",
    "ProblemFile",
    "ProblemOptions",
    "load_problem",
    "save_problem",
    "GridCertificate",
    "RunReport",
    "Scenario",
    "grid_certify",
    "load_report",
    "run_dynamic_inner_approximation",
    "write_report",
]
