"""Lagrangian particle solver for compressible gas dynamics.

Each timestep projects the free-streaming motion of a weighted particle
cloud onto the cone of monotone transport maps (pressureless case) or
minimizes an acceleration-plus-internal-energy functional over that cone
(polytropic case), with a full per-step conservation and energy ledger.
"""
from .core import (FluidState, GasLaw, StepReport, TransportMap,
                   kinetic_energy, push_forward, total_entropy,
                   total_momentum)
from .polytropic import (EnergyDiscretization, SolverConfig, det_energy,
                         det_inequality_check, discretize,
                         dissipation_integral, internal_energy, minimize_step,
                         objective)
from .pressureless import (PressurelessStep, accel_cost_sq, optimal_velocity,
                           step, stress_trace)
from .projection import (ProjectionProblem, ProjectionResult, halfspace_correct,
                         is_monotone, project, project_1d, project_nd)
from .timeloop import (Frame, SimConfig, Trajectory, interpolate,
                       kantorovich_norm_1d, lipschitz_report, simulate,
                       wasserstein2_1d)

__version__ = "0.1.0"

__all__ = [
    "FluidState", "GasLaw", "StepReport", "TransportMap", "kinetic_energy",
    "push_forward", "total_entropy", "total_momentum",
    "EnergyDiscretization", "SolverConfig", "det_energy",
    "det_inequality_check", "discretize", "dissipation_integral",
    "internal_energy", "minimize_step", "objective",
    "PressurelessStep", "accel_cost_sq", "optimal_velocity", "step",
    "stress_trace",
    "ProjectionProblem", "ProjectionResult", "halfspace_correct",
    "is_monotone", "project", "project_1d", "project_nd",
    "Frame", "SimConfig", "Trajectory", "interpolate", "kantorovich_norm_1d",
    "lipschitz_report", "simulate", "wasserstein2_1d",
    "__version__",
]
