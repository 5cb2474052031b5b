"""Pump scheduling for coupled power and water distribution networks.

Pumps in a water network act as flexible loads that provide voltage
support to the feeder they sit on.  The package builds deterministic,
adjustable-robust and chance-constrained schedules with affine real-time
pump policies, and checks them by Monte Carlo simulation against the
linearized feeder and the nonlinear water physics.
"""

from .formulations import (
    DecisionSchedule,
    FormulationConfig,
    ProblemInstance,
    build_deterministic,
    build_probabilistic,
    build_robust,
    objective,
    realize_pump_power,
    schedule,
)
from .pdn import PdnNetwork, VoltageAffineMap, build_voltage_map, evaluate_voltages
from .uncertainty import ErrorDistribution, FittedNormal, RobustBox, fit_mle, robust_box, sample
from .wdn import WdnNetwork, check_feasibility, hull_constraints, pipe_headloss

__all__ = [
    "DecisionSchedule",
    "ErrorDistribution",
    "FittedNormal",
    "FormulationConfig",
    "PdnNetwork",
    "ProblemInstance",
    "RobustBox",
    "VoltageAffineMap",
    "WdnNetwork",
    "build_deterministic",
    "build_probabilistic",
    "build_robust",
    "build_voltage_map",
    "check_feasibility",
    "evaluate_voltages",
    "fit_mle",
    "hull_constraints",
    "objective",
    "pipe_headloss",
    "realize_pump_power",
    "robust_box",
    "sample",
    "schedule",
]
