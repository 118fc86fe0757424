"""Simulation and estimation toolkit for a double-pass continuously measured magnetometer.

Submodules
----------
spin_algebra
    Collective spin operators, coherent and squeezed states, Husimi Q-function.
sde_engine
    Seeded Wiener noise and predictor-corrector SDE integration.
dynamics
    Double-pass quantum filter (adjoint, Itô SSE, Stratonovich SSE) and records.
fisher_bound
    Finite-difference quantum Fisher information and analytic baselines.
estimators
    Particle, projection and Kalman field estimators.
experiment_runner
    Configuration, scenarios and the command-line interface.
"""

from .dynamics import MeasurementRecord, ModelParams, generate_record
from .spin_algebra import (
    DensityOp,
    PureState,
    SpinOperators,
    build_spin_operators,
    spin_coherent_state,
)

__version__ = "0.1.0"

__all__ = [
    "DensityOp",
    "MeasurementRecord",
    "ModelParams",
    "PureState",
    "SpinOperators",
    "build_spin_operators",
    "generate_record",
    "spin_coherent_state",
]
