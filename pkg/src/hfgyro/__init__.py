"""Simulation and sensitivity analysis of a hyperfine-enhanced NV nuclear-spin gyroscope.

Modules:

- ``linalg``: spin operators, Jacobi eigensolver, propagator helpers
- ``hamiltonian``: NV + 15N Hamiltonian in the lab and co-rotating frames, enhancement factor
- ``evolution``: time propagation, Lindblad relaxation, noise ensembles
- ``metrology``: analytic signals, adiabaticity, sensitivity bounds, maps
- ``fitting``: decay and rotation-rate estimators
- ``scenarios``: canned figure scenarios with checked expectations
- ``config`` / ``cli``: YAML configs and the ``hfgyro`` command
"""

from .evolution import NoiseModel, Scenario, Trajectory, ensemble_average, measure_signal, propagate, run
from .fitting import DecayFitter, RotationRateEstimator, estimate_rotation_rate, fit_decay
from .hamiltonian import FieldSpec, NVParams, RotationSpec, enhancement_factor, first_order_enhancement
from .metrology import SensitivityInputs, sensitivity_map
from .scenarios import FIGURES, measure_enhancement, run_figure

__version__ = "0.1.0"

__all__ = [
    "DecayFitter",
    "FIGURES",
    "FieldSpec",
    "NVParams",
    "NoiseModel",
    "RotationRateEstimator",
    "RotationSpec",
    "Scenario",
    "SensitivityInputs",
    "Trajectory",
    "enhancement_factor",
    "ensemble_average",
    "estimate_rotation_rate",
    "first_order_enhancement",
    "fit_decay",
    "measure_enhancement",
    "measure_signal",
    "propagate",
    "run",
    "run_figure",
    "sensitivity_map",
]
