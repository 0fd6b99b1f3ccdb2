"""Normalizing-flow sampling of Sherrington-Kirkpatrick spin glasses.

The discrete Ising Boltzmann distribution is mapped to a continuous density by a
Gaussian (Hubbard-Stratonovich) transform, sampled with parallel tempering, and
learned by real NVP flows trained on forward or reverse KL.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DisorderRealization,
    ShiftedCoupling,
    discrete_energy,
    draw_sk_disorder,
    enumerate_exact,
    hamiltonian_density,
    shift_coupling,
)
from .errors import InvalidStateError, NumericalError, TrainingDivergence  # noqa: E402
from .flow import FlowModel, init_flow  # noqa: E402
from .sampler import SampleSet, TemperatureLadder, run_pt  # noqa: E402
from .trainer import TrainConfig, train  # noqa: E402

__all__ = [
    "DisorderRealization", "ShiftedCoupling", "discrete_energy", "draw_sk_disorder",
    "enumerate_exact", "hamiltonian_density", "shift_coupling", "InvalidStateError",
    "NumericalError", "TrainingDivergence", "FlowModel", "init_flow", "SampleSet",
    "TemperatureLadder", "run_pt", "TrainConfig", "train",
]
