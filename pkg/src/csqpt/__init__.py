"""Coherent-state process tomography by iterative maximum likelihood."""

from .hilbert import LossModel
from .metrics import WorstCaseConfig, uhlmann_fidelity, worst_case_fidelity
from .mle import IterationConfig, QuadratureHistogram, bin, reconstruct
from .process import ProcessModel, ProcessTensor, reference_tensor
from .simulator import HomodyneDataset, ProbeSpec, probe_grid, simulate_dataset

__all__ = [
    "HomodyneDataset",
    "IterationConfig",
    "LossModel",
    "ProbeSpec",
    "ProcessModel",
    "ProcessTensor",
    "QuadratureHistogram",
    "WorstCaseConfig",
    "bin",
    "probe_grid",
    "reconstruct",
    "reference_tensor",
    "simulate_dataset",
    "uhlmann_fidelity",
    "worst_case_fidelity",
]
