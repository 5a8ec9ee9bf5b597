"""Filter-free broadband array beamforming with Slepian subspace models."""

__version__ = "0.1.0"

from .arrays import (ArrayGeometry, ArrivalAngle, Regime, SamplingPlan,
                     Scenario, aperture_span, delays, regime,
                     representation_dim, ula, upa)
from .batch import (CoefficientVector, delay_and_sum, encoded_solve, solve_ls,
                    synthesize_samples)
from .forward import (ForwardModel, KernelGram, build_forward,
                      build_kernel_gram, build_synthesis, design_model)
from .simulate import (ExperimentConfig, SnapshotBatch, generate_signal,
                       parse_config, sample_array)
from .slepian import BasisCache, SlepianBasis, build_basis, dimension

__all__ = [
    "ArrayGeometry", "ArrivalAngle", "BasisCache", "CoefficientVector",
    "ExperimentConfig", "ForwardModel", "KernelGram", "Regime", "SamplingPlan",
    "Scenario", "SlepianBasis", "SnapshotBatch", "aperture_span",
    "build_basis", "build_forward", "build_kernel_gram", "build_synthesis",
    "delay_and_sum", "delays", "design_model", "dimension", "encoded_solve",
    "generate_signal", "parse_config", "regime", "representation_dim",
    "sample_array", "solve_ls", "synthesize_samples", "ula", "upa",
]
