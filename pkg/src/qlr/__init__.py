"""Lanczos Green's functions and ground states from state-preserving quantum counting."""
from __future__ import annotations

from .counting import (
    CoefficientEstimate,
    CountingCircuit,
    CountingContext,
    CountingTally,
    DegenerateReferenceError,
    GnOperator,
    RecoveryExhausted,
    build_gn,
    count_alpha,
    count_beta,
    count_overlap,
    count_spectrum,
    counting_round,
    recover,
)
from .driver import ComparisonReport, ConfigError, ExperimentConfig, assemble_Y, compare, run_greens, run_groundstate
from .greens import ContinuedFraction, SpectralSamples, combine_parts, eval_cf, spectral, truncate
from .operators import (
    FermionOperator,
    LcuDecomposition,
    QubitOperator,
    build_hubbard,
    hermitian_split,
    jordan_wigner,
    normalize_and_shift,
)
from .oracle import TridiagonalSpectrum, classical_lanczos, reference_resolvent, tridiagonal_eigs
from .statevector import RandomStream, RegisterLayout, StateVector

__version__ = "0.1.0"
