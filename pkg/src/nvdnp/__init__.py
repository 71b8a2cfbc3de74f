"""Desk-scale models of low-field optical 13C DNP with NV centers in diamond powder."""

from .errors import DomainError, FitError, FitQualityWarning, PerturbativeValidityWarning, SubspaceError
from .spinsys import (
    EigenSystem,
    HyperfineTensor,
    Orientation,
    PhysicalConstants,
    TransitionTable,
    build_coupled_hamiltonian,
    build_electron_hamiltonian,
    eig_hermitian,
    initial_electron_density,
    transition_table,
)
from .powder import Spectrum, powder_spectrum, sample_orientations
from .lzdnp import DNPSystem, RateModelParams, SweepProgram, ratchet_cycle, rate_model_fit
from .relaxo import DecayRecord, RelaxationProfile, fit_monoexponential, fit_r1_profile, knee_field
from .protocol import NmrSpectrum, background_suppress, suppression_report
from .calib import plan_sweep_band, rabi_from_power

__version__ = "0.1.0"

__all__ = [
    "DNPSystem",
    "DecayRecord",
    "DomainError",
    "EigenSystem",
    "FitError",
    "FitQualityWarning",
    "HyperfineTensor",
    "NmrSpectrum",
    "Orientation",
    "PerturbativeValidityWarning",
    "PhysicalConstants",
    "RateModelParams",
    "RelaxationProfile",
    "Spectrum",
    "SubspaceError",
    "SweepProgram",
    "TransitionTable",
    "background_suppress",
    "build_coupled_hamiltonian",
    "build_electron_hamiltonian",
    "eig_hermitian",
    "fit_monoexponential",
    "fit_r1_profile",
    "initial_electron_density",
    "knee_field",
    "plan_sweep_band",
    "powder_spectrum",
    "rabi_from_power",
    "ratchet_cycle",
    "rate_model_fit",
    "sample_orientations",
    "suppression_report",
    "transition_table",
]
