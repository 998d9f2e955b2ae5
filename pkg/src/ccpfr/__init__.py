"""Chance-constrained DC optimal power flow with dead-zone primary frequency response."""

from ccpfr.grid import (
    Bus,
    CaseFormatError,
    CaseValidationError,
    GridCase,
    Generator,
    Line,
    PTDFMatrix,
    WindFarm,
    apply_case_modifiers,
    build_ptdf,
    dc_flows,
    load_case,
)
from ccpfr.policy import Deadband, DroopSet, PolicyResponse, respond, tilde_alpha
from ccpfr.uncertainty import SigmaMoments, WindStatistics, sigma_moments

__version__ = "0.1.0"

__all__ = [
    "Bus",
    "CaseFormatError",
    "CaseValidationError",
    "Deadband",
    "DroopSet",
    "Generator",
    "GridCase",
    "Line",
    "PTDFMatrix",
    "PolicyResponse",
    "SigmaMoments",
    "WindFarm",
    "WindStatistics",
    "apply_case_modifiers",
    "build_ptdf",
    "dc_flows",
    "load_case",
    "respond",
    "sigma_moments",
    "tilde_alpha",
]
