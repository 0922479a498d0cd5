"""Northbound/southbound vertical tweak pathways across a software stack.

Extended resource IDs carry blueprint, status and tweak capsules through
intermediate layers untouched; a small scheme language describes what a
component exposes; a trusted exchange bootstraps the first blueprint; an
event simulator and a closed-form DVFS model measure the energy effect.
"""

from .capsule import (
    Capsule,
    CodecConfig,
    ElisionContext,
    ExtendedResourceId,
    StatusRecord,
    decode_extended_id,
    encode_extended_id,
)
from .dvfs import CyclePattern, DvfsModelParams, allocate_cores, eta, sweep_eta
from .scheme import Blueprint, Tweak, parse_blueprint, print_blueprint, validate_tweak
from .tx import TrustedExchange

__version__ = "0.1.0"

__all__ = [
    "Blueprint",
    "Capsule",
    "CodecConfig",
    "CyclePattern",
    "DvfsModelParams",
    "ElisionContext",
    "ExtendedResourceId",
    "StatusRecord",
    "TrustedExchange",
    "Tweak",
    "allocate_cores",
    "decode_extended_id",
    "encode_extended_id",
    "eta",
    "parse_blueprint",
    "print_blueprint",
    "sweep_eta",
    "validate_tweak",
]
