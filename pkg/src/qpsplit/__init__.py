"""Charge-parity splitting and 1/f charge noise in an ultrastrongly coupled
flux qubit + LC resonator."""

from ._backend import backend_name
from .circuit import BasisSpec, ChargeConfig, CircuitParams

__version__ = "0.1.0"

__all__ = ["BasisSpec", "ChargeConfig", "CircuitParams", "backend_name", "__version__"]
