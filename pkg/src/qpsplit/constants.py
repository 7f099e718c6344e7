"""Physical constants (SI, CODATA 2018 exact values via scipy)."""

from dataclasses import dataclass

from scipy import constants as _sc


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = _sc.hbar
    e_charge: float = _sc.e
    flux_quantum: float = _sc.h / (2 * _sc.e)
    k_B: float = _sc.k

    @property
    def h(self):
        return 2 * 3.141592653589793 * self.hbar


CONSTANTS = PhysicalConstants()

GHZ = 1e9
