"""Analytical finite-size correction for periodic-boundary diffusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["CorrectionInput", "yeh_hummer", "box_length", "ZETA", "K_BOLTZMANN"]

ZETA = 2.8373                 # cubic-lattice self-term constant
K_BOLTZMANN = 1.380649e-23    # J/K
M2_PER_S_TO_A2_PER_PS = 1e8   # 1 m^2/s = 1e8 A^2/ps


@dataclass
class CorrectionInput:
    """Inputs for the hydrodynamic finite-size correction.

    viscosity in Pa*s (J s/m^3), box_length in A.  geometry_factor is the
    multiple of pi in the denominator: 2 follows the source convention used
    here; 6 selects the widely used Stokes-like form.  The two differ by an
    exact factor of 3 on the correction term.
    """

    d_md: float
    temperature: float
    viscosity: float
    box_length: float
    geometry_factor: float = 2.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not self.viscosity > 0:
            raise ValueError("viscosity must be positive")
        if not self.box_length > 0:
            raise ValueError("box_length must be positive")
        if not self.geometry_factor > 0:
            raise ValueError("geometry_factor must be positive")


def yeh_hummer(c: CorrectionInput) -> float:
    """Infinite-size diffusion coefficient, A^2/ps.

    Adds zeta * kB * T / (g * pi * eta * L) to the finite-box value, with
    the correction evaluated in SI and converted to A^2/ps.
    """
    length_m = c.box_length * 1e-10
    correction = (
        ZETA * K_BOLTZMANN * c.temperature
        / (c.geometry_factor * np.pi * c.viscosity * length_m)
    )
    return c.d_md + correction * M2_PER_S_TO_A2_PER_PS


def box_length(volumes) -> float:
    """Effective box edge: cube root of the mean box volume (A^3 -> A)."""
    volumes = np.asarray(volumes, dtype=float)
    if volumes.size == 0:
        raise ValueError("need at least one volume")
    if not np.all(volumes > 0):
        raise ValueError("volumes must be positive")
    return float(np.mean(volumes) ** (1.0 / 3.0))
