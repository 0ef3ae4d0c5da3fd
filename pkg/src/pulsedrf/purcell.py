"""Cavity-enhanced spontaneous emission: parameters and the decay-rate law.

All quantities are SI internally: rates in 1/s, angular frequencies in rad/s,
times in seconds, lengths in meters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as _C_LIGHT

from .errors import ParameterError

__all__ = [
    "CavityParams",
    "EmitterParams",
    "SpectralDiffusionParams",
    "DetuningTable",
    "cavity_linewidth",
    "purcell_rate",
    "lifetime_curve",
]


@dataclass(frozen=True)
class CavityParams:
    """Micropillar cavity: quality factor, resonance wavelength, Purcell factor."""

    quality_factor: float
    wavelength: float        # m
    purcell_factor: float    # dimensionless, >= 0

    def __post_init__(self):
        if not (np.isfinite(self.quality_factor) and self.quality_factor > 0):
            raise ParameterError("quality_factor must be > 0")
        if not (np.isfinite(self.wavelength) and self.wavelength > 0):
            raise ParameterError("wavelength must be > 0")
        if not (np.isfinite(self.purcell_factor) and self.purcell_factor >= 0):
            raise ParameterError("purcell_factor must be >= 0")


@dataclass(frozen=True)
class SpectralDiffusionParams:
    """Ornstein-Uhlenbeck model of the slowly wandering emitter frequency.

    sigma is the stationary standard deviation of the frequency offset (rad/s),
    tau_c the correlation time (s).
    """

    sigma: float = 0.0
    tau_c: float = 1e-6

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ParameterError("diffusion sigma must be >= 0")
        if not (np.isfinite(self.tau_c) and self.tau_c > 0):
            raise ParameterError("diffusion tau_c must be > 0")


@dataclass(frozen=True)
class EmitterParams:
    """Two-level emitter noise model.

    gamma_bulk is the far-detuned radiative decay rate (1/s), gamma_dephasing
    the pure dephasing rate (1/s) adding to the coherence decay gamma/2 + gamma_d.
    """

    gamma_bulk: float
    gamma_dephasing: float = 0.0
    diffusion: SpectralDiffusionParams = field(default_factory=SpectralDiffusionParams)

    def __post_init__(self):
        if not (np.isfinite(self.gamma_bulk) and self.gamma_bulk > 0):
            raise ParameterError("gamma_bulk must be > 0")
        if not (np.isfinite(self.gamma_dephasing) and self.gamma_dephasing >= 0):
            raise ParameterError("gamma_dephasing must be >= 0")


@dataclass(frozen=True)
class DetuningTable:
    """Empirical temperature -> emitter-cavity detuning lookup.

    Temperatures in kelvin (strictly increasing), detunings in rad/s.
    Lookups interpolate piecewise-linearly and clamp outside the knot range.
    """

    temperatures: tuple
    detunings: tuple

    def __post_init__(self):
        t = np.asarray(self.temperatures, dtype=float)
        d = np.asarray(self.detunings, dtype=float)
        if t.size == 0 or t.size != d.size:
            raise ParameterError("detuning table needs equally many temperatures and detunings")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ParameterError("detuning table temperatures must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(d))):
            raise ParameterError("detuning table entries must be finite")

    def detuning_at(self, temperature):
        """Detuning (rad/s) at the given temperature(s), linear between knots."""
        return np.interp(temperature, self.temperatures, self.detunings)


def cavity_linewidth(cav: CavityParams) -> float:
    """Cavity energy decay rate kappa = omega_c / Q as an angular frequency (rad/s)."""
    return 2.0 * np.pi * _C_LIGHT / (cav.wavelength * cav.quality_factor)


def purcell_rate(delta, cav: CavityParams, em: EmitterParams):
    """Total radiative decay rate (1/s) at emitter-cavity detuning delta (rad/s).

    Weak-coupling Lorentzian enhancement:

        Gamma(delta) = gamma_bulk * (1 + F_p / (1 + (2 delta / kappa)^2))

    so Gamma(0) = gamma_bulk (1 + F_p) and Gamma(inf) = gamma_bulk.
    Accepts scalar or array detuning.
    """
    delta = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(delta)):
        raise ParameterError("detuning must be finite")
    kappa = cavity_linewidth(cav)
    lorentz = 1.0 / (1.0 + (2.0 * delta / kappa) ** 2)
    rate = em.gamma_bulk * (1.0 + cav.purcell_factor * lorentz)
    return float(rate) if rate.ndim == 0 else rate


def lifetime_curve(detunings, cav: CavityParams, em: EmitterParams) -> np.ndarray:
    """Radiative lifetime T1 = 1/Gamma over a detuning sweep.

    Returns an (n, 2) array of (detuning rad/s, T1 seconds).
    """
    detunings = np.atleast_1d(np.asarray(detunings, dtype=float))
    if detunings.size == 0:
        raise ParameterError("detuning sweep must be nonempty")
    t1 = 1.0 / purcell_rate(detunings, cav, em)
    return np.column_stack([detunings, t1])
