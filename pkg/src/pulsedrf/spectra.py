"""Emission spectrum from first-order coherence, and the scanning Fabry-Perot response.

The field correlation decays as |g1(tau)| = exp(-(gamma/2 + gamma_d)|tau|) *
exp(-sigma^2 tau^2 / 2): the Lorentzian part is the homogeneous line of FWHM
(gamma + 2 gamma_d)/(2 pi), the Gaussian part the frozen spectral-diffusion
envelope of FWHM 2.355*sigma/(2 pi). The spectrum is computed as a numerical
cosine transform of g1 so the Voigt fitter (Faddeeva-based) stays an
independent route.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridError, ParameterError

__all__ = [
    "FabryPerotParams",
    "SpectrumTrace",
    "g1_magnitude",
    "emission_spectrum",
    "fp_scan",
    "voigt_fwhm",
]


@dataclass(frozen=True)
class FabryPerotParams:
    """Scanning cavity: finesse, free spectral range, linewidth (all FWHM, Hz)."""

    finesse: float
    fsr: float
    linewidth: float
    transmission_peak: float = 1.0

    def __post_init__(self):
        for name in ("finesse", "fsr", "linewidth"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0")
        if not 0.0 < self.transmission_peak <= 1.0:
            raise ParameterError("transmission_peak must be in (0, 1]")
        if abs(self.finesse * self.linewidth / self.fsr - 1.0) > 0.10:
            raise ParameterError("finesse and fsr/linewidth disagree by more than 10%")


@dataclass
class SpectrumTrace:
    """Intensity versus frequency offset from line center (Hz)."""

    frequencies: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.intensities = np.asarray(self.intensities, dtype=float)
        if self.frequencies.size != self.intensities.size:
            raise ParameterError("frequency and intensity grids differ in length")
        if self.frequencies.size > 1 and not np.all(np.diff(self.frequencies) > 0):
            raise ParameterError("frequencies must be strictly increasing")

    def normalized(self) -> "SpectrumTrace":
        """Unit-peak copy."""
        peak = self.intensities.max()
        return SpectrumTrace(self.frequencies.copy(), self.intensities / peak)

    def fwhm(self) -> float:
        """Full width at half maximum by linear interpolation of the crossings."""
        y = self.intensities
        f = self.frequencies
        half = y.max() / 2.0
        above = np.flatnonzero(y >= half)
        if above.size < 2:
            raise GridError("spectrum too narrow on this grid for a width estimate")
        i0, i1 = above[0], above[-1]
        left = f[i0] if i0 == 0 else np.interp(half, [y[i0 - 1], y[i0]], [f[i0 - 1], f[i0]])
        right = f[i1] if i1 == len(f) - 1 else np.interp(
            half, [y[i1 + 1], y[i1]], [f[i1 + 1], f[i1]])
        return float(right - left)


def g1_magnitude(tau, gamma: float, gamma_d: float = 0.0, sigma: float = 0.0):
    """|g1(tau)|: homogeneous exponential times frozen-Gaussian diffusion envelope."""
    if gamma <= 0:
        raise ParameterError("gamma must be > 0")
    tau = np.asarray(tau, dtype=float)
    out = np.exp(-(gamma / 2.0 + gamma_d) * np.abs(tau) - 0.5 * (sigma * tau) ** 2)
    return float(out) if out.ndim == 0 else out


def voigt_fwhm(f_lorentzian: float, f_gaussian: float) -> float:
    """Accurate (~0.02%) approximation of the Voigt profile FWHM."""
    return 0.5346 * f_lorentzian + math.sqrt(0.2166 * f_lorentzian ** 2 + f_gaussian ** 2)


def emission_spectrum(gamma: float, gamma_d: float = 0.0, sigma: float = 0.0,
                      grid=None) -> SpectrumTrace:
    """Emission spectrum as the cosine transform of |g1|, unit area.

    The result is a Voigt profile with Lorentzian FWHM (gamma + 2 gamma_d)/(2 pi)
    and Gaussian FWHM 2.355*sigma/(2 pi). The grid (Hz, offsets from line
    center) must span at least 10 and resolve at least 1/20 of the line width.
    """
    if grid is None:
        raise ParameterError("a frequency grid is required")
    f = np.asarray(grid, dtype=float)
    f_l = (gamma + 2.0 * gamma_d) / (2.0 * math.pi)
    f_g = 2.355 * sigma / (2.0 * math.pi)
    width = voigt_fwhm(f_l, f_g)
    if (f[-1] - f[0]) < 10.0 * width:
        raise GridError(f"grid spans {(f[-1] - f[0]):.3g} Hz, need >= 10 line widths")
    spacing = np.max(np.diff(f))
    if spacing > width / 20.0:
        raise GridError(f"grid spacing {spacing:.3g} Hz coarser than line width / 20")

    # tau grid: reach g1 < 1e-12 and sample the fastest oscillation finely
    decay = gamma / 2.0 + gamma_d
    tau_max = 28.0 / decay
    if sigma > 0:
        tau_max = min(tau_max, 8.0 / sigma + 5.0 / decay)
    f_max = max(abs(f[0]), abs(f[-1]))
    n_tau = int(max(4096, 40 * f_max * tau_max))
    n_tau += (n_tau + 1) % 2  # odd point count for Simpson weights
    tau = np.linspace(0.0, tau_max, n_tau)
    g1 = g1_magnitude(tau, gamma, gamma_d, sigma)
    wts = np.ones(n_tau)
    wts[1:-1:2], wts[2:-1:2] = 4.0, 2.0
    wts *= (tau[1] - tau[0]) / 3.0

    intens = np.empty(f.size)
    block = max(1, int(2e7) // n_tau)
    for i in range(0, f.size, block):
        fi = f[i:i + block, None]
        intens[i:i + block] = 2.0 * ((g1 * wts) * np.cos(2.0 * math.pi * fi * tau)).sum(axis=1)
    return SpectrumTrace(f, intens)


def _airy_kernel(x, fp: FabryPerotParams, exact: bool):
    """Transmission comb, normalized to unit area per free spectral range."""
    if exact:
        coef = (2.0 * fp.finesse / math.pi) ** 2
        t = 1.0 / (1.0 + coef * np.sin(math.pi * x / fp.fsr) ** 2)
        return t / (fp.fsr / math.sqrt(1.0 + coef))
    hwhm = fp.linewidth / 2.0
    m_lo = int(np.floor(x.min() / fp.fsr)) - 8
    m_hi = int(np.ceil(x.max() / fp.fsr)) + 8
    out = np.zeros_like(x)
    for m in range(m_lo, m_hi + 1):
        out += hwhm / math.pi / ((x - m * fp.fsr) ** 2 + hwhm ** 2)
    return out


def fp_scan(spectrum: SpectrumTrace, fp: FabryPerotParams, scan_range,
            exact_airy: bool = False) -> SpectrumTrace:
    """Detected trace of a scanning Fabry-Perot cavity sweeping over scan_range.

    The input spectrum is convolved with the cavity transmission comb
    (Lorentzian-tooth approximation by default, exact Airy behind the flag)
    and scaled by the peak transmission. Scan frequencies must stay within
    +-fsr/2. Integrated intensity over a full period is preserved up to the
    transmission_peak factor.
    """
    scan = np.asarray(scan_range, dtype=float)
    if np.any(np.abs(scan) > fp.fsr / 2.0 * (1 + 1e-12)):
        raise ParameterError("scan_range must lie within +-fsr/2")
    f_in = spectrum.frequencies
    y_in = spectrum.intensities
    df = np.gradient(f_in) if f_in.size > 1 else np.array([1.0])
    diff = scan[:, None] - f_in[None, :]
    kernel = _airy_kernel(diff.ravel(), fp, exact_airy).reshape(diff.shape)
    out = fp.transmission_peak * (kernel * (y_in * df)[None, :]).sum(axis=1)
    return SpectrumTrace(scan, out)
