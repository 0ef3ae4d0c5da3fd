"""Pulsed intensity-correlation (HBT) histograms and g2(0) extraction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bloch import PulseParams, prep_efficiency, sample_emission_arrays
from .errors import EmptyInputError, InsufficientSpanError, ParameterError

__all__ = [
    "Histogram",
    "PeakIntegration",
    "hbt_histogram",
    "g2_from_histogram",
    "purity_vs_power",
    "records_to_arrays",
]


@dataclass
class Histogram:
    """Uniform-bin counts over time delay: bin_width and left edge in seconds."""

    bin_width: float
    t_min: float
    counts: np.ndarray

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ParameterError("bin_width must be > 0")
        self.counts = np.asarray(self.counts)
        if self.counts.size < 1:
            raise ParameterError("histogram needs at least one bin")

    def bin_centers(self) -> np.ndarray:
        return self.t_min + (np.arange(self.counts.size) + 0.5) * self.bin_width

    def bin_edges(self) -> np.ndarray:
        return self.t_min + np.arange(self.counts.size + 1) * self.bin_width

    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class PeakIntegration:
    """Integrated counts of one correlation peak."""

    center: float
    half_window: float
    area: float
    stderr: float = 0.0

    def __post_init__(self):
        if not self.half_window > 0:
            raise ParameterError("half_window must be > 0")
        if self.area < 0:
            raise ParameterError("peak area must be >= 0")


def records_to_arrays(records):
    """Flatten emission records to (pulse indices, times-within-pulse) arrays."""
    idx, times = [], []
    for rec in records:
        idx.extend([rec.pulse_index] * len(rec.times))
        times.extend(rec.times)
    return np.asarray(idx, dtype=np.intp), np.asarray(times, dtype=float)


def _pair_delays_histogram(t_abs, edges):
    """Histogram of all ordered pairwise delays t_i - t_j within the edge range.

    t_abs must be sorted and edges symmetric about zero. Sweeps neighbor
    offsets until no pair is in range; each unordered pair enters once at
    +tau and once at -tau (mirrored bins).
    """
    counts = np.zeros(edges.size - 1, dtype=np.int64)
    max_tau = edges[-1]
    n = t_abs.size
    d = 1
    while d < n:
        dif = t_abs[d:] - t_abs[:-d]
        sel = dif <= max_tau
        if not sel.any():
            break
        counts += np.histogram(dif[sel], bins=edges)[0]
        d += 1
    return counts + counts[::-1]


def hbt_histogram(records, rep_period: float, bin_width: float, span: float,
                  jitter_sigma: float = 0.0, seed: int = 0) -> Histogram:
    """Intensity-correlation histogram of photon pair delays behind a 50:50 splitter.

    All ordered photon pairs (absolute times, pulse offset included) with
    |tau| <= span are counted. Optional Gaussian detector jitter blurs the
    times before pairing.
    """
    if isinstance(records, tuple) and len(records) == 2:
        idx, times = records
        idx = np.asarray(idx, dtype=np.intp)
        times = np.asarray(times, dtype=float)
    else:
        records = list(records)
        if len(records) == 0:
            raise EmptyInputError("no emission records")
        idx, times = records_to_arrays(records)
    if bin_width > rep_period / 50.0:
        raise ParameterError("bin_width must be <= rep_period/50")
    if span <= 0:
        raise ParameterError("span must be > 0")

    t_abs = idx * rep_period + times
    if jitter_sigma > 0.0 and t_abs.size:
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x4A17)))
        t_abs = t_abs + rng.normal(0.0, jitter_sigma, t_abs.size)
    t_abs = np.sort(t_abs)

    n_half = int(np.ceil(span / bin_width))
    edges = bin_width * np.arange(-n_half, n_half + 1)
    counts = (_pair_delays_histogram(t_abs, edges)
              if t_abs.size > 1 else np.zeros(2 * n_half, dtype=np.int64))
    return Histogram(bin_width=bin_width, t_min=float(edges[0]), counts=counts)


def _peak_area(h: Histogram, center: float, half_window: float) -> int:
    t = h.bin_centers()
    sel = np.abs(t - center) <= half_window
    return int(h.counts[sel].sum())


def g2_from_histogram(h: Histogram, rep_period: float, k_side: int = 4):
    """g2(0) as zero-delay peak area over the mean of side-peak areas.

    Windows are rep_period wide. Uses up to k_side peaks on each side and
    needs the histogram to cover at least three. Returns (g2, stderr) with
    Poisson error propagation.
    """
    edges = h.bin_edges()
    k_max = int(np.floor((edges[-1] / rep_period) - 0.5 + 1e-9))
    if k_max < 3:
        raise InsufficientSpanError("histogram must cover >= 3 side peaks on each side")
    k_use = min(k_side, k_max)
    half = rep_period / 2.0
    a0 = _peak_area(h, 0.0, half)
    sides = [_peak_area(h, s * k * rep_period, half)
             for k in range(1, k_use + 1) for s in (1, -1)]
    s_tot = float(np.sum(sides))
    if s_tot == 0:
        raise InsufficientSpanError("side peaks are empty; not enough data")
    mean_side = s_tot / len(sides)
    g2 = a0 / mean_side
    stderr = g2 * np.sqrt(1.0 / max(a0, 1.0) + 1.0 / s_tot) if a0 > 0 else \
        np.sqrt(1.0) / mean_side
    return float(g2), float(stderr)


def purity_vs_power(areas, pulse_template: PulseParams, gamma: float,
                    gamma_d: float, extraction_efficiency: float,
                    n_pulses: int = 200_000, bin_width: float = None,
                    span_periods: float = 5.0, background_rate: float = 0.0,
                    seed: int = 0, readout_sigma: float = 2.0,
                    n_threads: int = 1) -> np.ndarray:
    """Efficiency-vs-purity trade-off over pulse areas.

    For each area Theta: x = prep_efficiency * extraction_efficiency (photons
    per pulse into the first lens), y = 1 - g2 from a quantum-jump simulation.
    Returns an (n, 2) array of (x, y).
    """
    areas = np.atleast_1d(np.asarray(areas, dtype=float))
    if areas.size == 0:
        raise ParameterError("areas must be nonempty")
    rep = pulse_template.rep_period
    if bin_width is None:
        bin_width = rep / 100.0
    span = span_periods * rep
    out = np.empty((areas.size, 2))
    for i, theta in enumerate(areas):
        if theta <= 0:
            out[i] = (0.0, 1.0)
            continue
        p = PulseParams(theta, pulse_template.fwhm, pulse_template.center, rep)
        eff = prep_efficiency(p, gamma, gamma_d, readout_sigma) * extraction_efficiency
        arrays = sample_emission_arrays(n_pulses, p, gamma, gamma_d,
                                        background_rate, seed + i, n_threads)
        h = hbt_histogram(arrays, rep, bin_width, span)
        if h.total() == 0:
            out[i] = (eff, 1.0)
            continue
        g2, _ = g2_from_histogram(h, rep)
        out[i] = (eff, 1.0 - g2)
    return out
