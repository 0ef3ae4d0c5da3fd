"""Two-photon Hong-Ou-Mandel interference between successively emitted photons.

The Monte Carlo is event-based. Each trial excites the emitter twice, a time
`delay` apart, and routes every photon through an unbalanced interferometer
whose long arm adds exactly that delay. Photons pick an arm at the first
splitter and an output port at the second; when two emitter photons from
different pulses reach the second splitter inside the same wavepacket slot
with parallel polarization, their coincidence is suppressed with the two-photon
overlap probability M (cross-polarized, same-pulse and background photons never
interfere). Interference therefore acts on coincidence probabilities, not field
amplitudes, which is sufficient for peak-area observables.

Slow emitter-frequency wander is an Ornstein-Uhlenbeck process shared across
the trial and sampled at each emission epoch; the pair's frequency difference
enters M.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bloch import PulseParams, _NoJumpTable, _sample_chunk
from .correlations import Histogram
from .errors import ParameterError, ZeroReferenceError
from .fitting import fit_hom_peaks
from .purcell import SpectralDiffusionParams

__all__ = [
    "HomConfig",
    "PhotonLabel",
    "ou_path",
    "pair_overlap",
    "hom_histogram",
    "visibility_raw",
    "visibility_corrected",
    "delay_dependence",
    "hom_visibility",
    "DelayVisibility",
]

_CHUNK_TRIALS = 1 << 15
_MAX_SLOTS = 12


@dataclass(frozen=True)
class HomConfig:
    """Interferometer settings for one HOM measurement."""

    delay: float                       # s, long-arm minus short-arm delay
    polarization: str = "parallel"     # "parallel" or "cross"
    splitter_ratio: tuple = (0.5, 0.5)
    n_pairs: int = 100_000
    detector_sigma: float = 0.0        # s, Gaussian timing jitter

    def __post_init__(self):
        if not (np.isfinite(self.delay) and self.delay > 0):
            raise ParameterError("delay must be > 0")
        if self.polarization not in ("parallel", "cross"):
            raise ParameterError("polarization must be 'parallel' or 'cross'")
        t, r = self.splitter_ratio
        if not (0.0 < t < 1.0) or abs(t + r - 1.0) > 1e-9:
            raise ParameterError("splitter_ratio must be (T, R) with T+R=1, 0<T<1")
        if self.n_pairs < 1:
            raise ParameterError("n_pairs must be >= 1")
        if self.detector_sigma < 0:
            raise ParameterError("detector_sigma must be >= 0")


@dataclass(frozen=True)
class PhotonLabel:
    """One routed photon: emission time, frequency offset, interferometer arm."""

    emission_time: float
    frequency_offset: float
    arm: str  # "early" (short) or "late" (long)

    def __post_init__(self):
        if not (math.isfinite(self.emission_time) and math.isfinite(self.frequency_offset)):
            raise ParameterError("photon label fields must be finite")
        if self.arm not in ("early", "late"):
            raise ParameterError("arm must be 'early' or 'late'")


def ou_path(tau_c: float, sigma: float, times, seed: int = 0) -> np.ndarray:
    """Stationary Ornstein-Uhlenbeck samples at the given (sorted) times.

    Mean 0, variance sigma^2, autocorrelation exp(-dt/tau_c), via the exact
    discrete recursion x_{k+1} = x_k * a + sigma*sqrt(1-a^2)*xi with
    a = exp(-dt/tau_c).
    """
    if tau_c <= 0:
        raise ParameterError("tau_c must be > 0")
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    times = np.asarray(times, dtype=float)
    if times.size and np.any(np.diff(times) < 0):
        raise ParameterError("times must be sorted ascending")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(times.size)
    x = np.empty(times.size)
    if times.size == 0:
        return x
    x[0] = sigma * z[0]
    alpha = np.exp(-np.diff(times) / tau_c)
    for k in range(1, times.size):
        a = alpha[k - 1]
        x[k] = x[k - 1] * a + sigma * math.sqrt(max(1.0 - a * a, 0.0)) * z[k]
    return x


def pair_overlap(gamma: float, gamma_d: float, delta_12):
    """Two-photon wavepacket overlap M for equal-shape exponential photons.

    M = [Gamma/(Gamma+2 gamma_d)] * (Gamma+2 gamma_d)^2 / ((Gamma+2 gamma_d)^2 + delta^2)

    where delta is the mutual frequency difference (rad/s). Vectorized in delta.
    """
    if gamma <= 0:
        raise ParameterError("gamma must be > 0")
    delta_12 = np.asarray(delta_12, dtype=float)
    gtot = gamma + 2.0 * gamma_d
    m = (gamma / gtot) * gtot ** 2 / (gtot ** 2 + delta_12 ** 2)
    return float(m) if m.ndim == 0 else m


def _positions_within_group(group):
    """Running index of each element within its group (group ids sorted)."""
    n = group.size
    if n == 0:
        return np.empty(0, dtype=np.intp)
    first_idx = np.flatnonzero(np.r_[True, group[1:] != group[:-1]])
    sizes = np.diff(np.r_[first_idx, n])
    return np.arange(n, dtype=np.intp) - np.repeat(first_idx, sizes)


def _ou_offsets(trial, t_abs, sigma, tau_c, z):
    """Conditional OU sampling along each trial's time-ordered photons.

    Inputs sorted by (trial, t_abs); z is one standard normal per photon.
    Photons at position s within their trial depend on position s-1, so slots
    are resolved in increasing order, vectorized across trials.
    """
    n = trial.size
    x = np.empty(n)
    if n == 0:
        return x
    pos = _positions_within_group(trial)
    head = pos == 0
    x[head] = sigma * z[head]
    for s in range(1, int(pos.max()) + 1 if n else 0):
        sel = np.flatnonzero(pos == s)
        prev = sel - 1
        a = np.exp(-(t_abs[sel] - t_abs[prev]) / tau_c)
        x[sel] = x[prev] * a + sigma * np.sqrt(np.maximum(1.0 - a * a, 0.0)) * z[sel]
    return x


def _simulate_chunk(n_trials, cfg: HomConfig, pulse, gamma, gamma_d, diffusion,
                    background_rate, g2_contamination, table, edges, seed, chunk_index):
    ss = np.random.SeedSequence((int(seed), int(chunk_index)))
    rng_emit, rng_noise, rng_ou, rng_route, rng_pair, rng_jit = [
        np.random.default_rng(s) for s in ss.spawn(6)]
    delay = cfg.delay
    rep = pulse.rep_period

    trial_parts, pulse_parts, kind_parts, t_parts = [], [], [], []
    for pulse_slot in (0, 1):
        idx, t = _sample_chunk(n_trials, table, gamma, 0.0, rep, rng_emit)
        trial_parts.append(idx)
        pulse_parts.append(np.full(idx.size, pulse_slot, dtype=np.int8))
        kind_parts.append(np.zeros(idx.size, dtype=np.int8))
        t_parts.append(t)
    # uncorrelated noise photons: uniform laser leakage over the repetition
    # window plus an optional signal-shaped contamination with per-pulse mean
    # g2_contamination/2
    mu_bg = background_rate * rep
    mu_c = g2_contamination / 2.0
    for pulse_slot in (0, 1):
        if mu_bg > 0:
            counts = rng_noise.poisson(mu_bg, n_trials)
            tot = int(counts.sum())
            trial_parts.append(np.repeat(np.arange(n_trials, dtype=np.intp), counts))
            pulse_parts.append(np.full(tot, pulse_slot, dtype=np.int8))
            kind_parts.append(np.ones(tot, dtype=np.int8))
            t_parts.append(rng_noise.uniform(-rep / 2, rep / 2, tot))
        if mu_c > 0:
            counts = rng_noise.poisson(mu_c, n_trials)
            tot = int(counts.sum())
            trial_parts.append(np.repeat(np.arange(n_trials, dtype=np.intp), counts))
            pulse_parts.append(np.full(tot, pulse_slot, dtype=np.int8))
            kind_parts.append(np.ones(tot, dtype=np.int8))
            t_parts.append(rng_noise.exponential(1.0 / gamma, tot))

    trial = np.concatenate(trial_parts)
    pls = np.concatenate(pulse_parts)
    kind = np.concatenate(kind_parts)
    t_emit = np.concatenate(t_parts)
    t_abs = t_emit + pls * delay

    order = np.lexsort((t_abs, trial))
    trial, pls, kind, t_abs = trial[order], pls[order], kind[order], t_abs[order]
    n_ph = trial.size
    if n_ph == 0:
        return np.zeros(edges.size - 1, dtype=np.int64)

    sigma_ou = diffusion.sigma if diffusion is not None else 0.0
    tau_c = diffusion.tau_c if diffusion is not None else 1.0
    freq = _ou_offsets(trial, t_abs, sigma_ou, tau_c, rng_ou.standard_normal(n_ph))

    t_split, _ = cfg.splitter_ratio
    long_arm = rng_route.random(n_ph) >= t_split
    arrival = t_abs + long_arm * delay
    port = (rng_route.random(n_ph) < 0.5).astype(np.int8)

    if cfg.polarization == "parallel":
        order2 = np.lexsort((arrival, trial))
        tr2, arr2 = trial[order2], arrival[order2]
        w_overlap = min(10.0 / gamma, 0.45 * delay)
        cand = np.flatnonzero(
            (tr2[1:] == tr2[:-1])
            & (kind[order2][1:] == 0) & (kind[order2][:-1] == 0)
            & (pls[order2][1:] != pls[order2][:-1])
            & (arr2[1:] - arr2[:-1] <= w_overlap))
        # a photon joins at most one pair: drop candidates whose left photon
        # is the right photon of an accepted earlier pair
        if cand.size:
            keep = [cand[0]]
            for i in cand[1:]:
                if i - 1 != keep[-1]:
                    keep.append(i)
            cand = np.asarray(keep, dtype=np.intp)
        if cand.size:
            i_left = order2[cand]
            i_right = order2[cand + 1]
            m = pair_overlap(gamma, gamma_d, freq[i_left] - freq[i_right])
            u_same = rng_pair.random(cand.size)
            u_assign = rng_pair.random(cand.size)
            same = u_same < (1.0 + m) / 2.0
            first_port = (u_assign < 0.5).astype(np.int8)
            port[i_left] = first_port
            port[i_right] = np.where(same, first_port, 1 - first_port)

    t_det = arrival + (cfg.detector_sigma * rng_jit.standard_normal(n_ph)
                       if cfg.detector_sigma > 0 else 0.0)

    # coincidences between the two output ports, per trial
    pos = _positions_within_group(trial)
    counts = np.zeros(edges.size - 1, dtype=np.int64)
    kmax = min(int(pos.max()) + 1, _MAX_SLOTS)
    tmat = np.full((n_trials, kmax), np.nan)
    pmat = np.full((n_trials, kmax), -1, dtype=np.int8)
    sel = pos < kmax
    tmat[trial[sel], pos[sel]] = t_det[sel]
    pmat[trial[sel], pos[sel]] = port[sel]
    for a in range(kmax):
        for b in range(a + 1, kmax):
            ok = (pmat[:, a] >= 0) & (pmat[:, b] >= 0) & (pmat[:, a] != pmat[:, b])
            if not ok.any():
                continue
            ta, tb = tmat[ok, a], tmat[ok, b]
            # signed delay: detector-2 time minus detector-1 time
            tau = np.where(pmat[ok, a] == 1, ta - tb, tb - ta)
            counts += np.histogram(tau, bins=edges)[0]
    return counts


def hom_histogram(cfg: HomConfig, pulse: PulseParams, gamma: float,
                  gamma_d: float = 0.0, diffusion: SpectralDiffusionParams = None,
                  background_rate: float = 0.0, g2_contamination: float = 0.0,
                  bin_width: float = None, span: float = None, seed: int = 0,
                  n_threads: int = 1) -> Histogram:
    """Coincidence histogram of a two-pulse HOM experiment over cfg.n_pairs trials.

    Peaks sit at 0 and +-delay, +-2*delay with the familiar 1:2:2(1-M):2:1
    pattern; background and multiphoton events contaminate the central peak.
    Bit-reproducible for fixed seed, independent of n_threads.
    """
    if gamma <= 0:
        raise ParameterError("gamma must be > 0")
    if bin_width is None:
        bin_width = 0.25 / gamma
    if span is None:
        span = 2.5 * cfg.delay
    n_half = int(np.ceil(span / bin_width))
    edges = bin_width * np.arange(-n_half, n_half + 1)

    table = _NoJumpTable(pulse, gamma, gamma_d)
    starts = list(range(0, cfg.n_pairs, _CHUNK_TRIALS))

    def run(ci):
        size = min(_CHUNK_TRIALS, cfg.n_pairs - starts[ci])
        return _simulate_chunk(size, cfg, pulse, gamma, gamma_d, diffusion,
                               background_rate, g2_contamination, table, edges,
                               seed, ci)

    if n_threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            parts = list(ex.map(run, range(len(starts))))
    else:
        parts = [run(ci) for ci in range(len(starts))]
    counts = np.sum(parts, axis=0)
    return Histogram(bin_width=bin_width, t_min=float(edges[0]), counts=counts)


def _central_area(h: Histogram, delay, mode, detector_sigma):
    if mode == "window":
        t = h.bin_centers()
        sel = np.abs(t) <= 0.45 * delay
        a = float(h.counts[sel].sum())
        return a, math.sqrt(max(a, 1.0))
    centers = delay * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    peaks, _ = fit_hom_peaks(h, centers, detector_sigma=detector_sigma)
    return peaks[2].area, max(peaks[2].stderr, math.sqrt(max(peaks[2].area, 1.0)))


def visibility_raw(h_par: Histogram, h_cross: Histogram, delay: float,
                   mode: str = "fit", detector_sigma: float = None):
    """Raw HOM visibility 1 - A_par(0)/A_cross(0) with Poisson error.

    mode "fit" extracts central-peak areas with the peak-train fit; "window"
    integrates |tau| <= 0.45*delay directly.
    """
    if mode not in ("fit", "window"):
        raise ParameterError("mode must be 'fit' or 'window'")
    a_par, s_par = _central_area(h_par, delay, mode, detector_sigma)
    a_cross, s_cross = _central_area(h_cross, delay, mode, detector_sigma)
    if a_cross <= 0:
        raise ZeroReferenceError("cross-polarized central peak is empty")
    v = 1.0 - a_par / a_cross
    stderr = math.hypot(s_par / a_cross, a_par * s_cross / a_cross ** 2)
    return float(v), float(stderr)


def visibility_corrected(v_raw: float, g2: float, mode: str = "plus_2g2") -> float:
    """First-order multiphoton correction of the raw visibility: V + 2*g2.

    The strategy is swappable; "none" returns v_raw unchanged.
    """
    if not 0.0 <= v_raw <= 1.0:
        raise ParameterError("v_raw must be in [0, 1]")
    if not 0.0 <= g2 < 0.5:
        raise ParameterError("g2 must be in [0, 0.5)")
    if mode == "plus_2g2":
        return min(v_raw + 2.0 * g2, 1.0)
    if mode == "none":
        return v_raw
    raise ParameterError(f"unknown correction mode {mode!r}")


@dataclass(frozen=True)
class DelayVisibility:
    delay: float
    v_raw: float
    stderr: float

    def __iter__(self):
        return iter((self.delay, self.v_raw))


def hom_visibility(delay: float, pulse: PulseParams, gamma: float,
                   gamma_d: float = 0.0, diffusion: SpectralDiffusionParams = None,
                   n_pairs: int = 100_000, detector_sigma: float = 0.0,
                   background_rate: float = 0.0, g2_contamination: float = 0.0,
                   seed: int = 0, mode: str = "fit", n_threads: int = 1):
    """Run the paired parallel/cross measurement and return the visibility summary.

    Returns (v_raw, stderr, h_parallel, h_cross).
    """
    common = dict(pulse=pulse, gamma=gamma, gamma_d=gamma_d, diffusion=diffusion,
                  background_rate=background_rate, g2_contamination=g2_contamination,
                  seed=seed, n_threads=n_threads)
    cfg_par = HomConfig(delay, "parallel", n_pairs=n_pairs, detector_sigma=detector_sigma)
    cfg_cross = HomConfig(delay, "cross", n_pairs=n_pairs, detector_sigma=detector_sigma)
    h_par = hom_histogram(cfg_par, **common)
    h_cross = hom_histogram(cfg_cross, **common)
    v, se = visibility_raw(h_par, h_cross, delay, mode=mode, detector_sigma=detector_sigma)
    return v, se, h_par, h_cross


def delay_dependence(delays, pulse: PulseParams, gamma: float, gamma_d: float = 0.0,
                     diffusion: SpectralDiffusionParams = None, n_pairs: int = 100_000,
                     detector_sigma: float = 0.0, background_rate: float = 0.0,
                     g2_contamination: float = 0.0, seed: int = 0, mode: str = "fit",
                     n_threads: int = 1):
    """Raw visibility at each pulse separation, one shared configuration."""
    out = []
    for d in delays:
        if d <= 0:
            raise ParameterError("delays must be positive")
        v, se, _, _ = hom_visibility(d, pulse, gamma, gamma_d, diffusion, n_pairs,
                                     detector_sigma, background_rate,
                                     g2_contamination, seed, mode, n_threads)
        out.append(DelayVisibility(d, v, se))
    return out
