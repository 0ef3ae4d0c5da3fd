"""Driven, damped two-level dynamics and photon emission sampling.

Conventions (rotating frame, real Rabi envelope Omega(t), laser detuning delta):

    d(rho_ee)/dt = -gamma * rho_ee + Im(Omega * conj(rho_ge))
    d(rho_ge)/dt = -(gamma/2 + gamma_d) * rho_ge - 1j*delta*rho_ge
                   - 1j*(Omega/2) * (rho_gg - rho_ee)

with rho_ge = <g|rho|e> and rho_gg = 1 - rho_ee. For Omega = 0 and
rho_ee(0) = 1 this gives exponential decay at gamma; for constant Omega and no
damping it gives rho_ee(t) = sin^2(Omega t / 2) from the ground state.

Emission sampling unravels the radiative decay channel as quantum jumps: the
no-jump conditional state evolves with the recycling term removed (pure
dephasing stays deterministic), its trace is the no-emission survival
probability, and jump times come from inverting that survival curve against
uniform draws. After each jump the emitter restarts in the ground state under
the remainder of the pulse.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, StepSizeTooLargeError

__all__ = [
    "PulseParams",
    "BlochState",
    "EmissionRecord",
    "Trajectory",
    "rabi_frequency",
    "evolve_obe",
    "prep_efficiency",
    "rabi_curve",
    "sample_emissions",
    "sample_emission_arrays",
]

_FWHM_TO_SIGMA = 2.355          # Gaussian envelope FWHM / standard deviation
_WINDOW_SIGMAS = 5.0            # drive window half-width in envelope sigmas
_INVARIANT_TOL = 1e-8
_CHUNK_PULSES = 1 << 16
_MAX_EMISSION_ROUNDS = 16


@dataclass(frozen=True)
class PulseParams:
    """Gaussian drive pulse: area Theta = integral of Omega(t) dt, envelope FWHM,
    center time and the excitation repetition period (all seconds, area in rad)."""

    area: float
    fwhm: float
    center: float = 0.0
    rep_period: float = 1.0 / 81e6

    def __post_init__(self):
        if not (np.isfinite(self.area) and self.area >= 0):
            raise ParameterError("pulse area must be >= 0")
        if not (np.isfinite(self.fwhm) and self.fwhm > 0):
            raise ParameterError("pulse fwhm must be > 0")
        if not (np.isfinite(self.rep_period) and self.rep_period > 0):
            raise ParameterError("rep_period must be > 0")

    @property
    def sigma(self) -> float:
        return self.fwhm / _FWHM_TO_SIGMA

    @property
    def peak_rabi(self) -> float:
        return self.area / (self.sigma * math.sqrt(2.0 * math.pi))


@dataclass(frozen=True)
class BlochState:
    """Two-level density matrix: excited population and <g|rho|e> coherence."""

    rho_ee: float
    rho_ge: complex = 0j

    def __post_init__(self):
        if not (-_INVARIANT_TOL <= self.rho_ee <= 1.0 + _INVARIANT_TOL):
            raise ParameterError("rho_ee must lie in [0, 1]")
        if abs(self.rho_ge) ** 2 > self.rho_ee * (1.0 - self.rho_ee) + _INVARIANT_TOL:
            raise ParameterError("|rho_ge|^2 exceeds rho_ee*(1-rho_ee): not a density matrix")


@dataclass(frozen=True)
class EmissionRecord:
    """Photon emission instants of one excitation pulse, relative to the pulse center."""

    pulse_index: int
    times: tuple

    def __post_init__(self):
        if any(not math.isfinite(t) for t in self.times):
            raise ParameterError("emission times must be finite")
        if list(self.times) != sorted(self.times):
            raise ParameterError("emission times must be sorted")


@dataclass
class Trajectory:
    times: np.ndarray
    rho_ee: np.ndarray
    rho_ge: np.ndarray

    @property
    def final_state(self) -> BlochState:
        return BlochState(float(self.rho_ee[-1]), complex(self.rho_ge[-1]))


def rabi_frequency(t, pulse: PulseParams):
    """Rabi envelope Omega(t) = Theta/(sigma sqrt(2 pi)) * exp(-(t-t0)^2 / 2 sigma^2)."""
    t = np.asarray(t, dtype=float)
    sig = pulse.sigma
    out = pulse.area / (sig * math.sqrt(2.0 * math.pi)) * np.exp(
        -0.5 * ((t - pulse.center) / sig) ** 2)
    return float(out) if out.ndim == 0 else out


def _drive_function(pulse):
    if pulse is None:
        return (lambda t: 0.0), 0.0
    if callable(pulse):
        return pulse, None
    return (lambda t: rabi_frequency(t, pulse)), pulse.peak_rabi


def _check_invariants(ree, rge):
    viol = max(-ree, ree - 1.0, abs(rge) ** 2 - ree * (1.0 - ree))
    if viol > _INVARIANT_TOL:
        raise StepSizeTooLargeError(
            f"density-matrix invariant violated by {viol:.2e}; reduce dt")


def evolve_obe(state: BlochState, pulse, gamma: float, gamma_d: float = 0.0,
               delta_laser: float = 0.0, t_span=None, dt: float = None) -> Trajectory:
    """Integrate the optical Bloch equations with a fixed-step RK4 scheme.

    `pulse` may be PulseParams, a callable t -> Omega(t), or None (free decay).
    dt must satisfy dt < min(1/gamma, 1/Omega_peak)/10; the default is a tenth
    of that bound. Density-matrix invariants are monitored at every step to
    1e-8 and StepSizeTooLargeError is raised when they fail.
    """
    drive, peak = _drive_function(pulse)
    if t_span is None:
        if not isinstance(pulse, PulseParams):
            raise ParameterError("t_span is required unless pulse is PulseParams")
        t_span = (pulse.center - _WINDOW_SIGMAS * pulse.sigma,
                  pulse.center + _WINDOW_SIGMAS * pulse.sigma)
    t_start, t_stop = float(t_span[0]), float(t_span[1])
    if not t_stop > t_start:
        raise ParameterError("t_span must have positive length")
    if peak is None:
        probe = np.linspace(t_start, t_stop, 2001)
        peak = float(np.max(np.abs([drive(t) for t in probe])))
    dt_bound = min(1.0 / gamma if gamma > 0 else math.inf,
                   1.0 / peak if peak > 0 else math.inf) / 10.0
    if dt is None:
        dt = dt_bound / 10.0 if math.isfinite(dt_bound) else (t_stop - t_start) / 1000.0
    if dt >= dt_bound:
        raise ParameterError(f"dt={dt:g} too large; need dt < {dt_bound:g}")

    n = max(2, int(math.ceil((t_stop - t_start) / dt)))
    dt = (t_stop - t_start) / n
    times = t_start + dt * np.arange(n + 1)
    ree = np.empty(n + 1)
    rge = np.empty(n + 1, dtype=complex)
    e, c = float(state.rho_ee), complex(state.rho_ge)
    ree[0], rge[0] = e, c
    half_decay = gamma / 2.0 + gamma_d

    def rhs(t, e, c):
        w = drive(t)
        de = -gamma * e + (w * np.conj(c)).imag
        dc = -half_decay * c - 1j * delta_laser * c - 0.5j * w * (1.0 - 2.0 * e)
        return de, dc

    for i in range(n):
        t = times[i]
        de1, dc1 = rhs(t, e, c)
        de2, dc2 = rhs(t + dt / 2, e + dt / 2 * de1, c + dt / 2 * dc1)
        de3, dc3 = rhs(t + dt / 2, e + dt / 2 * de2, c + dt / 2 * dc2)
        de4, dc4 = rhs(t + dt, e + dt * de3, c + dt * dc3)
        e = e + dt / 6.0 * (de1 + 2 * de2 + 2 * de3 + de4)
        c = c + dt / 6.0 * (dc1 + 2 * dc2 + 2 * dc3 + dc4)
        _check_invariants(e, c)
        ree[i + 1], rge[i + 1] = e, c
    return Trajectory(times, ree, rge)


def prep_efficiency(pulse: PulseParams, gamma: float, gamma_d: float = 0.0,
                    readout_sigma: float = 2.0) -> float:
    """Excited-state population right after the drive.

    The readout sits at center + readout_sigma * sigma, where the envelope has
    delivered essentially all of its area but the emitter has not yet sat idle
    in free decay; readout_sigma is exposed for sensitivity studies.
    """
    if pulse.area <= 0:
        raise ParameterError("prep_efficiency needs pulse.area > 0")
    span = (pulse.center - _WINDOW_SIGMAS * pulse.sigma,
            pulse.center + readout_sigma * pulse.sigma)
    traj = evolve_obe(BlochState(0.0), pulse, gamma, gamma_d, t_span=span)
    return float(traj.rho_ee[-1])


def rabi_curve(sqrt_powers, calibration: float, pulse_template: PulseParams,
               gamma: float, gamma_d: float = 0.0, readout_sigma: float = 2.0) -> np.ndarray:
    """Detected-rate proxy versus sqrt(power): prep efficiency at area = calibration*sqrt(P).

    Returns an (n, 2) array of (sqrt_power, signal). The first maximum sits at
    pulse area pi.
    """
    if not (np.isfinite(calibration) and calibration > 0):
        raise ParameterError("calibration must be > 0")
    sqrt_powers = np.atleast_1d(np.asarray(sqrt_powers, dtype=float))
    signal = np.empty_like(sqrt_powers)
    for i, sp in enumerate(sqrt_powers):
        area = calibration * sp
        if area <= 0:
            signal[i] = 0.0
            continue
        p = PulseParams(area, pulse_template.fwhm, pulse_template.center,
                        pulse_template.rep_period)
        signal[i] = prep_efficiency(p, gamma, gamma_d, readout_sigma)
    return np.column_stack([sqrt_powers, signal])


# ---------------------------------------------------------------------------
# quantum-jump emission sampling


class _NoJumpTable:
    """Precomputed no-emission survival for every restart node in the drive window.

    Row k of S holds the survival probability (trace of the unnormalized
    conditional state) for an emitter reset to ground at grid node k, evaluated
    at nodes j >= k. g_end/e_end are the conditional populations at the window
    end, from which the post-window emission tail is analytic.
    """

    def __init__(self, pulse: PulseParams, gamma: float, gamma_d: float):
        sig = pulse.sigma
        self.t0 = -_WINDOW_SIGMAS * sig
        self.t_end = _WINDOW_SIGMAS * sig
        self.gamma = gamma
        if pulse.area == 0.0:
            self.n = 0
            self.dt = self.t_end - self.t0
            self.S = np.ones((1, 1))
            self.g_end = np.ones(1)
            self.e_end = np.zeros(1)
            return
        peak = pulse.peak_rabi
        dt = min(1.0 / gamma if gamma > 0 else math.inf, 1.0 / peak) / 100.0
        n = int(math.ceil((self.t_end - self.t0) / dt))
        dt = (self.t_end - self.t0) / n
        self.n, self.dt = n, dt

        half_decay = gamma / 2.0 + gamma_d
        amp = pulse.area / (sig * math.sqrt(2.0 * math.pi))

        def w_of(t):
            return amp * math.exp(-0.5 * (t / sig) ** 2)

        g = np.ones(n + 1)
        e = np.zeros(n + 1)
        c = np.zeros(n + 1, dtype=complex)
        S = np.ones((n + 1, n + 1))

        def rhs(w, g, e, c):
            imc = c.imag
            return (w * imc,
                    -gamma * e - w * imc,
                    -half_decay * c - 0.5j * w * (g - e))

        for j in range(n):
            sl = slice(0, j + 1)
            t = self.t0 + j * dt
            w1, w2, w3 = w_of(t), w_of(t + dt / 2), w_of(t + dt)
            gj, ej, cj = g[sl], e[sl], c[sl]
            dg1, de1, dc1 = rhs(w1, gj, ej, cj)
            dg2, de2, dc2 = rhs(w2, gj + dt / 2 * dg1, ej + dt / 2 * de1, cj + dt / 2 * dc1)
            dg3, de3, dc3 = rhs(w2, gj + dt / 2 * dg2, ej + dt / 2 * de2, cj + dt / 2 * dc2)
            dg4, de4, dc4 = rhs(w3, gj + dt * dg3, ej + dt * de3, cj + dt * dc3)
            g[sl] = gj + dt / 6.0 * (dg1 + 2 * dg2 + 2 * dg3 + dg4)
            e[sl] = ej + dt / 6.0 * (de1 + 2 * de2 + 2 * de3 + de4)
            c[sl] = cj + dt / 6.0 * (dc1 + 2 * dc2 + 2 * dc3 + dc4)
            S[sl, j + 1] = g[sl] + e[sl]
        self.S = S
        self.g_end = g
        self.e_end = e

    def _blend(self, arr, fk):
        k0 = np.floor(fk).astype(np.intp)
        k1 = np.minimum(k0 + 1, self.n)
        w = fk - k0
        return (1.0 - w) * arr[k0] + w * arr[k1]

    def _survival_at(self, fk, cols):
        k0 = np.floor(fk).astype(np.intp)
        k1 = np.minimum(k0 + 1, self.n)
        w = fk - k0
        return (1.0 - w) * self.S[k0, cols] + w * self.S[k1, cols]

    def invert_in_window(self, fk, r):
        """Jump times inside the window: first survival crossing below r."""
        lo = np.ceil(fk).astype(np.intp)
        hi = np.full(fk.shape, self.n, dtype=np.intp)
        while True:
            open_ = lo < hi
            if not open_.any():
                break
            mid = (lo + hi) // 2
            v = self._survival_at(fk, mid)
            go_right = open_ & (v > r)
            lo = np.where(go_right, mid + 1, lo)
            hi = np.where(open_ & ~go_right, mid, hi)
        col = lo
        start = np.ceil(fk).astype(np.intp)
        has_prev = col > start
        s_prev = np.where(has_prev, self._survival_at(fk, np.maximum(col - 1, start)), 1.0)
        t_prev = np.where(has_prev, self.t0 + (col - 1) * self.dt, self.t0 + fk * self.dt)
        s_col = self._survival_at(fk, col)
        # log-linear interpolation: exact for a locally constant hazard
        num = np.log(np.maximum(s_prev, 1e-300) / np.maximum(r, 1e-300))
        den = np.log(np.maximum(s_prev, 1e-300) / np.maximum(s_col, 1e-300))
        frac = np.where(den > 0, num / np.maximum(den, 1e-300), 1.0)
        return t_prev + np.clip(frac, 0.0, 1.0) * (self.t0 + col * self.dt - t_prev)


def _sample_chunk(n_pulses, table: _NoJumpTable, gamma, background_rate, rep_period, rng):
    """Emission times for one chunk. Returns (pulse-local indices, times rel. center)."""
    idx_parts, t_parts = [], []
    active = np.arange(n_pulses, dtype=np.intp)
    fk = np.zeros(n_pulses)
    for _ in range(_MAX_EMISSION_ROUNDS):
        if active.size == 0:
            break
        r = rng.random(active.size)
        gb = table._blend(table.g_end, fk)
        eb = table._blend(table.e_end, fk)
        s_end = gb + eb
        post = (r > gb) & (r <= s_end)
        inwin = r > s_end
        if post.any():
            t_jump = table.t_end + np.log(eb[post] / (r[post] - gb[post])) / gamma
            idx_parts.append(active[post])
            t_parts.append(t_jump)
        if inwin.any():
            t_jump = table.invert_in_window(fk[inwin], r[inwin])
            idx_parts.append(active[inwin])
            t_parts.append(t_jump)
            active = active[inwin]
            fk = (t_jump - table.t0) / table.dt
        else:
            break
    if background_rate > 0.0:
        counts = rng.poisson(background_rate * rep_period, n_pulses)
        total = int(counts.sum())
        if total:
            idx_parts.append(np.repeat(np.arange(n_pulses, dtype=np.intp), counts))
            t_parts.append(rng.uniform(-rep_period / 2, rep_period / 2, total))
    if not idx_parts:
        return np.empty(0, dtype=np.intp), np.empty(0)
    idx = np.concatenate(idx_parts)
    t = np.concatenate(t_parts)
    order = np.lexsort((t, idx))
    return idx[order], t[order]


def sample_emission_arrays(n_pulses: int, pulse: PulseParams, gamma: float,
                           gamma_d: float = 0.0, background_rate: float = 0.0,
                           seed: int = 0, n_threads: int = 1):
    """Array form of sample_emissions: (pulse indices, emission times) sorted by
    (pulse, time). Bit-reproducible for a given seed, independent of n_threads."""
    if n_pulses < 1:
        raise ParameterError("n_pulses must be >= 1")
    if gamma <= 0:
        raise ParameterError("gamma must be > 0")
    table = _NoJumpTable(pulse, gamma, gamma_d)
    starts = list(range(0, n_pulses, _CHUNK_PULSES))

    def run(ci):
        start = starts[ci]
        size = min(_CHUNK_PULSES, n_pulses - start)
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), ci)))
        idx, t = _sample_chunk(size, table, gamma, background_rate,
                               pulse.rep_period, rng)
        return idx + start, t

    if n_threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            parts = list(ex.map(run, range(len(starts))))
    else:
        parts = [run(ci) for ci in range(len(starts))]
    idx = np.concatenate([p[0] for p in parts])
    t = np.concatenate([p[1] for p in parts])
    return idx, t


def sample_emissions(n_pulses: int, pulse: PulseParams, gamma: float,
                     gamma_d: float = 0.0, background_rate: float = 0.0,
                     seed: int = 0, n_threads: int = 1):
    """Quantum-jump Monte Carlo emission records for a train of identical pulses.

    Each record holds the (possibly empty) sorted photon emission times of one
    pulse, relative to its center. Laser background photons are appended as a
    Poisson process of the given rate over one repetition period per pulse.
    """
    idx, t = sample_emission_arrays(n_pulses, pulse, gamma, gamma_d,
                                    background_rate, seed, n_threads)
    records = []
    bounds = np.searchsorted(idx, np.arange(n_pulses + 1))
    for p in range(n_pulses):
        records.append(EmissionRecord(p, tuple(t[bounds[p]:bounds[p + 1]].tolist())))
    return records
