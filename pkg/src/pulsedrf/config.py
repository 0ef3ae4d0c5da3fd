"""Experiment configuration: INI-style files with explicit unit suffixes.

Every physical value carries its unit in the file ("587.8 ps", "1.14 GHz",
"24 nW", "1 pi") and is normalized to SI on load: times in seconds, rates in
1/s, frequencies in Hz (angular quantities in rad/s where noted), powers in
watts. Unknown sections or keys are rejected. Defaults are the nominal device
parameter set, versioned in paper.cfg at the repository root.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, replace

from .budget import Budget, BudgetStage
from .errors import ParameterError
from .purcell import CavityParams, EmitterParams, SpectralDiffusionParams, purcell_rate
from .bloch import PulseParams
from .spectra import FabryPerotParams

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "default_config",
           "parse_quantity"]


class ConfigError(ValueError):
    """Config file cannot be parsed or fails validation; message names the field."""


_TIME = {"fs": 1e-15, "ps": 1e-12, "ns": 1e-9, "us": 1e-6, "ms": 1e-3, "s": 1.0}
_FREQ = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9, "thz": 1e12}
_POWER = {"pw": 1e-12, "nw": 1e-9, "uw": 1e-6, "mw": 1e-3, "w": 1.0}
_LENGTH = {"nm": 1e-9, "um": 1e-6, "mm": 1e-3, "m": 1.0}


def parse_quantity(text: str, kind: str, field: str = "") -> float:
    """Parse "<number> [unit]" into SI for the given kind of quantity.

    Kinds: time, freq, power, length, area (rad, 'pi' allowed), rate (1/s;
    a time suffix is inverted), bare.
    """
    parts = str(text).strip().split()
    if len(parts) == 1:
        value, unit = parts[0], ""
    elif len(parts) == 2:
        value, unit = parts
    else:
        raise ConfigError(f"{field}: cannot parse quantity {text!r}")
    try:
        x = float(value)
    except ValueError:
        raise ConfigError(f"{field}: {value!r} is not a number") from None
    u = unit.lower()
    if kind == "bare":
        if u:
            raise ConfigError(f"{field}: unexpected unit {unit!r}")
        return x
    if kind == "time":
        if u in _TIME:
            return x * _TIME[u]
        raise ConfigError(f"{field}: expected a time unit, got {unit!r}")
    if kind == "freq":
        if u in _FREQ:
            return x * _FREQ[u]
        raise ConfigError(f"{field}: expected a frequency unit, got {unit!r}")
    if kind == "power":
        if u in _POWER:
            return x * _POWER[u]
        raise ConfigError(f"{field}: expected a power unit, got {unit!r}")
    if kind == "length":
        if u in _LENGTH:
            return x * _LENGTH[u]
        raise ConfigError(f"{field}: expected a length unit, got {unit!r}")
    if kind == "area":
        if u == "pi":
            return x * math.pi
        if u == "":
            return x
        raise ConfigError(f"{field}: pulse area takes 'pi' or no unit, got {unit!r}")
    if kind == "rate":
        if u == "":
            return x
        if u in _TIME:
            t = x * _TIME[u]
            if t <= 0:
                raise ConfigError(f"{field}: time constant must be > 0")
            return 1.0 / t
        raise ConfigError(f"{field}: expected 1/s (bare) or a time constant, got {unit!r}")
    raise ConfigError(f"{field}: unknown quantity kind {kind}")


@dataclass(frozen=True)
class ExperimentConfig:
    cavity: CavityParams
    emitter: EmitterParams
    pulse: PulseParams
    fp: FabryPerotParams
    budget: Budget
    seed: int = 0
    output_dir: str = "out"
    threads: int = 1
    lifetime_on_resonance: float = 83.9e-12   # measured operating point, s
    detector_sigma: float = 63e-12            # timing jitter, s
    snr: float = 40.0                         # raw signal:background
    etalon_suppression: float = 15.0          # background rejection of the cleanup etalon
    hbt_n_pulses: int = 1_000_000
    hbt_bin_width: float = 120e-12
    hbt_span_periods: float = 5.0
    hom_delay_short: float = 2.1e-9
    hom_delay_long: float = 12.4e-9
    hom_n_pairs: int = 150_000
    hom_splitter_t: float = 0.5
    rabi_pi_power: float = 24e-9              # W at pulse area pi
    rabi_points: int = 49
    rabi_max_area: float = 3.5 * math.pi
    spectrum_span: float = 30e9               # Hz
    spectrum_points: int = 3001
    spectrum_deconvolve: bool = True

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("run.seed must fit an unsigned 64-bit integer")
        if self.threads < 1:
            raise ConfigError("run.threads must be >= 1")

    @property
    def gamma_operating(self) -> float:
        """Radiative rate of the tuned device (1/s), from the measured T1."""
        return 1.0 / self.lifetime_on_resonance

    @property
    def snr_filtered(self) -> float:
        """Signal:background after the cleanup etalon."""
        return self.snr * self.etalon_suppression

    @property
    def background_rate(self) -> float:
        """Background photon rate (1/s) such that one pulse period carries
        1/snr_filtered background photons per signal photon."""
        return (1.0 / self.snr_filtered) / self.pulse.rep_period

    @property
    def rabi_calibration(self) -> float:
        """Pulse area per sqrt(watt)."""
        return math.pi / math.sqrt(self.rabi_pi_power)


def _dephasing_from_linewidth(f_homogeneous: float, gamma: float, field: str) -> float:
    """gamma_d from the homogeneous Lorentzian FWHM: (2 pi f - gamma)/2."""
    gd = math.pi * f_homogeneous - gamma / 2.0
    if gd < 0:
        raise ConfigError(
            f"{field}: homogeneous width {f_homogeneous:.4g} Hz is below the "
            f"lifetime limit {gamma / (2 * math.pi):.4g} Hz")
    return gd


_DEFAULT_BUDGET_STAGES = (
    ("detection", 0.33),
    ("polarization_extinction", 0.50),
    ("optical_path", 0.60),
    ("fiber_coupling", 0.72),
    ("preparation", 0.96),
    ("internal_quantum", 1.00),
)


def default_config() -> ExperimentConfig:
    """Nominal device parameters (identical to paper.cfg)."""
    gamma_op = 1.0 / 83.9e-12
    return ExperimentConfig(
        cavity=CavityParams(quality_factor=6124.0, wavelength=897.44e-9,
                            purcell_factor=6.3),
        emitter=EmitterParams(
            gamma_bulk=1.0 / 587.8e-12,
            gamma_dephasing=_dephasing_from_linewidth(1.91e9, gamma_op, "default"),
            diffusion=SpectralDiffusionParams(
                sigma=2.0 * math.pi * 1.14e9 / 2.355, tau_c=1e-6),
        ),
        pulse=PulseParams(area=math.pi, fwhm=3e-12, center=0.0, rep_period=1.0 / 81e6),
        fp=FabryPerotParams(finesse=170.0, fsr=37.4e9, linewidth=220e6,
                            transmission_peak=0.61),
        budget=Budget(
            stages=tuple(BudgetStage(n, e) for n, e in _DEFAULT_BUDGET_STAGES),
            rep_rate=81e6, detected_rate=3.7e6),
    )


# section -> key -> (kind, description)
_SCHEMA = {
    "run": {"seed": "int", "output_dir": "str", "threads": "int"},
    "cavity": {"quality_factor": "bare", "wavelength": "length", "purcell_factor": "bare"},
    "emitter": {"gamma_bulk": "rate", "lifetime_on_resonance": "time",
                "gamma_dephasing": "rate", "homogeneous_fwhm": "freq",
                "diffusion_fwhm": "freq", "diffusion_tau_c": "time"},
    "pulse": {"area": "area", "fwhm": "time", "rep_rate": "freq"},
    "rabi": {"pi_pulse_power": "power", "points": "int", "max_area": "area"},
    "detector": {"jitter_sigma": "time"},
    "background": {"snr": "bare", "etalon_suppression": "bare"},
    "fabry_perot": {"finesse": "bare", "linewidth": "freq", "fsr": "freq",
                    "transmission_peak": "bare"},
    "hbt": {"n_pulses": "int", "bin_width": "time", "span_periods": "bare"},
    "hom": {"delay_short": "time", "delay_long": "time", "n_pairs": "int",
            "splitter_t": "bare"},
    "spectrum": {"span": "freq", "points": "int", "deconvolve_instrument": "bool"},
    "budget": {"detection": "bare", "polarization_extinction": "bare",
               "optical_path": "bare", "fiber_coupling": "bare",
               "preparation": "bare", "internal_quantum": "bare",
               "rep_rate": "freq", "detected_rate": "rate"},
}


def _get(parsed, section, key):
    return parsed.get(section, {}).get(key)


def load_config(path=None) -> ExperimentConfig:
    """Load and validate a config file; missing keys fall back to the defaults.

    Raises ConfigError with the offending section.key on parse or validation
    failures.
    """
    if path is None:
        return default_config()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                   interpolation=None)
    read = cp.read(str(path))
    if not read:
        raise ConfigError(f"config file not found: {path}")

    parsed = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        parsed[section] = {}
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            kind = _SCHEMA[section][key]
            field = f"{section}.{key}"
            if kind == "int":
                try:
                    parsed[section][key] = int(raw)
                except ValueError:
                    raise ConfigError(f"{field}: {raw!r} is not an integer") from None
            elif kind == "bool":
                low = raw.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ConfigError(f"{field}: {raw!r} is not a boolean")
                parsed[section][key] = low in ("true", "1", "yes")
            elif kind == "str":
                parsed[section][key] = raw.strip()
            else:
                parsed[section][key] = parse_quantity(raw, kind, field)

    base = default_config()
    try:
        cavity = CavityParams(
            quality_factor=_get(parsed, "cavity", "quality_factor") or base.cavity.quality_factor,
            wavelength=_get(parsed, "cavity", "wavelength") or base.cavity.wavelength,
            purcell_factor=_get(parsed, "cavity", "purcell_factor")
            if _get(parsed, "cavity", "purcell_factor") is not None else base.cavity.purcell_factor,
        )
        t1_op = _get(parsed, "emitter", "lifetime_on_resonance") or base.lifetime_on_resonance
        gamma_op = 1.0 / t1_op
        gd = _get(parsed, "emitter", "gamma_dephasing")
        f_hom = _get(parsed, "emitter", "homogeneous_fwhm")
        if gd is not None and f_hom is not None:
            raise ConfigError(
                "emitter: give gamma_dephasing or homogeneous_fwhm, not both")
        if gd is None:
            gd = (_dephasing_from_linewidth(f_hom, gamma_op, "emitter.homogeneous_fwhm")
                  if f_hom is not None else base.emitter.gamma_dephasing)
        diff_fwhm = _get(parsed, "emitter", "diffusion_fwhm")
        sigma = (2.0 * math.pi * diff_fwhm / 2.355 if diff_fwhm is not None
                 else base.emitter.diffusion.sigma)
        emitter = EmitterParams(
            gamma_bulk=_get(parsed, "emitter", "gamma_bulk") or base.emitter.gamma_bulk,
            gamma_dephasing=gd,
            diffusion=SpectralDiffusionParams(
                sigma=sigma,
                tau_c=_get(parsed, "emitter", "diffusion_tau_c") or base.emitter.diffusion.tau_c),
        )
        rep_rate = _get(parsed, "pulse", "rep_rate")
        pulse = PulseParams(
            area=_get(parsed, "pulse", "area") if _get(parsed, "pulse", "area") is not None
            else base.pulse.area,
            fwhm=_get(parsed, "pulse", "fwhm") or base.pulse.fwhm,
            center=0.0,
            rep_period=(1.0 / rep_rate) if rep_rate else base.pulse.rep_period,
        )
        fp = FabryPerotParams(
            finesse=_get(parsed, "fabry_perot", "finesse") or base.fp.finesse,
            fsr=_get(parsed, "fabry_perot", "fsr") or base.fp.fsr,
            linewidth=_get(parsed, "fabry_perot", "linewidth") or base.fp.linewidth,
            transmission_peak=_get(parsed, "fabry_perot", "transmission_peak")
            or base.fp.transmission_peak,
        )
        stages = []
        for name, default_eff in _DEFAULT_BUDGET_STAGES:
            eff = _get(parsed, "budget", name)
            stages.append(BudgetStage(name, eff if eff is not None else default_eff))
        b_rep = _get(parsed, "budget", "rep_rate")
        budget = Budget(
            stages=tuple(stages),
            rep_rate=b_rep if b_rep else base.budget.rep_rate,
            detected_rate=_get(parsed, "budget", "detected_rate")
            if _get(parsed, "budget", "detected_rate") is not None else base.budget.detected_rate,
        )

        def opt(section, key, fallback):
            v = _get(parsed, section, key)
            return v if v is not None else fallback

        cfg = ExperimentConfig(
            cavity=cavity, emitter=emitter, pulse=pulse, fp=fp, budget=budget,
            seed=opt("run", "seed", base.seed),
            output_dir=opt("run", "output_dir", base.output_dir),
            threads=opt("run", "threads", base.threads),
            lifetime_on_resonance=t1_op,
            detector_sigma=opt("detector", "jitter_sigma", base.detector_sigma),
            snr=opt("background", "snr", base.snr),
            etalon_suppression=opt("background", "etalon_suppression",
                                   base.etalon_suppression),
            hbt_n_pulses=opt("hbt", "n_pulses", base.hbt_n_pulses),
            hbt_bin_width=opt("hbt", "bin_width", base.hbt_bin_width),
            hbt_span_periods=opt("hbt", "span_periods", base.hbt_span_periods),
            hom_delay_short=opt("hom", "delay_short", base.hom_delay_short),
            hom_delay_long=opt("hom", "delay_long", base.hom_delay_long),
            hom_n_pairs=opt("hom", "n_pairs", base.hom_n_pairs),
            hom_splitter_t=opt("hom", "splitter_t", base.hom_splitter_t),
            rabi_pi_power=opt("rabi", "pi_pulse_power", base.rabi_pi_power),
            rabi_points=opt("rabi", "points", base.rabi_points),
            rabi_max_area=opt("rabi", "max_area", base.rabi_max_area),
            spectrum_span=opt("spectrum", "span", base.spectrum_span),
            spectrum_points=opt("spectrum", "points", base.spectrum_points),
            spectrum_deconvolve=opt("spectrum", "deconvolve_instrument",
                                    base.spectrum_deconvolve),
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def with_overrides(cfg: ExperimentConfig, seed=None, output_dir=None,
                   threads=None) -> ExperimentConfig:
    kwargs = {}
    if seed is not None:
        kwargs["seed"] = seed
    if output_dir is not None:
        kwargs["output_dir"] = output_dir
    if threads is not None:
        kwargs["threads"] = threads
    return replace(cfg, **kwargs) if kwargs else cfg
