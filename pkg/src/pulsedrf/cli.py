"""Command-line front end: one subcommand per experiment, CSV + JSON artifacts.

Every Monte Carlo subcommand is byte-reproducible for a fixed seed, whatever
the thread count. CSV files carry a `# key=value` metadata line followed by a
column header; JSON summaries follow the schema shipped as summary_schema.json.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bloch import PulseParams, prep_efficiency, rabi_curve, sample_emission_arrays
from .budget import budget_report
from .config import ConfigError, ExperimentConfig, load_config, with_overrides
from .correlations import Histogram, g2_from_histogram, hbt_histogram
from .errors import ParameterError, StepSizeTooLargeError
from .fitting import fit_decay_irf, fit_hom_peaks, fit_purcell, fit_voigt
from .hom import hom_visibility, visibility_corrected
from .purcell import cavity_linewidth, lifetime_curve, purcell_rate
from .spectra import SpectrumTrace, emission_spectrum, fp_scan

SUBCOMMANDS = ("lifetime", "rabi", "hbt", "hom", "spectrum", "fit", "budget", "all")


# ---------------------------------------------------------------------------
# CSV / JSON plumbing


def _fmt(x) -> str:
    return repr(float(x))


def write_histogram_csv(path, hist: Histogram, seed: int):
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# bin_width_s={_fmt(hist.bin_width)} t_min_s={_fmt(hist.t_min)} "
                 f"seed={int(seed)}\n")
        writer = csv.writer(fh)
        writer.writerow(["tau_seconds", "counts"])
        for tau, c in zip(hist.bin_centers(), hist.counts):
            writer.writerow([_fmt(tau), int(c)])


def read_histogram_csv(path):
    """Inverse of write_histogram_csv. Returns (Histogram, seed)."""
    path = Path(path)
    with path.open() as fh:
        meta_line = fh.readline().strip()
        meta = dict(item.split("=", 1) for item in meta_line.lstrip("# ").split())
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["tau_seconds", "counts"]:
            raise ConfigError(f"{path}: unexpected histogram CSV header {header}")
        counts = [int(row[1]) for row in reader]
    return (Histogram(bin_width=float(meta["bin_width_s"]),
                      t_min=float(meta["t_min_s"]),
                      counts=np.asarray(counts, dtype=np.int64)),
            int(meta["seed"]))


def write_xy_csv(path, columns, rows, meta: dict):
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_xy_csv(path):
    path = Path(path)
    with path.open() as fh:
        meta_line = fh.readline().strip()
        meta = dict(item.split("=", 1) for item in meta_line.lstrip("# ").split())
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return columns, np.asarray(rows), meta


def write_summary(path, subcommand: str, cfg: ExperimentConfig, results: dict):
    payload = {
        "subcommand": subcommand,
        "seed": int(cfg.seed),
        "version": __version__,
        "results": results,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return payload


# ---------------------------------------------------------------------------
# subcommands


def _run_lifetime(cfg: ExperimentConfig, out: Path, trials, bins):
    kappa = cavity_linewidth(cfg.cavity)
    deltas = np.linspace(-6.0, 6.0, bins or 121) * kappa
    curve = lifetime_curve(deltas, cfg.cavity, cfg.emitter)
    write_xy_csv(out / "lifetime_curve.csv", ["delta_rad_per_s", "t1_seconds"],
                 curve, {"seed": cfg.seed, "kappa_rad_per_s": _fmt(kappa)})
    t1_on = 1.0 / purcell_rate(0.0, cfg.cavity, cfg.emitter)
    results = {
        "kappa_rad_per_s": kappa,
        "t1_on_resonance_s": t1_on,
        "t1_bulk_s": 1.0 / cfg.emitter.gamma_bulk,
        "purcell_factor": cfg.cavity.purcell_factor,
        "enhancement_ratio": (1.0 / cfg.emitter.gamma_bulk) / t1_on,
    }
    write_summary(out / "lifetime_summary.json", "lifetime", cfg, results)
    return results


def _run_rabi(cfg: ExperimentConfig, out: Path, trials, bins):
    gamma = cfg.gamma_operating
    calib = cfg.rabi_calibration
    n = trials or cfg.rabi_points
    sqrt_p_max = cfg.rabi_max_area / calib
    sqrt_powers = np.linspace(0.0, sqrt_p_max, n)
    curve = rabi_curve(sqrt_powers, calib, cfg.pulse, gamma,
                       cfg.emitter.gamma_dephasing)
    write_xy_csv(out / "rabi_curve.csv", ["sqrt_power_sqrt_watt", "signal"],
                 curve, {"seed": cfg.seed, "area_per_sqrt_watt": _fmt(calib)})
    imax = int(np.argmax(curve[:, 1]))
    results = {
        "pi_pulse_power_watt": cfg.rabi_pi_power,
        "first_max_area_rad": float(calib * curve[imax, 0]),
        "max_signal": float(curve[imax, 1]),
        "prep_efficiency_at_pi": prep_efficiency(cfg.pulse, gamma,
                                                 cfg.emitter.gamma_dephasing),
    }
    write_summary(out / "rabi_summary.json", "rabi", cfg, results)
    return results


def _run_hbt(cfg: ExperimentConfig, out: Path, trials, bins):
    gamma = cfg.gamma_operating
    n_pulses = trials or cfg.hbt_n_pulses
    rep = cfg.pulse.rep_period
    span = cfg.hbt_span_periods * rep
    bin_width = (2.0 * span / bins) if bins else cfg.hbt_bin_width
    arrays = sample_emission_arrays(n_pulses, cfg.pulse, gamma,
                                    cfg.emitter.gamma_dephasing,
                                    cfg.background_rate, cfg.seed, cfg.threads)
    hist = hbt_histogram(arrays, rep, bin_width, span,
                         jitter_sigma=cfg.detector_sigma, seed=cfg.seed)
    g2, stderr = g2_from_histogram(hist, rep)
    write_histogram_csv(out / "hbt_hist.csv", hist, cfg.seed)
    results = {
        "g2": g2,
        "stderr": stderr,
        "n_pulses": n_pulses,
        "mean_photons_per_pulse": arrays[0].size / n_pulses,
        "purity": 1.0 - g2,
    }
    write_summary(out / "hbt_summary.json", "hbt", cfg, results)
    return results


def _hbt_g2_quick(cfg: ExperimentConfig, n_pulses=200_000):
    gamma = cfg.gamma_operating
    rep = cfg.pulse.rep_period
    arrays = sample_emission_arrays(n_pulses, cfg.pulse, gamma,
                                    cfg.emitter.gamma_dephasing,
                                    cfg.background_rate, cfg.seed + 0xB2, cfg.threads)
    hist = hbt_histogram(arrays, rep, cfg.hbt_bin_width, cfg.hbt_span_periods * rep)
    return g2_from_histogram(hist, rep)[0]


def _run_hom(cfg: ExperimentConfig, out: Path, trials, bins, g2=None):
    gamma = cfg.gamma_operating
    n_pairs = trials or cfg.hom_n_pairs
    if g2 is None:
        g2 = _hbt_g2_quick(cfg)
    measurements = []
    for tag, delay in (("short", cfg.hom_delay_short), ("long", cfg.hom_delay_long)):
        v_raw, stderr, h_par, h_cross = hom_visibility(
            delay, cfg.pulse, gamma, cfg.emitter.gamma_dephasing,
            cfg.emitter.diffusion, n_pairs, cfg.detector_sigma,
            cfg.background_rate, 0.0, cfg.seed, "fit", cfg.threads)
        write_histogram_csv(out / f"hom_parallel_{tag}.csv", h_par, cfg.seed)
        write_histogram_csv(out / f"hom_cross_{tag}.csv", h_cross, cfg.seed)
        measurements.append({
            "delay": delay,
            "polarization": "parallel-vs-cross",
            "V_raw": v_raw,
            "V_corr": visibility_corrected(min(max(v_raw, 0.0), 1.0), g2),
            "stderr": stderr,
        })
    results = {"g2_used_for_correction": g2, "measurements": measurements}
    write_summary(out / "hom_summary.json", "hom", cfg, results)
    return results


def _run_spectrum(cfg: ExperimentConfig, out: Path, trials, bins):
    gamma = cfg.gamma_operating
    gd = cfg.emitter.gamma_dephasing
    sigma = cfg.emitter.diffusion.sigma
    npts = bins or cfg.spectrum_points
    grid = np.linspace(-0.5, 0.5, npts) * cfg.spectrum_span
    spec = emission_spectrum(gamma, gd, sigma, grid)
    write_xy_csv(out / "spectrum.csv", ["freq_hz", "intensity"],
                 np.column_stack([spec.frequencies, spec.intensities]),
                 {"seed": cfg.seed})
    scan_half = min(cfg.fp.fsr / 2.0, cfg.spectrum_span / 2.0)
    scan = np.linspace(-scan_half, scan_half, npts)
    scanned = fp_scan(spec, cfg.fp, scan)
    write_xy_csv(out / "fp_scan.csv", ["freq_hz", "intensity"],
                 np.column_stack([scanned.frequencies, scanned.intensities]),
                 {"seed": cfg.seed, "transmission_peak": cfg.fp.transmission_peak})
    fit = fit_voigt(spec)
    fit_scan = fit_voigt(scanned)
    f_l_scan = fit_scan.params["f_lorentzian"]
    results = {
        "lifetime_limited_fwhm_hz": gamma / (2.0 * math.pi),
        "f_lorentzian_hz": fit.params["f_lorentzian"],
        "f_gaussian_hz": fit.params["f_gaussian"],
        "fit": fit.to_dict(),
        "fp_scan_f_lorentzian_hz": f_l_scan,
        "fp_scan_f_lorentzian_deconvolved_hz":
            (f_l_scan - cfg.fp.linewidth) if cfg.spectrum_deconvolve else f_l_scan,
        "instrument_deconvolved": cfg.spectrum_deconvolve,
    }
    write_summary(out / "spectrum_summary.json", "spectrum", cfg, results)
    return results


def _run_fit(cfg: ExperimentConfig, out: Path, trials, bins):
    """Round-trip fits on synthetic data generated from the configured device."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xF17)))
    gamma = cfg.gamma_operating
    reports = {}

    # decay with IRF
    t1_true = cfg.lifetime_on_resonance
    edges = np.linspace(-0.3e-9, 1.2e-9, 301)
    centers = 0.5 * (edges[1:] + edges[:-1])
    from .fitting import decay_irf_model
    model = decay_irf_model(centers, t1_true, 1.0, 0.0, cfg.detector_sigma)
    scale = 1e5 / model.sum()
    counts = rng.poisson(model * scale)
    hist = Histogram(bin_width=float(edges[1] - edges[0]), t_min=float(edges[0]),
                     counts=counts)
    fit_d = fit_decay_irf(hist, cfg.detector_sigma)
    reports["decay_irf"] = {"model": "exp_decay_conv_gauss",
                            "true": {"t1": t1_true}, **fit_d.to_dict()}

    # lifetime vs detuning
    kappa = cavity_linewidth(cfg.cavity)
    deltas = np.linspace(-3.0, 3.0, 15) * kappa
    t1s = 1.0 / purcell_rate(deltas, cfg.cavity, cfg.emitter)
    noisy = t1s * (1.0 + 0.05 * rng.standard_normal(t1s.size))
    fit_p = fit_purcell(np.column_stack([deltas, noisy]), cfg.cavity)
    reports["purcell"] = {"model": "lorentzian_enhancement",
                          "true": {"purcell_factor": cfg.cavity.purcell_factor,
                                   "gamma_bulk": cfg.emitter.gamma_bulk},
                          **fit_p.to_dict()}

    # Voigt line shape
    grid = np.linspace(-15e9, 15e9, 2001)
    spec = emission_spectrum(gamma, cfg.emitter.gamma_dephasing,
                             cfg.emitter.diffusion.sigma, grid)
    fit_v = fit_voigt(spec)
    reports["voigt"] = {"model": "voigt",
                        "true": {"f_lorentzian": (gamma + 2 * cfg.emitter.gamma_dephasing) / (2 * math.pi),
                                 "f_gaussian": 2.355 * cfg.emitter.diffusion.sigma / (2 * math.pi)},
                        **fit_v.to_dict()}

    # coincidence peak train
    delay = cfg.hom_delay_short
    bw = 0.25 / gamma
    n_half = int(np.ceil(2.5 * delay / bw))
    tau_centers = (np.arange(-n_half, n_half) + 0.5) * bw
    shape = np.zeros_like(tau_centers)
    from .fitting import two_sided_peak
    true_areas = [2500.0, 5000.0, 400.0, 5000.0, 2500.0]
    for area, c in zip(true_areas, delay * np.array([-2, -1, 0, 1, 2.0])):
        shape += area * bw * two_sided_peak(tau_centers - c, t1_true, cfg.detector_sigma)
    hom_hist = Histogram(bin_width=bw, t_min=float(-n_half * bw),
                         counts=rng.poisson(shape))
    peaks, fit_h = fit_hom_peaks(hom_hist, delay * np.array([-2, -1, 0, 1, 2.0]),
                                 detector_sigma=cfg.detector_sigma)
    reports["hom_peaks"] = {"model": "two_sided_exp_conv_gauss",
                            "true": {"areas": true_areas}, **fit_h.to_dict()}

    write_summary(out / "fit_report.json", "fit", cfg, reports)
    return reports


def _run_budget(cfg: ExperimentConfig, out: Path, trials, bins):
    report = budget_report(cfg.budget)
    report["overall"] = report["overall_system_efficiency"]
    write_summary(out / "budget_summary.json", "budget", cfg, report)
    return report


_RUNNERS = {
    "lifetime": _run_lifetime,
    "rabi": _run_rabi,
    "hbt": _run_hbt,
    "hom": _run_hom,
    "spectrum": _run_spectrum,
    "fit": _run_fit,
    "budget": _run_budget,
}


def run_subcommand(name: str, cfg: ExperimentConfig, trials=None, bins=None) -> dict:
    """Run one experiment (or 'all') and write its artifacts under cfg.output_dir."""
    if name not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {name!r}")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if name != "all":
        return _RUNNERS[name](cfg, out, trials, bins)
    results = {}
    for sub in ("lifetime", "rabi", "budget", "spectrum", "fit", "hbt"):
        results[sub] = _RUNNERS[sub](cfg, out, trials, bins)
    results["hom"] = _run_hom(cfg, out, trials, bins, g2=results["hbt"]["g2"])
    return results


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="pulsedrf",
        description="Simulate and fit a pulsed, cavity-enhanced single-photon source.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", default=None, help="config file (defaults: nominal device)")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out", default=None, help="override run.output_dir")
        p.add_argument("--trials", type=int, default=None,
                       help="override Monte Carlo trial/pulse count")
        p.add_argument("--bins", type=int, default=None,
                       help="override histogram bin or grid point count")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, seed=args.seed, output_dir=args.out,
                             threads=args.threads)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        run_subcommand(args.subcommand, cfg, trials=args.trials, bins=args.bins)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StepSizeTooLargeError, FloatingPointError, np.linalg.LinAlgError,
            ArithmeticError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
