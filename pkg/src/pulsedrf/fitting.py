"""Damped nonlinear least squares and the fitters used by the analysis pipeline.

The optimizer is a Levenberg-Marquardt loop with Marquardt diagonal scaling and
a gain-ratio damping update. Jacobians come from forward finite differences with
a per-parameter relative step of 1e-6. Histogram fitters use Poisson weighting
(sigma_i = sqrt(max(count_i, 1))); reported parameter uncertainties are 1-sigma
standard errors from the chi-square-scaled covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfcx, voigt_profile

from .errors import (
    DegenerateDataError,
    InsufficientSpanError,
    NonFiniteResidualError,
    OverlappingPeaksError,
    ParameterError,
)
from .purcell import CavityParams, EmitterParams, cavity_linewidth, purcell_rate

__all__ = [
    "FitResult",
    "least_squares",
    "fit_decay_irf",
    "fit_purcell",
    "fit_voigt",
    "fit_hom_peaks",
    "decay_irf_model",
    "two_sided_peak",
]

_FD_REL_STEP = 1e-6


@dataclass
class FitResult:
    params: dict
    covariance: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    cost_history: list = field(default_factory=list)

    @property
    def stderr(self) -> dict:
        """1-sigma standard errors, same keys as params."""
        d = np.sqrt(np.maximum(np.diag(self.covariance), 0.0))
        return dict(zip(self.params.keys(), d))

    def values(self) -> np.ndarray:
        return np.array(list(self.params.values()), dtype=float)

    def to_dict(self) -> dict:
        return {
            "params": self.params,
            "stderr": self.stderr,
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _jacobian(residual_fn, p, r0):
    m = p.size
    jac = np.empty((r0.size, m))
    for i in range(m):
        h = _FD_REL_STEP * abs(p[i]) if p[i] != 0.0 else _FD_REL_STEP
        pp = p.copy()
        pp[i] += h
        ri = np.asarray(residual_fn(pp), dtype=float)
        jac[:, i] = (ri - r0) / h
    return jac


def least_squares(residual_fn, init, bounds=None, tol=1e-10, max_iter=200,
                  param_names=None) -> FitResult:
    """Minimize 0.5*||residual_fn(p)||^2 from init, optionally inside box bounds.

    Returns the best point found with converged=False if max_iter runs out.
    Raises ParameterError when init violates the bounds, NonFiniteResidualError
    when the residual is not finite at init.
    """
    p = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    m = p.size
    if bounds is None:
        lo = np.full(m, -np.inf)
        hi = np.full(m, np.inf)
    else:
        lo = np.array([b[0] for b in bounds], dtype=float)
        hi = np.array([b[1] for b in bounds], dtype=float)
    if np.any(p < lo) or np.any(p > hi):
        raise ParameterError("initial point lies outside the bounds")
    names = list(param_names) if param_names is not None else [f"p{i}" for i in range(m)]

    r = np.atleast_1d(np.asarray(residual_fn(p), dtype=float))
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidualError("residual not finite at the initial point")
    cost = 0.5 * float(r @ r)
    history = [cost]

    jac = _jacobian(residual_fn, p, r)
    jtj = jac.T @ jac
    grad = jac.T @ r
    diag = np.maximum(np.diag(jtj), 1e-300)
    mu = 1e-6 * diag.max()
    nu = 2.0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        try:
            step = np.linalg.solve(jtj + mu * np.diag(diag), -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jtj + mu * np.diag(diag), -grad, rcond=None)[0]
        p_new = np.clip(p + step, lo, hi)
        actual_step = p_new - p
        r_new = np.atleast_1d(np.asarray(residual_fn(p_new), dtype=float))
        if np.all(np.isfinite(r_new)):
            cost_new = 0.5 * float(r_new @ r_new)
            predicted = 0.5 * float(actual_step @ (mu * diag * actual_step - grad))
            rho = (cost - cost_new) / predicted if predicted > 0 else -1.0
        else:
            cost_new, rho = np.inf, -1.0
        if rho > 0:
            p, r, cost = p_new, r_new, cost_new
            history.append(cost)
            jac = _jacobian(residual_fn, p, r)
            jtj = jac.T @ jac
            grad = jac.T @ r
            diag = np.maximum(np.diag(jtj), 1e-300)
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if np.max(np.abs(actual_step)) < 1e-14 * (np.max(np.abs(p)) + 1e-14):
                converged = True
                break
        else:
            mu *= nu
            nu *= 2.0
            if mu > 1e300:
                break

    n, = r.shape
    scale = (2.0 * cost) / (n - m) if n > m and cost > 0 else 1.0
    try:
        cov = np.linalg.inv(jtj) * scale
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj) * scale
    return FitResult(
        params=dict(zip(names, p.tolist())),
        covariance=cov,
        residual_norm=float(np.sqrt(2.0 * cost)),
        iterations=it,
        converged=converged,
        cost_history=history,
    )


# ---------------------------------------------------------------------------
# decay with instrument response


def decay_irf_model(t, t1, amplitude, offset, irf_sigma, t0=0.0):
    """Exponential decay starting at t0 convolved with a Gaussian IRF of width irf_sigma.

    Normalized so irf_sigma -> 0 reduces to amplitude*exp(-(t-t0)/t1) for t >= t0.
    """
    t = np.asarray(t, dtype=float)
    dt = t - t0
    if irf_sigma == 0.0:
        return amplitude * np.exp(-np.clip(dt, 0.0, None) / t1) * (dt >= 0) + offset
    z = (irf_sigma / t1 - dt / irf_sigma) / np.sqrt(2.0)
    # 0.5*exp(s^2/2T^2 - dt/T)*erfc(z) written via erfcx for stability
    return amplitude * 0.5 * erfcx(z) * np.exp(-0.5 * (dt / irf_sigma) ** 2) + offset


def fit_decay_irf(histogram, irf_sigma, t0=0.0) -> FitResult:
    """Fit a time-resolved decay histogram with an IRF-convolved exponential.

    Params: t1, amplitude, offset. Poisson-weighted; irf_sigma and t0 are fixed.
    """
    t = histogram.bin_centers()
    counts = np.asarray(histogram.counts, dtype=float)
    if t.size < 30:
        raise DegenerateDataError("need at least 30 bins to fit a decay")
    if counts.max() == counts.min():
        raise DegenerateDataError("histogram is flat")
    sigma_w = np.sqrt(np.maximum(counts, 1.0))

    # moment-based start: offset from the trailing decade, t1 from the mean
    # excess delay past the peak
    ntail = max(1, t.size // 10)
    offset0 = float(np.median(counts[-ntail:]))
    peak_idx = int(np.argmax(counts))
    amp0 = max(counts[peak_idx] - offset0, 1.0)
    excess = np.clip(counts[peak_idx:] - offset0, 0.0, None)
    if excess.sum() > 0:
        t1_0 = float(np.sum(excess * (t[peak_idx:] - t[peak_idx])) / excess.sum())
    else:
        t1_0 = t[-1] - t[0]
    t1_0 = max(t1_0, float(histogram.bin_width))

    def residual(p):
        model = decay_irf_model(t, p[0], p[1], p[2], irf_sigma, t0)
        return (model - counts) / sigma_w

    span = t[-1] - t[0]
    return least_squares(
        residual,
        [t1_0, amp0, offset0],
        bounds=[(1e-6 * span, 10 * span), (0.0, np.inf), (-np.inf, np.inf)],
        param_names=["t1", "amplitude", "offset"],
    )


# ---------------------------------------------------------------------------
# lifetime vs detuning


def fit_purcell(pairs, cav: CavityParams, fit_kappa=False, weights=None) -> FitResult:
    """Fit (detuning, T1) data with the Lorentzian Purcell-enhancement law.

    Params: purcell_factor, gamma_bulk (and kappa when fit_kappa). The cavity
    linewidth is otherwise fixed from Q and the wavelength.
    """
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 2 or pairs.shape[0] < 5:
        raise InsufficientSpanError("need at least 5 (detuning, T1) points")
    delta, t1 = pairs[:, 0], pairs[:, 1]
    kappa0 = cavity_linewidth(cav)
    if np.all(np.abs(delta) < kappa0) or np.all(np.abs(delta) > 5 * kappa0):
        raise InsufficientSpanError(
            "detunings must straddle the cavity linewidth to separate F_p from gamma_bulk")
    w = np.ones_like(t1) if weights is None else np.asarray(weights, dtype=float)

    gb0 = 1.0 / t1.max()
    fp0 = max(t1.max() / t1.min() - 1.0, 0.1)

    def residual(p):
        if fit_kappa:
            fp, gb, kap = p
        else:
            fp, gb = p
            kap = kappa0
        lorentz = 1.0 / (1.0 + (2.0 * delta / kap) ** 2)
        model = 1.0 / (gb * (1.0 + fp * lorentz))
        return (model - t1) * w

    if fit_kappa:
        init = [fp0, gb0, kappa0]
        bounds = [(0.0, np.inf), (1e-30, np.inf), (1e-30, np.inf)]
        names = ["purcell_factor", "gamma_bulk", "kappa"]
    else:
        init = [fp0, gb0]
        bounds = [(0.0, np.inf), (1e-30, np.inf)]
        names = ["purcell_factor", "gamma_bulk"]
    return least_squares(residual, init, bounds=bounds, param_names=names)


# ---------------------------------------------------------------------------
# Voigt line shape


def fit_voigt(trace) -> FitResult:
    """Fit a spectrum with an area-scaled Voigt profile.

    Params: f_lorentzian and f_gaussian (both FWHM, Hz), center, amplitude
    (integrated area). The profile is evaluated with the Faddeeva function
    (relative accuracy well below 1e-4 over the fitted range).
    """
    f = np.asarray(trace.frequencies, dtype=float)
    y = np.asarray(trace.intensities, dtype=float)
    if y.max() <= 0 or y.max() == y.min():
        raise DegenerateDataError("spectrum carries no line")
    peak_idx = int(np.argmax(y))
    c0 = f[peak_idx]
    half = y[peak_idx] / 2.0
    above = f[y >= half]
    width0 = float(above[-1] - above[0]) if above.size >= 2 else (f[-1] - f[0]) / 10.0
    if (f[-1] - f[0]) < 5.0 * width0:
        raise DegenerateDataError("grid must span at least 5 line widths")
    fl0 = fg0 = max(width0 / 2.0, (f[1] - f[0]))
    amp0 = y[peak_idx] / voigt_profile(0.0, fg0 / 2.355, fl0 / 2.0)

    def residual(p):
        fl, fg, c, a = p
        model = a * voigt_profile(f - c, fg / 2.355, fl / 2.0)
        return model - y

    res = least_squares(
        residual,
        [fl0, fg0, c0, amp0],
        bounds=[(1e-9 * width0, np.inf), (0.0, np.inf), (f[0], f[-1]), (0.0, np.inf)],
        param_names=["f_lorentzian", "f_gaussian", "center", "amplitude"],
    )
    return res


# ---------------------------------------------------------------------------
# coincidence-peak train


def _one_sided_emg(x, tau, sigma):
    """Unit-area exponential (decay time tau, x >= 0) blurred by a Gaussian."""
    x = np.asarray(x, dtype=float)
    if sigma == 0.0:
        return np.exp(-np.clip(x, 0.0, None) / tau) * (x >= 0) / tau
    z = (sigma / tau - x / sigma) / np.sqrt(2.0)
    return 0.5 / tau * erfcx(z) * np.exp(-0.5 * (x / sigma) ** 2)


def two_sided_peak(x, tau, sigma):
    """Unit-area two-sided exponential exp(-|x|/tau)/(2 tau) blurred by a Gaussian."""
    return 0.5 * (_one_sided_emg(x, tau, sigma) + _one_sided_emg(-np.asarray(x), tau, sigma))


def fit_hom_peaks(h, peak_centers, detector_sigma=None, t1_init=None,
                  fit_baseline=True):
    """Fit a coincidence histogram with two-sided-exponential peaks under Gaussian blur.

    All peaks share the decay time and blur width; each has its own area. The
    baseline absorbs any flat accidental floor. Returns (peak integrations,
    FitResult); areas are in counts (area_k * bin_width is folded in).
    """
    from .correlations import PeakIntegration

    centers = np.asarray(peak_centers, dtype=float)
    if centers.size < 1:
        raise ParameterError("need at least one peak center")
    t = h.bin_centers()
    counts = np.asarray(h.counts, dtype=float)
    bw = float(h.bin_width)
    sep = np.min(np.diff(np.sort(centers))) if centers.size > 1 else np.inf
    sig0 = detector_sigma if detector_sigma is not None else 2.0 * bw
    if sig0 > 0 and sep <= 5.0 * sig0:
        raise OverlappingPeaksError("peaks closer than 5 detector sigma cannot be separated")
    half_window = min(sep / 2.0, (t[-1] - t[0]) / 2.0) if np.isfinite(sep) else (t[-1] - t[0]) / 4.0

    if t1_init is None:
        t1_init = max(4.0 * bw, sig0)
    area0 = []
    for c in centers:
        sel = np.abs(t - c) <= half_window
        area0.append(max(float(counts[sel].sum()), 1.0))

    nk = centers.size

    def residual(p):
        t1, sig = p[0], p[1]
        base = p[2] if fit_baseline else 0.0
        areas = p[3:] if fit_baseline else p[2:]
        model = np.full_like(t, base)
        for c, a in zip(centers, areas):
            model = model + a * bw * two_sided_peak(t - c, t1, sig)
        return (model - counts) / np.sqrt(np.maximum(counts, 1.0))

    init = [t1_init, max(sig0, 0.25 * bw)]
    bounds = [(0.1 * bw, 100 * (t[-1] - t[0])), (0.05 * bw, half_window)]
    names = ["t1", "sigma"]
    if fit_baseline:
        init.append(0.0)
        bounds.append((-np.inf, np.inf))
        names.append("baseline")
    init.extend(area0)
    bounds.extend([(0.0, np.inf)] * nk)
    names.extend([f"area_{k}" for k in range(nk)])

    res = least_squares(residual, init, bounds=bounds, param_names=names)
    stderr = res.stderr
    peaks = [
        PeakIntegration(center=float(c), half_window=float(half_window),
                        area=res.params[f"area_{k}"],
                        stderr=stderr[f"area_{k}"])
        for k, c in enumerate(centers)
    ]
    return peaks, res
