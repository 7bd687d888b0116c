"""Phase/frequency conversion, Allan deviation, PSD estimation and
power-law identification.

The two-sample (Allan) deviation of fractional frequency,

    sigma_y(tau) = sqrt( 0.5 * < (ybar_n - ybar_{n+1})^2 > ),

is the stability measure used throughout: ybar_n are contiguous tau-averages
of y.  The canonical input is frequency data; a phase-input wrapper chains
the conversion.  Estimators are pure functions over immutable series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import InvalidInputError
from .series import AdevCurve, FracFreqSeries, PhaseSeries, PsdEstimate

ESTIMATORS = ("standard", "overlapping")


def phase_to_frac_freq(x: PhaseSeries) -> FracFreqSeries:
    """First-difference a phase-time record: y_n = (x_{n+1} - x_n) / tau0.

    Output has one sample fewer than the input.
    """
    if len(x) < 2:
        raise InvalidInputError("phase series needs at least 2 samples")
    y = np.diff(x.samples) / x.tau0
    return FracFreqSeries(y, x.tau0, label=x.label)


def _tau_multiple(tau, tau0):
    m = tau / tau0
    mi = int(round(m))
    if mi < 1 or abs(m - mi) > 1e-6 * max(abs(m), 1.0):
        raise InvalidInputError(
            f"tau={tau} is not an integer multiple of tau0={tau0}")
    return mi


def allan_deviation(y: FracFreqSeries, taus, estimator="standard") -> AdevCurve:
    """Allan deviation of fractional-frequency data at the requested taus.

    Each tau must be an integer multiple m*tau0.  The standard estimator
    averages y into contiguous m-sample means and differences adjacent means;
    the overlapping estimator uses every m-span.  Taus with fewer than one
    difference pair are omitted and flagged on the returned curve.
    """
    if estimator not in ESTIMATORS:
        raise InvalidInputError(f"estimator must be one of {ESTIMATORS}")
    yv = y.samples
    n = yv.size
    taus = np.unique(np.asarray(taus, dtype=float))
    if taus.size == 0:
        raise InvalidInputError("no taus requested")

    # Integrated phase (x_0 = 0) serves the overlapping estimator.
    xph = None
    if estimator == "overlapping":
        xph = np.concatenate(([0.0], np.cumsum(yv))) * y.tau0

    out_t, out_s, out_p, omitted = [], [], [], []
    for tau in taus:
        m = _tau_multiple(tau, y.tau0)
        if estimator == "standard":
            k = n // m
            if k < 2:
                omitted.append(float(tau))
                continue
            means = yv[: k * m].reshape(k, m).mean(axis=1)
            d = np.diff(means)
            out_s.append(float(np.sqrt(0.5 * np.mean(d * d))))
            out_p.append(d.size)
        else:
            if n - 2 * m + 1 < 1:
                omitted.append(float(tau))
                continue
            dd = xph[2 * m:] - 2.0 * xph[m:-m] + xph[:-2 * m]
            out_s.append(float(np.sqrt(0.5 * np.mean(dd * dd)) / (m * y.tau0)))
            out_p.append(dd.size)
        out_t.append(float(m * y.tau0))

    return AdevCurve(np.array(out_t), np.array(out_s), np.array(out_p, dtype=int),
                     estimator=estimator, omitted_taus=tuple(omitted))


def allan_deviation_phase(x: PhaseSeries, taus, estimator="standard") -> AdevCurve:
    """Convenience wrapper: Allan deviation straight from a phase-time record."""
    return allan_deviation(phase_to_frac_freq(x), taus, estimator)


def psd_welch(x: PhaseSeries, segment: int, overlap=0.5, window="hann",
              detrend="linear") -> PsdEstimate:
    """One-sided Welch PSD of a sampled record.

    ``segment`` is the per-segment length in samples; segments overlap by the
    given fraction.  Each segment is detrended (mean and linear trend) before
    windowing so DC leakage does not swamp the low bins.  The estimate is
    Parseval-consistent: integrating it over frequency recovers the variance
    of the detrended input.
    """
    segment = int(segment)
    if segment < 2 or segment > len(x):
        raise InvalidInputError(
            f"segment length {segment} must be in [2, {len(x)}]")
    if not 0.0 <= overlap < 1.0:
        raise InvalidInputError("overlap fraction must be in [0, 1)")
    fs = 1.0 / x.tau0
    freqs, values = signal.welch(
        x.samples, fs=fs, window=window, nperseg=segment,
        noverlap=int(overlap * segment), detrend=detrend, scaling="density")
    win = signal.get_window(window, segment)
    enbw = fs * np.sum(win ** 2) / np.sum(win) ** 2
    return PsdEstimate(freqs, np.maximum(values, 0.0), rbw_hz=float(enbw))


@dataclass(frozen=True)
class PowerLawFit:
    """Log-log fit sigma = level * tau**exponent over a tau range."""
    exponent: float
    level: float
    n_points: int


def fit_power_law(curve: AdevCurve, tau_min=None, tau_max=None) -> PowerLawFit:
    """Least-squares slope and level of log(sigma) vs log(tau).

    Needs at least three strictly positive sigma points inside the range.
    """
    mask = np.ones(len(curve), dtype=bool)
    if tau_min is not None:
        mask &= curve.taus >= tau_min
    if tau_max is not None:
        mask &= curve.taus <= tau_max
    taus = curve.taus[mask]
    sigmas = curve.sigmas[mask]
    if taus.size < 3:
        raise InvalidInputError(
            f"power-law fit needs >= 3 points in range, got {taus.size}")
    if np.any(sigmas <= 0):
        raise InvalidInputError("power-law fit requires strictly positive sigmas")
    slope, intercept = np.polyfit(np.log10(taus), np.log10(sigmas), 1)
    return PowerLawFit(exponent=float(slope), level=float(10.0 ** intercept),
                       n_points=int(taus.size))


def one_way_from_round_trip(curve: AdevCurve, independent=False) -> AdevCurve:
    """Deduce a one-way stability curve from a round-trip measurement.

    With fully correlated forward/backward perturbations the round-trip
    deviation is exactly twice the one-way (divide by 2, the default).  When
    the two passes carry independent residuals -- e.g. two independent
    compensation systems -- the proper reduction is sqrt(2).  The choice is
    recorded in the curve notes.
    """
    if len(curve) == 0:
        raise InvalidInputError("cannot deduce one-way from an empty curve")
    if independent:
        return curve.scaled(1.0 / np.sqrt(2.0),
                            "one-way deduced from round trip (/sqrt(2), independent residuals)")
    return curve.scaled(0.5, "one-way deduced from round trip (/2, correlated noise)")
