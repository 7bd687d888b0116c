"""CSV serialization for the core containers.

Every file starts with ``# metadata:`` comment lines carrying at least the
seed and package version, then a header row, then data rows.  Floats are
written with repr-level precision so repeated runs are byte-identical.
"""

from __future__ import annotations

import numpy as np

from . import __version__
from .errors import InvalidInputError
from .series import AdevCurve, PhaseSeries, PsdEstimate


def _fmt(x):
    return format(float(x), ".17g")


def metadata_lines(seed=None, **extra):
    fields = {"version": __version__}
    if seed is not None:
        fields["seed"] = seed
    fields.update(extra)
    body = " ".join(f"{k}={v}" for k, v in fields.items())
    return [f"# metadata: {body}"]


def write_adev_csv(path, curve: AdevCurve, seed=None, **extra):
    lines = metadata_lines(seed, estimator=curve.estimator, **extra)
    for note in curve.notes:
        lines.append(f"# note: {note}")
    for tau in curve.omitted_taus:
        lines.append(f"# omitted: tau_s={_fmt(tau)} (insufficient data)")
    lines.append("tau_s,sigma,n_pairs")
    for tau, sigma, n in zip(curve.taus, curve.sigmas, curve.n_pairs):
        lines.append(f"{_fmt(tau)},{_fmt(sigma)},{int(n)}")
    write_lines(path, lines)


def read_adev_csv(path) -> AdevCurve:
    estimator = "standard"
    notes = []
    taus, sigmas, pairs = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        rows = [line.rstrip("\n") for line in fh]
    header_seen = False
    for line in rows:
        if not line:
            continue
        if line.startswith("#"):
            if "estimator=" in line:
                estimator = line.split("estimator=")[1].split()[0]
            if line.startswith("# note: "):
                notes.append(line[len("# note: "):])
            continue
        if not header_seen:
            if line.strip() != "tau_s,sigma,n_pairs":
                raise InvalidInputError(f"{path}: expected AdevCurve header, got {line!r}")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise InvalidInputError(f"{path}: malformed row {line!r}")
        taus.append(float(parts[0]))
        sigmas.append(float(parts[1]))
        pairs.append(int(parts[2]))
    if not header_seen or not taus:
        raise InvalidInputError(f"{path}: no Allan-deviation data found")
    return AdevCurve(np.array(taus), np.array(sigmas), np.array(pairs, dtype=int),
                     estimator=estimator, notes=tuple(notes))


def write_psd_csv(path, psd: PsdEstimate, seed=None, **extra):
    lines = metadata_lines(seed, **extra)
    lines.append("freq_hz,psd,rbw_hz")
    for f, v in zip(psd.freqs, psd.values):
        lines.append(f"{_fmt(f)},{_fmt(v)},{_fmt(psd.rbw_hz)}")
    write_lines(path, lines)


def write_phase_csv(path, series: PhaseSeries, seed=None, **extra):
    lines = metadata_lines(seed, label=series.label or "phase", **extra)
    lines.append("t_s,x_s")
    t = series.times()
    for ti, xi in zip(t, series.samples):
        lines.append(f"{_fmt(ti)},{_fmt(xi)}")
    write_lines(path, lines)


def _decimal_uhz(nominal_fraction, offset_hz):
    """Fixed-point decimal string at microhertz resolution."""
    total_uhz = round(nominal_fraction * 10 ** 6) + round(offset_hz * 1e6)
    sign = "-" if total_uhz < 0 else ""
    total_uhz = abs(int(total_uhz))
    return f"{sign}{total_uhz // 10 ** 6}.{total_uhz % 10 ** 6:06d}"


def write_measurement_csv(path, record, seed=None, **extra):
    """Counting-chain record: gate_index,counted_hz,f_opt_hz.

    Optical frequencies are written as exact microhertz decimals (the
    counter resolution); floats cannot carry that at 30 THz.
    """
    lines = metadata_lines(seed, gate_s=_fmt(record.gate_s), **extra)
    lines.append("gate_index,counted_hz,f_opt_hz")
    for i, (c, off) in enumerate(zip(record.counted_hz, record.optical_offsets_hz)):
        lines.append(f"{i},{_fmt(c)},{_decimal_uhz(record.optical_nominal_hz, off)}")
    write_lines(path, lines)


def write_lines(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
