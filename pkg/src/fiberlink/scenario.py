"""Declarative scenario execution: configuration ingestion, simulation
orchestration, result persistence and plot-ready CSV exports.

A scenario is a JSON file; a ``preset`` key expands to a fully calibrated
configuration which individual keys may override.  Presets ship with
calibrated noise inputs chosen to reproduce the reported link behavior;
since only outcomes are known, every calibration constant that is not a
measured quantity is listed under ``assumed`` in the resolved echo.

Long runs use a dual-rate scheme: a full-rate simulation resolves the servo
band (default 0.1 ms step), while day-scale statistics come from a 1 s step
model in which the loops act through their low-frequency suppression
function.  The decimated model is validated against the full-rate one over
their overlap in the test suite.
"""

from __future__ import annotations

import copy
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import io as fio
from .comb import (BudgetEntry, CombParams, CounterChainConfig,
                   absolute_freq_estimate, as_fraction, count_chain,
                   rep_rate_lock, stability_budget)
from .control import (ControllerConfig, LinkLoopConfig, loop_suppression,
                      run_closed_loop)
from .errors import DivergenceError, InvalidInputError, ScenarioValidationError
from .link import (ActuatorState, Carrier, measurement_lowpass,
                   sample_every, to_radians)
from .noise import (BurstSpec, NoiseSpec, component_rng, gen_bursts,
                    gen_diurnal, gen_power_law_phase, white_fm_level_for)
from .series import AdevCurve, FracFreqSeries, PhaseSeries
from .stability import allan_deviation, allan_deviation_phase, psd_welch

PRESETS = ("fig1", "fig4", "budget")

# Defaults; leaves marked in _ASSUMED are calibration assumptions (the
# measured record reports outcomes, not these inputs).
_DEFAULTS = {
    "seed": None,
    "preset": None,
    "link": {
        "enabled": False,
        "length_km": 43.0,
        "delay_per_km_s": 5e-6,
        "step_s": 1e-4,
        "carrier_forward_hz": 1.0e9,
        "carrier_return_hz": 1.0e8,
        "carrier_probe_hz": 2.7e8,
        "noise": {
            "white_pm_sx_s2_per_hz": 4.775e-30,
            "diurnal_amplitude_s": 4.3e-11,
            "diurnal_period_s": 86400.0,
            "diurnal_phase_rad": 0.0,
            "burst_rate_per_s": 2.3148e-5,      # about two events per day
            "burst_amp_median_s": 5e-12,
            "burst_amp_sigma": 0.5,
            "burst_duration_s": 30.0,
            "walk_fm_h": 0.0,
            "differential_ratio": 0.1,
        },
        "detector": {
            "floor_rad_per_rthz": 1.4142135623730952e-6,   # -117 dB per loop
            "measurement_bw_hz": 10.0,
        },
    },
    "controllers": {
        "topology": "series",            # series | independent | off
        "unity_gain_hz": 300.0,
        "integrator_corner_hz": 30.0,
        "crossover_hz": 0.1,
        "rf_shifter_range_s": 1e-9,
        "rf_shifter_bandwidth_hz": 5e4,
        "piezo_range_s": 5e-11,
        "piezo_bandwidth_hz": 5e3,
        "thermal_range_s": 1e-8,
        "thermal_bandwidth_hz": 0.3,
        "closed_floor_walk_fm_h": 1.759e-40,   # 1e-17 at one day
    },
    "comb": {
        "enabled": False,
        "q": 29100,
        "f_rep_nominal_hz": "995000000",
        "delta_hz": "40000000",
        "sign": 1,
        "lo_freq_hz": "1000000000",
        "if_target_hz": 5e6,
        "final_shift_target_hz": 68.0,
        "filter_bw_hz": 10.0,
        "gate_s": 1.0,
        "n_gates": 4000,
        "optical_sigma_1s": 3e-14,
        "reference_sigma_1s": 8e-15,
        "link_sigma_1s": 8e-15,
    },
    "budget": {
        "enabled": False,
        "measured_sigma_1s": 3e-14,
        "contributions": [
            {"label": "optical_link", "sigma_at_1s": 8e-15},
            {"label": "reference_100mhz", "sigma_at_1s": 8e-15},
        ],
        "records": 10,
        "record_mean_offset_hz": 3.9,
        "record_sigma_hz": 10.0,
        "record_gates": 20,
        "nu_ref_offset_hz": 0.0,
    },
    "run": {
        "fullrate_duration_s": 240.0,
        "decimated_duration_s": 172800.0,
        "decimated_step_s": 1.0,
        "transient_discard_s": 20.0,
    },
    "outputs": {
        "adev_taus_s": [1, 2, 5, 10, 20, 50, 100, 200, 500,
                        1000, 2000, 5000, 10000, 20000, 40000, 43200],
        "fullrate_taus_s": [1, 2, 4, 8, 16, 32],
        "psd_segment_s": 60.0,
        "psd_overlap": 0.5,
        "write_decimated_series": False,
    },
}

_ASSUMED = {
    "link.noise.white_pm_sx_s2_per_hz",
    "link.noise.diurnal_amplitude_s",
    "link.noise.burst_rate_per_s",
    "link.noise.burst_amp_median_s",
    "link.noise.burst_amp_sigma",
    "link.noise.burst_duration_s",
    "link.noise.differential_ratio",
    "link.detector.floor_rad_per_rthz",
    "controllers.integrator_corner_hz",
    "controllers.crossover_hz",
    "controllers.rf_shifter_range_s",
    "controllers.rf_shifter_bandwidth_hz",
    "controllers.piezo_range_s",
    "controllers.piezo_bandwidth_hz",
    "controllers.thermal_range_s",
    "controllers.thermal_bandwidth_hz",
    "controllers.closed_floor_walk_fm_h",
    "comb.f_rep_nominal_hz",
    "comb.delta_hz",
    "comb.sign",
}

_PRESET_OVERRIDES = {
    "fig1": {"link": {"enabled": True}},
    "fig4": {"comb": {"enabled": True}},
    "budget": {"budget": {"enabled": True}},
}


@dataclass(frozen=True)
class Scenario:
    """Fully resolved scenario: defaults applied and recorded."""
    data: dict
    assumed: tuple
    source: str = "<dict>"

    def __getitem__(self, key):
        return self.data[key]

    def seed(self):
        return int(self.data["seed"])


@dataclass
class RunReport:
    """Echo of the resolved scenario plus the run's outputs and warnings."""
    scenario_echo: dict
    assumed: tuple
    seed: int
    manifest: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    wall_time_s: float = 0.0
    error: str | None = None
    results: dict = field(default_factory=dict)   # in-memory, not serialized

    def write(self, out_dir):
        path = os.path.join(out_dir, "run_report.json")
        payload = {
            "scenario": self.scenario_echo,
            "assumed": list(self.assumed),
            "seed": self.seed,
            "manifest": self.manifest,
            "warnings": self.warnings,
            "wall_time_s": self.wall_time_s,
            "error": self.error,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        return path


def _deep_merge(base, override, path="", provenance=None, problems=None):
    """Merge override into a copy of base, flagging unknown keys."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            if problems is not None:
                problems.append(f"unknown key {here!r}")
            continue
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(base[key], value, here, provenance, problems)
        else:
            out[key] = copy.deepcopy(value)
            if provenance is not None:
                provenance.add(here)
    return out


def _leaf_paths(tree, path=""):
    for key, value in tree.items():
        here = f"{path}.{key}" if path else key
        if isinstance(value, dict):
            yield from _leaf_paths(value, here)
        else:
            yield here


def load_scenario(path_or_dict) -> Scenario:
    """Load, expand and validate a scenario.

    Validation is exhaustive: every detected problem is listed in the raised
    ``ScenarioValidationError``, not just the first.
    """
    if isinstance(path_or_dict, dict):
        raw = copy.deepcopy(path_or_dict)
        source = "<dict>"
    else:
        source = str(path_or_dict)
        try:
            with open(path_or_dict, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioValidationError(
                [f"{source}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"])
        except OSError as exc:
            raise ScenarioValidationError([f"{source}: {exc}"])
    if not isinstance(raw, dict):
        raise ScenarioValidationError([f"{source}: scenario must be a JSON object"])

    problems = []
    preset = raw.get("preset")
    base = _DEFAULTS
    if preset is not None:
        if preset not in PRESETS:
            raise ScenarioValidationError(
                [f"unknown preset {preset!r}; available: {', '.join(PRESETS)}"])
        base = _deep_merge(_DEFAULTS, _PRESET_OVERRIDES[preset])
        base["preset"] = preset
    user_paths = set()
    data = _deep_merge(base, raw, provenance=user_paths, problems=problems)

    problems.extend(_validate(data))
    if problems:
        raise ScenarioValidationError(problems)

    assumed = tuple(sorted(p for p in _ASSUMED
                           if p not in user_paths and _section_enabled(data, p)))
    return Scenario(data=data, assumed=assumed, source=source)


def _section_enabled(data, path):
    head = path.split(".")[0]
    if head == "comb":
        # budget record synthesis also rides on the comb parameters
        return bool(data["comb"]["enabled"] or data["budget"]["enabled"])
    if head in ("link", "budget"):
        return bool(data[head]["enabled"])
    if head == "controllers":
        return bool(data["link"]["enabled"])
    return True


def _validate(data):
    problems = []

    def positive(path, allow_zero=False):
        node = data
        for part in path.split("."):
            node = node[part]
        ok = node >= 0 if allow_zero else node > 0
        if not (isinstance(node, (int, float)) and np.isfinite(node) and ok):
            problems.append(f"{path} must be {'non-negative' if allow_zero else 'positive'}, got {node!r}")
        return node

    seed = data.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        problems.append(f"seed must be a 64-bit non-negative integer, got {seed!r}")

    if not any(data[s]["enabled"] for s in ("link", "comb", "budget")):
        problems.append("nothing to run: enable at least one of link, comb, budget "
                        "(or choose a preset)")

    if data["link"]["enabled"]:
        for p in ("link.length_km", "link.delay_per_km_s", "link.step_s",
                  "link.carrier_forward_hz", "link.carrier_return_hz",
                  "link.carrier_probe_hz", "link.noise.diurnal_period_s",
                  "link.noise.burst_duration_s", "link.detector.measurement_bw_hz",
                  "run.fullrate_duration_s", "run.decimated_duration_s",
                  "run.decimated_step_s", "outputs.psd_segment_s"):
            positive(p)
        for p in ("link.noise.white_pm_sx_s2_per_hz", "link.noise.diurnal_amplitude_s",
                  "link.noise.burst_rate_per_s", "link.noise.burst_amp_median_s",
                  "link.noise.burst_amp_sigma", "link.noise.walk_fm_h",
                  "link.detector.floor_rad_per_rthz", "controllers.unity_gain_hz",
                  "controllers.closed_floor_walk_fm_h", "run.transient_discard_s"):
            positive(p, allow_zero=True)
        ratio = data["link"]["noise"]["differential_ratio"]
        if not 0.0 <= ratio <= 1.0:
            problems.append(f"link.noise.differential_ratio must be in [0, 1], got {ratio}")
        topo = data["controllers"]["topology"]
        if topo not in ("series", "independent", "off"):
            problems.append(f"controllers.topology must be series|independent|off, got {topo!r}")
        step = data["link"]["step_s"]
        one_way = data["link"]["length_km"] * data["link"]["delay_per_km_s"]
        if step > 0 and int(round(one_way / step)) < 1:
            problems.append(
                f"link.step_s={step} too coarse to resolve the one-way delay {one_way:g} s")
        for tau_key, dur_key in (("outputs.adev_taus_s", "run.decimated_duration_s"),
                                 ("outputs.fullrate_taus_s", "run.fullrate_duration_s")):
            taus = data["outputs"][tau_key.split(".")[1]]
            duration = data["run"][dur_key.split(".")[1]]
            if not taus:
                problems.append(f"{tau_key} must not be empty")
                continue
            biggest = max(taus)
            if duration < 4 * biggest:
                problems.append(
                    f"{dur_key}={duration:g} s is shorter than 4 x the largest "
                    f"requested tau in {tau_key} ({biggest:g} s)")
        if data["outputs"]["psd_segment_s"] > data["run"]["fullrate_duration_s"]:
            problems.append(
                f"outputs.psd_segment_s={data['outputs']['psd_segment_s']:g} exceeds "
                f"run.fullrate_duration_s={data['run']['fullrate_duration_s']:g}")
        if not 0.0 <= data["outputs"]["psd_overlap"] < 1.0:
            problems.append("outputs.psd_overlap must be in [0, 1)")

    if data["comb"]["enabled"]:
        c = data["comb"]
        if not (isinstance(c["q"], int) and c["q"] > 0):
            problems.append(f"comb.q must be a positive integer, got {c['q']!r}")
        for p in ("comb.if_target_hz", "comb.final_shift_target_hz",
                  "comb.filter_bw_hz", "comb.gate_s", "comb.optical_sigma_1s",
                  "comb.reference_sigma_1s", "comb.link_sigma_1s"):
            positive(p)
        if not (isinstance(c["n_gates"], int) and c["n_gates"] >= 8):
            problems.append(f"comb.n_gates must be an integer >= 8, got {c['n_gates']!r}")
        if c["sign"] not in (1, -1):
            problems.append(f"comb.sign must be 1 or -1, got {c['sign']!r}")

    if data["budget"]["enabled"]:
        b = data["budget"]
        if b["measured_sigma_1s"] < 0:
            problems.append("budget.measured_sigma_1s must be non-negative")
        if not isinstance(b["contributions"], list) or not all(
                isinstance(e, dict) and set(e) == {"label", "sigma_at_1s"}
                for e in b["contributions"]):
            problems.append("budget.contributions must be a list of "
                            "{label, sigma_at_1s} objects")
        if not (isinstance(b["records"], int) and b["records"] >= 2):
            problems.append("budget.records must be an integer >= 2")
        positive("budget.record_sigma_hz")
        if not (isinstance(b["record_gates"], int) and b["record_gates"] >= 1):
            problems.append("budget.record_gates must be an integer >= 1")

    return problems


# ----------------------------------------------------------------------
# Link realization helpers


def _chain_enbw_hz(measurement_bw_hz):
    # Equivalent noise bandwidth of the single-pole counting filter.
    return 0.5 * np.pi * measurement_bw_hz


def _correlation_coeffs(ratio):
    # fiber_i = c*common + d*u_i keeps the single-fiber level and makes the
    # fiber difference carry exactly `ratio` times the single-fiber noise.
    return np.sqrt(1.0 - 0.5 * ratio * ratio), ratio / np.sqrt(2.0)


def _counted_series(x: PhaseSeries, measurement_bw_hz, gate_s) -> PhaseSeries:
    """Measurement chain: counting filter then 1-per-gate sampling."""
    return sample_every(measurement_lowpass(x, measurement_bw_hz), gate_s)


def _run_fullrate(scn, seed, report):
    link = scn["link"]
    runc = scn["run"]
    dt = link["step_s"]
    n = int(round(runc["fullrate_duration_s"] / dt))
    fs = 1.0 / dt

    one_way_delay = link["length_km"] * link["delay_per_km_s"]
    m = int(round(one_way_delay / dt))

    # Per-fiber noise: white PM (flat S_x) + common diurnal + bursts + walk.
    sigma_w = np.sqrt(link["noise"]["white_pm_sx_s2_per_hz"] * fs / 2.0)
    c, d = _correlation_coeffs(link["noise"]["differential_ratio"])
    u = [component_rng(seed, "fullrate-white", j).standard_normal(n) * sigma_w
         for j in range(3)]
    n1 = c * u[0] + d * u[1]
    n2 = c * u[0] + d * u[2]
    del u
    diurnal = gen_diurnal(link["noise"]["diurnal_amplitude_s"],
                          link["noise"]["diurnal_period_s"],
                          link["noise"]["diurnal_phase_rad"], n, dt).samples
    n1 = n1 + diurnal
    n2 = n2 + diurnal
    del diurnal
    if link["noise"]["walk_fm_h"] > 0:
        spec = NoiseSpec(powerlaw=((-2, link["noise"]["walk_fm_h"]),))
        w = [gen_power_law_phase(
                spec, n, dt,
                int(component_rng(seed, "fullrate-walk", j).integers(2 ** 63))).samples
             for j in range(3)]
        n1 = n1 + c * w[0] + d * w[1]
        n2 = n2 + c * w[0] + d * w[2]
        del w
    burst_spec = BurstSpec(link["noise"]["burst_rate_per_s"],
                           link["noise"]["burst_amp_median_s"],
                           link["noise"]["burst_amp_sigma"],
                           link["noise"]["burst_duration_s"])
    bu = [gen_bursts(burst_spec, n, dt,
                     int(component_rng(seed, "fullrate-bursts", j).integers(2 ** 63))).samples
          for j in range(3)]
    n1 = n1 + c * bu[0] + d * bu[1]
    n2 = n2 + c * bu[0] + d * bu[2]
    del bu

    floor = link["detector"]["floor_rad_per_rthz"]
    f_ret = link["carrier_return_hz"]
    f_probe = link["carrier_probe_hz"]
    sig_det = floor * np.sqrt(fs / 2.0) / (2.0 * np.pi * f_ret)
    sig_probe = floor * np.sqrt(fs / 2.0) / (2.0 * np.pi * f_probe)
    d1 = component_rng(seed, "det", 1).standard_normal(n) * sig_det
    d2 = component_rng(seed, "det", 2).standard_normal(n) * sig_det
    dp = component_rng(seed, "det", "probe").standard_normal(n) * sig_probe

    cfg = _loop_config(scn, m)
    result = run_closed_loop(cfg, n1, n2, d1, d2, probe_det=dp)
    report.warnings.extend(result.warnings)

    skip = int(round(runc["transient_discard_s"] / dt))
    bw = link["detector"]["measurement_bw_hz"]

    def settled(arr, label):
        return PhaseSeries(arr[skip:], dt, label=label)

    rt = settled(result.round_trip, "closed_rt")
    ow = settled(result.one_way, "closed_one_way")
    probe = settled(result.probe_rt, "open_probe_rt")

    taus = scn["outputs"]["fullrate_taus_s"]
    counted = {name: _counted_series(series, bw, 1.0)
               for name, series in (("closed_rt", rt), ("closed_one_way", ow),
                                    ("open_rt", probe))}
    curves = {name: allan_deviation_phase(series, taus, estimator="overlapping")
              for name, series in counted.items()}

    seg = int(round(scn["outputs"]["psd_segment_s"] / dt))
    psd_rt = psd_welch(to_radians(rt, Carrier(f_ret)), seg,
                       overlap=scn["outputs"]["psd_overlap"])

    return {"curves": curves, "counted": counted, "psd_rt": psd_rt,
            "series": {"closed_rt": rt, "closed_one_way": ow, "open_rt": probe},
            "m": m, "dt": dt}


def _loop_config(scn, m):
    ctl = scn["controllers"]
    c1 = ControllerConfig(topology="rf_conjugation_near_end",
                          unity_gain_hz=ctl["unity_gain_hz"],
                          integrator_corner_hz=ctl["integrator_corner_hz"])
    c2 = ControllerConfig(topology="optical_far_end",
                          unity_gain_hz=ctl["unity_gain_hz"],
                          integrator_corner_hz=ctl["integrator_corner_hz"],
                          crossover_hz=ctl["crossover_hz"])
    return LinkLoopConfig(
        dt=scn["link"]["step_s"], m1=m, m2=m,
        controller1=c1, controller2=c2,
        rf_shifter=ActuatorState("rf_phase_shifter", ctl["rf_shifter_range_s"],
                                 ctl["rf_shifter_bandwidth_hz"]),
        piezo=ActuatorState("piezo_stretcher", ctl["piezo_range_s"],
                            ctl["piezo_bandwidth_hz"]),
        thermal=ActuatorState("thermal_spool", ctl["thermal_range_s"],
                              ctl["thermal_bandwidth_hz"]),
        topology=ctl["topology"],
    )


def _run_decimated(scn, seed, report):
    """Day-scale model: slow perturbations through the loop suppression
    function, plus the measurement-band white noise each 1 s sample carries."""
    link = scn["link"]
    ctl = scn["controllers"]
    step = scn["run"]["decimated_step_s"]
    # Fence-post: a record spanning the full duration needs one extra gate
    # boundary, so a 2-day run carries a 1-day Allan pair.
    n = int(round(scn["run"]["decimated_duration_s"] / step)) + 1
    enbw = _chain_enbw_hz(link["detector"]["measurement_bw_hz"])

    # Slow per-fiber records (diurnal common; bursts and walk split).
    c, d = _correlation_coeffs(link["noise"]["differential_ratio"])
    diurnal = gen_diurnal(link["noise"]["diurnal_amplitude_s"],
                          link["noise"]["diurnal_period_s"],
                          link["noise"]["diurnal_phase_rad"], n, step).samples
    slow1 = diurnal.copy()
    slow2 = diurnal.copy()
    burst_spec = BurstSpec(link["noise"]["burst_rate_per_s"],
                           link["noise"]["burst_amp_median_s"],
                           link["noise"]["burst_amp_sigma"],
                           link["noise"]["burst_duration_s"])
    bu = [gen_bursts(burst_spec, n, step,
                     int(component_rng(seed, "dec-bursts", j).integers(2 ** 63))).samples
          for j in range(3)]
    slow1 += c * bu[0] + d * bu[1]
    slow2 += c * bu[0] + d * bu[2]
    del bu
    if link["noise"]["walk_fm_h"] > 0:
        spec = NoiseSpec(powerlaw=((-2, link["noise"]["walk_fm_h"]),))
        w = [gen_power_law_phase(
                spec, n, step,
                int(component_rng(seed, "dec-walk", j).integers(2 ** 63))).samples
             for j in range(3)]
        slow1 += c * w[0] + d * w[1]
        slow2 += c * w[0] + d * w[2]
        del w

    # Measurement-band white content of each 1 s sample.
    sigma_fiber = np.sqrt(link["noise"]["white_pm_sx_s2_per_hz"] * enbw)
    u = [component_rng(seed, "dec-white", j).standard_normal(n) * sigma_fiber
         for j in range(3)]
    white1 = c * u[0] + d * u[1]
    del u

    open_rt = PhaseSeries(2.0 * (slow1 + white1), step, label="open_rt_decimated")
    del white1

    # Closed loop: slow content through the sensitivity function; in-band
    # detector noise is written onto the signal by each servo.
    one_way_delay = link["length_km"] * link["delay_per_km_s"]
    m = max(int(round(one_way_delay / link["step_s"])), 1)
    rt_delay = 2.0 * m * link["step_s"]
    c2cfg = ControllerConfig(unity_gain_hz=ctl["unity_gain_hz"],
                             integrator_corner_hz=ctl["integrator_corner_hz"])
    sup1 = loop_suppression(PhaseSeries(slow1, step), c2cfg, rt_delay).samples
    sup2 = loop_suppression(PhaseSeries(slow2, step), c2cfg, rt_delay).samples
    del slow1, slow2

    s_det_x = (link["detector"]["floor_rad_per_rthz"] ** 2
               / (2.0 * np.pi * link["carrier_return_hz"]) ** 2)
    sigma_written_rt = np.sqrt(2.0 * (s_det_x / 4.0) * enbw)
    det = component_rng(seed, "dec-det").standard_normal(n) * sigma_written_rt
    closed = sup1 + sup2 + det
    del sup1, sup2, det
    if ctl["closed_floor_walk_fm_h"] > 0:
        spec = NoiseSpec(powerlaw=((-2, ctl["closed_floor_walk_fm_h"]),))
        closed = closed + gen_power_law_phase(
            spec, n, step,
            int(component_rng(seed, "dec-closed-floor").integers(2 ** 63))).samples
    closed_rt = PhaseSeries(closed, step, label="closed_rt_decimated")

    # Thermal authority check for the slow correction the loops must absorb.
    slow_peak = float(np.max(np.abs(open_rt.samples))) / 2.0
    if slow_peak > ctl["thermal_range_s"]:
        report.warnings.append(
            f"slow correction {slow_peak:g} s exceeds thermal range "
            f"{ctl['thermal_range_s']:g} s")

    taus = scn["outputs"]["adev_taus_s"]
    curves = {
        "open_rt": allan_deviation_phase(open_rt, taus, estimator="overlapping"),
        "closed_rt": allan_deviation_phase(closed_rt, taus, estimator="overlapping"),
    }
    return {"curves": curves,
            "series": {"open_rt": open_rt, "closed_rt": closed_rt},
            "rt_delay": rt_delay}


def _reference_model_curves(scn, seed):
    """Flywheel (CSO) and fountain comparison curves as calibrated noise."""
    step = scn["run"]["decimated_step_s"]
    n = int(round(scn["run"]["decimated_duration_s"] / step)) + 1
    taus = scn["outputs"]["adev_taus_s"]

    # Flywheel: tau**-1 short term slightly below 1e-14, flicker floor after.
    sigma_x = 0.9e-14 / np.sqrt(3.0)
    white_pm = component_rng(seed, "cso-white").standard_normal(n) * sigma_x
    flicker = gen_power_law_phase(
        NoiseSpec(powerlaw=((-1, (1.5e-15) ** 2 / (2.0 * np.log(2.0))),)),
        n, step, int(component_rng(seed, "cso-flicker").integers(2 ** 63))).samples
    cso = PhaseSeries(white_pm + flicker, step, label="cso_model")

    fountain_spec = NoiseSpec(powerlaw=((0, white_fm_level_for(1.6e-14)),))
    fountain = gen_power_law_phase(
        fountain_spec, n, step,
        int(component_rng(seed, "fountain").integers(2 ** 63)))

    return {
        "cso_reference": allan_deviation_phase(cso, taus, estimator="overlapping"),
        "fountain": allan_deviation_phase(fountain, taus, estimator="overlapping"),
    }


def _white_fm_series(sigma_1s, n, tau0, rng) -> FracFreqSeries:
    # At 1 s sampling, white FM with sigma_y(1 s) = target is iid normal.
    sigma = sigma_1s / np.sqrt(tau0)
    return FracFreqSeries(rng.standard_normal(n) * sigma, tau0)


def _comb_objects(scn):
    c = scn["comb"]
    params = CombParams(q=c["q"], delta_hz=c["delta_hz"], sign=c["sign"],
                        f_rep_nominal_hz=c["f_rep_nominal_hz"])
    cfg = CounterChainConfig(lo_freq_hz=c["lo_freq_hz"],
                             if_target_hz=c["if_target_hz"],
                             final_shift_target_hz=c["final_shift_target_hz"],
                             filter_bw_hz=c["filter_bw_hz"], gate_s=c["gate_s"])
    return params, cfg


def _run_comb(scn, seed, report):
    c = scn["comb"]
    params, cfg = _comb_objects(scn)
    n = c["n_gates"]
    gate = c["gate_s"]

    y_opt = _white_fm_series(c["optical_sigma_1s"], n, gate,
                             component_rng(seed, "comb-optical"))
    y_ref = _white_fm_series(c["reference_sigma_1s"], n, gate,
                             component_rng(seed, "comb-reference"))
    y_link = _white_fm_series(c["link_sigma_1s"], n, gate,
                              component_rng(seed, "comb-link"))
    reference_at_lpl = FracFreqSeries(y_ref.samples + y_link.samples, gate)

    f_rep = rep_rate_lock(y_opt, params)
    record = count_chain(f_rep, reference_at_lpl, cfg, params, seed=seed)

    taus = [t for t in (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)
            if 4 * t <= n * gate]
    recovered = allan_deviation(record.optical_fractional(), taus,
                                estimator="overlapping")
    link_residual = allan_deviation(y_link, taus, estimator="overlapping")
    return {"record": record, "curves": {"comb_recovered": recovered,
                                         "link_residual": link_residual}}


def _run_budget(scn, seed, report):
    b = scn["budget"]
    contributions = [BudgetEntry(e["label"], e["sigma_at_1s"])
                     for e in b["contributions"]]
    budget = stability_budget(b["measured_sigma_1s"], contributions)
    if budget.clamped:
        report.warnings.append("stability budget clamped at zero "
                               "(contributions exceed the measured deviation)")

    params, cfg = _comb_objects(scn)
    f_opt = float(params.optical_nominal_hz)
    rng = component_rng(seed, "budget-records")
    records = []
    for _ in range(b["records"]):
        true_offset = b["record_mean_offset_hz"] + b["record_sigma_hz"] * rng.standard_normal()
        y = _white_fm_series(scn["comb"]["optical_sigma_1s"], b["record_gates"],
                             cfg.gate_s, rng)
        y_opt = FracFreqSeries(y.samples + true_offset / f_opt, cfg.gate_s)
        f_rep = rep_rate_lock(y_opt, params)
        ref = FracFreqSeries(np.zeros(b["record_gates"]), cfg.gate_s)
        records.append(count_chain(f_rep, ref, cfg, params, seed=seed))
    nu_ref = params.optical_nominal_hz + as_fraction(b["nu_ref_offset_hz"])
    mean_offset, sigma = absolute_freq_estimate(records, nu_ref)
    return {"budget": budget, "records": records,
            "estimate": (mean_offset, sigma)}


def run(scenario: Scenario, out_dir=None, seed=None) -> RunReport:
    """Execute a scenario: noise generation, link/loop simulation, comb chain
    and analysis, writing plot-ready CSVs into ``out_dir``.

    Deterministic for a given (scenario, seed): repeated runs produce
    byte-identical CSVs.  On loop divergence the partial manifest is written
    before the error propagates.
    """
    t0 = time.perf_counter()
    out_dir = resolve_out_dir(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    run_seed = scenario.seed() if seed is None else int(seed)
    report = RunReport(scenario_echo=scenario.data, assumed=scenario.assumed,
                       seed=run_seed)

    def emit(name, writer, *args, **kwargs):
        path = os.path.join(out_dir, name)
        writer(path, *args, seed=run_seed, **kwargs)
        report.manifest.append(name)

    try:
        if scenario["link"]["enabled"]:
            full = _run_fullrate(scenario, run_seed, report)
            report.results["fullrate"] = full
            emit("closed_loop_fullrate.csv", fio.write_adev_csv,
                 full["curves"]["closed_rt"])
            emit("open_loop_fullrate.csv", fio.write_adev_csv,
                 full["curves"]["open_rt"])
            emit("round_trip_psd.csv", fio.write_psd_csv, full["psd_rt"],
                 carrier_hz=scenario["link"]["carrier_return_hz"])

            dec = _run_decimated(scenario, run_seed, report)
            report.results["decimated"] = dec
            emit("closed_loop.csv", fio.write_adev_csv, dec["curves"]["closed_rt"])
            emit("open_loop.csv", fio.write_adev_csv, dec["curves"]["open_rt"])
            if scenario["outputs"]["write_decimated_series"]:
                emit("closed_rt_series.csv", fio.write_phase_csv,
                     dec["series"]["closed_rt"])
                emit("open_rt_series.csv", fio.write_phase_csv,
                     dec["series"]["open_rt"])

            refs = _reference_model_curves(scenario, run_seed)
            report.results["references"] = refs
            emit("cso_reference.csv", fio.write_adev_csv, refs["cso_reference"])
            emit("fountain.csv", fio.write_adev_csv, refs["fountain"])

        if scenario["comb"]["enabled"]:
            comb = _run_comb(scenario, run_seed, report)
            report.results["comb"] = comb
            emit("comb_adev.csv", fio.write_adev_csv, comb["curves"]["comb_recovered"])
            emit("link_residual_adev.csv", fio.write_adev_csv,
                 comb["curves"]["link_residual"])
            emit("comb_gates.csv", fio.write_measurement_csv, comb["record"])

        if scenario["budget"]["enabled"]:
            bud = _run_budget(scenario, run_seed, report)
            report.results["budget"] = bud
            emit("budget.csv", _write_budget_csv, bud)
            emit("freq_estimate.csv", _write_estimate_csv, bud)
    except DivergenceError as exc:
        report.error = str(exc)
        report.wall_time_s = time.perf_counter() - t0
        report.write(out_dir)
        raise
    report.wall_time_s = time.perf_counter() - t0
    report.write(out_dir)
    return report


def _write_budget_csv(path, bud, seed=None):
    budget = bud["budget"]
    lines = fio.metadata_lines(seed)
    lines.append("label,sigma_at_1s")
    lines.append(f"measured,{format(budget.measured_at_1s, '.17g')}")
    for e in budget.contributions:
        lines.append(f"{e.label},{format(e.sigma_at_1s, '.17g')}")
    lines.append(f"residual_upper_bound,{format(budget.residual_upper_bound, '.17g')}")
    lines.append(f"clamped,{int(budget.clamped)}")
    fio.write_lines(path, lines)


def _write_estimate_csv(path, bud, seed=None):
    mean_offset, sigma = bud["estimate"]
    lines = fio.metadata_lines(seed)
    lines.append("quantity,value_hz")
    lines.append(f"mean_offset,{format(mean_offset, '.17g')}")
    lines.append(f"sigma_1,{format(sigma, '.17g')}")
    for i, rec in enumerate(bud["records"]):
        lines.append(f"record_{i}_mean_offset,{format(rec.mean_optical_offset_hz(), '.17g')}")
    fio.write_lines(path, lines)


def resolve_out_dir(out_dir=None):
    if out_dir is not None:
        return str(out_dir)
    return os.environ.get("FIBERLINK_OUT", os.path.join(os.getcwd(), "fiberlink_out"))


@dataclass(frozen=True)
class CurveComparison:
    taus: np.ndarray
    ratios: np.ndarray
    min_ratio: float
    max_ratio: float


def compare_curves(a: AdevCurve, b: AdevCurve) -> CurveComparison:
    """Per-tau sigma ratios a/b on the overlapping tau grid."""
    taus, ratios = [], []
    for i, tau in enumerate(a.taus):
        j = np.nonzero(np.isclose(b.taus, tau, rtol=1e-9, atol=0.0))[0]
        if j.size != 1:
            continue
        sb = b.sigmas[j[0]]
        sa = a.sigmas[i]
        if sb == 0.0 and sa == 0.0:
            ratios.append(1.0)
        elif sb == 0.0:
            ratios.append(np.inf)
        else:
            ratios.append(float(sa / sb))
        taus.append(float(tau))
    if not taus:
        raise InvalidInputError("curves share no common tau points")
    ratios = np.array(ratios)
    return CurveComparison(np.array(taus), ratios,
                           float(np.min(ratios)), float(np.max(ratios)))
