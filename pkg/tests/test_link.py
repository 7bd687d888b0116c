import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fiberlink as fl
from fiberlink.errors import InvalidInputError
from fiberlink.link import (ActuatorState, Carrier, DetectorConfig, FiberPath,
                            apply_actuator, detect_phase, measurement_lowpass,
                            propagate, round_trip, sample_every, to_radians)
from fiberlink.series import PhaseSeries
from fiberlink.stability import allan_deviation_phase, psd_welch


def flat_noise(value, n, tau0, label="noise"):
    return PhaseSeries(np.full(n, value), tau0, label=label)


class TestToRadians:
    def test_picosecond_at_100mhz(self):
        x = flat_noise(1e-12, 10, 1e-4)
        rad = to_radians(x, Carrier(1e8))
        assert rad.samples[0] == pytest.approx(2 * np.pi * 1e8 * 1e-12)
        assert rad.samples[0] == pytest.approx(6.28e-4, rel=1e-2)

    def test_carrier_scaling(self):
        x = flat_noise(1e-12, 10, 1e-4)
        r100 = to_radians(x, Carrier(1e8))
        r1g = to_radians(x, Carrier(1e9))
        assert np.allclose(r1g.samples, 10 * r100.samples)


class TestPropagate:
    def test_adds_noise_and_delays_input(self):
        tau0 = 1e-4
        n = 100
        ramp = PhaseSeries(np.arange(n) * 1e-12, tau0)
        noise = flat_noise(1e-12, n, tau0)
        # base delay = exactly 3 steps: no sub-step remainder
        path = FiberPath(length_km=3 * tau0 / 5e-6, noise=noise)
        steps, remainder = path.delay_steps()
        assert steps == 3 and remainder == pytest.approx(0.0, abs=1e-20)
        out = propagate(ramp, path, Carrier(1e8))
        assert np.allclose(out.samples[3:], ramp.samples[:-3] + 1e-12)

    def test_sub_step_remainder_is_static_offset(self):
        tau0 = 1e-4
        zeros = PhaseSeries(np.zeros(50), tau0)
        noise = flat_noise(0.0, 50, tau0)
        path = FiberPath(length_km=43.0, noise=noise)   # 0.215 ms -> 2 steps
        steps, remainder = path.delay_steps()
        assert steps == 2
        assert remainder == pytest.approx(0.215e-3 - 2e-4)
        out = propagate(zeros, path, Carrier(1e8))
        assert np.allclose(out.samples, -remainder)

    def test_tau0_mismatch_rejected(self):
        x = PhaseSeries(np.zeros(10), 1e-4)
        noise = PhaseSeries(np.zeros(10), 1e-3)
        path = FiberPath(length_km=43.0, noise=noise)
        with pytest.raises(InvalidInputError):
            propagate(x, path, Carrier(1e8))

    def test_fractional_error_is_noise_derivative(self):
        # d(delta_tau)/dt oracle by finite differences, carrier independent.
        tau0 = 1e-3
        n = 5000
        rng = np.random.default_rng(8)
        slow = np.cumsum(rng.standard_normal(n)) * 1e-15
        noise = PhaseSeries(slow, tau0)
        path = FiberPath(length_km=tau0 / 5e-6, noise=noise)  # delay = 1 step
        zeros = PhaseSeries(np.zeros(n), tau0)
        for carrier_hz in (1e8, 1e9):
            out = propagate(zeros, path, Carrier(carrier_hz))
            y = np.diff(out.samples) / tau0
            assert np.allclose(y, np.diff(slow) / tau0)


class TestRoundTrip:
    def test_pure_delay_composition(self):
        tau0 = 1e-4
        n = 200
        ramp = PhaseSeries(np.arange(n) * 1e-13, tau0)
        noise = flat_noise(0.0, n, tau0)
        path = FiberPath(length_km=2 * tau0 / 5e-6, noise=noise)  # 2 steps each way
        out = round_trip(ramp, path, path, Carrier(1e8))
        assert np.allclose(out.samples[4:], ramp.samples[:-4])

    def test_same_fiber_doubles_slow_noise(self):
        tau0 = 1.0
        n = 500
        rng = np.random.default_rng(4)
        slow = np.cumsum(rng.standard_normal(n)) * 1e-13
        noise = PhaseSeries(slow, tau0)
        path = FiberPath(length_km=43.0, noise=noise)   # rounds to 0 steps at 1 s
        zeros = PhaseSeries(np.zeros(n), tau0)
        out = round_trip(zeros, path, path, Carrier(1e8))
        static = 2 * path.delay_steps()[1]
        assert np.allclose(out.samples + static, 2 * slow)

    def test_86km_round_trip_delay(self):
        # 86 km at 5 us/km is 0.43 ms, the reported ~0.4 ms loop delay.
        noise = flat_noise(0.0, 10, 1e-4)
        path = FiberPath(length_km=43.0, noise=noise)
        assert 2 * path.base_delay_s == pytest.approx(0.43e-3)
        assert 2 * path.delay_steps()[0] * 1e-4 == pytest.approx(0.4e-3)


class TestDetectPhase:
    def test_equal_inputs_zero_floor(self):
        a = flat_noise(2e-12, 64, 1.0)
        out = detect_phase(a, a, DetectorConfig(), Carrier(1e8))
        assert np.all(out.samples == 0.0)

    def test_constant_offset(self):
        a = flat_noise(5e-12, 64, 1.0)
        b = flat_noise(2e-12, 64, 1.0)
        out = detect_phase(a, b, DetectorConfig(), Carrier(1e8))
        assert np.allclose(out.samples, 3e-12)

    def test_floor_requires_rng(self):
        a = flat_noise(0.0, 64, 1.0)
        cfg = DetectorConfig(floor_rad_per_rthz=1e-6)
        with pytest.raises(InvalidInputError):
            detect_phase(a, a, cfg, Carrier(1e8))

    def test_floor_reproduces_psd_level(self):
        # -120 dBrad^2/Hz floor at 100 MHz measures back within 1 dB at 1 Hz.
        tau0 = 1e-3
        n = 300_000
        a = PhaseSeries(np.zeros(n), tau0)
        cfg = DetectorConfig(floor_rad_per_rthz=1e-6)
        carrier = Carrier(1e8)
        out = detect_phase(a, a, cfg, carrier, rng=np.random.default_rng(12))
        psd = psd_welch(to_radians(out, carrier), segment=4096)
        level_db = 10 * np.log10(psd.band_mean(0.8, 1.25))
        assert level_db == pytest.approx(-120.0, abs=1.0)


class TestApplyActuator:
    def test_rest_stays_at_zero(self):
        st0 = ActuatorState("piezo_stretcher", 1e-11, 1000.0)
        st1 = apply_actuator(st0, 0.0, 1e-4)
        assert st1.position_s == 0.0 and not st1.saturated

    def test_first_order_settling(self):
        state = ActuatorState("piezo_stretcher", 1e-10, 50.0)
        dt = 1e-4
        for _ in range(int(10 / (50.0 * dt))):     # t = 10 time constants
            state = apply_actuator(state, 5e-11, dt)
        assert state.position_s == pytest.approx(5e-11, rel=0.01)

    def test_clamp_and_saturation_flag(self):
        state = ActuatorState("piezo_stretcher", 1e-11, 1e6)
        for _ in range(100):
            state = apply_actuator(state, 5e-11, 1e-4)
        assert state.position_s == pytest.approx(1e-11)
        assert state.saturated

    def test_wideband_shifter_tracks_immediately(self):
        state = ActuatorState("rf_phase_shifter", 1e-9, 1e6)
        state = apply_actuator(state, 3e-12, 1e-4)
        assert state.position_s == pytest.approx(3e-12, rel=1e-6)


class TestInvariantsAndChain:
    @settings(max_examples=30, deadline=None, derandomize=True)
    @given(st.floats(min_value=1e6, max_value=1e10))
    def test_carrier_linearity(self, freq):
        x = PhaseSeries(np.array([0.0, 1e-12, -2e-12]), 1.0)
        rad = to_radians(x, Carrier(freq))
        assert np.allclose(rad.samples, 2 * np.pi * freq * x.samples, rtol=1e-12)

    def test_reciprocity_shared_record(self):
        # One shared noise record: forward and backward passes are identical
        # up to the sampling delay offset.
        tau0 = 1e-4
        n = 1000
        noise = PhaseSeries(np.sin(np.arange(n) * 0.01) * 1e-12, tau0)
        path = FiberPath(length_km=2 * tau0 / 5e-6, noise=noise)
        zeros = PhaseSeries(np.zeros(n), tau0)
        fwd = propagate(zeros, path, Carrier(1e9))
        bwd = propagate(zeros, path, Carrier(1e8))
        assert np.array_equal(fwd.samples, bwd.samples)

    def test_fractional_frequency_carrier_invariance(self):
        rng = np.random.default_rng(10)
        tau0 = 0.5
        noise = PhaseSeries(np.cumsum(rng.standard_normal(4000)) * 1e-15, tau0)
        path = FiberPath(length_km=43.0, noise=noise)
        zeros = PhaseSeries(np.zeros(4000), tau0)
        curves = []
        for f in (1e8, 2.7e8, 1e9):
            out = propagate(zeros, path, Carrier(f))
            curves.append(allan_deviation_phase(out, [1.0, 8.0]).sigmas)
        assert np.allclose(curves[0], curves[1])
        assert np.allclose(curves[0], curves[2])

    def test_measurement_lowpass_and_decimation(self):
        tau0 = 1e-3
        n = 20_000
        t = np.arange(n) * tau0
        x = PhaseSeries(np.sin(2 * np.pi * 1.0 * t), tau0)
        filtered = measurement_lowpass(x, 100.0)
        # 1 Hz tone passes a 100 Hz single pole nearly unchanged
        assert np.max(filtered.samples[5000:]) == pytest.approx(1.0, rel=0.01)
        dec = sample_every(filtered, 0.1)
        assert dec.tau0 == 0.1
        assert len(dec) == n // 100
        with pytest.raises(InvalidInputError):
            sample_every(filtered, 0.00037)
