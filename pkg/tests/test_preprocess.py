"""Tests for filter design, zero-phase filtering and kinematics derivation."""

import numpy as np
import pytest

from errors import FilterDesignError, SeriesLengthError
from preprocess import FilterSpec, KinematicsPreprocessor, derive_kinematics, design_lowpass, filtfilt
from trajectory_io import make_trial

FS = 60.0


def rotation(angle_rad):
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s], [s, c]])


class TestDesignLowpass:
    def test_first_order_quarter_rate_coefficients(self):
        coeffs = design_lowpass(FilterSpec(order=1, cutoff_hz=FS / 4, sample_rate_hz=FS))
        alpha = np.tan(np.pi / 4) / (1 + np.tan(np.pi / 4))
        np.testing.assert_allclose(coeffs.b, [alpha, alpha], atol=1e-12)
        np.testing.assert_allclose(coeffs.a, [1.0, alpha * 2 - 1], atol=1e-12)

    @pytest.mark.parametrize("order,cutoff", [(1, 2.0), (2, 0.6), (4, 0.6), (4, 1.0), (6, 10.0)])
    def test_unit_dc_gain(self, order, cutoff):
        coeffs = design_lowpass(FilterSpec(order, cutoff, FS))
        assert coeffs.dc_gain() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("cutoff", [0.6, 1.0, 5.0])
    def test_half_power_at_cutoff(self, cutoff):
        coeffs = design_lowpass(FilterSpec(4, cutoff, FS))
        assert coeffs.magnitude_at(cutoff) == pytest.approx(1 / np.sqrt(2), abs=1e-6)

    def test_cutoff_at_nyquist_rejected(self):
        with pytest.raises(FilterDesignError, match="cutoff"):
            design_lowpass(FilterSpec(4, FS / 2, FS))

    def test_zero_order_rejected(self):
        with pytest.raises(FilterDesignError, match="order"):
            design_lowpass(FilterSpec(0, 1.0, FS))


class TestFiltfilt:
    @pytest.fixture
    def one_hz(self):
        return design_lowpass(FilterSpec(4, 1.0, FS))

    def test_constant_passes_unchanged(self, one_hz):
        out = filtfilt(np.full(300, 3.7), one_hz)
        np.testing.assert_allclose(out, 3.7, atol=1e-9)

    def test_output_length_matches(self, one_hz):
        assert filtfilt(np.arange(100.0), one_hz).shape == (100,)

    def test_too_short_series(self, one_hz):
        with pytest.raises(SeriesLengthError):
            filtfilt(np.zeros(12), one_hz)

    def test_slow_sine_has_no_phase_shift(self, one_hz):
        t = np.arange(int(60 * FS)) / FS
        x = np.sin(2 * np.pi * 0.1 * t)
        y = filtfilt(x, one_hz)

        interior = slice(int(10 * FS), int(50 * FS))
        basis = np.column_stack([np.sin(2 * np.pi * 0.1 * t[interior]), np.cos(2 * np.pi * 0.1 * t[interior])])
        (a, b), *_ = np.linalg.lstsq(basis, y[interior], rcond=None)

        expected = 1.0 / (1.0 + (0.1 / 1.0) ** 8)
        assert abs(np.arctan2(b, a)) < 1e-3
        assert np.hypot(a, b) == pytest.approx(expected, rel=0.01)

    def test_impulse_response_is_symmetric(self, one_hz):
        x = np.zeros(2001)
        x[1000] = 1.0
        y = filtfilt(x, one_hz)
        np.testing.assert_allclose(y[1000:], y[1000::-1], atol=1e-9)

    def test_band_limited_cross_correlation_peaks_at_zero(self, one_hz):
        t = np.arange(int(40 * FS)) / FS
        x = np.sin(2 * np.pi * 0.1 * t) + 0.5 * np.sin(2 * np.pi * 0.3 * t + 1.0) + 0.3 * np.cos(2 * np.pi * 0.45 * t)
        y = filtfilt(x, one_hz)
        core = slice(300, len(t) - 300)
        lags = range(-20, 21)
        scores = [np.dot(x[core], np.roll(y, -lag)[core]) for lag in lags]
        assert list(lags)[int(np.argmax(scores))] == 0


class TestDeriveKinematics:
    def _trial(self, positions, fs=FS):
        return make_trial(["A"], fs, [positions])

    def test_constant_velocity(self):
        t = np.arange(600) / FS
        positions = np.column_stack([1.3 * t, np.zeros_like(t)])
        kin = derive_kinematics(self._trial(positions))["A"]

        np.testing.assert_allclose(kin.heading[:, 0], 1.0, atol=1e-9)
        np.testing.assert_allclose(kin.heading[:, 1], 0.0, atol=1e-9)
        np.testing.assert_allclose(kin.speed, 1.3, atol=1e-6)
        assert kin.defined.all()

    def test_stationary_agent_has_no_heading(self):
        positions = np.tile([3.0, -2.0], (400, 1))
        kin = derive_kinematics(self._trial(positions))["A"]
        assert not kin.defined.any()
        np.testing.assert_allclose(kin.speed, 0.0, atol=1e-9)

    def test_circle_tangent(self):
        radius, rate = 5.0, 0.05
        t = np.arange(int(60 * FS)) / FS
        phase = 2 * np.pi * rate * t
        positions = radius * np.column_stack([np.cos(phase), np.sin(phase)])
        kin = derive_kinematics(self._trial(positions))["A"]

        tangent = np.column_stack([-np.sin(phase), np.cos(phase)])
        interior = slice(int(5 * FS), len(t) - int(5 * FS))
        cosine = np.clip(np.sum(kin.heading[interior] * tangent[interior], axis=1), -1.0, 1.0)
        assert np.degrees(np.arccos(cosine)).max() < 2.0
        assert np.median(kin.speed[interior]) == pytest.approx(2 * np.pi * radius * rate, rel=0.01)

    def test_unit_heading_and_lengths(self):
        rng = np.random.default_rng(11)
        t = np.arange(900) / FS
        positions = np.column_stack([1.2 * t + 0.05 * np.sin(2 * np.pi * 0.9 * t),
                                     0.5 * np.sin(2 * np.pi * 0.08 * t) + rng.normal(0, 0.002, t.size)])
        kin = derive_kinematics(self._trial(positions))["A"]

        assert kin.heading.shape == (900, 2)
        assert kin.speed.shape == (900,)
        norms = np.linalg.norm(kin.heading[kin.defined], axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-9)
        assert (kin.speed >= 0).all()

    def test_rotation_equivariance(self):
        t = np.arange(900) / FS
        positions = np.column_stack([1.3 * t, 0.8 * np.sin(2 * np.pi * 0.05 * t)])
        turn = rotation(np.radians(30.0))
        plain = derive_kinematics(self._trial(positions))["A"]
        rotated = derive_kinematics(self._trial(positions @ turn.T))["A"]

        np.testing.assert_allclose(rotated.speed, plain.speed, atol=1e-9)
        np.testing.assert_allclose(rotated.heading, plain.heading @ turn.T, atol=1e-9)

    def test_undefined_only_below_threshold(self):
        t = np.arange(600) / FS
        speed = np.where(t < 5.0, 1.0, 0.0)
        x = np.cumsum(speed) / FS
        positions = np.column_stack([x, np.zeros_like(x)])
        processor = KinematicsPreprocessor()
        kin = processor.process_trial(self._trial(positions))["A"]
        v = processor.velocity(positions, processor.heading_cutoff_hz, FS)
        norm = np.linalg.norm(v, axis=1)
        np.testing.assert_array_equal(kin.defined, norm >= processor.heading_min_speed_mps)
        assert kin.defined[:200].all()
        assert not kin.defined[-100:].any()
