"""Tests for delayed correlation maps and optimal-delay extraction."""

import numpy as np
import pytest

from errors import EmptyMapError
from lagcorr import (
    AnalysisParams,
    CorrelationMap,
    canonical_pairs,
    compute_pair_maps,
    correlation_map,
    directional_alignment,
    lag_preference,
    optimal_delay,
    pair_profile,
    speed_gap,
)
from preprocess import derive_kinematics
from simulate import build_config, simulate_trial

FS = 60.0


def brute_force_map(kin_i, kin_j, mode, omega, max_lag):
    """Direct summation of every window, no running sums."""
    n = len(kin_i.speed)
    taus = range(-max_lag, max_lag + 1)
    out = np.full((n, len(taus)), np.nan)
    for t in range(n):
        for k, tau in enumerate(taus):
            rows = range(t - omega, t + omega + 1)
            if rows[0] < 0 or rows[-1] >= n or rows[0] + tau < 0 or rows[-1] + tau >= n:
                continue
            total = 0.0
            for r in rows:
                if mode == "heading":
                    total += float(np.dot(kin_i.heading[r], kin_j.heading[r + tau]))
                else:
                    total += abs(kin_i.speed[r] - kin_j.speed[r + tau])
            out[t, k] = total / (2 * omega + 1)
    return out


class TestPointwise:
    def test_identical_headings(self):
        assert directional_alignment([1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)

    def test_opposite_headings(self):
        assert directional_alignment([0.0, 1.0], [0.0, -1.0]) == pytest.approx(-1.0)

    def test_diagonal_heading(self):
        half = np.sqrt(2) / 2
        assert directional_alignment([1.0, 0.0], [half, half]) == pytest.approx(0.7071, abs=1e-4)

    def test_undefined_heading_propagates(self):
        assert np.isnan(directional_alignment([np.nan, np.nan], [1.0, 0.0]))

    def test_speed_gap(self):
        assert speed_gap(1.3, 1.3) == 0.0
        assert speed_gap(1.5, 1.2) == pytest.approx(0.3)
        assert speed_gap(1.2, 1.5) == pytest.approx(0.3)


class TestAnalysisParams:
    def test_defaults_at_60hz(self):
        assert AnalysisParams.for_mode("heading", 60.0).omega == 40
        assert AnalysisParams.for_mode("speed", 60.0).omega == 20
        assert AnalysisParams.for_mode("heading", 60.0).tau_max_s == 2.0

    def test_omega_scales_with_rate(self):
        assert AnalysisParams.for_mode("heading", 120.0).omega == 80
        assert AnalysisParams.for_mode("speed", 30.0).omega == 10

    def test_max_lag_in_samples(self):
        assert AnalysisParams(omega=40, tau_max_s=2.0, mode="heading").max_lag(60.0) == 120

    @pytest.mark.parametrize("kwargs", [
        {"omega": 0, "tau_max_s": 2.0, "mode": "heading"},
        {"omega": 5, "tau_max_s": 0.0, "mode": "heading"},
        {"omega": 5, "tau_max_s": 2.0, "mode": "acceleration"},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            AnalysisParams(**kwargs)

    def test_lag_below_one_sample(self):
        with pytest.raises(ValueError, match="below one sample"):
            AnalysisParams(omega=5, tau_max_s=0.001, mode="speed").max_lag(60.0)


class TestCorrelationMap:
    def test_matches_direct_summation(self, kinematic_series):
        rng = np.random.default_rng(2024)
        params = {mode: AnalysisParams(omega=5, tau_max_s=0.1, mode=mode) for mode in ("heading", "speed")}
        for fixture in range(50):
            angles = rng.uniform(-np.pi, np.pi, size=(2, 200))
            speeds = rng.uniform(0.5, 2.0, size=(2, 200))
            # sprinkle undefined headings into some fixtures
            if fixture % 3 == 0:
                angles[rng.integers(0, 2), rng.integers(0, 200, size=4)] = np.nan
            kin = {
                "A": kinematic_series("A", angles[0], speeds[0]),
                "B": kinematic_series("B", angles[1], speeds[1]),
            }
            for mode, p in params.items():
                cmap = correlation_map(kin, ("A", "B"), p)
                expected = brute_force_map(kin["A"], kin["B"], mode, p.omega, p.max_lag(FS))
                np.testing.assert_array_equal(cmap.defined, np.isfinite(expected))
                np.testing.assert_allclose(cmap.values, expected, atol=1e-12, equal_nan=True)

    def test_grid_shape_and_lags(self, kinematic_series):
        kin = {a: kinematic_series(a, np.zeros(300), np.ones(300)) for a in "AB"}
        cmap = correlation_map(kin, ("A", "B"), AnalysisParams(omega=10, tau_max_s=0.5, mode="speed"))
        assert cmap.values.shape == (300, 61)
        np.testing.assert_array_equal(cmap.taus, np.arange(-30, 31))
        assert cmap.times[0] == 10 and cmap.times[-1] == 289

    def test_identical_constant_headings_give_one(self, kinematic_series):
        kin = {a: kinematic_series(a, np.full(400, 0.3), np.full(400, 1.3)) for a in "AB"}
        cmap = correlation_map(kin, ("A", "B"), AnalysisParams(omega=40, tau_max_s=1.0, mode="heading"))
        np.testing.assert_allclose(cmap.values[cmap.defined], 1.0, atol=1e-12)

        profile = optimal_delay(cmap)
        assert profile.defined_count > 0
        assert (profile.tau_star == 0).all()

    def test_delayed_speed_copy_matches_on_the_diagonal(self, kinematic_series):
        rng = np.random.default_rng(5)
        d = 12
        base = rng.uniform(1.0, 1.6, size=420)
        leader = base[d:]
        # follower[t] == leader[t - d]
        follower = base[:-d]
        kin = {
            "A": kinematic_series("A", np.zeros(leader.size), leader),
            "B": kinematic_series("B", np.zeros(follower.size), follower),
        }
        cmap = correlation_map(kin, ("A", "B"), AnalysisParams(omega=20, tau_max_s=0.5, mode="speed"))
        column = list(cmap.taus).index(d)
        diagonal = cmap.values[:, column]
        assert np.isfinite(diagonal).sum() > 100
        assert (diagonal[np.isfinite(diagonal)] == 0.0).all()

        profile = optimal_delay(cmap)
        assert (profile.tau_star[profile.defined_mask] == d).all()

    def test_bounds(self, leader_trial):
        kin = derive_kinematics(leader_trial)
        for mode in ("heading", "speed"):
            maps, _ = compute_pair_maps(kin, leader_trial.agents, AnalysisParams.for_mode(mode, FS, tau_max_s=1.0))
            for cmap in maps.values():
                values = cmap.values[cmap.defined]
                if mode == "heading":
                    assert values.min() >= -1.0 and values.max() <= 1.0
                else:
                    assert values.min() >= 0.0

    def test_reversed_map_matches_direct_computation(self, kinematic_series):
        rng = np.random.default_rng(9)
        kin = {
            a: kinematic_series(a, np.cumsum(rng.normal(0, 0.05, 300)), rng.uniform(1.0, 1.5, 300))
            for a in "AB"
        }
        for mode in ("heading", "speed"):
            params = AnalysisParams(omega=8, tau_max_s=0.25, mode=mode)
            forward = correlation_map(kin, ("A", "B"), params)
            direct = correlation_map(kin, ("B", "A"), params)
            mirrored = forward.reversed()

            assert mirrored.pair == ("B", "A")
            np.testing.assert_array_equal(mirrored.defined, direct.defined)
            np.testing.assert_allclose(mirrored.values, direct.values, atol=1e-12, equal_nan=True)

    def test_reversed_map_with_lag_bound_beyond_trial(self, kinematic_series):
        rng = np.random.default_rng(11)
        kin = {
            a: kinematic_series(a, np.cumsum(rng.normal(0, 0.05, 240)), rng.uniform(1.0, 1.5, 240))
            for a in "AB"
        }
        params = AnalysisParams(omega=40, tau_max_s=5.0, mode="heading")
        assert params.max_lag(FS) > 240

        forward = correlation_map(kin, ("A", "B"), params)
        mirrored = forward.reversed()
        direct = correlation_map(kin, ("B", "A"), params)

        assert mirrored.values.shape == (240, 601)
        assert not mirrored.defined[:, 0].any() and not mirrored.defined[:, -1].any()
        np.testing.assert_array_equal(mirrored.defined, direct.defined)
        np.testing.assert_allclose(mirrored.values, direct.values, atol=1e-12, equal_nan=True)

    def test_wider_window_does_not_add_variation(self, leader_trial):
        kin = derive_kinematics(leader_trial)
        for mode in ("heading", "speed"):
            narrow = correlation_map(kin, ("P1", "P2"), AnalysisParams(omega=5, tau_max_s=1.0, mode=mode))
            wide = correlation_map(kin, ("P1", "P2"), AnalysisParams(omega=16, tau_max_s=1.0, mode=mode))
            tv_narrow = np.nansum(np.abs(np.diff(narrow.values, axis=0)), axis=0)
            tv_wide = np.nansum(np.abs(np.diff(wide.values, axis=0)), axis=0)
            assert (tv_wide <= tv_narrow + 1e-9).all()

    def test_series_shorter_than_window(self, kinematic_series):
        kin = {a: kinematic_series(a, np.zeros(50), np.ones(50)) for a in "AB"}
        with pytest.raises(EmptyMapError, match="no defined cell"):
            correlation_map(kin, ("A", "B"), AnalysisParams(omega=40, tau_max_s=0.5, mode="heading"))

    def test_all_headings_undefined(self, kinematic_series):
        kin = {
            "A": kinematic_series("A", np.full(300, np.nan), np.zeros(300)),
            "B": kinematic_series("B", np.zeros(300), np.ones(300)),
        }
        with pytest.raises(EmptyMapError):
            correlation_map(kin, ("A", "B"), AnalysisParams(omega=10, tau_max_s=0.5, mode="heading"))


class TestOptimalDelay:
    def _map(self, rows, mode="heading"):
        values = np.array(rows, dtype=float)
        width = values.shape[1]
        taus = np.arange(-(width // 2), width // 2 + 1)
        return CorrelationMap(pair=("A", "B"), mode=mode, taus=taus, values=values, omega=1, sample_rate_hz=FS)

    def test_lag_preference_order(self):
        taus = np.arange(-2, 3)
        assert list(taus[lag_preference(taus)]) == [0, -1, 1, -2, 2]

    def test_argmax_for_heading(self):
        profile = optimal_delay(self._map([[0.1, 0.2, 0.3, 0.9, 0.5]]))
        assert profile.tau_star[0] == 1

    def test_argmin_for_speed(self):
        profile = optimal_delay(self._map([[0.4, 0.05, 0.3, 0.2, 0.5]], mode="speed"))
        assert profile.tau_star[0] == -1

    def test_symmetric_tie_prefers_negative(self):
        profile = optimal_delay(self._map([[0.9, 0.2, 0.3, 0.2, 0.9]]))
        assert profile.tau_star[0] == -2

    def test_tie_with_zero_prefers_zero(self):
        profile = optimal_delay(self._map([[0.2, 0.7, 0.7, 0.7, 0.1]]))
        assert profile.tau_star[0] == 0

    def test_near_tie_within_tolerance(self):
        row = [0.1, 0.2, 0.8, 0.8 + 1e-12, 0.1]
        assert optimal_delay(self._map([row]), tie_tolerance=1e-9).tau_star[0] == 0
        assert optimal_delay(self._map([row]), tie_tolerance=0.0).tau_star[0] == 1

    def test_undefined_cells_never_win(self):
        nan = np.nan
        profile = optimal_delay(self._map([[nan, nan, nan, 0.2, 0.4], [nan] * 5]))
        assert profile.tau_star[0] == 2
        assert list(profile.defined_mask) == [True, False]
        assert profile.defined_count == 1

    def test_follower_copy_recovers_the_lag(self, leader_trial):
        kin = derive_kinematics(leader_trial)
        params = AnalysisParams.for_mode("heading", FS)
        forward = optimal_delay(correlation_map(kin, ("P1", "P2"), params))
        backward = optimal_delay(correlation_map(kin, ("P2", "P1"), params))

        # P1 turns over samples 360..420; P2 repeats it 30 samples later
        assert (forward.tau_star[360:421] == 30).all()
        assert (backward.tau_star[390:451] == -30).all()


class TestPairProfiles:
    def test_canonical_pairs(self):
        assert canonical_pairs(["P1", "P2", "P3"]) == [("P1", "P2"), ("P1", "P3"), ("P2", "P3")]

    def test_compute_pair_maps_and_reversal(self, leader_trial):
        kin = derive_kinematics(leader_trial)
        maps, profiles = compute_pair_maps(kin, leader_trial.agents, AnalysisParams.for_mode("speed", FS, tau_max_s=1.0))
        assert set(maps) == set(profiles) == set(canonical_pairs(leader_trial.agents))

        reverse = pair_profile(profiles, "P2", "P1")
        np.testing.assert_array_equal(reverse.tau_star, -profiles[("P1", "P2")].tau_star)
        np.testing.assert_array_equal(reverse.defined_mask, profiles[("P1", "P2")].defined_mask)
        assert pair_profile(profiles, "P1", "P9") is None

    def test_empty_pair_is_skipped(self, kinematic_series, caplog):
        kin = {
            "A": kinematic_series("A", np.zeros(300), np.ones(300)),
            "B": kinematic_series("B", np.full(300, np.nan), np.zeros(300)),
            "C": kinematic_series("C", np.zeros(300), np.ones(300)),
        }
        maps, _ = compute_pair_maps(kin, ["A", "B", "C"], AnalysisParams(omega=10, tau_max_s=0.5, mode="heading"))
        assert set(maps) == {("A", "C")}
        assert "Skipping pair A->B" in caplog.text


class TestDelayRecovery:
    @staticmethod
    def _median_delay(delay_s, seed):
        config = build_config(
            name=f"pair_{delay_s}_{seed}",
            n_agents=2,
            coupling=[{"source": "P1", "target": "P2", "delay_s": delay_s}],
            script=[{"time_s": 8.0, "agent": "P1", "kind": "turn_left", "magnitude": 45.0}],
            heading_noise_deg=2.0,
            duration_s=20.0,
            seed=seed,
        )
        trial = simulate_trial(config)
        kin = derive_kinematics(trial)
        profile = optimal_delay(correlation_map(kin, ("P1", "P2"), AnalysisParams.for_mode("heading", FS)))
        epoch = slice(int(8.0 * FS), int(round((9.0 + delay_s) * FS)) + 1)
        defined = profile.defined_mask[epoch]
        return float(np.median(profile.tau_star[epoch][defined]))

    @pytest.mark.parametrize("delay_s", [0.3, 0.5, 1.0])
    def test_median_delay_over_the_turn(self, delay_s):
        expected = delay_s * FS
        hits = sum(abs(self._median_delay(delay_s, seed) - expected) <= 2 for seed in range(20))
        assert hits >= 19
