"""Tests for lead fractions, the individual leadership index and aggregation."""

import numpy as np
import pytest

from errors import UndefinedScoreError
from lagcorr import AnalysisParams, DelayProfile, compute_pair_maps
from leadership import LeadershipScore, aggregate, lead_fraction, leadership_index, score_trial
from preprocess import derive_kinematics
from simulate import build_config, experiment_block, script_for_sequence, simulate_trial, visual_coupling

FS = 60.0


def profile(pair, taus, defined=None):
    taus = np.asarray(taus, dtype=np.int64)
    mask = np.ones(taus.size, dtype=bool) if defined is None else np.asarray(defined, dtype=bool)
    return DelayProfile(pair=pair, tau_star=taus, defined_mask=mask)


def analyze(trial, mode):
    kin = derive_kinematics(trial)
    _, profiles = compute_pair_maps(kin, trial.agents, AnalysisParams.for_mode(mode, trial.sample_rate_hz))
    return profiles, score_trial(profiles, trial.agents)


class TestLeadFraction:
    def test_always_leading(self):
        assert lead_fraction(profile(("A", "B"), [30] * 50)) == 1.0

    def test_always_following(self):
        assert lead_fraction(profile(("A", "B"), [-30] * 50)) == 0.0

    def test_zeros_leave_the_denominator(self):
        assert lead_fraction(profile(("A", "B"), [1, 1, -1, 0, 1])) == 0.75

    def test_only_zeros(self):
        assert lead_fraction(profile(("A", "B"), [0] * 20)) == 0.0

    def test_undefined_samples_ignored(self):
        p = profile(("A", "B"), [5, -5, -5, -5], defined=[True, True, False, False])
        assert lead_fraction(p) == 0.5

    def test_empty_profile(self):
        with pytest.raises(UndefinedScoreError, match="no defined sample"):
            lead_fraction(profile(("A", "B"), [3, 3], defined=[False, False]))

    def test_reversed_fractions_are_complementary(self):
        rng = np.random.default_rng(1)
        taus = rng.choice([-3, -2, -1, 1, 2, 3], size=500)
        forward = profile(("A", "B"), taus)
        assert lead_fraction(forward) + lead_fraction(forward.reversed()) == pytest.approx(1.0, abs=1e-12)


class TestLeadershipIndex:
    @pytest.fixture
    def star(self):
        """A leads everyone; B, C and D are simultaneous."""
        n = 100
        return {
            ("A", "B"): profile(("A", "B"), [30] * n),
            ("A", "C"): profile(("A", "C"), [30] * n),
            ("A", "D"): profile(("A", "D"), [30] * n),
            ("B", "C"): profile(("B", "C"), [0] * n),
            ("B", "D"): profile(("B", "D"), [0] * n),
            ("C", "D"): profile(("C", "D"), [0] * n),
        }

    def test_global_leader(self, star):
        score = leadership_index(star, "A")
        assert score.index_percent == 100.0
        assert score.per_pair_fractions == {"B": 1.0, "C": 1.0, "D": 1.0}
        assert score.defined_samples == 300
        assert not score.partial

    def test_follower_of_everyone(self, star):
        assert leadership_index(star, "B").index_percent == 0.0

    def test_index_is_mean_of_pair_fractions(self):
        profiles = {
            ("A", "B"): profile(("A", "B"), [1, 1, 1, -1]),
            ("A", "C"): profile(("A", "C"), [-1, -1, 1, 0]),
            ("B", "C"): profile(("B", "C"), [1, -1]),
        }
        score = leadership_index(profiles, "A", ["A", "B", "C"])
        assert score.index_percent == pytest.approx(100 * (0.75 + 1 / 3) / 2, abs=1e-12)
        assert score.per_pair_fractions["C"] == pytest.approx(1 / 3)

    def test_missing_partner_gives_partial_score(self, star, caplog):
        profiles = {pair: p for pair, p in star.items() if pair != ("A", "D")}
        score = leadership_index(profiles, "A", ["A", "B", "C", "D"])
        assert score.partial
        assert score.undefined_partners == ("D",)
        assert score.index_percent == 100.0
        assert "Partial leadership score for A" in caplog.text

    def test_no_scorable_partner(self):
        profiles = {("A", "B"): profile(("A", "B"), [1, 2], defined=[False, False])}
        with pytest.raises(UndefinedScoreError):
            leadership_index(profiles, "A", ["A", "B"])

    def test_score_trial_skips_unscorable_agents(self):
        profiles = {("A", "B"): profile(("A", "B"), [1, 2, -1])}
        scores = score_trial(profiles, ["A", "B", "C"])
        assert set(scores) == {"A", "B"}
        assert scores["A"].partial and scores["A"].undefined_partners == ("C",)

    def test_relabelling_permutes_scores(self):
        rng = np.random.default_rng(4)
        agents = ["A", "B", "C", "D"]
        profiles = {
            (i, j): profile((i, j), rng.integers(-5, 6, size=80))
            for k, i in enumerate(agents) for j in agents[k + 1:]
        }
        rename = {"A": "W", "B": "X", "C": "Y", "D": "Z"}
        renamed = {(rename[i], rename[j]): profile((rename[i], rename[j]), p.tau_star)
                   for (i, j), p in profiles.items()}

        before = score_trial(profiles, agents)
        after = score_trial(renamed, [rename[a] for a in agents])
        for agent in agents:
            assert after[rename[agent]].index_percent == before[agent].index_percent

    def test_bounds_and_complementarity_on_simulated_block(self):
        for config in experiment_block("heading", seed=7, duration_s=20.0)[:4]:
            profiles, scores = analyze(simulate_trial(config), "heading")
            for score in scores.values():
                assert 0.0 <= score.index_percent <= 100.0
            for (i, j), p in profiles.items():
                total = lead_fraction(p) + lead_fraction(p.reversed())
                assert total == pytest.approx(1.0, abs=1e-12) or total == 0.0


class TestSimulatedLeaders:
    def test_null_trial_scores_zero(self, null_trial):
        for mode in ("heading", "speed"):
            _, scores = analyze(null_trial, mode)
            assert set(scores) == set(null_trial.agents)
            assert all(s.index_percent == 0.0 for s in scores.values())

    def test_scripted_leader(self, leader_trial):
        _, scores = analyze(leader_trial, "heading")
        assert scores["P1"].index_percent > 99.0
        for follower in ("P2", "P3", "P4"):
            assert scores[follower].index_percent < 1.0

    def test_chain_index_matches_recount(self):
        # FL -> BL -> BR with FR walking on its own
        config = build_config(
            name="chain",
            coupling=[
                {"source": "P1", "target": "P3", "delay_s": 0.5},
                {"source": "P3", "target": "P4", "delay_s": 0.5},
            ],
            script=[
                {"time_s": 5.0, "agent": "P1", "kind": "turn_left", "magnitude": 30.0},
                {"time_s": 11.0, "agent": "P1", "kind": "turn_right", "magnitude": 30.0},
            ],
            heading_noise_deg=0.5,
            duration_s=18.0,
            seed=3,
        )
        trial = simulate_trial(config)
        profiles, scores = analyze(trial, "heading")

        fractions = []
        for other in ("P1", "P2", "P4"):
            if ("P3", other) in profiles:
                p = profiles[("P3", other)]
                taus = [int(t) for t, ok in zip(p.tau_star, p.defined_mask) if ok]
            else:
                p = profiles[(other, "P3")]
                taus = [-int(t) for t, ok in zip(p.tau_star, p.defined_mask) if ok]
            positive = sum(1 for t in taus if t > 0)
            nonzero = sum(1 for t in taus if t != 0)
            fractions.append(positive / nonzero if nonzero else 0.0)

        assert scores["P3"].index_percent == pytest.approx(100.0 * sum(fractions) / 3, abs=1e-12)


class TestAggregate:
    def _score(self, agent, value):
        return LeadershipScore(agent=agent, index_percent=value, per_pair_fractions={}, defined_samples=10)

    def test_two_trials(self):
        meta = {"formation": {"A": "FL"}}
        report = aggregate([(meta, self._score("A", 40.0)), (meta, self._score("A", 60.0))], "by_position")
        cell = report.cells["FL"]
        assert cell.mean_percent == pytest.approx(50.0)
        assert cell.sem_percent == pytest.approx(10.0)
        assert cell.n_trials == 2

    def test_single_trial_has_zero_sem(self):
        report = aggregate([({}, self._score("A", 35.0))], "by_agent")
        assert report.cells["A"].sem_percent == 0.0
        assert report.cells["A"].n_trials == 1

    def test_missing_key_is_skipped(self, caplog):
        scores = [({"formation": {"A": "BR"}}, self._score("A", 10.0)), ({}, self._score("B", 20.0))]
        report = aggregate(scores, "by_position")
        assert list(report.cells) == ["BR"]
        assert report.skipped == 1
        assert report.warnings and "B" in report.warnings[0]

    def test_by_ipd_and_sequence_keys(self):
        meta = {"ipd_m": 2.0, "sequence_tag": "LR"}
        assert list(aggregate([(meta, self._score("A", 1.0))], "by_ipd").cells) == ["2"]
        assert list(aggregate([(meta, self._score("A", 1.0))], "by_sequence").cells) == ["LR"]

    def test_unknown_grouping(self):
        with pytest.raises(ValueError, match="grouping"):
            aggregate([], "by_height")


class TestSimulatedCorpora:
    @pytest.mark.parametrize("condition", ["heading", "speed"])
    def test_front_row_leads_on_average(self, condition):
        configs = [
            c for seed in (0, 1)
            for c in experiment_block(condition, seed=seed, duration_s=20.0)
            if c.condition != "control"
        ]
        assert len(configs) == 24

        pairs = []
        for config in configs:
            trial = simulate_trial(config)
            _, scores = analyze(trial, condition)
            pairs.extend((trial.meta.as_dict(), s) for s in scores.values())

        means = {k: c.mean_percent for k, c in aggregate(pairs, "by_position").cells.items()}
        assert min(means["FL"], means["FR"]) > max(means["BL"], means["BR"])

    def test_initiator_tops_the_trial(self):
        agents = ["P1", "P2", "P3", "P4"]
        formation = dict(zip(agents, ("FL", "FR", "BL", "BR")))
        wins = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            initiator = agents[seed % 4]
            config = build_config(
                name=f"initiator_{seed}",
                agents=agents,
                formation=formation,
                coupling=[e.model_dump() for e in visual_coupling(formation, initiator, 1.0)],
                script=[e.model_dump() for e in script_for_sequence("LR", [initiator], 20.0, rng)],
                heading_noise_deg=0.5,
                duration_s=20.0,
                seed=seed,
            )
            _, scores = analyze(simulate_trial(config), "heading")
            top = max(scores.values(), key=lambda s: s.index_percent)
            wins += top.agent == initiator
        assert wins > 12
