"""Experiment runner: determinism, recovery setup, verification hooks."""

import dataclasses
from fractions import Fraction

import pytest

from cupsim.core import (
    GameConfig,
    InvalidConfigError,
    InvariantViolationError,
    NonRepresentableError,
    Variant,
)
from cupsim.emptiers import NullEmptier, SmoothedGreedySingleEmptier, make_emptier
from cupsim.games import FillerMove, new_game, step
from cupsim.harness import (
    ExperimentSpec,
    game_config,
    resolve_resolution,
    run_experiment,
    run_trial,
    setup_recovery,
    spec_from_json,
    spec_to_json,
    trial_seed_for,
)


def spec(**kw):
    base = dict(
        variant=Variant.SINGLE,
        n=8,
        p=1,
        epsilon=Fraction(1, 4),
        delta=Fraction(0),
        seed=7,
        steps=50,
        trials=3,
        filler="uniform-random",
        emptier="greedy-single",
        verify_level="invariants",
    )
    base.update(kw)
    return ExperimentSpec(**base)


class TestDeterminism:
    def test_same_trial_twice_is_identical(self):
        s = spec()
        a = run_trial(s, 0, keep_records=True)
        b = run_trial(s, 0, keep_records=True)
        assert a.summary == b.summary
        assert a.records == b.records

    def test_trials_are_independent_streams(self):
        s3 = spec(trials=3)
        s6 = spec(trials=6)
        r3 = run_experiment(s3)
        r6 = run_experiment(s6)
        assert r6.summaries[:3] == r3.summaries

    def test_worker_count_does_not_change_results(self):
        s = spec(trials=4, steps=20)
        serial = run_experiment(s, workers=1)
        parallel = run_experiment(s, workers=2)
        assert serial.summaries == parallel.summaries
        assert serial.aggregate == parallel.aggregate

    def test_trial_seeds_are_distinct(self):
        seeds = {trial_seed_for(7, t) for t in range(100)}
        assert len(seeds) == 100


class TestValidation:
    def test_bad_steps(self):
        with pytest.raises(InvalidConfigError):
            run_trial(spec(steps=0), 0)

    def test_bad_verify_level(self):
        assert spec(verify_level="bogus").validate()

    def test_recovery_limited_to_supported_variants(self):
        s = spec(
            variant=Variant.MULTI, p=2, delta=Fraction(1, 8),
            recovery_b=Fraction(4),
        )
        assert any("recovery" in p for p in s.validate())


class TestResolution:
    def test_explicit_resolution_wins(self):
        assert resolve_resolution(spec(resolution=640)) == 640

    def test_automatic_resolution_covers_everything(self):
        s = spec(
            recovery_b=Fraction(16),
            backlog_thresholds=(Fraction(7, 3),),
        )
        d = resolve_resolution(s)
        assert d % 2 == 0
        assert d % 4 == 0  # epsilon denominator
        assert d % (8 * 8) == 0  # n^2
        assert d % 3 == 0  # threshold denominator

    def test_harmonic_filler_gets_split_divisors(self):
        s = spec(
            variant=Variant.UNIVERSAL, n=8, p=2,
            filler="adaptive-harmonic", emptier="greedy-multi",
        )
        d = resolve_resolution(s)
        for div in (32, 24, 16):
            assert d % div == 0


class TestRecoverySetup:
    def test_zero_is_standard_start(self):
        s = spec(recovery_b=Fraction(0))
        assert setup_recovery(s, game_config(s, 1)) == {}

    def test_one_cup_placement(self):
        s = spec(recovery_b=Fraction(16))
        cfg = game_config(s, 1)
        fills = setup_recovery(s, cfg)
        assert fills == {0: 16 * cfg.resolution}

    def test_uniform_placement(self):
        s = spec(recovery_b=Fraction(16), recovery_placement="uniform")
        cfg = game_config(s, 1)
        fills = setup_recovery(s, cfg)
        assert len(fills) == 8
        assert len(set(fills.values())) == 1
        assert sum(fills.values()) == 16 * cfg.resolution

    def test_unsplittable_uniform_rejected(self):
        s = spec(
            recovery_b=Fraction(1, 2), recovery_placement="uniform", resolution=8
        )
        with pytest.raises(NonRepresentableError):
            setup_recovery(s, game_config(s, 1))

    def test_small_start_leaves_counters_zero(self):
        # Less than one water unit per cup sits below every threshold.
        s = spec(
            variant=Variant.RENORMALIZED,
            p=2,
            delta=Fraction(1, 8),
            emptier="threshold-counter",
            recovery_b=Fraction(4),
            recovery_placement="uniform",
            steps=1,
            trials=1,
        )
        cfg = game_config(s, trial_seed_for(s.seed, 0))
        initial = setup_recovery(s, cfg)
        state = new_game(cfg, initial)
        emptier = make_emptier("threshold-counter", cfg, {})
        emptier.bind(state)
        assert emptier.thresholds.counters == {}
        assert emptier.thresholds.pour_totals == {
            j: u for j, u in initial.items()
        }


class TestVerification:
    def test_corrupted_strategy_is_caught(self):
        class Drifting(SmoothedGreedySingleEmptier):
            def move(self, state, filler_move):
                move = super().move(state, filler_move)
                if state.step_index == 19:
                    # Knock a virtual fill off its offset lock.
                    j = next(iter(self.virtual))
                    self.virtual[j] += 1
                return move

        import cupsim.harness as harness

        s = spec(emptier="smoothed-greedy", steps=40, trials=1)
        original = harness.make_emptier

        def patched(kind, cfg, params=None):
            if kind == "smoothed-greedy":
                return Drifting(cfg.seed)
            return original(kind, cfg, params)

        harness.make_emptier = patched
        try:
            with pytest.raises(InvariantViolationError) as exc:
                run_trial(s, 0)
            assert exc.value.invariant == "mod-one-offset"
        finally:
            harness.make_emptier = original

    def test_conservation_check_passes_on_clean_runs(self):
        result = run_trial(spec(steps=100), 0)
        assert result.summary.steps == 100

    def test_null_emptier_zero_filler_keeps_backlog_zero(self):
        cfg = game_config(spec(), 1)
        state = new_game(cfg)
        for _ in range(100):
            state, record = step(state, FillerMove(), NullEmptier())
            assert record.backlog_units == 0


class TestCheckpointsAndPhi:
    def test_checkpoints_record_fills(self):
        s = spec(steps=10, trials=1, checkpoints=(3, 10))
        result = run_trial(s, 0)
        assert set(result.checkpoints) == {3, 10}
        for fills in result.checkpoints.values():
            assert all(f >= 0 for f in fills.values())

    def test_recorded_phi_matches_fresh_computation(self):
        from cupsim.metrics import potential_phi

        s = spec(steps=10, trials=1, record_phi=True, checkpoints=(10,))
        result = run_trial(s, 0, keep_records=True)
        fills = result.checkpoints[10]
        expected = potential_phi(
            fills.values(), Fraction(1, 4), result.resolution
        )
        assert result.records[-1].phi == expected


class TestAggregate:
    def test_single_trial_aggregate_matches_summary(self):
        s = spec(trials=1, backlog_thresholds=(Fraction(1),))
        result = run_experiment(s)
        summary = result.summaries[0]
        agg = result.aggregate
        assert agg["trials"] == 1
        assert agg["total_steps"] == summary.steps
        assert agg["max_backlog_units"] == summary.max_backlog_units
        tail = agg["tails"]["1"]
        assert tail["threshold_units"] == result.resolution
        assert tail["step_fraction"] == summary.frac_backlog_gt[result.resolution]

    def test_stderr_formula(self):
        s = spec(trials=4, backlog_thresholds=(Fraction(0),))
        result = run_experiment(s)
        tail = result.aggregate["tails"]["0"]
        p = tail["final_probability"]
        assert tail["final_stderr"] == pytest.approx((p * (1 - p) / 4) ** 0.5)


class TestSpecJson:
    def test_round_trip(self):
        s = spec(
            variant=Variant.RENORMALIZED,
            p=2,
            delta=Fraction(1, 8),
            emptier="threshold-counter",
            backlog_thresholds=(Fraction(3), Fraction(7, 2)),
            recovery_b=Fraction(16),
            checkpoints=(5,),
            record_phi=True,
        )
        assert spec_from_json(spec_to_json(s)) == s

    def test_missing_variant_rejected(self):
        with pytest.raises(InvalidConfigError):
            spec_from_json({})

    def test_string_strategy_shorthand(self):
        s = spec_from_json(
            {"variant": "single", "filler": "round-robin", "emptier": "null"}
        )
        assert s.filler == "round-robin"
        assert s.emptier == "null"
