"""Filler strategies: equal-split adversaries, stressors, replay fillers."""

from fractions import Fraction

import pytest

from cupsim.core import (
    GameConfig,
    InvalidConfigError,
    RngStream,
    SetupError,
    Variant,
)
from cupsim.emptiers import (
    Emptier,
    GreedyMultiEmptier,
    GreedySingleEmptier,
    SmoothedGreedySingleEmptier,
)
from cupsim.fillers import (
    FILLER_KINDS,
    AdaptiveHarmonicFiller,
    ObliviousGuessingFiller,
    RoundRobinFiller,
    SimulatedAdaptiveFiller,
    SingleTargetFiller,
    TraceFiller,
    UniformRandomFiller,
    equal_split_divisors,
    make_filler,
)
from cupsim.games import EmptierMove, FillerMove, new_game, step, validate_filler_move


def cfg(variant=Variant.SINGLE, n=8, p=1, eps=Fraction(1, 4), dlt=Fraction(0),
        resolution=None, seed=0):
    if resolution is None:
        from cupsim.core import choose_resolution

        extras = ()
        if variant is Variant.UNIVERSAL and n % p == 0:
            extras = equal_split_divisors(n, p)
        resolution = choose_resolution(eps, dlt, n, p, extras)
    return GameConfig(
        variant=variant, n=n, p=p, epsilon=eps, delta=dlt,
        resolution=resolution, seed=seed,
    )


class TestEqualSplitDivisors:
    def test_values(self):
        assert equal_split_divisors(8, 2) == [32, 24, 16]

    def test_requires_multiple(self):
        with pytest.raises(InvalidConfigError):
            equal_split_divisors(9, 2)


class TestAdaptiveHarmonic:
    def test_equal_shares_shrink_with_survivors(self):
        c = cfg(variant=Variant.UNIVERSAL, n=8, p=2)
        state = new_game(c)
        filler = AdaptiveHarmonicFiller(2)
        filler.bind(state)
        emptier = GreedyMultiEmptier(2)
        emptier.bind(state)
        d = c.resolution
        # Step 1: one water unit split over all 8 cups.
        move = filler.move(state)
        assert len(move.pours) == 8
        assert set(move.pours.values()) == {d // 8}
        state, record = step(state, move, emptier)
        filler.observe(record)
        # Step 2: the two flushed cups left the pool.
        move = filler.move(state)
        assert len(move.pours) == 6
        assert set(move.pours.values()) == {d // 6}
        state, record = step(state, move, emptier)
        filler.observe(record)
        # Step 3: four survivors, each receiving a quarter water unit.
        move = filler.move(state)
        assert len(move.pours) == 4
        assert set(move.pours.values()) == {d // 4}
        state, record = step(state, move, emptier)
        filler.observe(record)
        # The construction is exhausted after n/p - 1 = 3 steps, and every
        # surviving cup holds 1/8 + 1/6 + 1/4 = 13/24.
        assert filler.move(state).pours == {}
        survivors = [f for f in state.fills.values() if f > 0]
        assert max(survivors) == d * 13 // 24
        assert Fraction(max(survivors), d) == Fraction(13, 24)

    def test_requires_universal_variant(self):
        state = new_game(cfg(variant=Variant.SINGLE, n=8))
        with pytest.raises(InvalidConfigError):
            AdaptiveHarmonicFiller(2).bind(state)

    def test_coarse_resolution_fails_fast(self):
        from cupsim.core import NonRepresentableError

        c = cfg(variant=Variant.UNIVERSAL, n=8, p=2, resolution=16)
        state = new_game(c)
        with pytest.raises(NonRepresentableError):
            AdaptiveHarmonicFiller(2).bind(state)


class GuessFollowingEmptier(Emptier):
    """Test double: flushes exactly the cups the guessing filler predicted."""

    kind = "guess-following"

    def __init__(self, filler: ObliviousGuessingFiller):
        self._filler = filler

    def move(self, state, filler_move):
        if not self._filler.guesses:
            return EmptierMove()
        guess = self._filler.guesses[-1]
        return EmptierMove({j: state.fills[j] for j in guess if state.fills.get(j)})


class TestObliviousGuessing:
    def test_correct_guesses_reproduce_the_adaptive_run(self):
        c = cfg(variant=Variant.UNIVERSAL, n=4, p=1)
        d = c.resolution

        state = new_game(c)
        filler = ObliviousGuessingFiller(4, 1, RngStream(9, "guess"))
        filler.bind(state)
        emptier = GuessFollowingEmptier(filler)
        guess_records = []
        for _ in range(3):
            move = filler.move(state)
            state, record = step(state, move, emptier)
            guess_records.append(record)

        # Oracle run: the adaptive filler against an emptier flushing the same
        # cups, which must produce identical pours and the 13/24 final fill.
        state2 = new_game(c)
        adaptive = AdaptiveHarmonicFiller(1)
        adaptive.bind(state2)
        for i, guess in enumerate(filler.guesses):
            move = adaptive.move(state2)
            assert move.pours == guess_records[i].pours
            fixed = EmptierMove(
                {j: state2.fills[j] + move.pours.get(j, 0) for j in guess}
            )

            class Replay(Emptier):
                def move(self, state, filler_move, _fixed=fixed):
                    return _fixed

            state2, record2 = step(state2, move, Replay())
            adaptive.observe(record2)

        assert state.fills == state2.fills
        assert Fraction(max(state.fills.values()), d) == Fraction(13, 24)

    def test_candidates_shrink_by_p(self):
        c = cfg(variant=Variant.UNIVERSAL, n=8, p=2)
        state = new_game(c)
        filler = ObliviousGuessingFiller(8, 2, RngStream(1, "guess"))
        filler.bind(state)
        emptier = GreedyMultiEmptier(2)
        emptier.bind(state)
        sizes = []
        for _ in range(3):
            move = filler.move(state)
            sizes.append(len(move.pours))
            state, _rec = step(state, move, emptier)
        assert sizes == [8, 6, 4]
        assert all(len(g) == 2 for g in filler.guesses)

    def test_k_bounds_enforced(self):
        c = cfg(variant=Variant.UNIVERSAL, n=8, p=2)
        state = new_game(c)
        with pytest.raises(InvalidConfigError):
            ObliviousGuessingFiller(2, 2, RngStream(1, "g")).bind(state)


class TestUniformRandom:
    def test_moves_always_validate(self):
        for variant, p, dlt in (
            (Variant.SINGLE, 1, Fraction(0)),
            (Variant.MULTI, 3, Fraction(1, 8)),
            (Variant.RENORMALIZED, 3, Fraction(1, 8)),
        ):
            c = cfg(variant=variant, n=8, p=p, dlt=dlt)
            state = new_game(c)
            filler = UniformRandomFiller(RngStream(c.seed, "filler"))
            filler.bind(state)
            from cupsim.games import _budget_units

            budget = _budget_units(c)
            for _ in range(100):
                move = filler.move(state)
                assert validate_filler_move(state, move) is None
                assert move.total_units() <= budget

    def test_dynamic_adds_new_cups(self):
        c = cfg(variant=Variant.DYNAMIC_SINGLE, n=8)
        state = new_game(c)
        filler = UniformRandomFiller(
            RngStream(0, "filler"), new_cups_per_step=2
        )
        filler.bind(state)
        move = filler.move(state)
        assert len(move.new_cups) == 2
        assert validate_filler_move(state, move) is None

    def test_odd_new_cup_units_rejected(self):
        with pytest.raises(InvalidConfigError):
            UniformRandomFiller(RngStream(0, "f"), new_cup_units=3)


class TestSingleTarget:
    def test_pours_largest_legal_amount(self):
        c = cfg(n=4)  # budget (1 - 1/4) * D
        state = new_game(c)
        filler = SingleTargetFiller(target=2)
        filler.bind(state)
        move = filler.move(state)
        budget = 3 * c.resolution // 4
        assert move.pours == {2: budget - budget % 2}
        assert validate_filler_move(state, move) is None

    def test_explicit_amount_validated(self):
        c = cfg(n=4)
        state = new_game(c)
        filler = SingleTargetFiller(target=0, amount_units=10**9)
        with pytest.raises(InvalidConfigError):
            filler.bind(state)


class TestRoundRobin:
    def test_cycles_through_cups(self):
        c = cfg(variant=Variant.MULTI, n=4, p=2, dlt=Fraction(1, 2))
        state = new_game(c)
        filler = RoundRobinFiller()
        filler.bind(state)
        first = filler.move(state)
        assert validate_filler_move(state, first) is None
        # Budget 1.5 water at per-cup cap 0.5 water saturates three cups.
        assert set(first.pours) == {0, 1, 2}
        emptier = GreedyMultiEmptier(2)
        emptier.bind(state)
        state, _ = step(state, first, emptier)
        second = filler.move(state)
        # The cursor advanced: the second move starts where the first ended.
        assert set(second.pours) == {3, 0, 1}

    def test_budget_spent(self):
        c = cfg(variant=Variant.MULTI, n=4, p=2, dlt=Fraction(1, 2))
        state = new_game(c)
        filler = RoundRobinFiller()
        filler.bind(state)
        move = filler.move(state)
        from cupsim.games import _budget_units

        budget = _budget_units(c)
        assert move.total_units() == budget - budget % 2


class TestTraceFiller:
    def test_replays_recorded_pours(self):
        c = cfg(n=2)
        state = new_game(c)
        emptier = GreedySingleEmptier()
        records = []
        for i in range(4):
            state, record = step(state, FillerMove({i % 2: 4}), emptier)
            records.append(record)
        replay = TraceFiller.from_records(records)
        state2 = new_game(c)
        for i in range(4):
            move = replay.move(state2)
            assert move.pours == records[i].pours
            state2, _ = step(state2, move, GreedySingleEmptier())
        assert replay.move(state2).pours == {}  # exhausted


class TestSimulatedAdaptive:
    def test_rejects_randomized_emptier(self):
        c = cfg(variant=Variant.UNIVERSAL, n=8, p=2)
        with pytest.raises(SetupError):
            SimulatedAdaptiveFiller.against(c, SmoothedGreedySingleEmptier(0))

    def test_schedule_is_deterministic(self):
        c = cfg(variant=Variant.UNIVERSAL, n=8, p=2)
        a = SimulatedAdaptiveFiller.against(c, GreedyMultiEmptier(2))
        b = SimulatedAdaptiveFiller.against(c, GreedyMultiEmptier(2))
        assert a.schedule == b.schedule

    def test_blind_replay_matches_the_adaptive_outcome(self):
        c = cfg(variant=Variant.UNIVERSAL, n=8, p=2)
        filler = SimulatedAdaptiveFiller.against(c, GreedyMultiEmptier(2))
        state = new_game(c)
        emptier = GreedyMultiEmptier(2)
        emptier.bind(state)
        filler.bind(state)
        for _ in range(3):
            state, _rec = step(state, filler.move(state), emptier)
        assert Fraction(max(state.fills.values()), c.resolution) == Fraction(13, 24)


class TestMakeFiller:
    def test_known_kinds_construct(self):
        for kind in FILLER_KINDS:
            if kind in ("trace", "simulated-adaptive"):
                continue
            variant = (
                Variant.UNIVERSAL
                if kind in ("adaptive-harmonic", "oblivious-guessing")
                else Variant.SINGLE
            )
            c = cfg(variant=variant, n=8, p=2 if variant is Variant.UNIVERSAL else 1)
            filler = make_filler(kind, c)
            assert filler.kind == kind

    def test_unknown_kind(self):
        with pytest.raises(InvalidConfigError):
            make_filler("bogus", cfg())
