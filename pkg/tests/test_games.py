"""Rule engine: move validation, stepping, conservation, trace round-trips."""

import io
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cupsim.core import (
    GameConfig,
    InvalidConfigError,
    InvalidMoveError,
    StrategyProtocolError,
    Variant,
)
from cupsim.emptiers import GreedyMultiEmptier, GreedySingleEmptier, NullEmptier
from cupsim.games import (
    EmptierMove,
    FillerMove,
    backlog,
    new_game,
    read_trace,
    step,
    validate_emptier_move,
    validate_filler_move,
    write_trace,
)


def cfg(variant=Variant.SINGLE, n=4, p=1, eps=Fraction(1, 4), dlt=Fraction(0),
        resolution=16, seed=0):
    return GameConfig(
        variant=variant, n=n, p=p, epsilon=eps, delta=dlt,
        resolution=resolution, seed=seed,
    )


class TestNewGame:
    def test_empty_start(self):
        state = new_game(cfg(n=3))
        assert state.fills == {0: 0, 1: 0, 2: 0}
        assert backlog(state) == 0

    def test_initial_fill_sets_backlog(self):
        state = new_game(cfg(), {0: 5})
        assert backlog(state) == 5
        assert state.pours[0] == 5  # counts as poured before step 1

    def test_dynamic_rejects_empty_cup(self):
        with pytest.raises(InvalidConfigError):
            new_game(cfg(variant=Variant.DYNAMIC_SINGLE), {0: 0})

    def test_dynamic_starts_with_only_filled_cups(self):
        state = new_game(cfg(variant=Variant.DYNAMIC_SINGLE), {2: 4})
        assert state.fills == {2: 4}
        assert state.next_cup_id == 3

    def test_unknown_cup_rejected(self):
        with pytest.raises(InvalidConfigError):
            new_game(cfg(n=2), {5: 4})


class TestBacklog:
    def test_max(self):
        state = new_game(cfg(n=3), {0: 3, 1: 7, 2: 5})
        assert backlog(state) == 7

    def test_no_cups(self):
        state = new_game(cfg(variant=Variant.DYNAMIC_SINGLE))
        assert backlog(state) == 0


class TestValidateFillerMove:
    def test_single_full_budget_ok(self):
        # Budget (1 - 1/4) * 16 = 12 units.
        state = new_game(cfg())
        assert validate_filler_move(state, FillerMove({0: 6, 1: 6})) is None

    def test_single_budget_exceeded(self):
        state = new_game(cfg())
        err = validate_filler_move(state, FillerMove({0: 8, 1: 6}))
        assert "budget" in err

    def test_multi_per_cup_cap(self):
        # delta = 1/8 at D=16: cap (1 - 1/8) * 16 = 14; 15/16 water is 15 units
        # but pours must be even, so use 16 > 14.
        state = new_game(cfg(variant=Variant.MULTI, p=2, dlt=Fraction(1, 8)))
        err = validate_filler_move(state, FillerMove({0: 16}))
        assert "cap" in err

    def test_universal_half_p_budget_ok(self):
        state = new_game(cfg(variant=Variant.UNIVERSAL, p=2))
        # p/2 = 1 water = 16 units.
        assert validate_filler_move(state, FillerMove({0: 8, 1: 8})) is None
        assert "budget" in validate_filler_move(state, FillerMove({0: 10, 1: 8}))

    def test_odd_unit_pour_rejected(self):
        state = new_game(cfg())
        assert "even" in validate_filler_move(state, FillerMove({0: 3}))

    def test_unknown_cup(self):
        state = new_game(cfg(n=2))
        assert "unknown cup" in validate_filler_move(state, FillerMove({9: 2}))

    def test_new_cups_only_in_dynamic(self):
        state = new_game(cfg())
        err = validate_filler_move(state, FillerMove({}, ((4, 2),)))
        assert "dynamic" in err

    def test_dynamic_new_cup_needs_positive_pour(self):
        state = new_game(cfg(variant=Variant.DYNAMIC_SINGLE))
        assert "positive" in validate_filler_move(state, FillerMove({}, ((0, 0),)))

    def test_dynamic_new_cup_id_not_reused(self):
        state = new_game(cfg(variant=Variant.DYNAMIC_SINGLE), {0: 2})
        assert "already used" in validate_filler_move(
            state, FillerMove({}, ((0, 2),))
        )


class TestValidateEmptierMove:
    def test_renormalized_p_plus_one_cups(self):
        c = cfg(variant=Variant.RENORMALIZED, p=2, dlt=Fraction(1, 4), n=4)
        # Removal cap (1 + 2/4) * 16 = 24 units each, three cups for p=2.
        state = new_game(c, {0: 24, 1: 24, 2: 24})
        move = EmptierMove({0: 24, 1: 24, 2: 24})
        assert validate_emptier_move(state, move) is None
        assert "too many cups" in validate_emptier_move(
            state, EmptierMove({0: 2, 1: 2, 2: 2, 3: 2})
        )

    def test_single_one_cup_only(self):
        state = new_game(cfg(), {0: 4, 1: 4})
        assert "too many cups" in validate_emptier_move(
            state, EmptierMove({0: 2, 1: 2})
        )

    def test_flushing_requires_entire_fill(self):
        state = new_game(cfg(variant=Variant.FLUSHING), {0: 10})
        assert "flushed entirely" in validate_emptier_move(
            state, EmptierMove({0: 4})
        )
        assert validate_emptier_move(state, EmptierMove({0: 10})) is None

    def test_removal_exceeding_fill(self):
        state = new_game(cfg(), {0: 4})
        assert "exceeds fill" in validate_emptier_move(state, EmptierMove({0: 6}))

    def test_removal_cap(self):
        state = new_game(cfg(), {0: 30})
        assert "cap" in validate_emptier_move(state, EmptierMove({0: 18}))


class TestStep:
    def test_fixed_point_on_empty_game(self):
        state = new_game(cfg())
        state, record = step(state, FillerMove(), GreedySingleEmptier())
        assert record.backlog_units == 0
        assert record.removals == {}
        assert state.total_units == 0

    def test_single_cup_half_pour_fully_drained(self):
        state = new_game(cfg(n=1))
        state, record = step(state, FillerMove({0: 8}), GreedySingleEmptier())
        assert record.removals == {0: 8}  # min(one unit, fill)
        assert state.fills[0] == 0

    def test_greedy_removes_at_most_one_unit(self):
        state = new_game(cfg(n=2, resolution=16), {0: 40})
        state, record = step(state, FillerMove({1: 2}), GreedySingleEmptier())
        assert record.removals == {0: 16}
        assert state.fills[0] == 24

    def test_dynamic_drops_emptied_cups(self):
        c = cfg(variant=Variant.DYNAMIC_SINGLE)
        state = new_game(c, {0: 8})
        state, record = step(state, FillerMove(), GreedySingleEmptier())
        assert 0 not in state.fills

    def test_dynamic_new_cup_joins(self):
        c = cfg(variant=Variant.DYNAMIC_SINGLE)
        state = new_game(c, {0: 4})
        state, record = step(
            state, FillerMove({}, ((1, 2),)), NullEmptier()
        )
        assert state.fills[1] == 2
        assert state.next_cup_id == 2

    def test_invalid_filler_move_raises(self):
        state = new_game(cfg())
        with pytest.raises(InvalidMoveError):
            step(state, FillerMove({0: 100}), NullEmptier())

    def test_bad_emptier_strategy_raises(self):
        class Overdrawing(NullEmptier):
            def move(self, state, filler_move):
                return EmptierMove({0: 999})

        state = new_game(cfg(), {0: 4})
        with pytest.raises(StrategyProtocolError):
            step(state, FillerMove(), Overdrawing())

    def test_step_counter_increments(self):
        state = new_game(cfg())
        state, r1 = step(state, FillerMove(), NullEmptier())
        state, r2 = step(state, FillerMove(), NullEmptier())
        assert (r1.step, r2.step) == (1, 2)


@given(
    data=st.data(),
    steps=st.integers(min_value=1, max_value=30),
)
def test_conservation_and_move_round_trip(data, steps):
    """Total water is conserved exactly and recorded moves re-validate."""
    c = cfg(variant=Variant.MULTI, n=5, p=2, dlt=Fraction(1, 4))
    state = new_game(c)
    emptier = GreedyMultiEmptier(c.p)
    emptier.bind(state)
    budget = 24  # (1 - 1/4) * 2 * 16
    cap = 12  # (1 - 1/4) * 16
    expected_total = 0
    for _ in range(steps):
        pours = {}
        remaining = budget
        for j in range(5):
            amount = data.draw(
                st.integers(min_value=0, max_value=min(cap, remaining) // 2)
            ) * 2
            if amount:
                pours[j] = amount
                remaining -= amount
        before = state.copy()
        move = FillerMove(dict(pours))
        state, record = step(state, move, emptier)
        expected_total += sum(record.pours.values()) - sum(record.removals.values())
        assert state.total_units == expected_total
        assert state.total_units == sum(state.fills.values())
        # Round-trip: the recorded moves re-validate against the pre-step state.
        assert validate_filler_move(before, FillerMove(dict(record.pours))) is None
        before_post = before
        for j, a in record.pours.items():
            before_post.fills[j] += a
        assert validate_emptier_move(
            before_post, EmptierMove(dict(record.removals))
        ) is None
        assert record.backlog_units == (max(state.fills.values()) if state.fills else 0)
        d = c.resolution
        assert record.integer_fill == sum(f // d for f in state.fills.values())


class TestTraceSerialization:
    def test_round_trip(self):
        c = cfg(n=2)
        state = new_game(c, {0: 4})
        emptier = GreedySingleEmptier()
        records = []
        for _ in range(5):
            state, record = step(state, FillerMove({1: 4}), emptier)
            records.append(record)
        buf = io.StringIO()
        write_trace(buf, c, records, {0: 4})
        buf.seek(0)
        header, loaded = read_trace(buf)
        assert header["resolution"] == c.resolution
        assert header["initial_fills"] == {"0": 4}
        assert loaded == records

    def test_empty_trace_rejected(self):
        with pytest.raises(InvalidConfigError):
            read_trace(io.StringIO(""))

    def test_missing_resolution_rejected(self):
        with pytest.raises(InvalidConfigError):
            read_trace(io.StringIO('{"n": 3}\n'))
