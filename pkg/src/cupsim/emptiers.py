"""Emptier strategies behind one interface.

A strategy observes the post-pour state (plus its own private state and RNG
stream) and emits an EmptierMove.  Strategies never see future filler moves.
``bind`` is called once when the game starts so strategies can initialize
per-cup state (random offsets, counters) from the initial fills.
"""

from __future__ import annotations

import heapq
from fractions import Fraction
from typing import Optional

from .core import (
    GameConfig,
    InvalidConfigError,
    InvariantViolationError,
    RngStream,
    Variant,
    WaterAmount,
    uniform_threshold,
)
from .games import EmptierMove, FillerMove, GameState
from .thresholds import ThresholdState, surplus_of_step


class Emptier:
    """Base strategy interface."""

    kind = "null"
    deterministic = True

    def bind(self, state: GameState) -> None:
        """Called once at game start, before the first step."""

    def move(self, state: GameState, filler_move: FillerMove) -> EmptierMove:
        raise NotImplementedError

    def step_metrics(self) -> tuple[int, int, WaterAmount]:
        """(crossings, surplus thresholds, counter sum) for the last move."""
        return (0, 0, 0)


class NullEmptier(Emptier):
    """Removes nothing; useful as a worst-case baseline."""

    kind = "null"

    def move(self, state: GameState, filler_move: FillerMove) -> EmptierMove:
        return EmptierMove()


def _fullest_cup(fills: dict[int, WaterAmount]) -> Optional[int]:
    """Lowest-id cup holding the maximum fill; None when all cups are empty."""
    if not fills:
        return None
    best = max(fills.values())
    if best == 0:
        return None
    # Dict iteration is insertion order, which is id order for our games, so
    # the first hit is the lowest id among ties.
    for j, f in fills.items():
        if f == best:
            return j
    raise AssertionError("unreachable")


class GreedySingleEmptier(Emptier):
    """Single-processor greedy: remove min(1, fill) from the fullest cup."""

    kind = "greedy-single"

    def move(self, state: GameState, filler_move: FillerMove) -> EmptierMove:
        j = _fullest_cup(state.fills)
        if j is None:
            return EmptierMove()
        return EmptierMove({j: min(state.config.resolution, state.fills[j])})


class GreedyMultiEmptier(Emptier):
    """Remove from the p fullest nonempty cups.

    In the universal emptying game removals must flush the whole cup; in the
    plain multi-processor games each removal is min(1, fill).
    """

    kind = "greedy-multi"

    def __init__(self, p: int):
        self.p = p
        self._flush = False

    def bind(self, state: GameState) -> None:
        self._flush = state.config.variant is Variant.UNIVERSAL

    def move(self, state: GameState, filler_move: FillerMove) -> EmptierMove:
        fills = state.fills
        if self.p == 1:
            j = _fullest_cup(fills)
            if j is None:
                return EmptierMove()
            chosen = [j]
        else:
            nonempty = [(f, -j) for j, f in fills.items() if f > 0]
            chosen = [-nj for _, nj in heapq.nlargest(self.p, nonempty)]
        cap = state.config.resolution
        if self._flush:
            return EmptierMove({j: fills[j] for j in chosen})
        return EmptierMove({j: min(cap, fills[j]) for j in chosen})


class SmoothedGreedySingleEmptier(Emptier):
    """Greedy on virtual fills f_j + r_j with one-time random offsets r_j.

    The offsets are simulated, never physically poured.  When the maximum
    virtual fill is below one unit the emptier idles; otherwise it removes
    exactly one virtual unit from the virtually fullest cup, and physically
    removes min(1, physical fill) from that cup.
    """

    kind = "smoothed-greedy"
    deterministic = False

    def __init__(self, seed: int):
        self.seed = seed
        self.offsets: dict[int, WaterAmount] = {}
        self.virtual: dict[int, WaterAmount] = {}
        self.virtual_integer_fill = 0
        self._hot: set[int] = set()  # cups with virtual fill >= 1
        self._d = 0

    def bind(self, state: GameState) -> None:
        d = state.config.resolution
        self._d = d
        stream = RngStream(self.seed, "offset")
        for j, fill in state.fills.items():
            r = uniform_threshold(stream.derive(j), d)
            self.offsets[j] = r
            v = r + fill
            self.virtual[j] = v
            self.virtual_integer_fill += v // d
            if v >= d:
                self._hot.add(j)

    def move(self, state: GameState, filler_move: FillerMove) -> EmptierMove:
        d = self._d
        virtual = self.virtual
        hot = self._hot
        for j, amount in filler_move.pours.items():
            v_old = virtual[j]
            v_new = v_old + amount
            virtual[j] = v_new
            self.virtual_integer_fill += v_new // d - v_old // d
            if v_new >= d:
                hot.add(j)
        if not hot:
            return EmptierMove()
        best = None
        best_v = -1
        for j in hot:
            v = virtual[j]
            if v > best_v or (v == best_v and j < best):
                best, best_v = j, v
        virtual[best] = best_v - d
        self.virtual_integer_fill -= 1
        if best_v - d < d:
            hot.discard(best)
        return EmptierMove({best: min(d, state.fills[best])})


class ThresholdCounterEmptier(Emptier):
    """Randomized multi-processor emptier driven by threshold counters.

    Selects up to p+1 cups per step: first every cup whose counter is at
    least 1 + delta, then cups with a positive counter, never zero-counter
    cups.  From each selected cup it removes min(1 + 2*delta, w_j) water and
    decrements the counter by the same amount.  With tie_rule="fullest" the
    priority classes are ordered by physical fill, realizing the
    multi-processor smoothed greedy strategy.
    """

    kind = "threshold-counter"
    deterministic = False

    def __init__(
        self,
        p: int,
        delta: Fraction,
        seed: int,
        tie_rule: str = "arbitrary",
        counter_scale: str = "one-plus-delta",
    ):
        if tie_rule not in ("arbitrary", "fullest"):
            raise InvalidConfigError(f"unknown tie rule {tie_rule!r}")
        self.p = p
        self.delta = Fraction(delta)
        self.seed = seed
        self.tie_rule = tie_rule
        self.counter_scale = counter_scale
        self.thresholds: ThresholdState | None = None
        self._last_crossings = 0

    def bind(self, state: GameState) -> None:
        if state.config.variant is not Variant.RENORMALIZED:
            raise InvalidConfigError(
                "the threshold-counter emptier requires the renormalized variant"
            )
        self.thresholds = ThresholdState(
            self.seed, self.delta, state.config.resolution, self.counter_scale
        )
        initial = {j: f for j, f in state.fills.items() if f > 0}
        if initial:
            self.thresholds.init_counters_from_initial_fill(initial)

    def move(self, state: GameState, filler_move: FillerMove) -> EmptierMove:
        ts = self.thresholds
        crossings = ts.apply_pours(filler_move.pours)
        self._last_crossings = crossings

        limit = self.p + 1
        if self.tie_rule == "fullest":
            fills = state.fills
            order = lambda j: (-fills[j], j)
            selected = sorted(ts.high, key=order)[:limit]
            if len(selected) < limit:
                selected += sorted(ts.low, key=order)[: limit - len(selected)]
        else:
            selected = sorted(ts.high)[:limit]
            if len(selected) < limit:
                selected += sorted(ts.low)[: limit - len(selected)]
        if not selected:
            return EmptierMove()

        cap = ts.cap_units
        counters = ts.counters
        fills = state.fills
        removals = {}
        for j in selected:
            t = counters[j]
            if t > cap:
                t = cap
            if t > fills[j]:
                raise InvariantViolationError(
                    "counter-fill-sandwich",
                    state.step_index,
                    f"counter of cup {j} exceeds its fill",
                )
            removals[j] = t
            ts.decrement_counter(j, t)
        return EmptierMove(removals)

    def step_metrics(self) -> tuple[int, int, WaterAmount]:
        return (
            self._last_crossings,
            surplus_of_step(self._last_crossings, self.p),
            self.thresholds.counter_sum,
        )


class FlushGreedyEmptier(Emptier):
    """Cup-flushing emptier: flush the fullest cup entirely.

    With positive slack, flushes the lowest-id cup whose fill is within the
    slack of the maximum (the relaxed flushing emptier).
    """

    kind = "flush-greedy"

    def __init__(self, slack_units: WaterAmount = 0):
        if slack_units < 0:
            raise InvalidConfigError("slack must be non-negative")
        self.slack_units = slack_units

    def move(self, state: GameState, filler_move: FillerMove) -> EmptierMove:
        fills = state.fills
        if not fills:
            return EmptierMove()
        best = max(fills.values())
        if best == 0:
            return EmptierMove()
        if self.slack_units == 0:
            j = _fullest_cup(fills)
            return EmptierMove({j: fills[j]})
        floor = best - self.slack_units
        for j, f in fills.items():
            if f >= floor and f > 0:
                return EmptierMove({j: f})
        raise AssertionError("unreachable")


EMPTIER_KINDS = (
    "null",
    "greedy-single",
    "greedy-multi",
    "smoothed-greedy",
    "threshold-counter",
    "smoothed-greedy-multi",
    "flush-greedy",
    "flush-relaxed",
)


def make_emptier(kind: str, cfg: GameConfig, params: dict | None = None) -> Emptier:
    """Construct an emptier by name; parameters come from the experiment spec."""
    params = dict(params or {})
    if kind == "null":
        return NullEmptier()
    if kind == "greedy-single":
        return GreedySingleEmptier()
    if kind == "greedy-multi":
        return GreedyMultiEmptier(cfg.p)
    if kind == "smoothed-greedy":
        return SmoothedGreedySingleEmptier(params.pop("seed", cfg.seed))
    if kind in ("threshold-counter", "smoothed-greedy-multi"):
        tie_rule = params.pop(
            "tie_rule", "fullest" if kind == "smoothed-greedy-multi" else "arbitrary"
        )
        return ThresholdCounterEmptier(
            cfg.p,
            Fraction(cfg.delta),
            params.pop("seed", cfg.seed),
            tie_rule=tie_rule,
            counter_scale=params.pop("counter_scale", "one-plus-delta"),
        )
    if kind == "flush-greedy":
        return FlushGreedyEmptier(0)
    if kind == "flush-relaxed":
        slack = params.pop("slack_units", None)
        if slack is None:
            slack = cfg.units(Fraction(params.pop("slack", cfg.flushing_slack)))
        return FlushGreedyEmptier(slack)
    raise InvalidConfigError(f"unknown emptier kind {kind!r}")
