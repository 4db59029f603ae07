"""Filler strategies.

Fillers come in two information models: adaptive fillers observe the full
game state including the emptier's past actions (via ``observe``), while
oblivious fillers are pure functions of their own RNG stream, step index, and
prior moves.  The harness enforces each move with validate_filler_move.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

from .core import (
    DYNAMIC_VARIANTS,
    GameConfig,
    InvalidConfigError,
    NonRepresentableError,
    RngStream,
    SetupError,
    Variant,
    WaterAmount,
)
from .games import FillerMove, GameState, StepRecord, new_game, step
from .games import _budget_units, _per_cup_cap_units


def equal_split_divisors(n: int, p: int) -> list[int]:
    """Resolution divisors that make the harmonic fillers' equal splits exact.

    Requiring D divisible by 4*(n - i*p) for every pour step guarantees each
    per-cup share is an even, exact unit count.
    """
    if n % p != 0:
        raise InvalidConfigError("harmonic fillers require n to be a multiple of p")
    return [4 * (n - i * p) for i in range(n // p - 1)]


class Filler:
    """Base filler interface."""

    kind = "null"
    oblivious = True

    def bind(self, state: GameState) -> None:
        """Called once at game start."""

    def move(self, state: GameState) -> FillerMove:
        raise NotImplementedError

    def observe(self, record: StepRecord) -> None:
        """Post-step feedback; only adaptive fillers may use it."""


class UniformRandomFiller(Filler):
    """Stress generator: spreads the full per-step budget at random.

    Each step picks a random subset of cups and splits the (even-unit) budget
    multinomially over them, clamping to the per-cup cap.  In dynamic
    variants it can also add fresh cups at a configured rate.
    """

    kind = "uniform-random"

    def __init__(
        self,
        stream: RngStream,
        spread: int | None = None,
        new_cups_per_step: int = 0,
        new_cup_units: int = 2,
    ):
        self._stream = stream
        self._spread = spread
        self.new_cups_per_step = new_cups_per_step
        self.new_cup_units = new_cup_units
        if new_cup_units <= 0 or new_cup_units % 2 != 0:
            raise InvalidConfigError("new-cup pour must be a positive even unit count")

    def bind(self, state: GameState) -> None:
        cfg = state.config
        self._rng = self._stream.generator()
        budget = _budget_units(cfg)
        self._budget_even = budget - (budget % 2)
        cap = _per_cup_cap_units(cfg)
        cap = budget if cap is None else min(cap, budget)
        self._cap_even = cap - (cap % 2)
        if self._cap_even <= 0:
            raise InvalidConfigError("per-cup cap below one even unit")
        if self._spread is None:
            self._spread = 2 * max(1, -(-self._budget_even // self._cap_even))
        self._dynamic = cfg.variant in DYNAMIC_VARIANTS
        self._ids = None if self._dynamic else list(state.fills)

    def move(self, state: GameState) -> FillerMove:
        rng = self._rng
        budget = self._budget_even
        new_cups: tuple[tuple[int, int], ...] = ()
        if self._dynamic:
            ids = list(state.fills)
            room = state.config.n - len(ids)
            count = min(self.new_cups_per_step, room, budget // self.new_cup_units)
            if count > 0:
                first = state.next_cup_id
                new_cups = tuple(
                    (first + i, self.new_cup_units) for i in range(count)
                )
                budget -= count * self.new_cup_units
        else:
            ids = self._ids
        if not ids or budget < 2:
            return FillerMove({}, new_cups)
        k = min(len(ids), self._spread)
        if k < len(ids):
            picked = rng.choice(len(ids), size=k, replace=False)
        else:
            picked = range(len(ids))
        counts = rng.multinomial(budget // 2, [1.0 / k] * k)
        cap = self._cap_even
        pours = {}
        for i, c in zip(picked, counts):
            if c:
                amount = 2 * int(c)
                pours[ids[i]] = amount if amount <= cap else cap
        return FillerMove(pours, new_cups)


class SingleTargetFiller(Filler):
    """Pours the largest legal amount into one fixed cup every step."""

    kind = "single-target"

    def __init__(self, target: int = 0, amount_units: int | None = None):
        self.target = target
        self._amount = amount_units

    def bind(self, state: GameState) -> None:
        cfg = state.config
        budget = _budget_units(cfg)
        cap = _per_cup_cap_units(cfg)
        amount = budget if cap is None else min(budget, cap)
        amount -= amount % 2
        if self._amount is not None:
            if self._amount % 2 != 0 or not (0 < self._amount <= amount):
                raise InvalidConfigError("target pour must be a legal even unit count")
            amount = self._amount
        self._amount = amount

    def move(self, state: GameState) -> FillerMove:
        if self.target not in state.fills or self._amount <= 0:
            return FillerMove()
        return FillerMove({self.target: self._amount})


class RoundRobinFiller(Filler):
    """Deterministic adversary: saturates cups in id order, cycling.

    Each step it walks the cup list from a persistent cursor, pouring the
    per-cup cap until the budget is spent.  In dynamic variants it can also
    open one new cup every ``new_cup_every`` steps.
    """

    kind = "round-robin"

    def __init__(self, new_cup_every: int = 0, new_cup_units: int = 2):
        self._cursor = 0
        self.new_cup_every = new_cup_every
        self.new_cup_units = new_cup_units

    def bind(self, state: GameState) -> None:
        cfg = state.config
        budget = _budget_units(cfg)
        self._budget_even = budget - (budget % 2)
        cap = _per_cup_cap_units(cfg)
        cap = budget if cap is None else min(cap, budget)
        self._cap_even = cap - (cap % 2)
        self._dynamic = cfg.variant in DYNAMIC_VARIANTS

    def move(self, state: GameState) -> FillerMove:
        budget = self._budget_even
        new_cups: tuple[tuple[int, int], ...] = ()
        if (
            self._dynamic
            and self.new_cup_every
            and state.step_index % self.new_cup_every == 0
            and len(state.fills) < state.config.n
            and budget >= self.new_cup_units
        ):
            new_cups = ((state.next_cup_id, self.new_cup_units),)
            budget -= self.new_cup_units
        ids = sorted(state.fills)
        pours = {}
        if ids:
            start = self._cursor % len(ids)
            i = start
            while budget >= 2:
                j = ids[i]
                amount = min(self._cap_even, budget)
                pours[j] = amount
                budget -= amount
                i = (i + 1) % len(ids)
                if i == start:
                    break
            self._cursor = i
        return FillerMove(pours, new_cups)


class AdaptiveHarmonicFiller(Filler):
    """Universal-game adversary: equal splits over never-emptied cups.

    Each step pours p/2 water split equally over the cups that have never had
    water removed, shrinking the set as the emptier flushes, and stops after
    step n/p - 1.  Whatever the emptier does, every surviving cup then holds
    the harmonic sum of the per-step shares.
    """

    kind = "adaptive-harmonic"
    oblivious = False

    def __init__(self, p: int):
        self.p = p

    def bind(self, state: GameState) -> None:
        cfg = state.config
        if cfg.variant is not Variant.UNIVERSAL:
            raise InvalidConfigError("harmonic filler requires the universal game")
        if cfg.n % self.p != 0:
            raise InvalidConfigError("n must be a multiple of p")
        half_budget = self.p * cfg.resolution // 2
        for size in (cfg.n - i * self.p for i in range(cfg.n // self.p - 1)):
            share, rem = divmod(half_budget, size)
            if rem or share % 2:
                raise NonRepresentableError(
                    f"p/2 split over {size} cups is not an even unit count; "
                    f"choose D divisible by {4 * size}"
                )
        self._half_budget = half_budget
        self._steps_total = cfg.n // self.p - 1
        self.untouched: set[int] = set(state.fills)

    def move(self, state: GameState) -> FillerMove:
        if state.step_index >= self._steps_total or not self.untouched:
            return FillerMove()
        share = self._half_budget // len(self.untouched)
        return FillerMove({j: share for j in self.untouched})

    def observe(self, record: StepRecord) -> None:
        for j, amount in record.removals.items():
            if amount > 0:
                self.untouched.discard(j)


class ObliviousGuessingFiller(Filler):
    """Oblivious universal-game adversary: guess the emptier's flushes.

    Runs the harmonic construction on cups 0..k-1, but instead of observing
    removals it guesses a uniformly random p-subset of its current candidate
    set each step and discards it.  When every guess matches the emptier's
    actual move, the run is identical to the adaptive construction.
    """

    kind = "oblivious-guessing"

    def __init__(self, k: int, p: int, stream: RngStream):
        self.k = k
        self.p = p
        self._stream = stream
        self.guesses: list[frozenset[int]] = []

    def bind(self, state: GameState) -> None:
        cfg = state.config
        if cfg.variant is not Variant.UNIVERSAL:
            raise InvalidConfigError("guessing filler requires the universal game")
        if not (2 * self.p <= self.k <= cfg.n):
            raise InvalidConfigError("k must satisfy 2p <= k <= n")
        if self.k % self.p != 0:
            raise InvalidConfigError("k must be a multiple of p")
        half_budget = self.p * cfg.resolution // 2
        for size in (self.k - i * self.p for i in range(self.k // self.p - 1)):
            share, rem = divmod(half_budget, size)
            if rem or share % 2:
                raise NonRepresentableError(
                    f"p/2 split over {size} cups is not an even unit count; "
                    f"choose D divisible by {4 * size}"
                )
        self._half_budget = half_budget
        self._steps_total = self.k // self.p - 1
        self._rng = self._stream.generator()
        self.candidates: list[int] = sorted(set(state.fills))[: self.k]
        if len(self.candidates) < self.k:
            raise InvalidConfigError("not enough cups for k candidates")

    def move(self, state: GameState) -> FillerMove:
        if state.step_index >= self._steps_total or not self.candidates:
            return FillerMove()
        share = self._half_budget // len(self.candidates)
        pours = {j: share for j in self.candidates}
        # Guess which p cups the emptier will flush this step, then assume
        # the guess was right.  No observation ever happens.
        picked = self._rng.choice(len(self.candidates), size=self.p, replace=False)
        guess = frozenset(self.candidates[i] for i in picked)
        self.guesses.append(guess)
        self.candidates = [j for j in self.candidates if j not in guess]
        return FillerMove(pours)


class TraceFiller(Filler):
    """Replays the pours (and new cups) of a recorded trace."""

    kind = "trace"

    def __init__(self, moves: Sequence[FillerMove]):
        self._moves = list(moves)

    @classmethod
    def from_records(cls, records: Sequence[StepRecord]) -> "TraceFiller":
        moves = []
        for rec in records:
            pours = {
                j: a for j, a in rec.pours.items() if (j, a) not in set(rec.new_cups)
            }
            moves.append(FillerMove(pours, rec.new_cups))
        return cls(moves)

    def move(self, state: GameState) -> FillerMove:
        i = state.step_index
        if i >= len(self._moves):
            return FillerMove()
        mv = self._moves[i]
        return FillerMove(dict(mv.pours), mv.new_cups)


class SimulatedAdaptiveFiller(Filler):
    """Oblivious filler that pre-simulates the harmonic adversary offline.

    Against a deterministic emptier the adaptive construction's moves are
    predictable, so they can be computed before the game starts and replayed
    blindly.  Construction fails for randomized emptiers.
    """

    kind = "simulated-adaptive"

    def __init__(self, schedule: Sequence[dict[int, WaterAmount]]):
        self.schedule = [dict(pours) for pours in schedule]

    @classmethod
    def against(cls, cfg: GameConfig, emptier) -> "SimulatedAdaptiveFiller":
        """Precompute the schedule by simulating vs the given emptier."""
        if not emptier.deterministic:
            raise SetupError(
                "simulated-adaptive requires a deterministic target emptier"
            )
        if cfg.variant is not Variant.UNIVERSAL:
            raise InvalidConfigError("simulated-adaptive requires the universal game")
        state = new_game(cfg)
        filler = AdaptiveHarmonicFiller(cfg.p)
        filler.bind(state)
        emptier.bind(state)
        schedule = []
        for _ in range(cfg.n // cfg.p - 1):
            mv = filler.move(state)
            schedule.append(dict(mv.pours))
            state, record = step(state, mv, emptier)
            filler.observe(record)
        return cls(schedule)

    def move(self, state: GameState) -> FillerMove:
        i = state.step_index
        if i >= len(self.schedule):
            return FillerMove()
        return FillerMove(dict(self.schedule[i]))


FILLER_KINDS = (
    "uniform-random",
    "single-target",
    "round-robin",
    "adaptive-harmonic",
    "oblivious-guessing",
    "trace",
    "simulated-adaptive",
)


def make_filler(
    kind: str,
    cfg: GameConfig,
    params: dict | None = None,
    stream: RngStream | None = None,
) -> Filler:
    """Construct a filler by name; randomized fillers draw from ``stream``."""
    params = dict(params or {})
    if stream is None:
        stream = RngStream(cfg.seed, "filler")
    if kind == "uniform-random":
        return UniformRandomFiller(
            stream,
            spread=params.pop("spread", None),
            new_cups_per_step=params.pop("new_cups_per_step", 0),
            new_cup_units=params.pop("new_cup_units", 2),
        )
    if kind == "single-target":
        return SingleTargetFiller(
            target=params.pop("target", 0),
            amount_units=params.pop("amount_units", None),
        )
    if kind == "round-robin":
        return RoundRobinFiller(
            new_cup_every=params.pop("new_cup_every", 0),
            new_cup_units=params.pop("new_cup_units", 2),
        )
    if kind == "adaptive-harmonic":
        return AdaptiveHarmonicFiller(cfg.p)
    if kind == "oblivious-guessing":
        return ObliviousGuessingFiller(params.pop("k", cfg.n), cfg.p, stream)
    if kind == "trace":
        from .games import read_trace

        path = params.pop("path")
        with open(path) as fp:
            _, records = read_trace(fp)
        return TraceFiller.from_records(records)
    if kind == "simulated-adaptive":
        from .emptiers import make_emptier

        target = params.pop("target_emptier", "greedy-multi")
        target_params = params.pop("target_params", {})
        return SimulatedAdaptiveFiller.against(
            cfg, make_emptier(target, cfg, target_params)
        )
    raise InvalidConfigError(f"unknown filler kind {kind!r}")
