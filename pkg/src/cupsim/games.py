"""Rule engines for every game variant.

The engine validates filler and emptier moves against the variant's caps,
applies them, maintains incremental totals (total water, integer fill), and
emits one StepRecord per step.  For throughput, ``step`` mutates the passed
GameState in place; callers needing a snapshot use ``GameState.copy()``.
Replay determinism is unaffected: a step is a pure function of (state, filler
move, strategy state, strategy stream).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Iterable, Iterator, Optional

from .core import (
    DYNAMIC_VARIANTS,
    GameConfig,
    InvalidConfigError,
    InvalidMoveError,
    StrategyProtocolError,
    Variant,
    WaterAmount,
    require_valid_config,
)

CupId = int


@dataclass
class FillerMove:
    """One filler action: pours into existing cups plus (dynamic) new cups."""

    pours: dict[CupId, WaterAmount] = field(default_factory=dict)
    new_cups: tuple[tuple[CupId, WaterAmount], ...] = ()

    def total_units(self) -> int:
        return sum(self.pours.values()) + sum(a for _, a in self.new_cups)


@dataclass
class EmptierMove:
    """One emptier action: removals from distinct cups."""

    removals: dict[CupId, WaterAmount] = field(default_factory=dict)


@dataclass
class StepRecord:
    """Everything recorded about one completed step."""

    step: int
    pours: dict[CupId, WaterAmount]
    removals: dict[CupId, WaterAmount]
    backlog_units: WaterAmount
    integer_fill: int
    surplus_T: int
    counter_sum_units: WaterAmount
    phi: Optional[Fraction] = None
    new_cups: tuple[tuple[CupId, WaterAmount], ...] = ()
    crossings: int = 0


class GameState:
    """The authoritative game position.

    ``fills`` and ``pours`` map live cup ids to unit counts; ``pours`` is the
    cumulative amount ever poured into the cup, counting any initial fill as
    poured before step 1.  ``integer_fill_units`` caches sum(f // D) and
    ``total_units`` caches sum(fills) for cheap conservation checks.
    """

    __slots__ = (
        "config",
        "step_index",
        "fills",
        "pours",
        "next_cup_id",
        "total_units",
        "integer_fill",
    )

    def __init__(
        self,
        config: GameConfig,
        fills: dict[CupId, WaterAmount],
        pours: dict[CupId, WaterAmount],
        step_index: int = 0,
        next_cup_id: int | None = None,
    ):
        self.config = config
        self.step_index = step_index
        self.fills = fills
        self.pours = pours
        self.next_cup_id = (
            next_cup_id if next_cup_id is not None else (max(fills) + 1 if fills else 0)
        )
        self.total_units = sum(fills.values())
        d = config.resolution
        self.integer_fill = sum(f // d for f in fills.values())

    def copy(self) -> "GameState":
        return GameState(
            self.config,
            dict(self.fills),
            dict(self.pours),
            self.step_index,
            self.next_cup_id,
        )


def new_game(
    cfg: GameConfig, initial_fills: dict[CupId, WaterAmount] | None = None
) -> GameState:
    """Create a game at step 0.

    ``initial_fills`` realizes bad starting states (recovery experiments);
    the initial water counts as cumulative pour for threshold purposes.
    """
    require_valid_config(cfg)
    fills: dict[CupId, WaterAmount] = {j: 0 for j in range(cfg.n)}
    if initial_fills:
        for j, units in initial_fills.items():
            if units < 0:
                raise InvalidConfigError(f"initial fill of cup {j} is negative")
            if j not in fills and cfg.variant not in DYNAMIC_VARIANTS:
                raise InvalidConfigError(f"initial fill names unknown cup {j}")
            fills[j] = units
    if cfg.variant in DYNAMIC_VARIANTS:
        # No empty cups may exist in dynamic variants; the game starts with
        # exactly the positively-filled cups (plus cup 0 seeds nothing).
        if initial_fills and any(u == 0 for u in initial_fills.values()):
            raise InvalidConfigError("dynamic variants cannot start with empty cups")
        fills = dict(initial_fills) if initial_fills else {}
        next_id = (max(fills) + 1) if fills else 0
        return GameState(cfg, fills, dict(fills), 0, next_id)
    return GameState(cfg, fills, dict(fills), 0, cfg.n)


def backlog(state: GameState) -> WaterAmount:
    """Max fill over all cups, 0 when no cups exist."""
    if not state.fills:
        return 0
    return max(state.fills.values())


def _budget_units(cfg: GameConfig) -> int:
    """Per-step total pour budget in units, by variant."""
    d = cfg.resolution
    eps = Fraction(cfg.epsilon)
    v = cfg.variant
    if v in (Variant.SINGLE, Variant.DYNAMIC_SINGLE):
        return int((1 - eps) * d)
    if v in (Variant.MULTI, Variant.DYNAMIC_MULTI, Variant.RENORMALIZED):
        return int((1 - eps) * cfg.p * d)
    if v is Variant.FLUSHING:
        return d
    if v is Variant.UNIVERSAL:
        return cfg.p * d // 2
    raise InvalidConfigError(f"unknown variant {v}")


def _per_cup_cap_units(cfg: GameConfig) -> int | None:
    """Per-cup pour cap in units, or None when only the total budget binds."""
    d = cfg.resolution
    v = cfg.variant
    if v in (Variant.MULTI, Variant.DYNAMIC_MULTI):
        return int((1 - Fraction(cfg.delta)) * d)
    if v is Variant.RENORMALIZED:
        return d
    return None


def validate_filler_move(state: GameState, move: FillerMove) -> str | None:
    """Return None when the move is legal, else the broken constraint."""
    cfg = state.config
    fills = state.fills
    dynamic = cfg.variant in DYNAMIC_VARIANTS
    total = 0
    cap = _per_cup_cap_units(cfg)
    for j, amount in move.pours.items():
        if j not in fills:
            return f"pour into unknown cup {j}"
        if amount <= 0:
            return f"non-positive pour into cup {j}"
        if amount % 2 != 0:
            return f"pour into cup {j} is not an even unit count"
        if cap is not None and amount > cap:
            return f"per-cup cap exceeded on cup {j}"
        total += amount
    if move.new_cups:
        if not dynamic:
            return "new cups are only allowed in dynamic variants"
        seen = set(move.pours)
        next_id = state.next_cup_id
        for j, amount in move.new_cups:
            if j < next_id:
                return f"new cup id {j} was already used"
            if j in seen:
                return f"duplicate cup id {j} in move"
            seen.add(j)
            if amount <= 0:
                return f"new cup {j} must receive a positive pour"
            if amount % 2 != 0:
                return f"pour into new cup {j} is not an even unit count"
            if cap is not None and amount > cap:
                return f"per-cup cap exceeded on new cup {j}"
            total += amount
    if total > _budget_units(cfg):
        return "total pour exceeds the variant budget"
    return None


def _removal_cap_units(cfg: GameConfig) -> int:
    d = cfg.resolution
    if cfg.variant is Variant.RENORMALIZED:
        return int((1 + 2 * Fraction(cfg.delta)) * d)
    return d


def _max_removal_cups(cfg: GameConfig) -> int:
    v = cfg.variant
    if v in (Variant.SINGLE, Variant.DYNAMIC_SINGLE, Variant.FLUSHING):
        return 1
    if v is Variant.RENORMALIZED:
        return cfg.p + 1
    return cfg.p


def validate_emptier_move(state: GameState, move: EmptierMove) -> str | None:
    """Return None when the move is legal, else the broken constraint."""
    cfg = state.config
    fills = state.fills
    if len(move.removals) > _max_removal_cups(cfg):
        return "too many cups selected"
    flushing = cfg.variant in (Variant.FLUSHING, Variant.UNIVERSAL)
    cap = _removal_cap_units(cfg)
    for j, amount in move.removals.items():
        fill = fills.get(j)
        if fill is None:
            return f"removal from unknown cup {j}"
        if amount <= 0:
            return f"non-positive removal from cup {j}"
        if amount > fill:
            return f"removal exceeds fill of cup {j}"
        if flushing:
            if amount != fill:
                return f"cup {j} must be flushed entirely"
        elif amount > cap:
            return f"removal cap exceeded on cup {j}"
    return None


def step(state: GameState, filler_move: FillerMove, emptier) -> tuple[GameState, StepRecord]:
    """Advance the game by one step.

    Applies the filler move, queries the emptier on the post-pour state,
    validates and applies its move, drops emptied cups in dynamic variants,
    and emits a StepRecord.  ``state`` is mutated and also returned.
    """
    cfg = state.config
    err = validate_filler_move(state, filler_move)
    if err is not None:
        raise InvalidMoveError(f"step {state.step_index + 1}: {err}")

    d = cfg.resolution
    fills = state.fills
    pours = state.pours
    integer_fill = state.integer_fill
    total = state.total_units

    for j, amount in filler_move.new_cups:
        fills[j] = 0
        pours[j] = 0
        if j >= state.next_cup_id:
            state.next_cup_id = j + 1
        filler_move.pours[j] = amount

    for j, amount in filler_move.pours.items():
        f_old = fills[j]
        f_new = f_old + amount
        fills[j] = f_new
        pours[j] += amount
        total += amount
        integer_fill += f_new // d - f_old // d

    state.total_units = total
    state.integer_fill = integer_fill

    emptier_move = emptier.move(state, filler_move)
    err = validate_emptier_move(state, emptier_move)
    if err is not None:
        raise StrategyProtocolError(f"step {state.step_index + 1}: {err}")

    removals = emptier_move.removals
    for j, amount in removals.items():
        f_old = fills[j]
        f_new = f_old - amount
        fills[j] = f_new
        total -= amount
        integer_fill += f_new // d - f_old // d

    if cfg.variant in DYNAMIC_VARIANTS:
        for j in [j for j, f in fills.items() if f == 0]:
            del fills[j]
            del pours[j]

    state.total_units = total
    state.integer_fill = integer_fill
    state.step_index += 1

    crossings, surplus, counter_sum = emptier.step_metrics()
    record = StepRecord(
        step=state.step_index,
        pours=dict(filler_move.pours),
        removals=dict(removals),
        backlog_units=max(fills.values()) if fills else 0,
        integer_fill=integer_fill,
        surplus_T=surplus,
        counter_sum_units=counter_sum,
        new_cups=filler_move.new_cups,
        crossings=crossings,
    )
    return state, record


# ---------------------------------------------------------------------------
# Trace serialization: JSONL, one object per StepRecord, preceded by a header
# object carrying the resolution denominator so unit counts are interpretable.
# ---------------------------------------------------------------------------


def trace_header(
    cfg: GameConfig, initial_fills: dict[CupId, WaterAmount] | None = None
) -> dict:
    header = {
        "resolution": cfg.resolution,
        "variant": cfg.variant.value,
        "n": cfg.n,
        "p": cfg.p,
        "epsilon": str(Fraction(cfg.epsilon)),
        "delta": str(Fraction(cfg.delta)),
        "seed": cfg.seed,
    }
    if initial_fills:
        header["initial_fills"] = {str(j): a for j, a in initial_fills.items()}
    return header


def record_to_json(record: StepRecord) -> dict:
    obj = {
        "step": record.step,
        "pours": {str(j): a for j, a in record.pours.items()},
        "removals": {str(j): a for j, a in record.removals.items()},
        "backlog_units": record.backlog_units,
        "integer_fill": record.integer_fill,
        "surplus_T": record.surplus_T,
        "counter_sum_units": record.counter_sum_units,
    }
    if record.phi is not None:
        obj["phi"] = f"{float(record.phi):.17g}"
    if record.new_cups:
        obj["new_cups"] = [[j, a] for j, a in record.new_cups]
    return obj


def record_from_json(obj: dict) -> StepRecord:
    return StepRecord(
        step=obj["step"],
        pours={int(j): a for j, a in obj["pours"].items()},
        removals={int(j): a for j, a in obj["removals"].items()},
        backlog_units=obj["backlog_units"],
        integer_fill=obj["integer_fill"],
        surplus_T=obj["surplus_T"],
        counter_sum_units=obj["counter_sum_units"],
        phi=Fraction(obj["phi"]) if "phi" in obj else None,
        new_cups=tuple((j, a) for j, a in obj.get("new_cups", [])),
    )


def write_trace(
    fp: IO[str],
    cfg: GameConfig,
    records: Iterable[StepRecord],
    initial_fills: dict[CupId, WaterAmount] | None = None,
) -> None:
    fp.write(json.dumps(trace_header(cfg, initial_fills)) + "\n")
    for record in records:
        fp.write(json.dumps(record_to_json(record)) + "\n")


def read_trace(fp: IO[str]) -> tuple[dict, list[StepRecord]]:
    lines = [line for line in fp if line.strip()]
    if not lines:
        raise InvalidConfigError("empty trace file")
    header = json.loads(lines[0])
    if "resolution" not in header:
        raise InvalidConfigError("trace file missing resolution header")
    return header, [record_from_json(json.loads(line)) for line in lines[1:]]
