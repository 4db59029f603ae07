"""Quantities computed from states and traces.

Includes the integer fill, the exact-rational potential function used by the
deterministic multi-processor analysis, top-j fill averages, backlog-witness
detection over surplus-threshold traces, and per-trial summaries with a CSV
schema.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Iterable, Optional, Sequence

from .core import WaterAmount
from .games import GameState, StepRecord


def integer_fill(fills: Iterable[WaterAmount], resolution: int) -> int:
    """Number of integer thresholds passed: sum of floor(fill) over cups."""
    return sum(f // resolution for f in fills)


def _phi_contribution(
    fill_units: WaterAmount, powers: list[Fraction], resolution: int
) -> Fraction:
    """Potential of one cup with the given fill.

    With base q = 1 + epsilon and f = whole + frac, the cup contributes
    q + q^2 + ... + q^whole + frac * q^(whole+1); the geometric part is
    (q^(whole+1) - q) / (q - 1).
    """
    whole, rem = divmod(fill_units, resolution)
    while len(powers) <= whole + 1:
        powers.append(powers[-1] * powers[1])
    eps = powers[1] - 1
    geometric = (powers[whole + 1] - powers[1]) / eps if whole else Fraction(0)
    return geometric + Fraction(rem, resolution) * powers[whole + 1]


def potential_phi(
    fills: Iterable[WaterAmount], epsilon: Fraction, resolution: int
) -> Fraction:
    """Exact potential: sum over cups of the integral of (1+eps)^ceil(x)."""
    powers = [Fraction(1), 1 + Fraction(epsilon)]
    return sum(
        (_phi_contribution(f, powers, resolution) for f in fills), Fraction(0)
    )


class PhiTracker:
    """Incrementally maintained exact potential of a running game."""

    def __init__(self, state: GameState, epsilon: Fraction):
        self._d = state.config.resolution
        self._powers = [Fraction(1), 1 + Fraction(epsilon)]
        self.value = potential_phi(state.fills.values(), epsilon, self._d)

    def apply(self, fill_old: WaterAmount, fill_new: WaterAmount) -> None:
        d = self._d
        self.value += _phi_contribution(fill_new, self._powers, d)
        self.value -= _phi_contribution(fill_old, self._powers, d)


def avg_top(fills: Sequence[WaterAmount], j: int, resolution: int) -> Fraction:
    """Average fill of the j fullest cups, zero-padding when j exceeds count."""
    if j < 1:
        raise ValueError("j must be at least 1")
    top = sorted(fills, reverse=True)[:j]
    return Fraction(sum(top), j * resolution)


def backlog_witness_exists(
    surpluses: Sequence[int], t: Fraction, delta: Fraction
) -> Optional[int]:
    """Smallest window length l with 2 * (sum of the last l surpluses) >= delta*l + t.

    ``surpluses`` covers steps 1..i in order; returns None when no window
    qualifies.  Exact rational comparison throughout.
    """
    delta = Fraction(delta)
    t = Fraction(t)
    total = 0
    for l in range(1, len(surpluses) + 1):
        total += surpluses[len(surpluses) - l]
        if 2 * total >= delta * l + t:
            return l
    return None


class WitnessMonitor:
    """O(1)-per-step existence check for height-0 backlog witnesses.

    With delta = a/b, define G_i = 2 * b * (T_1 + ... + T_i) - a * i.  A
    window of length l ending at step i qualifies iff G_{i-l} <= G_i, so a
    witness exists iff the running prefix minimum of G is <= G_i.
    """

    def __init__(self, delta: Fraction):
        delta = Fraction(delta)
        self._a = delta.numerator
        self._b = delta.denominator
        self._g = 0
        self._g_min = 0  # min over G_0..G_{i-1}

    def push(self, surplus: int) -> bool:
        """Record step i's surplus count; return witness existence at i."""
        g_prev = self._g
        if g_prev < self._g_min:
            self._g_min = g_prev
        self._g = g_prev + 2 * self._b * surplus - self._a
        return self._g_min <= self._g


@dataclass
class TraceSummary:
    """Deterministic aggregation of one trial."""

    steps: int = 0
    max_backlog_units: WaterAmount = 0
    final_backlog_units: WaterAmount = 0
    backlog_quantiles: dict[str, WaterAmount] = field(default_factory=dict)
    frac_backlog_gt: dict[WaterAmount, float] = field(default_factory=dict)
    steps_backlog_gt: dict[WaterAmount, int] = field(default_factory=dict)
    surplus_total: int = 0
    max_counter_sum_units: WaterAmount = 0
    counter_positive_steps: int = 0
    witness_failures: int = 0
    max_integer_fill: int = 0
    max_active_cups: int = 0
    phi_max: Optional[Fraction] = None


_QUANTILES = (("p50", 0.50), ("p90", 0.90), ("p99", 0.99))


class Summarizer:
    """Streaming accumulator producing a TraceSummary.

    ``thresholds`` are backlog levels (in units) whose exceedance fraction is
    reported; when ``delta`` is given, surplus counts feed a WitnessMonitor
    and every step with a positive counter sum but no height-0 witness is
    counted as a failure (there must never be one).
    """

    def __init__(
        self,
        thresholds: Sequence[WaterAmount] = (),
        delta: Optional[Fraction] = None,
    ):
        self._thresholds = list(thresholds)
        self._exceed = {c: 0 for c in self._thresholds}
        self._backlogs: list[WaterAmount] = []
        self._monitor = WitnessMonitor(delta) if delta else None
        self._summary = TraceSummary()

    def update(self, record: StepRecord) -> None:
        s = self._summary
        s.steps += 1
        b = record.backlog_units
        self._backlogs.append(b)
        if b > s.max_backlog_units:
            s.max_backlog_units = b
        s.final_backlog_units = b
        for c in self._thresholds:
            if b > c:
                self._exceed[c] += 1
        s.surplus_total += record.surplus_T
        if record.counter_sum_units > s.max_counter_sum_units:
            s.max_counter_sum_units = record.counter_sum_units
        if record.integer_fill > s.max_integer_fill:
            s.max_integer_fill = record.integer_fill
        if self._monitor is not None:
            has_witness = self._monitor.push(record.surplus_T)
            if record.counter_sum_units > 0:
                s.counter_positive_steps += 1
                if not has_witness:
                    s.witness_failures += 1
        if record.phi is not None and (s.phi_max is None or record.phi > s.phi_max):
            s.phi_max = record.phi

    def finalize(self) -> TraceSummary:
        s = self._summary
        if self._backlogs:
            ordered = sorted(self._backlogs)
            count = len(ordered)
            s.backlog_quantiles = {
                name: ordered[min(count - 1, max(0, math.ceil(q * count) - 1))]
                for name, q in _QUANTILES
            }
            s.frac_backlog_gt = {
                c: self._exceed[c] / count for c in self._thresholds
            }
            s.steps_backlog_gt = dict(self._exceed)
        else:
            s.backlog_quantiles = {name: 0 for name, _ in _QUANTILES}
        return s


def summarize(
    records: Iterable[StepRecord],
    thresholds: Sequence[WaterAmount] = (),
    delta: Optional[Fraction] = None,
) -> TraceSummary:
    """One-shot aggregation of an in-memory trace."""
    acc = Summarizer(thresholds, delta)
    for record in records:
        acc.update(record)
    return acc.finalize()


def summary_csv_columns(thresholds: Sequence[WaterAmount]) -> list[str]:
    columns = [
        "trial",
        "steps",
        "max_backlog_units",
        "final_backlog_units",
        "backlog_p50_units",
        "backlog_p90_units",
        "backlog_p99_units",
        "surplus_total",
        "max_counter_sum_units",
        "counter_positive_steps",
        "witness_failures",
        "max_integer_fill",
        "phi_max",
    ]
    columns.extend(f"frac_backlog_gt_{c}" for c in thresholds)
    return columns


def write_summary_csv(
    fp: IO[str],
    summaries: Sequence[TraceSummary],
    thresholds: Sequence[WaterAmount] = (),
) -> None:
    """One row per trial, with a schema header row."""
    writer = csv.writer(fp)
    writer.writerow(summary_csv_columns(thresholds))
    for trial, s in enumerate(summaries):
        row = [
            trial,
            s.steps,
            s.max_backlog_units,
            s.final_backlog_units,
            s.backlog_quantiles.get("p50", 0),
            s.backlog_quantiles.get("p90", 0),
            s.backlog_quantiles.get("p99", 0),
            s.surplus_total,
            s.max_counter_sum_units,
            s.counter_positive_steps,
            s.witness_failures,
            s.max_integer_fill,
            "" if s.phi_max is None else f"{float(s.phi_max):.17g}",
        ]
        row.extend(f"{s.frac_backlog_gt.get(c, 0.0):.9g}" for c in thresholds)
        writer.writerow(row)
