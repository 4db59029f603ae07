"""Threshold-collection machinery for the counter-based multi-processor emptier.

Each cup carries an endless sequence of random thresholds against its
cumulative pour, arranged in blocks ("collections"): with period P = 1/delta + 1,
every block start t0 with t0 = 1 (mod P) draws one random odd-unit offset
s_j(t0) in (0, 1], and the block's thresholds sit at t0+1+s, ..., t0+P-1+s
water units.  Indices t = 1 (mod P) carry no threshold, so consecutive blocks
are separated by a gap of more than one water unit.  A counter w_j is
incremented by 1 + delta per crossing and decremented by the emptier.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable, Iterable

import numpy as np

from .core import (
    GameConfig,
    InvalidConfigError,
    RngStream,
    WaterAmount,
    uniform_threshold,
)

_U64 = np.uint64
_SM_C1 = _U64(0xBF58476D1CE4E5B9)
_SM_C2 = _U64(0x94D049BB133111EB)
_GOLDEN_NP = _U64(0x9E3779B97F4A7C15)
_S30, _S27, _S31 = _U64(30), _U64(27), _U64(31)


def _fold_np(h, v):
    """Vectorized twin of core's key folding; bit-identical to the scalar path.

    ``v`` must be a uint64 array; ``h`` may be a scalar or an array.
    """
    x = ((v + _GOLDEN_NP) + h).astype(_U64, copy=False)
    x = x ^ (x >> _S30)
    x = x * _SM_C1
    x = x ^ (x >> _S27)
    x = x * _SM_C2
    x = x ^ (x >> _S31)
    return x


def surplus_of_step(total_crossings: int, p: int) -> int:
    """Crossings in one step beyond the p the emptier can service: max(0, k-p)."""
    if total_crossings < 0:
        raise ValueError("crossing count cannot be negative")
    return max(0, total_crossings - p)


class ThresholdState:
    """Per-cup cumulative pours, counters, and lazily generated offsets.

    Offsets are pure functions of the stream key (seed, "threshold", (j, t0)),
    memoized only as a cache; games never materialize unused collections.
    All counter values are integer unit counts and always multiples of
    delta * D units.
    """

    def __init__(
        self,
        seed: int,
        delta: Fraction,
        resolution: int,
        counter_scale: str = "one-plus-delta",
        offset_fn: Callable[[int, int], WaterAmount] | None = None,
    ):
        delta = Fraction(delta)
        if delta <= 0 or delta.numerator != 1:
            raise InvalidConfigError(
                "threshold machinery requires delta = 1/m for a positive integer m"
            )
        if resolution % 2 != 0 or resolution % delta.denominator != 0:
            raise InvalidConfigError(
                "resolution must be even and divisible by the denominator of delta"
            )
        if counter_scale not in ("one-plus-delta", "literal"):
            raise InvalidConfigError(f"unknown counter scale {counter_scale!r}")
        self.resolution = resolution
        self.delta = delta
        self.period = delta.denominator + 1  # P = 1/delta + 1
        self.counter_scale = counter_scale
        self._stream = RngStream(seed, "threshold")
        self._offset_fn = offset_fn
        self._np_base = _U64(self._stream.key_hash())
        # The vectorized crossing path needs all unit arithmetic inside int64.
        self._np_ok = offset_fn is None and resolution < (1 << 40)
        self._offsets: dict[tuple[int, int], WaterAmount] = {}
        self.pour_totals: dict[int, WaterAmount] = {}
        self.counters: dict[int, WaterAmount] = {}
        self.crossing_totals: dict[int, int] = {}
        self.counter_sum: WaterAmount = 0
        # Unit quantities used every step.
        self.delta_units = int(delta * resolution)  # delta * D
        self.increment_units = resolution + self.delta_units  # (1 + delta) * D
        self.cap_units = resolution + 2 * self.delta_units  # (1 + 2*delta) * D
        # Priority sets maintained for the emptier: counters at or above the
        # increment (high) versus strictly between zero and it (low).
        self.high: set[int] = set()
        self.low: set[int] = set()

    # -- offsets ----------------------------------------------------------

    def offset(self, j: int, block_start: int) -> WaterAmount:
        """The odd-unit offset s_j(t0) for the block starting at index t0."""
        key = (j, block_start)
        value = self._offsets.get(key)
        if value is None:
            if self._offset_fn is not None:
                value = self._offset_fn(j, block_start)
            else:
                value = uniform_threshold(self._stream.derive(j, block_start), self.resolution)
            self._offsets[key] = value
        return value

    def _block_start(self, t: int) -> int:
        return ((t - 1) // self.period) * self.period + 1

    def threshold_values_in(self, j: int, lo: WaterAmount, hi: WaterAmount) -> list[WaterAmount]:
        """All threshold values v with lo < v <= hi, in increasing order.

        A threshold exists at index t >= 2 with t != 1 (mod P), at value
        t*D + s_j(t0) units where t0 is t's block start.
        """
        if lo > hi:
            raise ValueError("lo must not exceed hi")
        d = self.resolution
        values = []
        for t in range(max(2, lo // d), hi // d + 1):
            if t % self.period == 1:
                continue
            v = t * d + self.offset(j, self._block_start(t))
            if lo < v <= hi:
                values.append(v)
        return values

    # -- pours and counters -------------------------------------------------

    def record_pour(self, j: int, amount: WaterAmount) -> int:
        """Advance cup j's cumulative pour; return and count crossings.

        The counter is incremented by (1 + delta) per crossing.
        """
        if amount < 0:
            raise ValueError("pour amount cannot be negative")
        pour_totals = self.pour_totals
        old = pour_totals.get(j, 0)
        new = old + amount
        pour_totals[j] = new
        d = self.resolution
        # The first threshold sits strictly above two water units.
        if new <= 2 * d:
            return 0
        # Inlined crossing scan; the per-step pour cap keeps this loop at a
        # couple of iterations in game use.
        period = self.period
        offsets = self._offsets
        crossings = 0
        t = old // d
        if t < 2:
            t = 2
        t_hi = new // d
        while t <= t_hi:
            if t % period != 1:
                t0 = ((t - 1) // period) * period + 1
                s = offsets.get((j, t0))
                if s is None:
                    s = self.offset(j, t0)
                v = t * d + s
                if old < v <= new:
                    crossings += 1
            t += 1
        if crossings:
            self.crossing_totals[j] = self.crossing_totals.get(j, 0) + crossings
            self._bump_counter(j, crossings * self.increment_units)
        return crossings

    def apply_pours(self, pours: dict[int, WaterAmount]) -> int:
        """record_pour over a whole filler move; returns total crossings.

        Semantically identical to calling record_pour per cup; written as one
        batch (with a vectorized fast path) because this is the per-step hot
        path of the counter emptier.
        """
        if self._np_ok and len(pours) >= 32 and max(pours.values()) <= self.resolution:
            return self._apply_pours_np(pours)
        d = self.resolution
        two_d = 2 * d
        period = self.period
        pour_totals = self.pour_totals
        offsets = self._offsets
        counters = self.counters
        crossing_totals = self.crossing_totals
        inc = self.increment_units
        high_add = self.high.add
        low_discard = self.low.discard
        compute_offset = self.offset
        total = 0
        counter_add = 0
        for j, amount in pours.items():
            old = pour_totals.get(j, 0)
            new = old + amount
            pour_totals[j] = new
            if new <= two_d:
                continue
            t = old // d
            if t < 2:
                t = 2
            t_hi = new // d
            c = 0
            while t <= t_hi:
                if t % period != 1:
                    t0 = t - (t - 1) % period
                    s = offsets.get((j, t0))
                    if s is None:
                        s = compute_offset(j, t0)
                    v = t * d + s
                    if old < v <= new:
                        c += 1
                t += 1
            if c:
                total += c
                crossing_totals[j] = crossing_totals.get(j, 0) + c
                add = c * inc
                counters[j] = counters.get(j, 0) + add
                counter_add += add
                # The counter is now at least one increment, so the cup
                # belongs in the high-priority class.
                low_discard(j)
                high_add(j)
        self.counter_sum += counter_add
        return total

    def _apply_pours_np(self, pours: dict[int, WaterAmount]) -> int:
        """Vectorized crossing detection for per-pour amounts of at most one unit.

        A pour of at most one water unit can cross at most one threshold, and
        only at block index old//D (clipped to 2) or the one after it, so two
        masked candidate evaluations cover every case.
        """
        d = self.resolution
        period = self.period
        pour_totals = self.pour_totals
        count = len(pours)
        ids = list(pours.keys())
        amts = np.fromiter(pours.values(), dtype=np.int64, count=count)
        old = np.fromiter(
            (pour_totals.get(j, 0) for j in ids), dtype=np.int64, count=count
        )
        new = old + amts
        pour_totals.update(zip(ids, new.tolist()))
        if not (new > 2 * d).any():
            return 0
        ids_u64 = np.asarray(ids, dtype=np.int64).astype(_U64)
        base = _fold_np(self._np_base, ids_u64)
        half = _U64(d // 2)
        t_lo = np.maximum(old // d, 2)
        t_hi = new // d
        crossed = np.zeros(count, dtype=bool)
        for t in (t_lo, t_lo + 1):
            valid = (t <= t_hi) & (t % period != 1)
            if not valid.any():
                continue
            t0 = t - (t - 1) % period
            s = 2 * (_fold_np(base, t0.astype(_U64)) % half).astype(np.int64) + 1
            v = t * d + s
            crossed |= valid & (old < v) & (v <= new)
        hits = np.nonzero(crossed)[0]
        if hits.size == 0:
            return 0
        counters = self.counters
        crossing_totals = self.crossing_totals
        inc = self.increment_units
        high_add = self.high.add
        low_discard = self.low.discard
        for i in hits.tolist():
            j = ids[i]
            crossing_totals[j] = crossing_totals.get(j, 0) + 1
            counters[j] = counters.get(j, 0) + inc
            low_discard(j)
            high_add(j)
        total = int(hits.size)
        self.counter_sum += total * inc
        return total

    def _count_crossings(self, j: int, lo: WaterAmount, hi: WaterAmount) -> int:
        d = self.resolution
        period = self.period
        count = 0
        for t in range(max(2, lo // d), hi // d + 1):
            if t % period == 1:
                continue
            v = t * d + self.offset(j, ((t - 1) // period) * period + 1)
            if lo < v <= hi:
                count += 1
        return count

    def _bump_counter(self, j: int, delta_units: int) -> None:
        w = self.counters.get(j, 0) + delta_units
        self.counters[j] = w
        self.counter_sum += delta_units
        if w >= self.increment_units:
            self.low.discard(j)
            self.high.add(j)
        elif w > 0:
            self.low.add(j)

    def decrement_counter(self, j: int, amount: WaterAmount) -> None:
        w = self.counters[j] - amount
        if w < 0:
            raise ValueError(f"counter of cup {j} would go negative")
        self.counter_sum -= amount
        if w == 0:
            del self.counters[j]
            self.high.discard(j)
            self.low.discard(j)
        else:
            self.counters[j] = w
            if w >= self.increment_units:
                self.high.add(j)
                self.low.discard(j)
            else:
                self.low.add(j)
                self.high.discard(j)

    def init_counters_from_initial_fill(self, fills: dict[int, WaterAmount]) -> None:
        """Account for pre-game water: pours advanced, counters pre-charged.

        The counter starts at scale * crossings where the scale is 1 + delta
        by default ("one-plus-delta") or exactly one water unit per crossing
        ("literal"); both keep counters multiples of delta.
        """
        if self.pour_totals:
            raise InvalidConfigError("initial fills must be applied before any step")
        per_crossing = (
            self.increment_units
            if self.counter_scale == "one-plus-delta"
            else self.resolution
        )
        for j, units in fills.items():
            if units == 0:
                continue
            self.pour_totals[j] = units
            crossings = self._count_crossings(j, 0, units)
            if crossings:
                self.crossing_totals[j] = crossings
                self._bump_counter(j, crossings * per_crossing)
