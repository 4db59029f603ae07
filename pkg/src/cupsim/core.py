"""Exact water arithmetic, configuration validation, and named RNG streams.

All water quantities in the simulator are integer counts of ``1/D`` units,
where ``D`` (the global resolution denominator) is fixed per game.  Filler
pours are restricted to even unit counts and random thresholds/offsets to odd
unit counts, so a cumulative pour can never land exactly on a threshold and
every comparison in the engine is an exact integer comparison.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

Rational = Fraction

# A WaterAmount is a plain int: the number of 1/D units.  Keeping it a bare
# int (rather than a wrapper class) keeps the inner simulation loops fast;
# validation routines enforce non-negativity at the boundaries.
WaterAmount = int


class CupGameError(Exception):
    """Base class for all simulator errors."""


class NonRepresentableError(CupGameError):
    """A rational quantity is not an integer number of resolution units."""


class NegativeAmountError(CupGameError):
    """A water amount would be negative."""


class InvalidConfigError(CupGameError):
    """A game or experiment configuration violates its invariants."""


class InvalidMoveError(CupGameError):
    """A filler move failed validation."""


class StrategyProtocolError(CupGameError):
    """An emptier strategy emitted an invalid move."""


class SetupError(CupGameError):
    """A strategy cannot be constructed for the requested matchup."""


class InvariantViolationError(CupGameError):
    """A runtime invariant check failed (indicates an implementation bug)."""

    def __init__(self, invariant: str, step: int, detail: str = ""):
        self.invariant = invariant
        self.step = step
        self.detail = detail
        super().__init__(f"invariant {invariant!r} violated at step {step}: {detail}")


class Variant(enum.Enum):
    """Game variant tags; each selects a set of move-validation rules."""

    SINGLE = "single"
    MULTI = "multi"
    RENORMALIZED = "renormalized"
    DYNAMIC_SINGLE = "dynamic-single"
    DYNAMIC_MULTI = "dynamic-multi"
    FLUSHING = "flushing"
    UNIVERSAL = "universal"


DYNAMIC_VARIANTS = frozenset({Variant.DYNAMIC_SINGLE, Variant.DYNAMIC_MULTI})
FLUSH_VARIANTS = frozenset({Variant.FLUSHING, Variant.UNIVERSAL})


def parse_rational(value) -> Fraction:
    """Parse ``"a/b"`` strings, ints, or Fractions into a Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    raise InvalidConfigError(f"cannot parse rational from {value!r}")


def to_units(x: Rational, resolution: int) -> WaterAmount:
    """Convert a rational water quantity into integer units of 1/resolution.

    Raises NegativeAmountError for x < 0 and NonRepresentableError when
    x * resolution is not an integer.
    """
    x = Fraction(x)
    if x < 0:
        raise NegativeAmountError(f"negative water amount {x}")
    scaled = x * resolution
    if scaled.denominator != 1:
        raise NonRepresentableError(
            f"{x} is not an integer multiple of 1/{resolution}"
        )
    return int(scaled)


def from_units(units: WaterAmount, resolution: int) -> Fraction:
    """Inverse of to_units; exact."""
    return Fraction(units, resolution)


def choose_resolution(
    epsilon: Rational,
    delta: Rational,
    n: int,
    p: int,
    extra_divisors: Iterable[int] = (),
) -> int:
    """Pick the global resolution denominator D.

    D = 2 * lcm(denominator(epsilon), denominator(delta), n^2, p, extras),
    guaranteeing that D is even, divisible by the parameter denominators, and
    fine enough for the standard equal-split fillers.
    """
    divisors = [Fraction(epsilon).denominator, Fraction(delta).denominator, n * n, p]
    divisors.extend(int(v) for v in extra_divisors)
    d = 1
    for v in divisors:
        if v <= 0:
            raise InvalidConfigError(f"divisor {v} must be positive")
        d = math.lcm(d, v)
    return 2 * d


@dataclass(frozen=True)
class GameConfig:
    """Parameters of a single game instance.

    ``resolution`` is the unit denominator D; every water amount in this game
    is an integer count of 1/resolution units.  In dynamic variants ``n`` is
    only the upper bound on the live cup count.
    """

    variant: Variant
    n: int
    p: int
    epsilon: Rational
    delta: Rational
    resolution: int
    seed: int
    flushing_slack: Rational = Fraction(0)

    def units(self, x: Rational) -> WaterAmount:
        return to_units(x, self.resolution)

    def water(self, units: WaterAmount) -> Fraction:
        return Fraction(units, self.resolution)


def validate_config(cfg: GameConfig) -> list[str]:
    """Return a list of human-readable invariant violations (empty = valid)."""
    violations: list[str] = []
    if cfg.n < 1:
        violations.append("n must be a positive integer")
    if cfg.p < 1:
        violations.append("p must be a positive integer")
    eps = Fraction(cfg.epsilon)
    dlt = Fraction(cfg.delta)
    if not (0 < eps < 1):
        violations.append("epsilon not in (0,1)")
    if not (0 <= dlt < 1):
        violations.append("delta not in [0,1)")
    if cfg.resolution < 2 or cfg.resolution % 2 != 0:
        violations.append("resolution D must be a positive even integer")
    else:
        if cfg.resolution % eps.denominator != 0:
            violations.append("D not divisible by denominator of epsilon")
        if dlt != 0 and cfg.resolution % dlt.denominator != 0:
            violations.append("D not divisible by denominator of delta")
    if not (0 <= cfg.seed < 2**64):
        violations.append("seed must fit in 64 bits")
    slack = Fraction(cfg.flushing_slack)
    if slack < 0:
        violations.append("flushing slack must be non-negative")
    return violations


def require_valid_config(cfg: GameConfig) -> None:
    violations = validate_config(cfg)
    if violations:
        raise InvalidConfigError("; ".join(violations))


# ---------------------------------------------------------------------------
# Deterministic named RNG streams.
#
# A stream is keyed by (master seed, label string, index tuple).  The key is
# folded into a single 64-bit value with a splitmix64-style mixer, which is
# also reproducible with vectorized numpy arithmetic when bulk generation is
# needed.  Identical keys give identical output; distinct keys give streams
# that are independent for all practical purposes.
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def _fold(h: int, v: int) -> int:
    return _splitmix64((h + _GOLDEN + (v & _MASK64)) & _MASK64)


def _label_hash(label: str) -> int:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """A named, splittable deterministic random stream.

    Derivation is pure: the same (seed, label, indices) key always yields the
    same values, independent of evaluation order across the program.
    """

    seed: int
    label: str
    indices: tuple[int, ...] = ()

    def derive(self, *indices: int) -> "RngStream":
        return RngStream(self.seed, self.label, self.indices + tuple(indices))

    def key_hash(self) -> int:
        h = _fold(_splitmix64(self.seed & _MASK64), _label_hash(self.label))
        for v in self.indices:
            h = _fold(h, v)
        return h

    def generator(self):
        """A numpy Generator seeded from this stream's key."""
        import numpy as np

        return np.random.default_rng(self.key_hash())


def uniform_threshold(stream: RngStream, resolution: int) -> WaterAmount:
    """An odd unit count drawn uniformly from {1, 3, ..., resolution - 1}.

    With resolution D = 2d this realizes a uniform draw from the value set
    {1/(2d), 3/(2d), ..., (2d-1)/(2d)}; deterministic in the stream key.
    """
    if resolution % 2 != 0 or resolution < 2:
        raise InvalidConfigError("resolution must be even and >= 2")
    half = resolution // 2
    return 2 * (stream.key_hash() % half) + 1
