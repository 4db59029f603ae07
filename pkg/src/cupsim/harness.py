"""Seeded Monte Carlo experiment runner.

An ExperimentSpec pins everything about a run: game parameters, strategy
names and parameters, step/trial counts, verification level, and optional
bad-start ("recovery") setup.  Results are a pure function of (spec, seed):
re-running produces bit-identical traces regardless of worker count.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

from .core import (
    DYNAMIC_VARIANTS,
    GameConfig,
    InvalidConfigError,
    InvariantViolationError,
    NonRepresentableError,
    RngStream,
    Variant,
    choose_resolution,
    parse_rational,
    to_units,
)
from .emptiers import SmoothedGreedySingleEmptier, ThresholdCounterEmptier, make_emptier
from .fillers import equal_split_divisors, make_filler
from .games import GameState, StepRecord, new_game, step
from .metrics import PhiTracker, Summarizer, TraceSummary

VERIFY_LEVELS = ("off", "invariants", "full")
RECOVERY_PLACEMENTS = ("one-cup", "uniform")


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce an experiment bit-exactly."""

    variant: Variant = Variant.SINGLE
    n: int = 1
    p: int = 1
    epsilon: Fraction = Fraction(1, 4)
    delta: Fraction = Fraction(0)
    seed: int = 0
    steps: int = 1
    trials: int = 1
    filler: str = "uniform-random"
    filler_params: dict = field(default_factory=dict)
    emptier: str = "greedy-single"
    emptier_params: dict = field(default_factory=dict)
    resolution: Optional[int] = None
    verify_level: str = "invariants"
    recovery_b: Optional[Fraction] = None
    recovery_placement: str = "one-cup"
    backlog_thresholds: tuple[Fraction, ...] = ()
    checkpoints: tuple[int, ...] = ()
    record_phi: bool = False
    check_potential: bool = False
    flushing_slack: Fraction = Fraction(0)

    def validate(self) -> list[str]:
        problems = []
        if self.steps < 1:
            problems.append("steps must be >= 1")
        if self.trials < 1:
            problems.append("trials must be >= 1")
        if self.verify_level not in VERIFY_LEVELS:
            problems.append(f"verify_level must be one of {VERIFY_LEVELS}")
        if self.recovery_placement not in RECOVERY_PLACEMENTS:
            problems.append(f"recovery placement must be one of {RECOVERY_PLACEMENTS}")
        if self.recovery_b is not None and self.variant not in (
            Variant.SINGLE,
            Variant.RENORMALIZED,
        ):
            problems.append(
                "recovery mode supports the single-processor and renormalized variants"
            )
        return problems


def resolve_resolution(spec: ExperimentSpec) -> int:
    """The experiment's explicit resolution, or an automatic D fine enough for everything.

    The automatic choice folds in the denominators of the parameters, n^2 and
    p, the equal-split divisors of harmonic fillers, and the denominators of
    recovery amounts and backlog thresholds.
    """
    if spec.resolution is not None:
        return spec.resolution
    extras: list[int] = []
    if spec.filler in ("adaptive-harmonic", "simulated-adaptive"):
        extras.extend(equal_split_divisors(spec.n, spec.p))
    elif spec.filler == "oblivious-guessing":
        extras.extend(
            equal_split_divisors(spec.filler_params.get("k", spec.n), spec.p)
        )
    if spec.recovery_b is not None:
        extras.append(2 * Fraction(spec.recovery_b).denominator)
    for c in spec.backlog_thresholds:
        extras.append(Fraction(c).denominator)
    return choose_resolution(spec.epsilon, spec.delta, spec.n, spec.p, extras)


def game_config(spec: ExperimentSpec, trial_seed: int) -> GameConfig:
    return GameConfig(
        variant=spec.variant,
        n=spec.n,
        p=spec.p,
        epsilon=Fraction(spec.epsilon),
        delta=Fraction(spec.delta),
        resolution=resolve_resolution(spec),
        seed=trial_seed,
        flushing_slack=Fraction(spec.flushing_slack),
    )


def setup_recovery(spec: ExperimentSpec, cfg: GameConfig) -> dict[int, int]:
    """Initial fills for a bad-start experiment: b water, placed adversarially."""
    b_units = to_units(Fraction(spec.recovery_b), cfg.resolution)
    if b_units % 2 != 0:
        raise NonRepresentableError("recovery amount must be an even unit count")
    if b_units == 0:
        return {}
    if spec.recovery_placement == "one-cup":
        return {0: b_units}
    share, rem = divmod(b_units, cfg.n)
    if rem or share % 2:
        raise NonRepresentableError(
            f"cannot split recovery amount evenly over {cfg.n} cups"
        )
    return {j: share for j in range(cfg.n)}


class TrialVerifier:
    """Per-step invariant enforcement for one trial.

    Checks water conservation, the counter/fill sandwich and counter algebra
    of the threshold emptier, offset mod-1 invariance of the smoothed single
    emptier, the dynamic active-set rule, and (at level "full") the harmonic
    top-j average bound for the dynamic single-processor greedy.
    """

    def __init__(self, spec: ExperimentSpec, cfg: GameConfig, filler, emptier):
        self.level = spec.verify_level
        self.cfg = cfg
        self.d = cfg.resolution
        self.emptier = emptier
        self._threshold = emptier if isinstance(emptier, ThresholdCounterEmptier) else None
        self._smoothed = (
            emptier if isinstance(emptier, SmoothedGreedySingleEmptier) else None
        )
        self._dynamic = cfg.variant in DYNAMIC_VARIANTS
        self._expected_total: Optional[int] = None
        self._harmonic = (
            self.level == "full"
            and cfg.variant is Variant.DYNAMIC_SINGLE
            and emptier.kind == "greedy-single"
        )
        if self._harmonic:
            # harmonic_prefix[m] = 1 + 1/2 + ... + 1/m, exact.
            self._hprefix = [Fraction(0)]
            for m in range(1, cfg.n + 1):
                self._hprefix.append(self._hprefix[-1] + Fraction(1, m))

    def start(self, state: GameState) -> None:
        self._expected_total = state.total_units

    def check(self, state: GameState, record: StepRecord) -> None:
        step_no = record.step
        d = self.d
        fills = state.fills

        self._expected_total += sum(record.pours.values()) - sum(
            record.removals.values()
        )
        if self._expected_total != state.total_units:
            raise InvariantViolationError(
                "water-conservation",
                step_no,
                f"tracked {state.total_units} vs accounted {self._expected_total}",
            )

        ts = self._threshold.thresholds if self._threshold else None
        if ts is not None:
            counters = ts.counters
            bound = 3 * d
            for j, f in fills.items():
                w = counters.get(j, 0)
                if not (w <= f <= w + bound):
                    raise InvariantViolationError(
                        "counter-fill-sandwich",
                        step_no,
                        f"cup {j}: counter {w}, fill {f}",
                    )
            delta_units = ts.delta_units
            for j, w in counters.items():
                if w < 0 or w % delta_units != 0:
                    raise InvariantViolationError(
                        "counter-delta-multiple",
                        step_no,
                        f"cup {j}: counter {w} not a multiple of {delta_units}",
                    )
            if step_no % 256 == 0:
                inc = ts.increment_units
                for j, k in ts.crossing_totals.items():
                    if k * inc > ts.pour_totals[j]:
                        raise InvariantViolationError(
                            "counter-water-bound",
                            step_no,
                            f"cup {j}: (1+delta)*crossings exceeds cumulative pour",
                        )

        if self._smoothed is not None:
            virtual = self._smoothed.virtual
            offsets = self._smoothed.offsets
            pours = state.pours
            for j in fills:
                if virtual[j] % d != (offsets[j] + pours[j]) % d:
                    raise InvariantViolationError(
                        "mod-one-offset",
                        step_no,
                        f"cup {j}: virtual fill drifted off offset + pours (mod 1)",
                    )

        if self._dynamic:
            for j, f in fills.items():
                if f <= 0:
                    raise InvariantViolationError(
                        "active-set", step_no, f"cup {j} is empty but still active"
                    )

        if self._harmonic and fills:
            ordered = sorted(fills.values(), reverse=True)
            n_i = len(ordered)
            h_n = self._hprefix[n_i]
            j = 1
            prefix = 0
            idx = 0
            while j <= n_i:
                while idx < j:
                    prefix += ordered[idx]
                    idx += 1
                # av_i(j) <= 1 + (1/(j+1) + ... + 1/n_i), exactly.
                if Fraction(prefix, j * d) > 1 + (h_n - self._hprefix[j]):
                    raise InvariantViolationError(
                        "harmonic-top-average",
                        step_no,
                        f"top-{j} average exceeds harmonic bound with {n_i} cups",
                    )
                j = min(2 * j, n_i) if j != n_i else n_i + 1


@dataclass
class TrialResult:
    trial: int
    summary: TraceSummary
    records: Optional[list[StepRecord]] = None
    checkpoints: dict[int, dict[int, int]] = field(default_factory=dict)
    resolution: int = 0
    initial_fills: dict[int, int] = field(default_factory=dict)
    config: Optional[GameConfig] = None


def trial_seed_for(spec_seed: int, trial: int) -> int:
    return RngStream(spec_seed, "trial", (trial,)).key_hash()


def run_trial(
    spec: ExperimentSpec, trial: int, keep_records: bool = False
) -> TrialResult:
    """Run one trial; raises on any invariant violation."""
    problems = spec.validate()
    if problems:
        raise InvalidConfigError("; ".join(problems))
    cfg = game_config(spec, trial_seed_for(spec.seed, trial))
    initial = setup_recovery(spec, cfg) if spec.recovery_b is not None else None
    state = new_game(cfg, initial)

    filler = make_filler(
        spec.filler, cfg, spec.filler_params, RngStream(cfg.seed, "filler")
    )
    emptier = make_emptier(spec.emptier, cfg, spec.emptier_params)
    filler.bind(state)
    emptier.bind(state)

    thresholds_units = tuple(
        to_units(Fraction(c), cfg.resolution) for c in spec.backlog_thresholds
    )
    is_counter = isinstance(emptier, ThresholdCounterEmptier)
    summarizer = Summarizer(
        thresholds_units, Fraction(spec.delta) if is_counter else None
    )
    verifier = (
        TrialVerifier(spec, cfg, filler, emptier)
        if spec.verify_level != "off"
        else None
    )
    if verifier:
        verifier.start(state)

    want_phi = spec.record_phi or spec.check_potential
    phi = PhiTracker(state, Fraction(spec.epsilon)) if want_phi else None
    prev_phi = phi.value if phi else None
    check_potential = spec.check_potential
    full_unit_count = cfg.p
    d = cfg.resolution

    records: Optional[list[StepRecord]] = [] if keep_records else None
    checkpoints: dict[int, dict[int, int]] = {}
    want_checkpoints = set(spec.checkpoints)
    max_active_cups = len(state.fills)

    for _ in range(spec.steps):
        move = filler.move(state)
        state, record = step(state, move, emptier)
        filler.observe(record)

        if phi is not None:
            for j in set(record.pours) | set(record.removals):
                new_f = state.fills.get(j, 0)
                old_f = new_f - record.pours.get(j, 0) + record.removals.get(j, 0)
                if old_f != new_f:
                    phi.apply(old_f, new_f)
            if spec.record_phi:
                record.phi = phi.value
            if check_potential:
                removals = record.removals
                if len(removals) == full_unit_count and all(
                    a == d for a in removals.values()
                ):
                    # Full service step: p cups each lost a whole unit, so
                    # the potential must not have increased.
                    if phi.value > prev_phi:
                        raise InvariantViolationError(
                            "potential-monotonic",
                            record.step,
                            "potential increased on a full-service step",
                        )
            prev_phi = phi.value

        if verifier:
            verifier.check(state, record)
        summarizer.update(record)
        if records is not None:
            records.append(record)
        if record.step in want_checkpoints:
            checkpoints[record.step] = dict(state.fills)
        if len(state.fills) > max_active_cups:
            max_active_cups = len(state.fills)

    summary = summarizer.finalize()
    summary.max_active_cups = max_active_cups
    return TrialResult(
        trial,
        summary,
        records,
        checkpoints,
        cfg.resolution,
        dict(initial) if initial else {},
        cfg,
    )


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    resolution: int
    summaries: list[TraceSummary]
    aggregate: dict
    runtime_seconds: float
    trial_results: Optional[list[TrialResult]] = None


def _aggregate(spec: ExperimentSpec, resolution: int, summaries) -> dict:
    total_steps = sum(s.steps for s in summaries)
    trials = len(summaries)
    tails = {}
    for c in spec.backlog_thresholds:
        c_units = to_units(Fraction(c), resolution)
        exceed_steps = sum(s.steps_backlog_gt.get(c_units, 0) for s in summaries)
        final_hits = sum(1 for s in summaries if s.final_backlog_units > c_units)
        p_hat = final_hits / trials
        tails[str(Fraction(c))] = {
            "threshold_units": c_units,
            "step_fraction": exceed_steps / total_steps if total_steps else 0.0,
            "final_probability": p_hat,
            "final_stderr": math.sqrt(p_hat * (1 - p_hat) / trials),
        }
    return {
        "trials": trials,
        "total_steps": total_steps,
        "max_backlog_units": max((s.max_backlog_units for s in summaries), default=0),
        "witness_failures": sum(s.witness_failures for s in summaries),
        "tails": tails,
    }


def _run_trial_worker(args) -> TrialResult:
    spec, trial, keep = args
    return run_trial(spec, trial, keep)


def run_experiment(
    spec: ExperimentSpec, workers: int = 1, keep_records: bool = False
) -> ExperimentResult:
    """Run all trials and aggregate; identical output for any worker count."""
    problems = spec.validate()
    if problems:
        raise InvalidConfigError("; ".join(problems))
    started = time.perf_counter()
    if workers > 1 and spec.trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(
                    _run_trial_worker,
                    [(spec, t, keep_records) for t in range(spec.trials)],
                )
            )
    else:
        results = [run_trial(spec, t, keep_records) for t in range(spec.trials)]
    summaries = [r.summary for r in results]
    resolution = results[0].resolution
    return ExperimentResult(
        spec=spec,
        resolution=resolution,
        summaries=summaries,
        aggregate=_aggregate(spec, resolution, summaries),
        runtime_seconds=time.perf_counter() - started,
        trial_results=results if keep_records else None,
    )


# ---------------------------------------------------------------------------
# Spec (de)serialization: JSON with integer unit counts and rational strings.
# ---------------------------------------------------------------------------


def spec_to_json(spec: ExperimentSpec) -> dict:
    obj = {
        "variant": spec.variant.value,
        "n": spec.n,
        "p": spec.p,
        "epsilon": str(Fraction(spec.epsilon)),
        "delta": str(Fraction(spec.delta)),
        "seed": spec.seed,
        "steps": spec.steps,
        "trials": spec.trials,
        "filler": {"kind": spec.filler, "params": spec.filler_params},
        "emptier": {"kind": spec.emptier, "params": spec.emptier_params},
        "verify_level": spec.verify_level,
        "backlog_thresholds": [str(Fraction(c)) for c in spec.backlog_thresholds],
        "record_phi": spec.record_phi,
        "check_potential": spec.check_potential,
    }
    if spec.resolution is not None:
        obj["resolution"] = spec.resolution
    if spec.recovery_b is not None:
        obj["recovery"] = {
            "b": str(Fraction(spec.recovery_b)),
            "placement": spec.recovery_placement,
        }
    if spec.checkpoints:
        obj["checkpoints"] = list(spec.checkpoints)
    if spec.flushing_slack:
        obj["flushing_slack"] = str(Fraction(spec.flushing_slack))
    return obj


def spec_from_json(obj: dict) -> ExperimentSpec:
    try:
        variant = Variant(obj["variant"])
    except (KeyError, ValueError) as exc:
        raise InvalidConfigError(f"bad or missing variant: {exc}")
    recovery = obj.get("recovery") or {}
    filler = obj.get("filler") or {}
    emptier = obj.get("emptier") or {}
    if isinstance(filler, str):
        filler = {"kind": filler}
    if isinstance(emptier, str):
        emptier = {"kind": emptier}
    return ExperimentSpec(
        variant=variant,
        n=int(obj.get("n", 1)),
        p=int(obj.get("p", 1)),
        epsilon=parse_rational(obj.get("epsilon", "1/4")),
        delta=parse_rational(obj.get("delta", "0")),
        seed=int(obj.get("seed", 0)),
        steps=int(obj.get("steps", 1)),
        trials=int(obj.get("trials", 1)),
        filler=filler.get("kind", "uniform-random"),
        filler_params=dict(filler.get("params", {})),
        emptier=emptier.get("kind", "greedy-single"),
        emptier_params=dict(emptier.get("params", {})),
        resolution=obj.get("resolution"),
        verify_level=obj.get("verify_level", "invariants"),
        recovery_b=parse_rational(recovery["b"]) if "b" in recovery else None,
        recovery_placement=recovery.get("placement", "one-cup"),
        backlog_thresholds=tuple(
            parse_rational(c) for c in obj.get("backlog_thresholds", [])
        ),
        checkpoints=tuple(obj.get("checkpoints", ())),
        record_phi=bool(obj.get("record_phi", False)),
        check_potential=bool(obj.get("check_potential", False)),
        flushing_slack=parse_rational(obj.get("flushing_slack", "0")),
    )


def load_spec(path) -> ExperimentSpec:
    with open(path) as fp:
        return spec_from_json(json.load(fp))
