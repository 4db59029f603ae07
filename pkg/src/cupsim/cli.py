"""Command-line entry point.

Subcommands: ``simulate`` (run an experiment spec, write CSV/JSON/figures),
``duel`` (one filler-vs-emptier matchup from flags), ``sweep`` (vary one spec
field over a value list), ``verify`` (run the verification suites), and
``replay`` (re-check a recorded trace).  Exit codes: 0 success, 1 usage or
configuration error, 2 invariant or verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from .core import (
    CupGameError,
    InvalidConfigError,
    InvalidMoveError,
    InvariantViolationError,
    NegativeAmountError,
    NonRepresentableError,
    SetupError,
    StrategyProtocolError,
    Variant,
)
from .games import read_trace, write_trace
from .harness import (
    ExperimentResult,
    ExperimentSpec,
    run_experiment,
    run_trial,
    spec_from_json,
    spec_to_json,
    to_units,
)
from .metrics import write_summary_csv
from .verification import AcceptanceSuite

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VIOLATION = 2

_ADAPTIVE_FILLERS = {"adaptive-harmonic"}


def _parse_override_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _apply_overrides(obj: dict, overrides: list[str]) -> dict:
    """Apply dotted key=value overrides to a spec dictionary."""
    for item in overrides:
        if "=" not in item:
            raise InvalidConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        target = obj
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise InvalidConfigError(f"override path {key!r} is not a mapping")
        target[parts[-1]] = _parse_override_value(raw)
    return obj


def _load_spec_dict(path: str) -> dict:
    try:
        with open(path) as fp:
            return json.load(fp)
    except OSError as exc:
        raise InvalidConfigError(f"cannot read spec file: {exc}")
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"spec file is not valid JSON: {exc}")


def _threshold_units(spec: ExperimentSpec, resolution: int) -> tuple[int, ...]:
    return tuple(to_units(Fraction(c), resolution) for c in spec.backlog_thresholds)


def _write_artifacts(
    spec: ExperimentSpec,
    result: ExperimentResult,
    out_dir: Path,
    write_traces: bool,
    figures: bool,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    units = _threshold_units(spec, result.resolution)
    with open(out_dir / "summary.csv", "w", newline="") as fp:
        write_summary_csv(fp, result.summaries, units)
    aggregate = {
        "spec": spec_to_json(spec),
        "resolution": result.resolution,
        "runtime_seconds": result.runtime_seconds,
        "aggregate": result.aggregate,
    }
    with open(out_dir / "aggregate.json", "w") as fp:
        json.dump(aggregate, fp, indent=2)
    if write_traces and result.trial_results:
        for trial in result.trial_results:
            with open(out_dir / f"trace_{trial.trial:03d}.jsonl", "w") as fp:
                write_trace(fp, trial.config, trial.records, trial.initial_fills)
    if figures:
        from . import plotting

        plotting.backlog_histogram(
            [s.max_backlog_units for s in result.summaries],
            result.resolution,
            out_dir / "backlog_hist.png",
        )
        first = (
            result.trial_results[0]
            if result.trial_results and result.trial_results[0].records
            else run_trial(spec, 0, keep_records=True)
        )
        plotting.backlog_timeseries(
            [r.backlog_units for r in first.records],
            result.resolution,
            out_dir / "backlog_series.png",
        )


def _cmd_simulate(args) -> int:
    obj = _load_spec_dict(args.spec)
    _apply_overrides(obj, args.set or [])
    if args.seed is not None:
        obj["seed"] = args.seed
    spec = spec_from_json(obj)
    problems = spec.validate()
    if problems:
        raise InvalidConfigError("; ".join(problems))
    if args.print_effective_spec:
        print(json.dumps(spec_to_json(spec), indent=2))
    result = run_experiment(spec, workers=args.workers, keep_records=args.trace)
    _write_artifacts(
        spec, result, Path(args.out), args.trace, not args.no_figures
    )
    if args.json:
        print(json.dumps(result.aggregate, indent=2))
    else:
        agg = result.aggregate
        print(
            f"{agg['trials']} trials, {agg['total_steps']} steps, "
            f"max backlog {agg['max_backlog_units'] / result.resolution:.4f} "
            f"water units ({result.runtime_seconds:.1f}s)"
        )
    return EXIT_OK


def _duel_spec(args) -> ExperimentSpec:
    return ExperimentSpec(
        variant=Variant(args.variant),
        n=args.n,
        p=args.p,
        epsilon=Fraction(args.epsilon),
        delta=Fraction(args.delta),
        seed=args.seed,
        steps=args.steps,
        trials=args.trials,
        filler=args.filler,
        filler_params=dict(
            (k, _parse_override_value(v))
            for k, v in (item.split("=", 1) for item in args.filler_param or [])
        ),
        emptier=args.emptier,
        emptier_params=dict(
            (k, _parse_override_value(v))
            for k, v in (item.split("=", 1) for item in args.emptier_param or [])
        ),
        verify_level=args.verify,
        backlog_thresholds=tuple(
            Fraction(c) for c in (args.thresholds.split(",") if args.thresholds else [])
        ),
    )


def _cmd_duel(args) -> int:
    spec = _duel_spec(args)
    if args.oblivious_only and spec.filler in _ADAPTIVE_FILLERS:
        raise InvalidConfigError(
            f"filler {spec.filler!r} is adaptive; refused under --oblivious-only"
        )
    problems = spec.validate()
    if problems:
        raise InvalidConfigError("; ".join(problems))
    result = run_experiment(spec, workers=args.workers)
    if args.json:
        print(
            json.dumps(
                {"resolution": result.resolution, "aggregate": result.aggregate},
                indent=2,
            )
        )
        return EXIT_OK
    d = result.resolution
    agg = result.aggregate
    print(f"duel: {spec.filler} vs {spec.emptier} on {spec.variant.value}")
    print(f"  trials={spec.trials} steps={spec.steps} n={spec.n} p={spec.p} D={d}")
    print(f"  max backlog      {agg['max_backlog_units'] / d:.6f}")
    finals = [s.final_backlog_units for s in result.summaries]
    print(f"  final backlog    {max(finals) / d:.6f} (max over trials)")
    for label, tail in agg["tails"].items():
        print(
            f"  frac backlog > {label}: {tail['step_fraction']:.3e} of steps, "
            f"{tail['final_probability']:.3f} +/- {tail['final_stderr']:.3f} at end"
        )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    base = _load_spec_dict(args.spec)
    _apply_overrides(base, args.set or [])
    values = args.values.split(",")
    rows = []
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for raw in values:
        obj = json.loads(json.dumps(base))
        _apply_overrides(obj, [f"{args.param}={raw}"])
        spec = spec_from_json(obj)
        problems = spec.validate()
        if problems:
            raise InvalidConfigError(f"{args.param}={raw}: " + "; ".join(problems))
        result = run_experiment(spec, workers=args.workers)
        row = {
            "value": raw,
            "max_backlog": result.aggregate["max_backlog_units"] / result.resolution,
        }
        for label, tail in result.aggregate["tails"].items():
            row[f"frac_gt_{label}"] = tail["step_fraction"]
        rows.append(row)
        print(f"{args.param}={raw}: max backlog {row['max_backlog']:.4f}")
    columns = list(rows[0].keys())
    with open(out_dir / "sweep.csv", "w", newline="") as fp:
        import csv

        writer = csv.DictWriter(fp, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    if not args.no_figures:
        from . import plotting

        try:
            xs = [float(Fraction(r["value"])) for r in rows]
        except (ValueError, ZeroDivisionError):
            xs = list(range(len(rows)))
        series = {
            c: [float(r[c]) for r in rows] for c in columns if c != "value"
        }
        plotting.sweep_plot(xs, series, args.param, out_dir / "sweep.png")
    return EXIT_OK


def _cmd_verify(args) -> int:
    if args.suite not in ("fast", "full"):
        print(f"unknown suite {args.suite!r}; choose fast or full", file=sys.stderr)
        return EXIT_CONFIG
    suite = AcceptanceSuite(fast=(args.suite == "fast"), seed=args.seed)

    failures = []

    def report(result):
        status = "PASS" if result.passed else "FAIL"
        print(f"{status} {result.name} ({result.seconds:.1f}s): {result.detail}")
        if not result.passed:
            failures.append(result.name)

    try:
        suite.run_all(report)
    except InvariantViolationError as exc:
        print(f"FAIL {exc.invariant}: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_VIOLATION if failures else EXIT_OK


def _cmd_replay(args) -> int:
    try:
        with open(args.trace) as fp:
            header, records = read_trace(fp)
    except OSError as exc:
        raise InvalidConfigError(f"cannot read trace: {exc}")
    d = header["resolution"]
    fills = {int(j): a for j, a in header.get("initial_fills", {}).items()}
    for i, rec in enumerate(records, start=1):
        if rec.step != i:
            print(f"replay mismatch: step {i} recorded as {rec.step}", file=sys.stderr)
            return EXIT_VIOLATION
        for j, a in rec.new_cups:
            fills.setdefault(j, 0)
        for j, a in rec.pours.items():
            fills[j] = fills.get(j, 0) + a
        for j, a in rec.removals.items():
            if fills.get(j, 0) < a:
                print(
                    f"replay mismatch: step {i} removes more than cup {j} holds",
                    file=sys.stderr,
                )
                return EXIT_VIOLATION
            fills[j] -= a
        backlog = max(fills.values(), default=0)
        if backlog != rec.backlog_units:
            print(
                f"replay mismatch: step {i} backlog {backlog} != recorded "
                f"{rec.backlog_units}",
                file=sys.stderr,
            )
            return EXIT_VIOLATION
        int_fill = sum(f // d for f in fills.values())
        if int_fill != rec.integer_fill:
            print(
                f"replay mismatch: step {i} integer fill {int_fill} != recorded "
                f"{rec.integer_fill}",
                file=sys.stderr,
            )
            return EXIT_VIOLATION
        if header.get("variant") in ("dynamic-single", "dynamic-multi"):
            fills = {j: f for j, f in fills.items() if f > 0}
    print(f"replay ok: {len(records)} steps, final backlog {max(fills.values(), default=0) / d:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cupsim",
        description="Exact-arithmetic cup-game simulator and benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an experiment spec file")
    sim.add_argument("spec", help="JSON experiment spec")
    sim.add_argument("--out", default="out", help="output directory")
    sim.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a spec field (dotted keys allowed)")
    sim.add_argument("--seed", type=int, default=None, help="master seed override")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--trace", action="store_true", help="write per-trial JSONL traces")
    sim.add_argument("--json", action="store_true", help="print aggregate JSON")
    sim.add_argument("--no-figures", action="store_true")
    sim.add_argument("--print-effective-spec", action="store_true")
    sim.set_defaults(func=_cmd_simulate)

    duel = sub.add_parser("duel", help="run one filler-vs-emptier matchup")
    duel.add_argument("--filler", required=True)
    duel.add_argument("--emptier", required=True)
    duel.add_argument("--variant", default="single",
                      choices=[v.value for v in Variant])
    duel.add_argument("--n", type=int, default=8)
    duel.add_argument("--p", type=int, default=1)
    duel.add_argument("--epsilon", default="1/4")
    duel.add_argument("--delta", default="0")
    duel.add_argument("--steps", type=int, default=100)
    duel.add_argument("--trials", type=int, default=1)
    duel.add_argument("--seed", type=int, default=0)
    duel.add_argument("--workers", type=int, default=1)
    duel.add_argument("--verify", default="invariants", choices=["off", "invariants", "full"])
    duel.add_argument("--thresholds", default="", help="comma-separated backlog levels")
    duel.add_argument("--filler-param", action="append", metavar="KEY=VALUE")
    duel.add_argument("--emptier-param", action="append", metavar="KEY=VALUE")
    duel.add_argument("--json", action="store_true")
    duel.add_argument("--oblivious-only", action="store_true",
                      help="refuse fillers that observe the emptier")
    duel.set_defaults(func=_cmd_duel)

    sweep = sub.add_parser("sweep", help="run a spec across parameter values")
    sweep.add_argument("spec")
    sweep.add_argument("--param", required=True, help="dotted spec field to vary")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--out", default="sweep")
    sweep.add_argument("--set", action="append", metavar="KEY=VALUE")
    sweep.add_argument("--workers", type=int, default=1)
    sweep.add_argument("--no-figures", action="store_true")
    sweep.set_defaults(func=_cmd_sweep)

    verify = sub.add_parser("verify", help="run the verification suite")
    verify.add_argument("suite", nargs="?", default="fast")
    verify.add_argument("--seed", type=int, default=20260823)
    verify.set_defaults(func=_cmd_verify)

    replay = sub.add_parser("replay", help="re-check a recorded trace")
    replay.add_argument("trace", help="JSONL trace file")
    replay.set_defaults(func=_cmd_replay)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvariantViolationError, StrategyProtocolError, InvalidMoveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except (
        InvalidConfigError,
        NonRepresentableError,
        NegativeAmountError,
        SetupError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CupGameError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
