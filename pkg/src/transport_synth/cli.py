"""Command-line interface.

Three subcommands:

* ``estimate`` — run one estimator (or the bounds / positivity diagnostic)
  on study data read from CSV, writing a JSON summary;
* ``simulate`` — run the simulation study and write the results table;
* ``truth`` — compute the true target-population risk difference of the
  synthetic design by Monte Carlo integration.

Exit codes: 1 for usage or configuration problems, 2 for data problems,
3 for estimation failures (non-convergence, separation, infinite weights,
too many failed Monte Carlo reps).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from importlib.metadata import PackageNotFoundError, version
from importlib.resources import files
from pathlib import Path

import numpy as np

from . import mest
from .data import DataError, StudyDataset, read_study_csv, read_two_file_csv
from .datagen import GenerationConfig, true_risk_difference
from .dists import SeededRng, distribution_from_config
from .estimators import (
    MSM_DESIGN,
    EffectEstimate,
    SynthesisSpec,
    nonparametric_bounds,
    positivity_diagnostic,
    restrict_covariates_gcomp,
    restrict_covariates_ipw,
    restrict_population_gcomp,
    restrict_population_ipw,
    synthesis_gcomp,
    synthesis_ipw,
)
from .glm import DesignSpec
from .simstudy import (
    DEFAULT_SEED,
    SCENARIO_ORDER,
    SimulationConfig,
    render_table,
    result_records,
    run_simulation,
)

_RESTRICTION = {
    "restrict-pop-g": restrict_population_gcomp,
    "restrict-pop-ipw": restrict_population_ipw,
    "restrict-cov-g": restrict_covariates_gcomp,
    "restrict-cov-ipw": restrict_covariates_ipw,
}

_METHODS = tuple(_RESTRICTION) + ("synth-g", "synth-ipw", "bounds", "diagnose")


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _package_version() -> str:
    try:
        return version("transport-synth")
    except PackageNotFoundError:
        return "unknown"


def _design(text: str) -> DesignSpec:
    return DesignSpec.from_strings(tuple(t.strip() for t in text.split(",") if t.strip()))


def _bundled_config_names() -> list[str]:
    root = files("transport_synth").joinpath("configs")
    return sorted(p.name[:-len(".json")] for p in root.iterdir()
                  if p.name.endswith(".json"))


def _load_shift_config(spec: str) -> dict:
    """Read a shift-distribution config from a path or a bundled name."""
    path = Path(spec)
    if path.is_file():
        text = path.read_text()
    else:
        name = spec if spec.endswith(".json") else f"{spec}.json"
        resource = files("transport_synth").joinpath("configs", name)
        if not resource.is_file():
            raise ValueError(
                f"config {spec!r} is neither a file nor a bundled config; "
                f"bundled configs: {', '.join(_bundled_config_names())}"
            )
        text = resource.read_text()
    record = json.loads(text)
    keys = set(record)
    if keys == {"b0", "b1"}:
        return {"b0": distribution_from_config(record["b0"]),
                "b1": distribution_from_config(record["b1"])}
    if keys == {"joint"}:
        return {"joint": distribution_from_config(record["joint"])}
    raise ValueError(
        "shift config must contain exactly the keys 'b0' and 'b1', or 'joint'; "
        f"got {sorted(keys)}"
    )


def _read_data(args) -> StudyDataset:
    if args.data is not None:
        if args.trial is not None or args.target is not None:
            raise ValueError("use either --data or --trial/--target, not both")
        return read_study_csv(args.data)
    if args.trial is None or args.target is None:
        raise ValueError("provide --data, or both --trial and --target")
    return read_two_file_csv(args.trial, args.target)


def _emit(payload: dict, output: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


def _cmd_estimate(args) -> int:
    data = _read_data(args)
    outcome_design = _design(args.outcome_design)
    selection_design = _design(args.selection_design)

    if args.method == "diagnose":
        strata = tuple(s.strip() for s in args.strata.split(",") if s.strip())
        gaps = positivity_diagnostic(data, strata)
        _emit({"strata": list(strata), "n_gaps": len(gaps),
               "gaps": [gap.to_record() for gap in gaps]}, args.output)
        return 0

    if args.method == "bounds":
        lower, upper = nonparametric_bounds(data, outcome_design)
        _emit({"method": "bounds", "lower": lower, "upper": upper,
               "width": upper - lower}, args.output)
        return 0

    if args.method in _RESTRICTION:
        design = selection_design if args.method.endswith("ipw") else outcome_design
        estimate: EffectEstimate = _RESTRICTION[args.method](data, design)
    else:
        if args.config is None:
            raise ValueError(f"--config is required for method {args.method}")
        shifts = _load_shift_config(args.config)
        stat_design = MSM_DESIGN if args.method == "synth-ipw" else outcome_design
        spec = SynthesisSpec(stat_design=stat_design, mc_reps=args.reps,
                             seed=args.seed, **shifts)
        if args.method == "synth-g":
            estimate = synthesis_gcomp(data, spec)
        else:
            estimate = synthesis_ipw(data, spec, selection_design)
        if args.draws_out is not None:
            np.savetxt(args.draws_out, estimate.draws, fmt="%.17g")
    _emit(estimate.to_record(), args.output)
    return 0


def _progress_printer(total: int):
    step = max(1, total // 10)

    def report(done: int, _total: int) -> None:
        if done % step == 0 or done == total:
            print(f"  {done}/{total} iterations", file=sys.stderr, flush=True)

    return report


def _cmd_simulate(args) -> int:
    scenarios = tuple(args.scenario) if args.scenario else SCENARIO_ORDER
    config = SimulationConfig(
        iterations=args.iterations,
        mc_reps=args.reps,
        seed=args.seed,
        n_truth=args.truth_n,
        scenarios=scenarios,
        generation=GenerationConfig(n_target=args.n_target, n_trial=args.n_trial,
                                    n_evidence=args.n_evidence),
    )
    progress = None if args.quiet else _progress_printer(args.iterations)
    result = run_simulation(config, workers=args.workers, progress=progress)
    table = render_table(result)
    sys.stdout.write(table)
    if args.output_table is not None:
        Path(args.output_table).write_text(table)
    if args.output_csv is not None:
        records = result_records(result)
        with open(args.output_csv, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(records[0]))
            writer.writeheader()
            writer.writerows(records)
    return 0


def _cmd_truth(args) -> int:
    value = true_risk_difference(args.n, SeededRng(args.seed).child(0))
    _emit({"risk_difference": value, "n": args.n, "seed": args.seed}, args.output)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(
        prog="transport-synth",
        description="Transport a trial effect to a target population whose "
                    "unrepresented stratum requires external evidence.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {_package_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="run one estimator on CSV data")
    est.add_argument("--method", required=True, choices=_METHODS)
    est.add_argument("--data", help="single CSV with an R column (1=target, 2=trial)")
    est.add_argument("--trial", help="trial-only CSV (paired with --target)")
    est.add_argument("--target", help="target-only CSV (paired with --trial)")
    est.add_argument("--outcome-design", default="1,A,V,V^2",
                     help="comma-separated outcome-model terms (default: %(default)s)")
    est.add_argument("--selection-design", default="1,V,V^2",
                     help="comma-separated selection-model terms (default: %(default)s)")
    est.add_argument("--config",
                     help="shift-distribution JSON (path or bundled name; "
                          "required for synth-g / synth-ipw)")
    est.add_argument("--reps", type=int, default=5000,
                     help="Monte Carlo reps for synthesis (default: %(default)s)")
    est.add_argument("--seed", type=int, default=DEFAULT_SEED,
                     help="master seed (default: %(default)s)")
    est.add_argument("--strata", default="V,W",
                     help="variables defining diagnostic strata (default: %(default)s)")
    est.add_argument("--draws-out", help="write synthesis draws, one per line")
    est.add_argument("--output", help="write the JSON summary here instead of stdout")
    est.set_defaults(func=_cmd_estimate)

    sim = sub.add_parser("simulate", help="run the simulation study")
    sim.add_argument("--iterations", type=int, default=2000)
    sim.add_argument("--reps", type=int, default=5000,
                     help="Monte Carlo reps per synthesis estimate")
    sim.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sim.add_argument("--workers", type=int, default=max(1, os.cpu_count() or 1),
                     help="worker processes (default: all cores; results do "
                          "not depend on this)")
    sim.add_argument("--scenario", action="append", choices=SCENARIO_ORDER,
                     help="restrict to this scenario (repeatable; default: all)")
    sim.add_argument("--n-target", type=int, default=1000)
    sim.add_argument("--n-trial", type=int, default=1000)
    sim.add_argument("--n-evidence", type=int, default=2000)
    sim.add_argument("--truth-n", type=int, default=10_000_000,
                     help="Monte Carlo size for the true effect")
    sim.add_argument("--output-csv", help="write per-row metrics as CSV")
    sim.add_argument("--output-table", help="write the text table here too")
    sim.add_argument("--quiet", action="store_true", help="suppress progress")
    sim.set_defaults(func=_cmd_simulate)

    tru = sub.add_parser("truth", help="Monte Carlo truth for the synthetic design")
    tru.add_argument("--n", type=int, default=10_000_000)
    tru.add_argument("--seed", type=int, default=DEFAULT_SEED)
    tru.add_argument("--output", help="write the JSON summary here instead of stdout")
    tru.set_defaults(func=_cmd_truth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except mest.MEstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
