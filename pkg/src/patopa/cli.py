"""Command line entry point.

Subcommands::

    patopa generate    write noisy/clean measurement CSVs per level and trial
    patopa estimate    fit one method to a measurement CSV, write JSON
    patopa experiment  run a level x trial x method sweep, write CSV tables
    patopa report      re-aggregate a trials table into a summary

Errors are printed to stderr as one JSON object and mapped to exit codes:
1 other, 2 invalid argument, 3 parse error, 4 insufficient data,
5 non-generic TLS, 6 iteration failure, 7 singular system.
Set ``PATOPA_LOG`` (DEBUG, INFO, WARNING) for log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ParseError, PatopaError
from .experiment import (METHODS, ExperimentConfig, make_trial, read_trials, run_experiment,
                         run_method, trace_figures, trial_seeds, write_outputs, write_summary)
from .grid_model import complete_candidate_graph, load_feeder
from .joint import NoiseInfo, PatopaOptions
from .metrics import aggregate
from .scenario_gen import MeasurementSet, read_measurements, write_measurements

log = logging.getLogger("patopa")


def _config(args) -> ExperimentConfig:
    overrides = {
        "feeder": args.feeder,
        "noise_levels": args.noise_level,
        "trials": args.trials,
        "samples": args.samples,
        "seed": args.seed,
        "workers": args.workers,
        "out": args.out,
        "methods": getattr(args, "method", None),
    }
    if args.config:
        return ExperimentConfig.from_json(args.config, **overrides)
    known = {f.name for f in fields(ExperimentConfig)}
    return ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None and k in known})


def cmd_generate(args) -> int:
    config = _config(args)
    topo, params = load_feeder(config.feeder_path())
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidArgumentError(f"cannot create output directory {out}: {exc}") from exc
    manifest = []
    for li, level in enumerate(config.noise_levels):
        for k in range(config.trials):
            ms = make_trial(topo, params, config, li, k)
            meas = out / f"meas_L{li:02d}_T{k:03d}.csv"
            truth = out / f"truth_L{li:02d}_T{k:03d}.csv"
            write_measurements(meas, ms)
            write_measurements(truth, ms.truth)
            manifest.append({"level_index": li, "noise_level": level, "trial": k,
                             "seeds": list(trial_seeds(config.seed, li, k)),
                             "measurements": meas.name, "truth": truth.name})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"wrote {len(manifest)} measurement files to {out}")
    return 0


def cmd_estimate(args) -> int:
    ms = read_measurements(args.input)
    method = (args.method[0] if args.method else "PATOPA").upper()
    if method not in METHODS:
        raise InvalidArgumentError(f"unknown method {method!r}")
    level = args.noise_level[0] if args.noise_level else 0.0
    missing = frozenset(args.missing_angle_buses or ())
    if missing:
        Theta = np.array(ms.Theta)
        Theta[:, sorted(missing)] = 0.0
        ms = MeasurementSet(ms.V, Theta, ms.P, ms.Q, missing_angle_buses=missing)
    noise = NoiseInfo.from_relative(ms, level)
    options = PatopaOptions(max_iter=args.max_iter, tol=args.tol,
                            likelihood_slack=args.likelihood_slack)
    candidates = complete_candidate_graph(ms.n_bus)
    edges, params, res = run_method(method, ms, candidates, options, noise)
    if method == "PATOPA":
        doc = res.to_dict()
    else:
        doc = {
            "edges": [list(e) for e in candidates.edges],
            "g": params.g.tolist(),
            "b": params.b.tolist(),
            "log_likelihood": res.log_likelihood,
            "iterations": res.iterations,
            "ll_trace": list(res.ll_trace),
            "cond_trace": list(res.cond_trace),
        }
    doc["method"] = method
    doc["noise_level"] = level
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def cmd_experiment(args) -> int:
    config = _config(args)
    reports, summary = run_experiment(config)
    ll_rows, cond_rows = trace_figures(config)
    out = write_outputs(config.out, config, reports, summary, ll_rows, cond_rows)
    _print_summary(summary)
    print(f"results written to {out}")
    if reports and all(r.error for r in reports):
        return 1
    return 0


def cmd_report(args) -> int:
    out = Path(args.out or "results")
    reports = read_trials(out / "trials.csv")
    summary = aggregate(reports)
    write_summary(out / "summary.csv", summary)
    _print_summary(summary)
    return 0


def _print_summary(summary):
    print(f"{'method':<10} {'level':>6} {'n':>3} {'mse_mean':>11} {'mse_std':>11} "
          f"{'jac_mean':>8} {'jac_std':>8}   (population std)")
    for r in summary:
        print(f"{r['method']:<10} {r['noise_level']:>6.3f} {r['trials']:>3d} "
              f"{r['mse_mean']:>11.4e} {r['mse_std']:>11.4e} "
              f"{r['jaccard_mean']:>8.4f} {r['jaccard_std']:>8.4f}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config; flags override its fields")
    common.add_argument("--feeder", help="feeder JSON path or built-in name (feeder8, feeder123)")
    common.add_argument("--method", action="append", type=str.upper, choices=METHODS,
                        help="estimation method (repeatable for experiment)")
    common.add_argument("--noise-level", action="append", type=float,
                        help="relative noise level (repeatable)")
    common.add_argument("--trials", type=int)
    common.add_argument("--samples", type=int, help="time steps per trial (T)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help="output directory (or result file for estimate)")

    parser = argparse.ArgumentParser(prog="patopa", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write measurement CSVs")
    est = sub.add_parser("estimate", parents=[common], help="fit one measurement file")
    est.add_argument("input", help="measurement CSV (t, bus, v, theta, p, q)")
    est.add_argument("--missing-angle-buses", type=int, nargs="*")
    est.add_argument("--max-iter", type=int, default=500)
    est.add_argument("--tol", type=float, default=1e-10)
    est.add_argument("--likelihood-slack", type=float, default=0.2)
    sub.add_parser("experiment", parents=[common], help="run a method comparison sweep")
    sub.add_parser("report", parents=[common], help="summarise an experiment directory")
    return parser


COMMANDS = {"generate": cmd_generate, "estimate": cmd_estimate,
            "experiment": cmd_experiment, "report": cmd_report}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PATOPA_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except PatopaError as exc:
        json.dump({"error": exc.category, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
