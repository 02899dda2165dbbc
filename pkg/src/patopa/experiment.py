"""Noise-level x trial x method sweeps and their CSV outputs.

Per-trial seeds come from ``numpy.random.SeedSequence([master, level_index,
trial])``; the first spawned child seeds the voltage profiles and the
second the measurement noise.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ParseError, PatopaError
from .estimators import glra_diag, ols, tls
from .feature_builder import MISSING_ANGLE_STD, VARIANCE_FLOOR, build_system
from .grid_model import (GridTopology, LineParams, builtin_feeder, complete_candidate_graph,
                         embed_params, load_feeder)
from .joint import NoiseInfo, PatopaOptions, patopa
from .metrics import SUMMARY_FIELDS, TrialReport, aggregate, jaccard, param_mse, threshold_topology
from .scenario_gen import MeasurementSet, NoiseSpec, apply_noise, simulate

log = logging.getLogger(__name__)

METHODS = ("OLS", "TLS", "GLRA_DIAG", "PATOPA")
CSV_SUMMARY_FIELDS = ("method", "noise_level", "trials", "mse_mean", "mse_std",
                      "jaccard_mean", "jaccard_std", "runtime_mean")


@dataclass
class ExperimentConfig:
    feeder: str = "feeder8"
    samples: int = 500
    noise_levels: list = field(default_factory=lambda: [0.0, 0.01, 0.05, 0.10])
    trials: int = 30
    methods: list = field(default_factory=lambda: list(METHODS))
    tol: float = 1e-10
    max_iter: int = 500
    probe_max_iter: int = 50
    likelihood_slack: float = 0.2
    variance_floor: float = VARIANCE_FLOOR
    missing_angle_buses: list = field(default_factory=list)
    missing_angle_std: float = MISSING_ANGLE_STD
    truncation_d: float | None = None
    out: str = "results"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.methods = [str(m).upper() for m in self.methods]
        self.noise_levels = [float(x) for x in self.noise_levels]
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise InvalidArgumentError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if int(self.trials) < 1:
            raise InvalidArgumentError(f"trials must be >= 1, got {self.trials}")
        if any(x < 0 for x in self.noise_levels):
            raise InvalidArgumentError("noise levels must be >= 0")
        if int(self.samples) < 1:
            raise InvalidArgumentError(f"samples must be >= 1, got {self.samples}")

    @classmethod
    def from_json(cls, path, **overrides) -> ExperimentConfig:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ParseError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ParseError(f"unknown config keys {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)

    def options(self) -> PatopaOptions:
        return PatopaOptions(max_iter=self.max_iter, tol=self.tol,
                             probe_max_iter=self.probe_max_iter,
                             likelihood_slack=self.likelihood_slack,
                             variance_floor=self.variance_floor)

    def feeder_path(self) -> Path:
        p = Path(self.feeder)
        return p if p.suffix == ".json" or p.exists() else builtin_feeder(self.feeder)


def trial_seeds(master: int, level_index: int, trial: int) -> tuple[int, int]:
    """Deterministic (profile_seed, noise_seed) for one trial."""
    ss = np.random.SeedSequence([int(master), int(level_index), int(trial)])
    a, b = ss.spawn(2)
    return int(a.generate_state(1)[0]), int(b.generate_state(1)[0])


def make_trial(topo, params, config: ExperimentConfig, level_index: int, trial: int) -> MeasurementSet:
    profile_seed, noise_seed = trial_seeds(config.seed, level_index, trial)
    clean = simulate(topo, params, config.samples, profile_seed)
    spec = NoiseSpec.uniform(config.noise_levels[level_index], truncation_d=config.truncation_d,
                             missing_angle_buses=config.missing_angle_buses, seed=noise_seed)
    return apply_noise(clean, spec)


def baseline_threshold(params: LineParams) -> float:
    """Half the smallest true conductance."""
    return 0.5 * float(np.min(params.g))


def run_method(method: str, ms: MeasurementSet, candidates: GridTopology,
               options: PatopaOptions, noise: NoiseInfo | None = None, threshold=None):
    """Fit one method; returns (edge set, parameters on ``candidates``, result).

    Baselines without their own topology step get ``threshold_topology``
    applied to their conductances when ``threshold`` is given.
    """
    noise = noise or NoiseInfo.from_measurements(ms)
    if method == "PATOPA":
        res = patopa(ms, noise, options, candidates)
        return set(res.edges), res.params, res
    fs = build_system(candidates, ms, noise, floor=options.variance_floor)
    if method == "OLS":
        res = ols(fs)
    elif method == "TLS":
        res = tls(fs)
    elif method == "GLRA_DIAG":
        res = glra_diag(fs, max_iter=options.max_iter, tol=options.tol, track_condition=False)
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    params = LineParams(res.g_hat, res.b_hat)
    if threshold is None:
        edges = set(candidates.edges)
    else:
        edges = threshold_topology(res.g_hat, threshold, candidates.edges)
    return edges, params, res


def _run_trial(job):
    config, level_index, trial = job
    topo, params = load_feeder(config.feeder_path())
    candidates = complete_candidate_graph(topo.n_bus)
    truth = embed_params(topo, params, candidates)
    options = config.options()
    level = config.noise_levels[level_index]
    seed = trial_seeds(config.seed, level_index, trial)[1]
    ms = make_trial(topo, params, config, level_index, trial)
    noise = NoiseInfo.from_measurements(ms, config.missing_angle_std)
    reports = []
    for method in config.methods:
        t0 = time.perf_counter()
        try:
            edges, est, res = run_method(method, ms, candidates, options, noise,
                                         threshold=baseline_threshold(params))
        except PatopaError as exc:
            log.warning("%s failed at level %g trial %d: %s", method, level, trial, exc)
            reports.append(TrialReport(method, level, seed, float("nan"), float("nan"),
                                       time.perf_counter() - t0, False, trial,
                                       f"{exc.category}: {exc}"))
            continue
        reports.append(TrialReport(
            method, level, seed,
            param_mse(est, truth),
            jaccard(edges, topo.edges),
            time.perf_counter() - t0,
            bool(getattr(res, "converged", True)),
            trial,
        ))
    return level_index, trial, reports


def trace_figures(config: ExperimentConfig):
    """Likelihood and condition-number traces of the diagonal relaxation.

    Uses trial 0 of every noise level on the full candidate graph and
    pairs each trace with the closed-form total-least-squares value.
    """
    topo, params = load_feeder(config.feeder_path())
    candidates = complete_candidate_graph(topo.n_bus)
    ll_rows, cond_rows = [], []
    for li, level in enumerate(config.noise_levels):
        ms = make_trial(topo, params, config, li, 0)
        fs = build_system(candidates, ms, NoiseInfo.from_measurements(ms, config.missing_angle_std),
                          floor=config.variance_floor)
        try:
            ref = tls(fs)
            res = glra_diag(fs, max_iter=config.max_iter, tol=config.tol)
        except PatopaError as exc:
            log.warning("trace run failed at level %g: %s", level, exc)
            continue
        for k, (ll, cn) in enumerate(zip(res.ll_trace, res.cond_trace), start=1):
            ll_rows.append({"noise_level": level, "iteration": k, "ll_diag": ll,
                            "ll_identity": ref.log_likelihood})
            cond_rows.append({"noise_level": level, "iteration": k, "cond_diag": cn,
                              "cond_identity": ref.cond_trace[0]})
    return ll_rows, cond_rows


def run_experiment(config: ExperimentConfig):
    """Run the full sweep; returns ``(reports, summary_rows)`` in a stable order."""
    jobs = [(config, li, k) for li in range(len(config.noise_levels))
            for k in range(int(config.trials))]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(j) for j in jobs]
    results.sort(key=lambda r: (r[0], r[1]))
    order = {m: i for i, m in enumerate(config.methods)}
    reports = [rep for _, _, reps in results for rep in sorted(reps, key=lambda r: order[r.method])]
    return reports, aggregate(reports)


def _write_csv(path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(header), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


def write_summary(path, summary):
    _write_csv(path, summary, CSV_SUMMARY_FIELDS)


def read_trials(path) -> list[TrialReport]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return [TrialReport(r["method"], float(r["noise_level"]), int(r["seed"]),
                            float(r["param_mse"]), float(r["jaccard"]), float(r["runtime"]),
                            r["converged"] == "True", int(r["trial"]), r.get("error", ""))
                for r in rows]
    except (OSError, KeyError, ValueError) as exc:
        raise ParseError(f"cannot read trial table {path}: {exc}") from exc


def write_outputs(out_dir, config, reports, summary, ll_rows, cond_rows):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(config), indent=1))
    trial_fields = [f.name for f in fields(TrialReport)]
    _write_csv(out / "trials.csv", [r.as_row() for r in reports], trial_fields)
    write_summary(out / "summary.csv", summary)
    _write_csv(out / "fig_mse_vs_level.csv", summary,
               ("method", "noise_level", "trials", "mse_mean", "mse_std", "mse_min", "mse_max"))
    _write_csv(out / "fig_jaccard_vs_level.csv", summary,
               ("method", "noise_level", "trials", "jaccard_mean", "jaccard_std",
                "jaccard_min", "jaccard_max"))
    _write_csv(out / "fig_loglik_vs_iteration.csv", ll_rows,
               ("noise_level", "iteration", "ll_diag", "ll_identity"))
    _write_csv(out / "fig_condition_vs_iteration.csv", cond_rows,
               ("noise_level", "iteration", "cond_diag", "cond_identity"))
    return out


__all__ = ["ExperimentConfig", "METHODS", "SUMMARY_FIELDS", "trial_seeds", "make_trial",
           "run_method", "run_experiment", "trace_figures", "write_outputs", "read_trials",
           "write_summary", "baseline_threshold"]
