"""Joint topology and line-parameter estimation.

Starting from a candidate edge set (by default every bus pair), the loop
alternates a weighted error-in-variables fit over the current edges with
a likelihood-validated binary search that drops the edges with the
smallest estimated conductance. It stops once no further edge can be
removed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, InvalidArgumentError, IterationFailureError
from .estimators import eiv_log_likelihood, glra_diag
from .feature_builder import MISSING_ANGLE_STD, VARIANCE_FLOOR, FeatureSystem, build_system
from .grid_model import (GridTopology, LineParams, complete_candidate_graph, embed_params,
                         restrict_topology)
from .scenario_gen import MeasurementSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseInfo:
    """Per-bus noise standard deviations the estimator assumes."""

    sigma_v: np.ndarray
    sigma_theta: np.ndarray
    sigma_p: np.ndarray
    sigma_q: np.ndarray
    missing_angle_std: float = MISSING_ANGLE_STD

    @classmethod
    def from_measurements(cls, ms: MeasurementSet, missing_angle_std=MISSING_ANGLE_STD) -> NoiseInfo:
        """Use the noise levels recorded when ``ms`` was generated."""
        n = ms.n_bus
        sigma = ms.sigma or {}
        get = lambda ch: np.asarray(sigma.get(ch, np.zeros(n)), dtype=float)
        return cls(get("v"), get("theta"), get("p"), get("q"), missing_angle_std)

    @classmethod
    def from_relative(cls, ms: MeasurementSet, level, missing_angle_std=MISSING_ANGLE_STD) -> NoiseInfo:
        """``level`` times the observed per-column spread of each channel."""
        level = float(level)
        return cls(level * ms.V.std(axis=0), level * ms.Theta.std(axis=0),
                   level * ms.P.std(axis=0), level * ms.Q.std(axis=0), missing_angle_std)


@dataclass(frozen=True)
class PatopaOptions:
    max_iter: int = 500
    tol: float = 1e-10
    probe_max_iter: int = 50
    likelihood_slack: float = 0.2
    # absolute acceptance margin; only matters when the likelihoods sit at rounding level
    likelihood_atol: float = 1e-6
    train_fraction: float = 2.0 / 3.0
    variance_floor: float = VARIANCE_FLOOR


@dataclass
class TopoSearchState:
    """Binary-search bookkeeping over the ascending conductance list."""

    i_min: int
    i_max: int
    baseline_ll: float
    i_curr: int | None = None
    accepted_cut: int = 0
    probes: list = field(default_factory=list)


@dataclass
class PatopaResult:
    """Final edge set with parameters on the full candidate indexing.

    Removed candidates carry ``g = b = 0``. ``trace`` has one entry per
    outer iteration (edge count, log-likelihood, cut index).
    """

    topology: GridTopology
    candidates: GridTopology
    g_hat: np.ndarray
    b_hat: np.ndarray
    outer_iterations: int
    trace: list
    log_likelihood: float

    @property
    def edges(self):
        return self.topology.edges

    @property
    def params(self) -> LineParams:
        return LineParams(self.g_hat, self.b_hat)

    def edge_params(self) -> LineParams:
        """Parameters of the retained edges only, in ``topology`` order."""
        index = self.candidates.edge_index()
        keep = [index[e] for e in self.topology.edges]
        return LineParams(self.g_hat[keep], self.b_hat[keep])

    def to_dict(self) -> dict:
        return {
            "edges": [list(e) for e in self.topology.edges],
            "g": self.edge_params().g.tolist(),
            "b": self.edge_params().b.tolist(),
            "outer_iterations": self.outer_iterations,
            "log_likelihood": self.log_likelihood,
            "trace": self.trace,
        }


def train_validation_split(T: int, train_fraction=2.0 / 3.0) -> int:
    """Number of leading time steps used for training."""
    n_train = math.ceil(train_fraction * T)
    if n_train < 1 or n_train >= T:
        raise InsufficientDataError(f"cannot split {T} time steps into train and validation")
    return n_train


def topo_est(fs: FeatureSystem, g, b, options: PatopaOptions | None = None,
             state: TopoSearchState | None = None) -> int:
    """Binary search for the conductance cut that removes disconnected edges.

    ``fs`` columns must be ordered by ascending ``g``. Returns the index of
    the smallest conductance that is kept. A probe keeping edges
    ``g >= g[i]`` is accepted when its validation log-likelihood ``l~``
    satisfies ``l~ > l - slack * |l|`` with ``l`` the likelihood of the
    full candidate model.
    """
    options = options or PatopaOptions()
    g = np.asarray(g, dtype=float)
    b = np.asarray(b, dtype=float)
    m = g.size
    if m < 2:
        raise InvalidArgumentError(f"binary search needs at least 2 edges, got {m}")
    if fs.n_edges != m or b.size != m:
        raise InvalidArgumentError(f"{m} conductances for a system with {fs.n_edges} edges")
    if np.any(np.diff(g) < 0):
        raise InvalidArgumentError("conductances must be sorted in ascending order")

    n_train = train_validation_split(fs.T, options.train_fraction)
    train = fs.time_steps(0, n_train)
    val = fs.time_steps(n_train, fs.T)

    l_base = eiv_log_likelihood(val.X, val.y, g, b, val.weights())
    threshold = l_base - options.likelihood_slack * abs(l_base) - options.likelihood_atol
    if state is None:
        state = TopoSearchState(0, m - 1, l_base)
    state.i_min, state.i_max, state.baseline_ll = 0, m - 1, l_base

    probe = 0
    while state.i_max > state.i_min + 1:
        i = (state.i_min + state.i_max) // 2
        state.i_curr = i
        keep = np.flatnonzero(g >= g[i])
        try:
            fit = glra_diag(train.select_edges(keep), max_iter=options.probe_max_iter,
                            tol=options.tol, track_condition=False)
        except IterationFailureError as exc:
            raise IterationFailureError(f"refit failed at probe {probe} (cut {i}): {exc}",
                                        iteration=exc.iteration, probe=probe) from exc
        v = val.select_edges(keep)
        l_probe = eiv_log_likelihood(v.X, v.y, fit.g_hat, fit.b_hat, v.weights())
        accepted = l_probe > threshold
        state.probes.append({"cut": int(i), "kept": int(keep.size),
                             "log_likelihood": l_probe, "accepted": bool(accepted)})
        log.debug("probe %d: cut=%d kept=%d l=%.6g (baseline %.6g) -> %s",
                  probe, i, keep.size, l_probe, l_base, "accept" if accepted else "reject")
        if accepted:
            state.i_min = i
        else:
            state.i_max = i
        probe += 1
    state.accepted_cut = state.i_min
    return state.i_min


def update_topo(topo: GridTopology, g, cut: int):
    """Keep the edges whose conductance is at least the ``cut``-th smallest.

    Returns ``(topology, kept_indices)``; ties at the threshold are kept.
    """
    g = np.asarray(g, dtype=float)
    if g.size != topo.n_edges:
        raise InvalidArgumentError(f"{g.size} conductances for {topo.n_edges} edges")
    if not 0 <= cut < max(g.size, 1):
        raise InvalidArgumentError(f"cut {cut} out of range for {g.size} edges")
    if g.size == 0:
        return topo, np.array([], dtype=np.intp)
    threshold = np.sort(g)[cut]
    keep = np.flatnonzero(g >= threshold)
    return restrict_topology(topo, keep), keep


def _check_data(n_bus, T, m):
    if 2 * n_bus * T < 2 * m + 1:
        need = math.ceil((2 * m + 1) / (2 * n_bus))
        raise InsufficientDataError(
            f"{T} time steps give {2 * n_bus * T} equations for {2 * m + 1} unknowns; "
            f"need T >= {need}",
            required_samples=need,
        )


def patopa(ms: MeasurementSet, noise: NoiseInfo | None = None,
           options: PatopaOptions | None = None,
           candidates: GridTopology | None = None) -> PatopaResult:
    """Estimate topology and line parameters from noisy measurements.

    Parameters
    ----------
    ms : MeasurementSet
        Voltage phasors and injections. Angles of
        ``ms.missing_angle_buses`` are treated as unknown.
    noise : NoiseInfo, optional
        Assumed measurement noise; defaults to the levels recorded in ``ms``.
    options : PatopaOptions, optional
    candidates : GridTopology, optional
        Starting edge set; every bus pair when omitted.
    """
    options = options or PatopaOptions()
    noise = noise or NoiseInfo.from_measurements(ms)
    if candidates is None:
        candidates = complete_candidate_graph(ms.n_bus)
    elif candidates.n_bus != ms.n_bus:
        raise InvalidArgumentError(
            f"candidate graph has {candidates.n_bus} buses, measurements {ms.n_bus}"
        )
    if candidates.n_edges == 0:
        raise InvalidArgumentError("candidate edge set is empty")
    _check_data(ms.n_bus, ms.T, candidates.n_edges)

    full = build_system(candidates, ms, noise, floor=options.variance_floor)
    active = np.arange(candidates.n_edges)
    trace = []
    it = 0
    while True:
        it += 1
        _check_data(ms.n_bus, ms.T, active.size)
        fs = full.select_edges(active)
        fit = glra_diag(fs, max_iter=options.max_iter, tol=options.tol, track_condition=False)
        entry = {"iteration": it, "edges": int(active.size),
                 "log_likelihood": fit.log_likelihood, "solver_iterations": fit.iterations}
        if active.size < 2:
            entry["cut"] = 0
            trace.append(entry)
            break
        order = np.argsort(fit.g_hat, kind="stable")
        cut = topo_est(fs.select_edges(order), fit.g_hat[order], fit.b_hat[order], options)
        entry["cut"] = int(cut)
        trace.append(entry)
        current = restrict_topology(candidates, active)
        _, keep = update_topo(current, fit.g_hat, cut)
        log.info("outer iteration %d: %d edges, cut %d -> %d edges",
                 it, active.size, cut, keep.size)
        if keep.size == active.size:
            break
        active = active[keep]

    final_topo = restrict_topology(candidates, active)
    params = embed_params(final_topo, LineParams(fit.g_hat, fit.b_hat), candidates)
    return PatopaResult(final_topo, candidates, params.g, params.b, it, trace,
                        fit.log_likelihood)


def estimate_with_missing_angles(ms: MeasurementSet, missing, noise: NoiseInfo | None = None,
                                 options: PatopaOptions | None = None,
                                 candidates: GridTopology | None = None) -> PatopaResult:
    """Run :func:`patopa` treating the angles of ``missing`` buses as unknown.

    Those angles are replaced by zero and their noise std is inflated to
    ``noise.missing_angle_std``.
    """
    missing = frozenset(int(k) for k in missing)
    if missing and (min(missing) < 0 or max(missing) >= ms.n_bus):
        raise InvalidArgumentError(f"missing-angle buses {sorted(missing)} out of range")
    if len(missing) >= ms.n_bus:
        raise InvalidArgumentError("at least one bus must report its phase angle")
    Theta = np.array(ms.Theta)
    if missing:
        Theta[:, sorted(missing)] = 0.0
    masked = MeasurementSet(ms.V, Theta, ms.P, ms.Q, truth=ms.truth, sigma=ms.sigma,
                            missing_angle_buses=missing | ms.missing_angle_buses)
    return patopa(masked, noise, options, candidates)
