"""Accuracy measures for estimated topologies and line parameters."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import InvalidArgumentError
from .grid_model import LineParams


@dataclass
class TrialReport:
    method: str
    noise_level: float
    seed: int
    param_mse: float
    jaccard: float
    runtime: float
    converged: bool = True
    trial: int = 0
    error: str = ""

    def as_row(self) -> dict:
        return asdict(self)


def _canon(edges):
    return {(min(int(a), int(b)), max(int(a), int(b))) for a, b in edges}


def jaccard(A, B) -> float:
    """``|A & B| / |A | B|`` on undirected edges; two empty sets give 1."""
    A, B = _canon(A), _canon(B)
    union = A | B
    if not union:
        return 1.0
    return len(A & B) / len(union)


def param_mse(est: LineParams, truth: LineParams, est_edges=None, truth_edges=None) -> float:
    """Mean squared error over the stacked ``[g; b]`` vectors.

    Without edge lists both parameter sets must already share one indexing.
    With edge lists they are aligned on the union of both edge sets, absent
    edges counting as zero.
    """
    if (est_edges is None) != (truth_edges is None):
        raise InvalidArgumentError("give edge lists for both estimate and truth, or neither")
    if est_edges is None:
        if len(est) != len(truth):
            raise InvalidArgumentError(
                f"cannot align {len(est)} estimated with {len(truth)} true parameters"
            )
        diff = est.stacked - truth.stacked
        return float(np.mean(diff * diff)) if diff.size else 0.0
    if len(est_edges) != len(est) or len(truth_edges) != len(truth):
        raise InvalidArgumentError("edge lists do not match parameter lengths")
    est_map = {e: k for k, e in enumerate(_canon_list(est_edges))}
    true_map = {e: k for k, e in enumerate(_canon_list(truth_edges))}
    union = sorted(set(est_map) | set(true_map))
    if not union:
        return 0.0

    def aligned(params, index):
        g = np.array([params.g[index[e]] if e in index else 0.0 for e in union])
        b = np.array([params.b[index[e]] if e in index else 0.0 for e in union])
        return np.concatenate([g, b])

    diff = aligned(est, est_map) - aligned(truth, true_map)
    return float(np.mean(diff * diff))


def _canon_list(edges):
    out = [(min(int(a), int(b)), max(int(a), int(b))) for a, b in edges]
    if len(set(out)) != len(out):
        raise InvalidArgumentError("duplicate edges cannot be aligned")
    return out


def threshold_topology(g, threshold, edges=None):
    """Edges whose conductance strictly exceeds ``threshold``.

    Returns edge pairs when ``edges`` is given, otherwise indices.
    """
    if threshold < 0:
        raise InvalidArgumentError(f"threshold must be >= 0, got {threshold}")
    idx = np.flatnonzero(np.asarray(g, dtype=float) > threshold)
    if edges is None:
        return set(int(i) for i in idx)
    edges = list(edges)
    return {tuple(edges[i]) for i in idx}


SUMMARY_FIELDS = ("method", "noise_level", "trials", "mse_mean", "mse_std", "mse_min",
                  "mse_max", "jaccard_mean", "jaccard_std", "jaccard_min", "jaccard_max",
                  "runtime_mean", "failures")


def aggregate(reports) -> list[dict]:
    """Per ``(method, noise_level)`` statistics; std is the population std.

    Failed trials (non-empty ``error``) are counted but excluded from the
    statistics.
    """
    reports = list(reports)
    if not reports:
        raise InvalidArgumentError("no trial reports to aggregate")
    groups = {}
    for r in reports:
        groups.setdefault((r.method, float(r.noise_level)), []).append(r)
    rows = []
    for (method, level), group in sorted(groups.items()):
        ok = [r for r in group if not r.error]
        mse = np.array([r.param_mse for r in ok], dtype=float)
        jac = np.array([r.jaccard for r in ok], dtype=float)
        rt = np.array([r.runtime for r in ok], dtype=float)
        stat = lambda a, f: float(f(a)) if a.size else float("nan")
        rows.append({
            "method": method,
            "noise_level": level,
            "trials": len(ok),
            "mse_mean": stat(mse, np.mean),
            "mse_std": stat(mse, np.std),
            "mse_min": stat(mse, np.min),
            "mse_max": stat(mse, np.max),
            "jaccard_mean": stat(jac, np.mean),
            "jaccard_std": stat(jac, np.std),
            "jaccard_min": stat(jac, np.min),
            "jaccard_max": stat(jac, np.max),
            "runtime_mean": stat(rt, np.mean),
            "failures": len(group) - len(ok),
        })
    return rows
