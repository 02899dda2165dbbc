"""Synthetic measurement generation.

Voltage magnitudes and angles are sampled directly; injections follow in
closed form from the branch power-flow equations, so no power-flow solve
is needed. Noise is added per measurement column, scaled to that column's
own spread over time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .errors import InvalidArgumentError, ParseError
from .grid_model import GridTopology, LineParams

CHANNELS = ("v", "theta", "p", "q")


@dataclass(frozen=True)
class MeasurementSet:
    """Time series of per-bus measurements, each of shape ``(T, n)``.

    ``sigma`` maps channel name to the per-bus noise standard deviation
    that was applied (zeros for clean data). ``truth`` points at the
    noiseless copy when the set was produced by :func:`apply_noise`.
    """

    V: np.ndarray
    Theta: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    truth: MeasurementSet | None = field(default=None, repr=False, compare=False)
    sigma: dict | None = field(default=None, repr=False, compare=False)
    missing_angle_buses: frozenset = frozenset()

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float) for a in (self.V, self.Theta, self.P, self.Q)]
        shape = arrays[0].shape
        if len(shape) != 2 or any(a.shape != shape for a in arrays):
            raise InvalidArgumentError(
                "V, Theta, P, Q must share one (T, n) shape, got "
                + ", ".join(str(a.shape) for a in arrays)
            )
        if np.any(arrays[0] <= 0):
            raise InvalidArgumentError("voltage magnitudes must be positive")
        for name, a in zip(("V", "Theta", "P", "Q"), arrays):
            object.__setattr__(self, name, a)
        object.__setattr__(self, "missing_angle_buses", frozenset(int(k) for k in self.missing_angle_buses))

    @property
    def T(self) -> int:
        return self.V.shape[0]

    @property
    def n_bus(self) -> int:
        return self.V.shape[1]

    def channel(self, name: str) -> np.ndarray:
        return {"v": self.V, "theta": self.Theta, "p": self.P, "q": self.Q}[name]

    def time_slice(self, sl: slice) -> MeasurementSet:
        return replace(
            self,
            V=self.V[sl],
            Theta=self.Theta[sl],
            P=self.P[sl],
            Q=self.Q[sl],
            truth=None if self.truth is None else self.truth.time_slice(sl),
        )


@dataclass(frozen=True)
class NoiseSpec:
    """Relative noise per channel plus optional truncation and PMU gaps.

    ``levels`` maps channel name to the ratio between noise std and the
    std of the clean data column. ``truncation_d`` is in units of sigma.
    """

    levels: dict
    truncation_d: float | None = None
    missing_angle_buses: frozenset = frozenset()
    seed: int = 0

    def __post_init__(self):
        levels = {ch: float(self.levels.get(ch, 0.0)) for ch in CHANNELS}
        unknown = set(self.levels) - set(CHANNELS)
        if unknown:
            raise InvalidArgumentError(f"unknown noise channels {sorted(unknown)}")
        if any(v < 0 or not np.isfinite(v) for v in levels.values()):
            raise InvalidArgumentError(f"relative noise levels must be >= 0, got {levels}")
        if self.truncation_d is not None and not self.truncation_d > 0:
            raise InvalidArgumentError(f"truncation_d must be positive, got {self.truncation_d}")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "missing_angle_buses", frozenset(int(k) for k in self.missing_angle_buses))

    @classmethod
    def uniform(cls, level, **kwargs) -> NoiseSpec:
        """Same relative level on all four channels."""
        return cls({ch: level for ch in CHANNELS}, **kwargs)


def sample_voltage_profiles(topo: GridTopology, T: int, seed: int,
                            v_band=(0.95, 1.05), theta_band=(-0.05, 0.05)):
    """Draw ``T`` independent operating points, uniform within the bands.

    Bus 0 is the slack bus and keeps a zero angle.
    """
    if int(T) < 1:
        raise InvalidArgumentError(f"T must be >= 1, got {T}")
    if not 0 < v_band[0] <= v_band[1]:
        raise InvalidArgumentError(f"invalid voltage band {v_band}")
    rng = np.random.default_rng(seed)
    n = topo.n_bus
    V = rng.uniform(v_band[0], v_band[1], size=(int(T), n))
    Theta = rng.uniform(theta_band[0], theta_band[1], size=(int(T), n))
    Theta[:, 0] = 0.0
    return V, Theta


def forward_injections(topo: GridTopology, params: LineParams, V, Theta):
    """Real and reactive nodal injections from the branch-form flow equations."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    Theta = np.atleast_2d(np.asarray(Theta, dtype=float))
    if V.shape != Theta.shape or V.shape[1] != topo.n_bus:
        raise InvalidArgumentError(
            f"V {V.shape} / Theta {Theta.shape} inconsistent with {topo.n_bus} buses"
        )
    if len(params) != topo.n_edges:
        raise InvalidArgumentError(f"{len(params)} parameters for {topo.n_edges} edges")
    P = np.zeros_like(V)
    Q = np.zeros_like(V)
    for j, (fr, to) in enumerate(topo.edges):
        g, b = params.g[j], params.b[j]
        vv = V[:, fr] * V[:, to]
        for bus, s in ((fr, 1.0), (to, -1.0)):
            ang = s * (Theta[:, fr] - Theta[:, to])
            cos_t = vv * np.cos(ang)
            sin_t = vv * np.sin(ang)
            P[:, bus] += g * (V[:, bus] ** 2 - cos_t) - b * sin_t
            Q[:, bus] += b * (cos_t - V[:, bus] ** 2) - g * sin_t
    return P, Q


def simulate(topo: GridTopology, params: LineParams, T: int, seed: int, **bands) -> MeasurementSet:
    """Noiseless measurement set for the given network."""
    V, Theta = sample_voltage_profiles(topo, T, seed, **bands)
    P, Q = forward_injections(topo, params, V, Theta)
    n = topo.n_bus
    return MeasurementSet(V, Theta, P, Q, sigma={ch: np.zeros(n) for ch in CHANNELS})


def truncated_normal_cdf(x, sigma, d):
    """CDF of a zero-mean normal with std ``sigma`` truncated to ``[-d, d]``.

    Arguments outside the support clamp to 0 or 1.
    """
    if not sigma > 0 or not d > 0:
        raise InvalidArgumentError(f"sigma and d must be positive, got {sigma}, {d}")
    x = np.asarray(x, dtype=float)
    lo = ndtr(-d / sigma)
    hi = ndtr(d / sigma)
    F = (ndtr(np.clip(x, -d, d) / sigma) - lo) / (hi - lo)
    F = np.where(x <= -d, 0.0, np.where(x >= d, 1.0, F))
    return F if F.ndim else float(F)


def sample_truncated_normal(rng, sigma, d, size):
    """Zero-mean normal draws with std ``sigma`` per column, cut at ``+-d*sigma``."""
    z = stats.truncnorm.rvs(-d, d, size=size, random_state=rng)
    return z * sigma


def apply_noise(ms: MeasurementSet, spec: NoiseSpec) -> MeasurementSet:
    """Add measurement noise to every channel of a clean measurement set.

    The noise std of each column is ``level * std(column)``. Angles of the
    buses listed in ``spec.missing_angle_buses`` are replaced by zero.
    """
    rng = np.random.default_rng(spec.seed)
    out = {}
    sigma = {}
    for ch in CHANNELS:
        clean = ms.channel(ch)
        s = spec.levels[ch] * clean.std(axis=0)
        if spec.truncation_d is None:
            noise = rng.standard_normal(clean.shape) * s
        else:
            noise = sample_truncated_normal(rng, s, spec.truncation_d, clean.shape)
        out[ch] = clean + noise
        sigma[ch] = s
    missing = sorted(spec.missing_angle_buses)
    if missing:
        if max(missing) >= ms.n_bus or min(missing) < 0:
            raise InvalidArgumentError(f"missing-angle buses {missing} out of range")
        out["theta"][:, missing] = 0.0
    if np.any(out["v"] <= 0):
        raise InvalidArgumentError("noise produced a non-positive voltage magnitude")
    truth = ms if ms.truth is None else ms.truth
    return MeasurementSet(out["v"], out["theta"], out["p"], out["q"], truth=truth,
                          sigma=sigma, missing_angle_buses=spec.missing_angle_buses)


def write_measurements(path, ms: MeasurementSet):
    """Dump as long-format CSV: ``t, bus, v, theta, p, q``."""
    T, n = ms.V.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "bus", "v", "theta", "p", "q"])
        for t in range(T):
            for i in range(n):
                w.writerow([t, i, repr(float(ms.V[t, i])), repr(float(ms.Theta[t, i])),
                            repr(float(ms.P[t, i])), repr(float(ms.Q[t, i]))])


def read_measurements(path) -> MeasurementSet:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError("no data rows")
        t = np.array([int(r["t"]) for r in rows])
        bus = np.array([int(r["bus"]) for r in rows])
        vals = {k: np.array([float(r[k]) for r in rows]) for k in ("v", "theta", "p", "q")}
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"cannot parse measurement file {path}: {exc}") from exc
    T, n = t.max() + 1, bus.max() + 1
    if len(rows) != T * n or t.min() < 0 or bus.min() < 0:
        raise ParseError(f"measurement file {path} is not a complete t x bus grid")
    grid = {}
    for k, v in vals.items():
        a = np.full((T, n), np.nan)
        a[t, bus] = v
        if np.isnan(a).any():
            raise ParseError(f"measurement file {path} has gaps in column {k}")
        grid[k] = a
    try:
        return MeasurementSet(grid["v"], grid["theta"], grid["p"], grid["q"])
    except InvalidArgumentError as exc:
        raise ParseError(str(exc)) from exc
