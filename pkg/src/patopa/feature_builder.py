"""Linear feature system ``y = X [g; b]`` and its per-entry noise weights.

Row layout: for each time step ``t``, rows ``2nt .. 2nt+n-1`` are the real
power equations and the next ``n`` rows the reactive ones. Columns
``0..m-1`` multiply ``g`` and ``m..2m-1`` multiply ``b``. Within a time step
the block structure is ``[[C, D], [D, -C]]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .grid_model import GridTopology

VARIANCE_FLOOR = 1e-12
# angle noise assumed for buses without angle data; larger values over-trust
# the c features, whose second-order error the linearisation misses
MISSING_ANGLE_STD = 1e-3


@dataclass(frozen=True)
class FeatureSystem:
    """Stacked features ``X``, injections ``y`` and weights ``W`` for ``[X, y]``.

    ``W`` holds reciprocal variances, shape ``(2nT, 2m+1)``; the last column
    belongs to ``y``. It is ``None`` until noise has been propagated.
    """

    X: np.ndarray
    y: np.ndarray
    W: np.ndarray | None
    n_bus: int
    T: int

    @property
    def n_edges(self) -> int:
        return self.X.shape[1] // 2

    @property
    def A(self) -> np.ndarray:
        return np.column_stack([self.X, self.y])

    def weights(self) -> np.ndarray:
        if self.W is None:
            return np.ones((self.X.shape[0], self.X.shape[1] + 1))
        return self.W

    def time_steps(self, start, stop) -> FeatureSystem:
        """Rows belonging to time steps ``start..stop-1``."""
        rows = slice(2 * self.n_bus * start, 2 * self.n_bus * stop)
        W = None if self.W is None else self.W[rows]
        return FeatureSystem(self.X[rows], self.y[rows], W, self.n_bus, stop - start)

    def select_edges(self, keep) -> FeatureSystem:
        """Keep the ``g`` and ``b`` columns of the listed edges, in the given order."""
        keep = np.asarray(keep, dtype=np.intp)
        m = self.n_edges
        if keep.size and (keep.min() < 0 or keep.max() >= m):
            raise InvalidArgumentError(f"edge indices out of range for {m} edges")
        cols = np.concatenate([keep, keep + m])
        W = None if self.W is None else self.W[:, np.concatenate([cols, [2 * m]])]
        return FeatureSystem(self.X[:, cols], self.y, W, self.n_bus, self.T)


def _check_shapes(topo, *arrays):
    shape = np.shape(arrays[0])
    for a in arrays:
        if np.ndim(a) != 2 or np.shape(a) != shape:
            raise InvalidArgumentError(f"measurement arrays must share one (T, n) shape, got {np.shape(a)}")
    if shape[1] != topo.n_bus:
        raise InvalidArgumentError(f"measurements have {shape[1]} buses, topology has {topo.n_bus}")


def _zero_angles(Theta, missing):
    Theta = np.array(Theta, dtype=float)
    if missing:
        Theta[:, sorted(missing)] = 0.0
    return Theta


def _edge_terms(topo, V, Theta):
    """Per-edge pieces shared by features and gradients, each of shape (T, m)."""
    fr, to = topo.U[:, 0], topo.U[:, 1]
    vf, vt = V[:, fr], V[:, to]
    delta = Theta[:, fr] - Theta[:, to]
    return vf, vt, np.cos(delta), np.sin(delta)


def build_features(topo: GridTopology, V, Theta, P, Q, missing_angle_buses=()) -> FeatureSystem:
    """Stack the per-time-step feature blocks and injection vectors.

    Angles of ``missing_angle_buses`` are taken as zero; the input values
    for those columns are ignored.
    """
    V = np.asarray(V, dtype=float)
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    _check_shapes(topo, V, Theta, P, Q)
    Theta = _zero_angles(Theta, missing_angle_buses)
    T, n = V.shape
    m = topo.n_edges
    fr, to = topo.U[:, 0], topo.U[:, 1]
    vf, vt, cos_d, sin_d = _edge_terms(topo, V, Theta)
    vv_cos = vf * vt * cos_d
    vv_sin = vf * vt * sin_d

    cols = np.arange(m)
    C = np.zeros((T, n, m))
    D = np.zeros((T, n, m))
    C[:, fr, cols] = vf ** 2 - vv_cos
    C[:, to, cols] = vt ** 2 - vv_cos
    # sin is odd in the orientation sign, cos even
    D[:, fr, cols] = -vv_sin
    D[:, to, cols] = vv_sin

    X = np.empty((T, 2 * n, 2 * m))
    X[:, :n, :m] = C
    X[:, :n, m:] = D
    X[:, n:, :m] = D
    X[:, n:, m:] = -C
    y = np.concatenate([P, Q], axis=1)
    return FeatureSystem(X.reshape(2 * n * T, 2 * m), y.reshape(-1), None, n, T)


def _edge_partials(topo, V, Theta):
    """Analytic partials of the c/d features of every edge at both endpoints.

    Returns two dicts keyed by ``"from"``/``"to"`` (the bus whose equation
    row the feature sits in). Each value is a ``(4, T, m)`` array with the
    partials w.r.t. ``(v_from, v_to, theta_from, theta_to)``.
    """
    vf, vt, cos_d, sin_d = _edge_terms(topo, V, Theta)
    vv = vf * vt
    dc_dth = vv * sin_d  # d c / d theta_from; negated for theta_to
    dc = {
        "from": np.stack([2 * vf - vt * cos_d, -vf * cos_d, dc_dth, -dc_dth]),
        "to": np.stack([-vt * cos_d, 2 * vt - vf * cos_d, dc_dth, -dc_dth]),
    }
    dd_from = np.stack([-vt * sin_d, -vf * sin_d, -vv * cos_d, vv * cos_d])
    dd = {"from": dd_from, "to": -dd_from}
    return dc, dd


def feature_gradients(topo: GridTopology, phi):
    """Gradients of every ``c_ij`` and ``d_ij`` w.r.t. ``phi = [v; theta]``.

    Returns ``(h, l)``, each of shape ``(n, m, 2n)``; ``h[i, j]`` is the
    gradient of ``c_ij``. Entries where bus ``i`` is not an endpoint of
    branch ``j`` are zero.
    """
    phi = np.asarray(phi, dtype=float).ravel()
    n, m = topo.n_bus, topo.n_edges
    if phi.size != 2 * n:
        raise InvalidArgumentError(f"phi must have length {2 * n}, got {phi.size}")
    V, Theta = phi[None, :n], phi[None, n:]
    dc, dd = _edge_partials(topo, V, Theta)
    fr, to = topo.U[:, 0], topo.U[:, 1]
    cols = np.arange(m)
    h = np.zeros((n, m, 2 * n))
    l = np.zeros((n, m, 2 * n))
    for side, bus in (("from", fr), ("to", to)):
        for k, var_idx in enumerate((fr, to, n + fr, n + to)):
            h[bus, cols, var_idx] += dc[side][k, 0]
            l[bus, cols, var_idx] += dd[side][k, 0]
    return h, l


def _per_bus(sigma, T, n, name):
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 0:
        s = np.full(n, float(s))
    if s.shape == (n,):
        s = np.broadcast_to(s, (T, n))
    if s.shape != (T, n):
        raise InvalidArgumentError(f"{name} must be scalar, (n,) or (T, n); got {s.shape}")
    if np.any(s < 0):
        raise InvalidArgumentError(f"{name} must be non-negative")
    return s


def propagate_variances(topo: GridTopology, V, Theta, sigma_v, sigma_theta, sigma_p, sigma_q,
                        missing_angle_buses=(), missing_angle_std=MISSING_ANGLE_STD,
                        floor=VARIANCE_FLOOR) -> np.ndarray:
    """First-order noise variances of ``[X, y]`` entries, returned as weights.

    The variance of each feature is the gradient-weighted sum of the
    independent ``v``/``theta`` noise variances at the measured point.
    Missing-angle buses are linearised at zero angle with ``missing_angle_std``
    as their angle noise. Variances are floored at ``floor`` before inversion.
    """
    V = np.asarray(V, dtype=float)
    _check_shapes(topo, V, Theta)
    Theta = _zero_angles(Theta, missing_angle_buses)
    T, n = V.shape
    m = topo.n_edges
    sv = _per_bus(sigma_v, T, n, "sigma_v")
    sth = np.array(_per_bus(sigma_theta, T, n, "sigma_theta"))
    if missing_angle_buses:
        sth[:, sorted(missing_angle_buses)] = missing_angle_std
    sp = _per_bus(sigma_p, T, n, "sigma_p")
    sq = _per_bus(sigma_q, T, n, "sigma_q")

    fr, to = topo.U[:, 0], topo.U[:, 1]
    var_phi = np.stack([sv[:, fr] ** 2, sv[:, to] ** 2, sth[:, fr] ** 2, sth[:, to] ** 2])
    dc, dd = _edge_partials(topo, V, Theta)

    cols = np.arange(m)
    var_c = np.zeros((T, n, m))
    var_d = np.zeros((T, n, m))
    for side, bus in (("from", fr), ("to", to)):
        var_c[:, bus, cols] = np.sum(dc[side] ** 2 * var_phi, axis=0)
        var_d[:, bus, cols] = np.sum(dd[side] ** 2 * var_phi, axis=0)

    var = np.empty((T, 2 * n, 2 * m + 1))
    var[:, :n, :m] = var_c
    var[:, :n, m:2 * m] = var_d
    var[:, n:, :m] = var_d
    var[:, n:, m:2 * m] = var_c
    var[:, :n, 2 * m] = sp ** 2
    var[:, n:, 2 * m] = sq ** 2
    var = np.maximum(var.reshape(2 * n * T, 2 * m + 1), floor)
    return 1.0 / var


def build_system(topo: GridTopology, ms, noise, floor=VARIANCE_FLOOR) -> FeatureSystem:
    """Features plus propagated weights for a measurement set.

    ``noise`` is a :class:`patopa.joint.NoiseInfo` (anything with per-bus
    ``sigma_v``, ``sigma_theta``, ``sigma_p``, ``sigma_q`` and
    ``missing_angle_std`` attributes).
    """
    missing = tuple(sorted(ms.missing_angle_buses))
    fs = build_features(topo, ms.V, ms.Theta, ms.P, ms.Q, missing)
    W = propagate_variances(topo, ms.V, ms.Theta, noise.sigma_v, noise.sigma_theta,
                            noise.sigma_p, noise.sigma_q, missing_angle_buses=missing,
                            missing_angle_std=noise.missing_angle_std, floor=floor)
    return FeatureSystem(fs.X, fs.y, W, fs.n_bus, fs.T)


def write_feature_csv(path, fs: FeatureSystem):
    """Debug dump of ``X``, ``y`` and ``W`` (one row per equation)."""
    m = fs.n_edges
    W = fs.weights()
    header = ([f"x{j}" for j in range(2 * m)] + ["y"]
              + [f"w{j}" for j in range(2 * m)] + ["w_y"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(fs.X.shape[0]):
            w.writerow([repr(float(v)) for v in fs.X[r]] + [repr(float(fs.y[r]))]
                       + [repr(float(v)) for v in W[r]])
