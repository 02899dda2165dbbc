"""Parameter estimators for ``y = X a`` with ``a = [g; b]``.

* :func:`ols` - noise on ``y`` only.
* :func:`tls` - equal, independent noise on every entry of ``[X, y]``.
* :func:`glra_diag` - independent noise with per-entry variances; the
  nearest rank-deficient matrix under the weighted norm is found by a
  QR-based inverse iteration on the stationarity conditions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (CannotNormalizeError, InvalidArgumentError, IterationFailureError,
                     NongenericTLSError, SingularSystemError)
from .feature_builder import FeatureSystem

log = logging.getLogger(__name__)

# [X, y] with s_min / s_max below this is treated as exactly rank deficient
EXACT_FIT_RTOL = 1e-11


@dataclass
class EstimationResult:
    """Estimated line parameters plus solver diagnostics.

    ``ll_trace`` and ``cond_trace`` have one entry per iteration (a single
    entry for the closed-form methods). ``A_hat`` is the fitted
    rank-deficient ``[X, y]`` when the method produces one.
    """

    g_hat: np.ndarray
    b_hat: np.ndarray
    log_likelihood: float
    iterations: int
    ll_trace: list
    cond_trace: list
    method: str
    converged: bool = True
    A_hat: np.ndarray | None = field(default=None, repr=False)

    @property
    def a(self) -> np.ndarray:
        return np.concatenate([self.g_hat, self.b_hat])


def _split(a, m):
    return a[:m].copy(), a[m:].copy()


def _check_nonempty(fs):
    if fs.X.shape[1] == 0:
        raise InvalidArgumentError("feature system has no edges to estimate")


def eiv_log_likelihood(X, y, g, b, W) -> float:
    """Weighted error-in-variables log-likelihood of fixed parameters.

    With ``a = [g; b]`` held fixed, the closest point on the hyperplane
    ``y_hat = x_hat . a`` decouples by row; the row minimum is
    ``r^2 / (sum_k a_k^2 / w_k + 1 / w_y)`` with ``r = y - x . a``. The
    additive normalisation constant is dropped.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    W = np.asarray(W, dtype=float)
    a = np.concatenate([np.ravel(g), np.ravel(b)])
    if X.shape != (y.size, a.size) or W.shape != (y.size, a.size + 1):
        raise InvalidArgumentError(
            f"shape mismatch: X {X.shape}, y {y.shape}, a {a.shape}, W {W.shape}"
        )
    r = y - X @ a
    denom = (1.0 / W[:, :-1]) @ (a * a) + 1.0 / W[:, -1]
    return float(-np.sum(r * r / denom))


def sigma_norm(A_dev, W) -> float:
    """Weighted squared norm ``sum w * a^2`` for a diagonal covariance weight."""
    A_dev = np.asarray(A_dev, dtype=float)
    W = np.broadcast_to(np.asarray(W, dtype=float), A_dev.shape)
    return float(np.sum(W * A_dev * A_dev))


def nearest_feasible(A, c, W) -> np.ndarray:
    """Closest matrix (weighted) to ``A`` that annihilates ``c``."""
    V = 1.0 / W
    Dc = V @ (c * c)
    lam = (A @ c) / Dc
    return A - lam[:, None] * V * c[None, :]


def _condition(M):
    s = np.linalg.svd(M, compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")


def ols(fs: FeatureSystem) -> EstimationResult:
    """Ordinary least squares through a column-pivoted QR factorisation."""
    _check_nonempty(fs)
    X, y = fs.X, fs.y
    Qf, R, piv = sla.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1] or X.shape[0] < X.shape[1]:
        raise SingularSystemError(
            f"X has rank {rank} < {X.shape[1]} columns; column {piv[rank]} is dependent",
            deficient_dimension=int(piv[min(rank, len(piv) - 1)]),
        )
    sol = sla.solve_triangular(R, Qf.T @ y)
    a = np.empty_like(sol)
    a[piv] = sol
    g, b = _split(a, fs.n_edges)
    ll = eiv_log_likelihood(X, y, g, b, fs.weights())
    return EstimationResult(g, b, ll, 1, [ll], [np.linalg.cond(X)], "OLS")


def tls(fs: FeatureSystem, gap_rtol=1e-10) -> EstimationResult:
    """Closed-form total least squares.

    ``a = (X^T X - s_min^2 I)^{-1} X^T y`` where ``s_min`` is the smallest
    singular value of ``[X, y]``.
    """
    _check_nonempty(fs)
    A = fs.A
    k = A.shape[1]
    if A.shape[0] < k:
        raise InvalidArgumentError(f"[X, y] has {A.shape[0]} rows, needs at least {k}")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    s_min = s[-1]
    if s[0] == 0 or (s[-2] - s_min) <= gap_rtol * s[0]:
        raise NongenericTLSError(
            f"smallest singular value of [X, y] is not simple (s={s[-2]:.3e}, {s_min:.3e})"
        )
    if abs(Vt[-1, -1]) < 1e-12:
        raise NongenericTLSError("null direction of [X, y] has no y component")
    X, y = fs.X, fs.y
    M = X.T @ X - s_min ** 2 * np.eye(k - 1)
    try:
        a = np.linalg.solve(M, X.T @ y)
    except np.linalg.LinAlgError as exc:
        raise NongenericTLSError(f"X^T X - s_min^2 I is singular: {exc}") from exc
    A_hat = A - s_min * np.outer(U[:, -1], Vt[-1])
    g, b = _split(a, fs.n_edges)
    ll = eiv_log_likelihood(X, y, g, b, fs.weights())
    return EstimationResult(g, b, ll, 1, [ll], [_condition(A_hat)], "TLS", A_hat=A_hat)


def _exact_fit(fs, A, c, W, track_condition):
    m = fs.n_edges
    if abs(c[-1]) < 1e-12:
        raise CannotNormalizeError(f"last entry of c is {c[-1]:.3e}; cannot scale to -1",
                                   iteration=1)
    a = -c[:-1] / c[-1]
    g, b = _split(a, m)
    ll = eiv_log_likelihood(fs.X, fs.y, g, b, W)
    A_hat = nearest_feasible(A, c, W)
    cond = [_condition(A_hat)] if track_condition else []
    return EstimationResult(g, b, ll, 1, [ll], cond, "GLRA_DIAG", converged=True, A_hat=A_hat)


def glra_diag(fs: FeatureSystem, max_iter=500, tol=1e-10, track_condition=True,
              c0=None) -> EstimationResult:
    """Weighted low-rank approximation with a diagonal noise covariance.

    Solves ``min sum w_ij (a_ij - a_hat_ij)^2`` subject to ``A_hat c = 0``,
    ``|c| = 1`` via the coupled conditions ``A c = s D_c d`` and
    ``A^T d = s D_d c``, iterating on the QR factors of ``A = [X, y]``.
    Starts from the total-least-squares direction unless ``c0`` is given.
    """
    _check_nonempty(fs)
    A = fs.A
    W = fs.weights()
    if np.any(~np.isfinite(W)) or np.any(W <= 0):
        raise InvalidArgumentError("weights must be strictly positive and finite")
    N, k = A.shape
    if N < k:
        raise InvalidArgumentError(f"[X, y] has {N} rows, needs at least {k}")
    Vw = 1.0 / W
    m = fs.n_edges

    Q1, R = np.linalg.qr(A)
    _, s_R, Vt = np.linalg.svd(R)
    if s_R[-1] <= EXACT_FIT_RTOL * s_R[0]:
        # A already has a null vector: zero weighted misfit, optimal for any W
        return _exact_fit(fs, A, Vt[-1], W, track_condition)

    if c0 is None:
        # identity-weight optimum: last right singular vector of A = QR
        c = Vt[-1].copy()
    else:
        c = np.asarray(c0, dtype=float).copy()
        c /= np.linalg.norm(c)
    if c[-1] > 0:
        c = -c
    d = A @ c
    nd = np.linalg.norm(d)
    d = d / nd if nd > 0 else np.full(N, 1.0 / np.sqrt(N))
    sigma = nd

    def params_of(cvec, it):
        if abs(cvec[-1]) < 1e-12:
            raise CannotNormalizeError(
                f"last entry of c is {cvec[-1]:.3e}; cannot scale to -1", iteration=it
            )
        return -cvec[:-1] / cvec[-1]

    ll_trace, cond_trace = [], []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Dd = Vw.T @ (d * d)
        Dc = Vw @ (c * c)
        try:
            z = sla.solve_triangular(R, Dd * c, trans="T")
            # l = Q1 z + Q2 w with Q2^T D_c l = 0  <=>  D_c l = Q1 u, Q1^T l = z
            M = Q1.T @ (Q1 / Dc[:, None])
            u = np.linalg.solve(M, z)
            lvec = (Q1 @ u) / Dc
            d_new = lvec / np.linalg.norm(lvec)
            c_raw = sla.solve_triangular(R, Q1.T @ (Dc * d_new))
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise IterationFailureError(f"inner solve failed at iteration {it}: {exc}",
                                        iteration=it) from exc
        nc = np.linalg.norm(c_raw)
        if not np.isfinite(nc) or nc == 0:
            raise IterationFailureError(f"degenerate update at iteration {it}", iteration=it)
        sigma = 1.0 / nc
        c_new = sigma * c_raw
        delta = np.linalg.norm(c_new - c)
        c, d = c_new, d_new

        a = params_of(c, it)
        ll_trace.append(eiv_log_likelihood(fs.X, fs.y, a[:m], a[m:], W))
        if track_condition:
            A_hat = A - sigma * d[:, None] * Vw * c[None, :]
            cond_trace.append(_condition(A_hat))
        if delta < tol:
            converged = True
            break

    if not converged:
        log.info("glra_diag stopped at max_iter=%d without reaching tol=%g", max_iter, tol)
    diffs = np.diff(ll_trace[1:])
    if diffs.size and np.any(diffs < -1e-9 * np.abs(ll_trace[-1])):
        log.info("glra_diag log-likelihood trace is not monotone after iteration 2")

    a = params_of(c, it)
    g, b = _split(a, m)
    A_hat = A - sigma * d[:, None] * Vw * c[None, :]
    return EstimationResult(g, b, ll_trace[-1], it, ll_trace, cond_trace, "GLRA_DIAG",
                            converged=converged, A_hat=A_hat)
