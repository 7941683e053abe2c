"""Leave-future-out log-score stacking weights and their aggregation.

For one location the weights at time ``tau`` maximize::

    (1 / (tau - 1)) * sum_{t=1}^{tau-1} log sum_j w_j p_j(Y_{t+1} | D_t)

over the probability simplex.  The objective is concave.  Dropping the sum
constraint and maximizing ``mean_t log(P x) - sum(x)`` over ``x >= 0`` has the
same solution (it lands on the simplex), so the solver runs sequential
quadratic programming on the orthant: each step solves the bound-constrained
Newton model as a nonnegative least-squares problem, followed by a
backtracking line search.  Iteration stops once the Frank-Wolfe gap
``max_j g_j - 1`` (with ``g`` the gradient at the normalized iterate) is below
``tol``; that gap bounds the distance to the optimal objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls
from scipy.special import logsumexp

from .errors import InputError, NoConvergence

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 500


@dataclass(frozen=True)
class LogDensityHistory:
    """``values[t-1, j, i] = log p(Y_{t+1,i} | D_t, M_j)`` for ``t = 1..T-1``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise InputError("log-density history must be (T-1) x J x n")
        if not np.all(np.isfinite(v)):
            raise InputError("log-density history contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def n_models(self) -> int:
        return self.values.shape[1]

    @property
    def n_locations(self) -> int:
        return self.values.shape[2]


@dataclass
class WeightTrace:
    """Weights indexed by time ``t = 0..T``; ``t = 0`` holds the starting weights."""

    per_location: np.ndarray  # (T+1, n, J)
    global_: np.ndarray       # (T+1, J)
    consensus: np.ndarray     # (T+1, J)
    counts: np.ndarray        # (T+1, J)

    def aggregated(self, strategy: str) -> np.ndarray:
        if strategy == "global":
            return self.global_
        if strategy == "consensus":
            return self.consensus
        raise InputError(f"unknown aggregation {strategy!r}")


def stacking_objective(logdens, w) -> np.ndarray:
    """Mean log mixture density; ``logdens`` is ``(..., T, J)``, ``w`` is ``(..., J)``."""
    ld = np.asarray(logdens, dtype=float)
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    return np.mean(logsumexp(ld + logw[..., None, :], axis=-1), axis=-1)


def duality_gap(logdens, w) -> float:
    """``max_j g_j - 1``: an upper bound on ``max objective - objective(w)``."""
    ld = np.asarray(logdens, dtype=float)
    p = np.exp(ld - ld.max(axis=-1, keepdims=True))
    w = np.asarray(w, dtype=float)
    return float(np.max(np.mean(p / (p @ w)[:, None], axis=0)) - 1.0)


def _orthant_objective(p: np.ndarray, x: np.ndarray) -> float:
    u = p @ x
    if np.any(u <= 0):
        return -np.inf
    return float(np.mean(np.log(u)) - x.sum())


def _sqp(p: np.ndarray, tol: float, max_iter: int, ridge: float = 1e-6):
    """Maximize ``mean log(P x) - sum(x)`` over ``x >= 0``; ``P`` is ``T x J``, rows max 1."""
    t, j = p.shape
    x = np.full(j, 1.0 / j)
    sq, sr = np.sqrt(t), np.sqrt(ridge)
    eye = sr * np.eye(j)
    for _ in range(max_iter):
        w = x / x.sum()
        gw = np.mean(p / (p @ w)[:, None], axis=0)
        gap = float(np.max(gw) - 1.0)
        if gap <= tol:
            return w, gap
        u = p @ x
        a = p / u[:, None]
        g = a.mean(axis=0)
        # Newton model 0.5 y'(H + ridge I)y - (2g - 1 + ridge x)'y with H = A'A / T
        # written as 0.5 |[A/sqrt(T); sqrt(ridge) I] y - c|^2
        c = np.concatenate([np.full(t, 2.0 / sq), (ridge * x - 1.0) / sr])
        y, _ = nnls(np.vstack([a / sq, eye]), c)
        d = y - x
        f0, slope = _orthant_objective(p, x), float((g - 1.0) @ d)
        step = 1.0
        while step > 1e-12:
            xn = x + step * d
            fn = _orthant_objective(p, xn)
            if fn >= f0 + 1e-4 * step * slope:
                break
            # predicted ascent below roundoff: the objective cannot arbitrate, take the step
            if slope < 1e-12 and fn >= f0 - 1e-13 * (1.0 + abs(f0)):
                break
            step *= 0.5
        else:
            # no ascent along the Newton direction: fall back to a monotone EM step
            xn = w * gw
        x = np.maximum(xn, 0.0)
    w = x / x.sum()
    return w, float(np.max(np.mean(p / (p @ w)[:, None], axis=0)) - 1.0)


def solve_simplex_weights_batch(logdens, tol: float = DEFAULT_TOL,
                                max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Solve independent stacking problems stacked along the first axis.

    ``logdens`` has shape ``(B, T, J)``; returns ``(B, J)`` weights.  Models
    with identical columns within a problem share their weight equally.
    """
    ld = np.asarray(logdens, dtype=float)
    if ld.ndim != 3:
        raise InputError("expected a (B, T, J) array")
    if not np.all(np.isfinite(ld)):
        raise InputError("log densities must be finite")
    b, _, j = ld.shape
    out = np.empty((b, j))
    if j == 1:
        out[:] = 1.0
        return out
    # densities rescaled per (problem, time); the common factor cancels
    p = np.exp(ld - ld.max(axis=-1, keepdims=True))
    for k in range(b):
        cols, inverse, counts = np.unique(p[k], axis=1, return_inverse=True, return_counts=True)
        inverse = np.ravel(inverse)
        if cols.shape[1] == 1:
            out[k] = 1.0 / j
            continue
        w, gap = _sqp(cols, tol, max_iter)
        if gap > tol:
            raise NoConvergence(f"stacking weights did not converge in {max_iter} iterations",
                                iterate=(w / counts)[inverse], residual=gap, i=k)
        out[k] = (w / counts)[inverse]
    return out


def solve_simplex_weights(logdens, tol: float = DEFAULT_TOL,
                          max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Stacking weights for one ``(tau-1) x J`` matrix of log predictive densities."""
    ld = np.asarray(logdens, dtype=float)
    if ld.ndim != 2 or ld.shape[0] < 1 or ld.shape[1] < 1:
        raise InputError("logdens must be a non-empty (tau-1) x J matrix")
    try:
        return solve_simplex_weights_batch(ld[None], tol, max_iter)[0]
    except NoConvergence as exc:
        raise NoConvergence("stacking weights did not converge", iterate=exc.iterate,
                            residual=exc.residual) from None


def individual_weights(history: LogDensityHistory, tau: int, tol: float = DEFAULT_TOL,
                       max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Per-location weights at time ``tau`` (``n x J``) from densities of ``Y_2..Y_tau``."""
    t_avail = history.values.shape[0] + 1
    if not 2 <= tau <= t_avail:
        raise InputError(f"tau must lie in 2..{t_avail}, got {tau}")
    block = np.transpose(history.values[: tau - 1], (2, 0, 1))
    try:
        return solve_simplex_weights_batch(block, tol, max_iter)
    except NoConvergence as exc:
        raise NoConvergence("stacking weights did not converge", iterate=exc.iterate,
                            residual=exc.residual, t=tau, i=exc.i) from None


def aggregate_global(per_location) -> np.ndarray:
    return np.mean(np.asarray(per_location, dtype=float), axis=0)


def aggregate_consensus(per_location) -> tuple[np.ndarray, np.ndarray]:
    """Share of locations whose largest weight falls on each model (ties -> lowest index)."""
    w = np.asarray(per_location, dtype=float)
    n, j = w.shape
    counts = np.bincount(np.argmax(w, axis=1), minlength=j)
    return counts / n, counts


def hyperparam_estimate(global_weights, alphas, phis) -> tuple[float, float]:
    w = np.asarray(global_weights, dtype=float)
    a = np.asarray(alphas, dtype=float)
    f = np.asarray(phis, dtype=float)
    if not (w.shape == a.shape == f.shape):
        raise InputError("weights and grids must have the same length")
    return float(w @ a), float(w @ f)


def weight_trace(history: LogDensityHistory, n_times: int, initial=None,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                 executor=None) -> WeightTrace:
    """Weights for ``t = 0..n_times``: ``initial`` at 0, uniform at 1, stacked afterwards."""
    j, n = history.n_models, history.n_locations
    per = np.empty((n_times + 1, n, j))
    start = np.full(j, 1.0 / j) if initial is None else np.asarray(initial, dtype=float)
    per[0] = start
    if n_times >= 1:
        per[1] = 1.0 / j
    taus = list(range(2, n_times + 1))
    solve = lambda tau: individual_weights(history, tau, tol, max_iter)  # noqa: E731
    results = executor.map(solve, taus) if executor is not None else map(solve, taus)
    for tau, w in zip(taus, results):
        per[tau] = w
    glob = per.mean(axis=1)
    cons = np.empty((n_times + 1, j))
    counts = np.empty((n_times + 1, j), dtype=int)
    for t in range(n_times + 1):
        cons[t], counts[t] = aggregate_consensus(per[t])
    # no past yet: both aggregates use the starting / uniform weights
    cons[0] = start
    if n_times >= 1:
        cons[1] = 1.0 / j
    return WeightTrace(per, glob, cons, counts)
