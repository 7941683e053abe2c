"""Conjugate matrix-variate dynamic linear model: one model flow at a time.

Observation and state equations::

    Y_t     = F_t Theta_t + Upsilon_t,      Upsilon_t ~ MN(0, V_t, Sigma)
    Theta_t = G_t Theta_{t-1} + Xi_t,       Xi_t      ~ MN(0, W_t, Sigma)
    Sigma   ~ IW(nu, Psi)                   (half convention, see ``matvar``)

Updates use the Kalman-gain form, which needs only a factorization of the
``n x n`` one-step covariance ``Q_t`` and never inverts ``R_t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag
from scipy.special import multigammaln

from .errors import DimensionMismatch, InvalidAlpha, InvalidMonth, NotPositiveDefinite
from .matvar import chol_psd, half_to_standard
from .spatial import CorrelationBlock, LocationSet, exp_correlation, pairwise_distances

N_SEASONAL_DUMMIES = 11


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class SystemMatrices:
    F: np.ndarray
    G: np.ndarray
    V: np.ndarray
    W: np.ndarray

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def s(self) -> int:
        return self.F.shape[1]


@dataclass(frozen=True)
class FilterState:
    t: int
    m: np.ndarray
    C: np.ndarray
    nu: float
    Psi: np.ndarray
    pred_q: np.ndarray | None = None
    pred_Q: np.ndarray | None = None


@dataclass(frozen=True)
class SmoothParams:
    h: np.ndarray
    H: np.ndarray


@dataclass(frozen=True)
class Prior:
    """Matrix-normal / inverse-Wishart prior shared by every model flow."""

    m0: np.ndarray
    C0: np.ndarray
    nu0: float
    Psi0: np.ndarray

    def initial_state(self) -> FilterState:
        return FilterState(0, np.array(self.m0, dtype=float), np.array(self.C0, dtype=float),
                           float(self.nu0), np.array(self.Psi0, dtype=float))


def default_prior(locations: LocationSet, p: int, q: int, *, coef_var: float = 0.05,
                  phi: float = 1.0, psi_scale: float = 10.0, nu0: float | None = None) -> Prior:
    """``m0 = 0``, ``C0 = blockdiag(coef_var I_p, R(S,S; phi))``, ``Psi0 = psi_scale I_q``,
    ``nu0 = q + 1`` unless given."""
    n = len(locations)
    corr = exp_correlation(pairwise_distances(locations, locations), phi).matrix
    c0 = block_diag(coef_var * np.eye(p), corr)
    return Prior(np.zeros((p + n, q)), c0, float(q + 1 if nu0 is None else nu0),
                 psi_scale * np.eye(q))


@dataclass(frozen=True)
class ForecastParams:
    A: np.ndarray
    R: np.ndarray
    q: np.ndarray
    Q: np.ndarray

    @property
    def joint_mean(self) -> np.ndarray:
        return np.vstack([self.A, self.q])

    def joint_row_scale(self, F: np.ndarray) -> np.ndarray:
        rf = self.R @ F.T
        return np.block([[self.R, rf], [rf.T, self.Q]])


def observation_variance(alpha: float) -> float:
    """Nugget variance ``(1 - alpha) / alpha``."""
    if not 0 < alpha < 1:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    return (1.0 - alpha) / alpha


def state_covariance(corr_ss: CorrelationBlock | np.ndarray, p: int, coef_scale: float = 1.0) -> np.ndarray:
    corr = corr_ss.matrix if isinstance(corr_ss, CorrelationBlock) else np.asarray(corr_ss)
    return block_diag(coef_scale * np.eye(p), corr)


def build_spatiotemporal_system(X_t, corr_ss: CorrelationBlock, alpha: float,
                                coef_scale: float = 1.0) -> SystemMatrices:
    """``F = [X : I_n]``, ``G = I``, ``V = (1-alpha)/alpha I_n``, ``W = blockdiag(c I_p, R_SS)``."""
    x = np.asarray(X_t, dtype=float)
    n, p = x.shape
    if corr_ss.matrix.shape != (n, n):
        raise DimensionMismatch("correlation block does not match the design rows")
    v = observation_variance(alpha)
    return SystemMatrices(np.hstack([x, np.eye(n)]), np.eye(p + n), v * np.eye(n),
                          state_covariance(corr_ss, p, coef_scale))


def build_seasonal_design(X_t, month: int) -> np.ndarray:
    """Append 11 monthly indicator columns; December is the baseline.

    ``X_t`` must not contain an intercept column (the dummies absorb it).
    """
    if int(month) != month or not 1 <= month <= 12:
        raise InvalidMonth(f"month must be an integer in 1..12, got {month}")
    x = np.asarray(X_t, dtype=float)
    dummies = np.zeros((x.shape[0], N_SEASONAL_DUMMIES))
    if month <= N_SEASONAL_DUMMIES:
        dummies[:, int(month) - 1] = 1.0
    return np.hstack([x, dummies])


def _is_identity(g: np.ndarray) -> bool:
    return g.shape[0] == g.shape[1] and np.array_equal(g, np.eye(g.shape[0]))


def _evolve(m: np.ndarray, c: np.ndarray, sys: SystemMatrices):
    # random-walk systems skip two s x s products
    if _is_identity(sys.G):
        return m, _sym(c + sys.W)
    return sys.G @ m, _sym(sys.G @ c @ sys.G.T + sys.W)


def _predict(prev: FilterState, sys: SystemMatrices):
    a, r = _evolve(prev.m, prev.C, sys)
    fr = sys.F @ r
    q = _sym(fr @ sys.F.T + sys.V)
    return a, r, sys.F @ a, fr, q


def filter_step(prev: FilterState, Y_t, sys: SystemMatrices) -> FilterState:
    """One forward-filtering update; the result carries the one-step ``(q_t, Q_t)``."""
    y = np.asarray(Y_t, dtype=float)
    if y.shape != (sys.n, prev.m.shape[1]):
        raise DimensionMismatch(f"Y_t has shape {y.shape}, expected {(sys.n, prev.m.shape[1])}")
    a, r, qt, fr, qq = _predict(prev, sys)
    try:
        fq = chol_psd(qq)
    except NotPositiveDefinite as exc:
        raise exc.tagged(t=prev.t + 1) from exc
    u = fq.half_solve(fr)
    z = fq.half_solve(y - qt)
    m = a + u.T @ z
    c = _sym(r - u.T @ u)
    psi = _sym(prev.Psi + 0.5 * z.T @ z)
    return FilterState(prev.t + 1, m, c, prev.nu + 0.5 * sys.n, psi, qt, qq)


def row_logdensities(Y_t, pred_q, pred_q_diag, nu: float, Psi) -> np.ndarray:
    """Log density of every row ``Y_{t,i}`` under ``mT_{1,q}(nu, q_i, Q_ii, Psi)``."""
    y = np.asarray(Y_t, dtype=float)
    qdim = y.shape[1]
    d, s = half_to_standard(nu, Psi)
    fs = chol_psd(s)
    z = fs.half_solve((y - pred_q).T)
    u = np.asarray(pred_q_diag, dtype=float)
    quad = np.sum(z * z, axis=0) / u
    const = (multigammaln((d + 1) / 2.0, qdim) - multigammaln(d / 2.0, qdim)
             - 0.5 * qdim * np.log(np.pi) - 0.5 * fs.logdet())
    return const - 0.5 * qdim * np.log(u) - 0.5 * (d + 1) * np.log1p(quad)


def one_step_marginal_logdensity(state_prev: FilterState, sys: SystemMatrices, Y_t) -> np.ndarray:
    """Per-location log predictive density of ``Y_t`` given data up to ``t-1``.

    Only the diagonal of ``Q_t`` enters: each row is marginalized separately.
    """
    _, _, qt, _, qq = _predict(state_prev, sys)
    return row_logdensities(Y_t, qt, np.diag(qq), state_prev.nu, state_prev.Psi)


def smoothing_gain(filtered_t: FilterState, sys_next: SystemMatrices):
    """Return ``(J, H)`` with ``h = m + J (Theta_{t+1} - G m)`` and ``H`` the smoothed row covariance."""
    gc = sys_next.G @ filtered_t.C
    fr = chol_psd(_sym(gc @ sys_next.G.T + sys_next.W))
    gain = fr.solve(gc).T
    u = fr.half_solve(gc)
    return gain, _sym(filtered_t.C - u.T @ u)


def smooth_step(filtered_t: FilterState, sys_next: SystemMatrices, theta_next) -> SmoothParams:
    """Backward-sampling parameters of ``Theta_t | Theta_{t+1}, D_t``."""
    gain, hh = smoothing_gain(filtered_t, sys_next)
    h = filtered_t.m + gain @ (np.asarray(theta_next, dtype=float) - sys_next.G @ filtered_t.m)
    return SmoothParams(h, hh)


def forecast_recursion(state_T: FilterState, sys_future: SystemMatrices | Sequence[SystemMatrices],
                       k: int) -> ForecastParams:
    """k-step-ahead joint forecast parameters starting from ``A(0) = m_T``, ``R(0) = C_T``.

    ``sys_future`` is either one system reused for every step or a sequence
    whose ``i``-th entry drives step ``i + 1``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    systems = [sys_future] * k if isinstance(sys_future, SystemMatrices) else list(sys_future)[:k]
    if len(systems) < k:
        raise DimensionMismatch(f"need {k} future systems, got {len(systems)}")
    a, r = state_T.m, state_T.C
    for sys in systems:
        a, r = _evolve(a, r, sys)
    last = systems[-1]
    return ForecastParams(a, r, last.F @ a, _sym(last.F @ r @ last.F.T + last.V))
