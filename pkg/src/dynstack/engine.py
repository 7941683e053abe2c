"""Stacked forward filtering, backward sampling, forecasting and interpolation.

Each candidate model ``M_j = {alpha_j, phi_j}`` runs its own conjugate
filter; the flows never see each other or the weights.  Stacking weights
only decide which model seeds each posterior draw.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import parallel
from .data import SpatioTemporalDataset
from .dlm import (FilterState, Prior, SystemMatrices, default_prior, filter_step,
                  observation_variance, row_logdensities, smoothing_gain, state_covariance)
from .errors import DimensionMismatch, InputError, InvalidAlpha, InvalidPhi, NotPositiveDefinite
from .matvar import chol_psd, half_to_standard, iw_factor_draw, mt_draw
from .spatial import LocationSet, correlation_blocks, exp_correlation, pairwise_distances, schur_predictive
from .stacking import (DEFAULT_MAX_ITER, DEFAULT_TOL, LogDensityHistory, WeightTrace,
                       aggregate_consensus, individual_weights, weight_trace)

AGGREGATIONS = ("global", "consensus")


@dataclass(frozen=True)
class CandidateModel:
    alpha: float
    phi: float
    label: str = ""

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidAlpha(f"alpha must lie in (0, 1), got {self.alpha}")
        if not (np.isfinite(self.phi) and self.phi > 0):
            raise InvalidPhi(f"phi must be positive, got {self.phi}")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "phi", float(self.phi))
        if not self.label:
            object.__setattr__(self, "label", f"alpha={self.alpha:g},phi={self.phi:g}")


@dataclass(frozen=True)
class ModelGrid:
    models: tuple

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise InputError("the model grid is empty")
        pairs = [(m.alpha, m.phi) for m in models]
        if len(set(pairs)) != len(pairs):
            raise InputError("the model grid repeats an (alpha, phi) pair")
        object.__setattr__(self, "models", models)

    @classmethod
    def cross(cls, alphas: Sequence[float], phis: Sequence[float]) -> "ModelGrid":
        """All ``(alpha, phi)`` pairs, alpha varying slowest."""
        return cls(tuple(CandidateModel(a, f) for a in alphas for f in phis))

    def __len__(self) -> int:
        return len(self.models)

    def __iter__(self):
        return iter(self.models)

    def __getitem__(self, j: int) -> CandidateModel:
        return self.models[j]

    @property
    def alphas(self) -> np.ndarray:
        return np.array([m.alpha for m in self.models])

    @property
    def phis(self) -> np.ndarray:
        return np.array([m.phi for m in self.models])

    def index(self, alpha: float, phi: float) -> int:
        for j, m in enumerate(self.models):
            if np.isclose(m.alpha, alpha) and np.isclose(m.phi, phi):
                return j
        raise KeyError((alpha, phi))


@dataclass
class FitResult:
    """Per-model filtered states plus the stacking weight trace.

    ``m[j, k]``, ``C[j, k]``, ``nu[j, k]``, ``Psi[j, k]`` hold the state at
    ``t = k`` when ``states_kept``; otherwise only ``t = T`` is stored at ``k = 0``.
    """

    grid: ModelGrid
    locations: LocationSet
    prior: Prior
    m: np.ndarray
    C: np.ndarray
    nu: np.ndarray
    Psi: np.ndarray
    weight_trace: WeightTrace
    log_density_history: LogDensityHistory
    first_logdens: np.ndarray       # (J, n) log p(Y_1 | D_0), not used for stacking
    T: int
    p: int
    aggregation: str = "global"
    coef_scale: float = 1.0
    states_kept: bool = True
    config_echo: dict = field(default_factory=dict)

    @property
    def J(self) -> int:
        return len(self.grid)

    @property
    def n(self) -> int:
        return len(self.locations)

    @property
    def q(self) -> int:
        return self.m.shape[-1]

    @property
    def s(self) -> int:
        return self.m.shape[-2]

    def _slot(self, t: int) -> int:
        if not 0 <= t <= self.T:
            raise InputError(f"t must lie in 0..{self.T}, got {t}")
        if self.states_kept:
            return t
        if t != self.T:
            raise InputError("only the final state was kept; refit with keep_states=True")
        return 0

    def state(self, j: int, t: int) -> FilterState:
        k = self._slot(t)
        return FilterState(t, self.m[j, k], self.C[j, k], float(self.nu[j, k]), self.Psi[j, k])

    def weights(self, t: int | None = None) -> np.ndarray:
        """Aggregated weights at ``t`` (default ``T``)."""
        return self.weight_trace.aggregated(self.aggregation)[self.T if t is None else t]

    def state_covariance(self, j: int) -> np.ndarray:
        corr = exp_correlation(pairwise_distances(self.locations, self.locations), self.grid[j].phi)
        return state_covariance(corr, self.p, self.coef_scale)


@dataclass
class PosteriorDraws:
    """Draws from the stacked mixture.

    ``kind`` is ``smoothed_states``, ``forecast`` or ``interpolation``.
    ``model_indices`` are 0-based positions in the grid.
    """

    kind: str
    draws: np.ndarray
    model_indices: np.ndarray
    aux: dict = field(default_factory=dict)

    @property
    def R(self) -> int:
        return self.draws.shape[0]

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    def quantiles(self, probs=(0.025, 0.5, 0.975)) -> np.ndarray:
        return np.quantile(self.draws, probs, axis=0)


def _choose(rng: np.random.Generator, w: np.ndarray) -> int:
    cum = np.cumsum(w)
    cum = cum / cum[-1]
    cum[-1] = 1.0
    # zero-weight models can never be picked: their cumulative step is flat
    return int(np.searchsorted(cum, rng.random(), side="right"))


def _check_inputs(dataset: SpatioTemporalDataset, prior: Prior, aggregation: str):
    if aggregation not in AGGREGATIONS:
        raise InputError(f"aggregation must be one of {AGGREGATIONS}, got {aggregation!r}")
    s = dataset.p + dataset.n
    if np.shape(prior.m0) != (s, dataset.q) or np.shape(prior.C0) != (s, s) \
            or np.shape(prior.Psi0) != (dataset.q, dataset.q):
        raise DimensionMismatch("prior dimensions do not match the dataset")


def _run_flow(j: int, model: CandidateModel, dataset: SpatioTemporalDataset, prior: Prior,
              dist: np.ndarray, coef_scale: float, keep_states: bool):
    n, p, T = dataset.n, dataset.p, dataset.T
    W = state_covariance(exp_correlation(dist, model.phi), p, coef_scale)
    V = observation_variance(model.alpha) * np.eye(n)
    G = np.eye(n + p)
    eye_n = np.eye(n)
    state = prior.initial_state()
    kept = [state] if keep_states else []
    logd = np.empty((T, n))
    for k in range(T):
        sys = SystemMatrices(np.hstack([dataset.X[k], eye_n]), G, V, W)
        try:
            new = filter_step(state, dataset.Y[k], sys)
            logd[k] = row_logdensities(dataset.Y[k], new.pred_q, np.diag(new.pred_Q),
                                       state.nu, state.Psi)
        except NotPositiveDefinite as exc:
            raise exc.tagged(t=k + 1, j=j) from exc
        state = new
        if keep_states:
            kept.append(state)
    if not keep_states:
        kept = [state]
    return kept, logd


def _stack_states(flows):
    m = np.stack([[s.m for s in states] for states, _ in flows])
    C = np.stack([[s.C for s in states] for states, _ in flows])
    nu = np.array([[s.nu for s in states] for states, _ in flows])
    Psi = np.stack([[s.Psi for s in states] for states, _ in flows])
    return m, C, nu, Psi


def parallel_forward_filter(dataset: SpatioTemporalDataset, grid: ModelGrid, prior: Prior | None = None,
                            aggregation: str = "global", *, initial_weights=None,
                            coef_scale: float = 1.0, tol: float = DEFAULT_TOL,
                            max_iter: int = DEFAULT_MAX_ITER, threads: int | None = None,
                            keep_states: bool = True) -> FitResult:
    """Filter every model flow and compute the stacking weights for ``t = 0..T``.

    Flows are independent, so they run to completion in parallel and the
    weights are computed afterwards from the collected log densities; the
    result is the same as synchronizing the flows at each time step.
    """
    if prior is None:
        prior = default_prior(dataset.locations, dataset.p, dataset.q)
    _check_inputs(dataset, prior, aggregation)
    dist = pairwise_distances(dataset.locations, dataset.locations)
    with parallel.task_pool(threads) as pool:
        flows = parallel.ordered_map(
            lambda j: _run_flow(j, grid[j], dataset, prior, dist, coef_scale, keep_states),
            range(len(grid)), pool)
        logd = np.stack([f[1] for f in flows], axis=1)       # (T, J, n)
        history = LogDensityHistory(logd[1:])
        trace = weight_trace(history, dataset.T, initial_weights, tol, max_iter, pool)
    m, C, nu, Psi = _stack_states(flows)
    echo = {"aggregation": aggregation, "coef_scale": coef_scale, "tol": tol, "max_iter": max_iter,
            "alphas": grid.alphas.tolist(), "phis": grid.phis.tolist(),
            "n": dataset.n, "p": dataset.p, "q": dataset.q, "T": dataset.T}
    return FitResult(grid, dataset.locations, prior, m, C, nu, Psi, trace, history, logd[0],
                     dataset.T, dataset.p, aggregation, coef_scale, keep_states, echo)


def update_fit(fit: FitResult, Y_next, X_next, *, tol: float = DEFAULT_TOL,
               max_iter: int = DEFAULT_MAX_ITER) -> FitResult:
    """Advance a fit by one time point (filter step per model, then new weights)."""
    y = np.asarray(Y_next, dtype=float)
    x = np.asarray(X_next, dtype=float)
    if y.shape != (fit.n, fit.q) or x.shape != (fit.n, fit.p):
        raise DimensionMismatch("new observation or design has the wrong shape")
    T1 = fit.T + 1
    eye_n = np.eye(fit.n)
    new_states, new_logd = [], np.empty((fit.J, fit.n))
    for j, model in enumerate(fit.grid):
        prev = fit.state(j, fit.T)
        sys = SystemMatrices(np.hstack([x, eye_n]), np.eye(fit.s),
                             observation_variance(model.alpha) * eye_n, fit.state_covariance(j))
        try:
            st = filter_step(prev, y, sys)
            new_logd[j] = row_logdensities(y, st.pred_q, np.diag(st.pred_Q), prev.nu, prev.Psi)
        except NotPositiveDefinite as exc:
            raise exc.tagged(t=T1, j=j) from exc
        new_states.append(st)
    history = LogDensityHistory(np.concatenate([fit.log_density_history.values, new_logd[None]]))
    tr = fit.weight_trace
    per_new = individual_weights(history, T1, tol, max_iter)
    cons_new, counts_new = aggregate_consensus(per_new)
    trace = WeightTrace(np.concatenate([tr.per_location, per_new[None]]),
                        np.concatenate([tr.global_, per_new.mean(axis=0)[None]]),
                        np.concatenate([tr.consensus, cons_new[None]]),
                        np.concatenate([tr.counts, counts_new[None]]))
    m_new = np.stack([s.m for s in new_states])[:, None]
    C_new = np.stack([s.C for s in new_states])[:, None]
    nu_new = np.array([s.nu for s in new_states])[:, None]
    Psi_new = np.stack([s.Psi for s in new_states])[:, None]
    if fit.states_kept:
        m_new = np.concatenate([fit.m, m_new], axis=1)
        C_new = np.concatenate([fit.C, C_new], axis=1)
        nu_new = np.concatenate([fit.nu, nu_new], axis=1)
        Psi_new = np.concatenate([fit.Psi, Psi_new], axis=1)
    echo = dict(fit.config_echo, T=T1)
    return FitResult(fit.grid, fit.locations, fit.prior, m_new, C_new, nu_new, Psi_new, trace,
                     history, fit.first_logdens, T1, fit.p, fit.aggregation, fit.coef_scale,
                     fit.states_kept, echo)


def _col_factors(fit: FitResult, t: int, models) -> dict:
    """Per model: ``(d, chol(S))`` of the standard-convention ``IW`` at time ``t``."""
    out = {}
    for j in models:
        st = fit.state(j, t)
        d, s = half_to_standard(st.nu, st.Psi)
        out[j] = (d, chol_psd(s).lower)
    return out


def weighted_backward_sample(fit: FitResult, R: int, seed: int = 0, *, freeze_model: bool = False,
                             threads: int | None = None) -> PosteriorDraws:
    """Draw ``Theta_{1:T}`` trajectories from the stacked smoothing posterior.

    ``draws[r, t-1]`` is the draw of ``Theta_t``; ``model_indices[r, t-1]``
    the model used for it.  By default the model is re-drawn from the
    time-``t`` weights at every step; ``freeze_model`` keeps the one drawn at ``T``.
    Every step uses the time-``T`` inverse-Wishart parameters of its model.
    """
    if R < 1:
        raise InputError("R must be at least 1")
    if not fit.states_kept:
        raise InputError("backward sampling needs all filtered states (keep_states=True)")
    T = fit.T
    if T < 1:
        raise InputError("backward sampling needs at least one time point")
    wts = fit.weight_trace.aggregated(fit.aggregation)
    final_models = np.flatnonzero(wts[T] > 0)
    if freeze_model:
        pairs = [(j, t) for j in final_models for t in range(1, T)]
    else:
        pairs = [(j, t) for t in range(1, T) for j in np.flatnonzero(wts[t] > 0)]
    used = sorted({j for j, _ in pairs} | set(final_models.tolist()))
    col = _col_factors(fit, T, used)
    lc_T = {j: chol_psd(fit.C[j, T]).lower for j in final_models}
    G = np.eye(fit.s)

    def gain_pair(jt):
        j, t = jt
        sys = SystemMatrices(np.empty((0, fit.s)), G, np.empty((0, 0)), fit.state_covariance(j))
        try:
            gain, hh = smoothing_gain(fit.state(j, t), sys)
            return gain, chol_psd(hh).lower
        except NotPositiveDefinite as exc:
            raise exc.tagged(t=t, j=j) from exc

    def one(r):
        rng = parallel.stream(seed, "smooth", r)
        out = np.empty((T, fit.s, fit.q))
        idx = np.empty(T, dtype=np.int64)
        j = _choose(rng, wts[T])
        d, ls = col[j]
        theta, f = mt_draw(d, fit.m[j, T], lc_T[j], ls, rng)
        out[T - 1], idx[T - 1] = theta, j
        for t in range(T - 1, 0, -1):
            if not freeze_model:
                j = _choose(rng, wts[t])
            d, ls = col[j]
            gain, lh = cache[(j, t)]
            h = fit.m[j, t] + gain @ (theta - fit.m[j, t])
            theta, _ = mt_draw(d, h, lh, ls, rng)
            out[t - 1], idx[t - 1] = theta, j
        return out, idx, f @ f.T

    with parallel.task_pool(threads) as pool:
        cache = dict(zip(pairs, parallel.ordered_map(gain_pair, pairs, pool)))
        res = parallel.ordered_map(one, range(R), pool)
    return PosteriorDraws("smoothed_states", np.stack([r[0] for r in res]),
                          np.stack([r[1] for r in res]),
                          {"times": np.arange(1, T + 1), "sigma": np.stack([r[2] for r in res])})


def ffbs(dataset: SpatioTemporalDataset, grid: ModelGrid, prior: Prior | None = None, R: int = 100,
         aggregation: str = "global", seed: int = 0, *, freeze_model: bool = False,
         threads: int | None = None, **filter_kw) -> tuple[FitResult, PosteriorDraws]:
    """Stacked forward filter followed by weighted backward sampling."""
    fit = parallel_forward_filter(dataset, grid, prior, aggregation, threads=threads, **filter_kw)
    return fit, weighted_backward_sample(fit, R, seed, freeze_model=freeze_model, threads=threads)


def forecast(fit: FitResult, horizon: int, future_designs, R: int, seed: int = 0, *,
             conditional: bool = True, keep_states: bool = False,
             threads: int | None = None) -> PosteriorDraws:
    """Draw ``Y_{T+1..T+K}`` (and optionally ``Theta``) from the stacked predictive.

    Each trajectory picks a model from the time-``T`` weights and one column
    covariance ``Sigma``.  With ``conditional`` the step ``k+1`` starts from the
    drawn ``Theta_{T+k}`` (evolution variance ``W``); otherwise every step
    draws from its marginal ``k``-step distribution with a fresh ``Sigma``.
    """
    K = int(horizon)
    if K < 1:
        raise InputError("horizon must be at least 1")
    if R < 1:
        raise InputError("R must be at least 1")
    xs = np.asarray(future_designs, dtype=float)
    if xs.ndim == 2:
        xs = xs[None]
    if xs.shape[0] < K or xs.shape[1:] != (fit.n, fit.p):
        raise DimensionMismatch(f"need {K} future designs of shape {(fit.n, fit.p)}")
    T, n = fit.T, fit.n
    wts = fit.weights(T)
    models = np.flatnonzero(wts > 0)
    col = _col_factors(fit, T, models)
    Fs = [np.hstack([xs[k], np.eye(n)]) for k in range(K)]
    row = {}
    for j in models:
        W = fit.state_covariance(j)
        C_T = fit.state(j, T).C
        if conditional:
            row[j] = [chol_psd(C_T + W).lower] + [chol_psd(W).lower] * (K - 1)
        else:
            row[j] = [chol_psd(C_T + (k + 1) * W).lower for k in range(K)]
    sd = {j: np.sqrt(observation_variance(fit.grid[j].alpha)) for j in models}

    def one(r):
        rng = parallel.stream(seed, "forecast", r)
        j = _choose(rng, wts)
        d, ls = col[j]
        ys = np.empty((K, n, fit.q))
        th = np.empty((K, fit.s, fit.q)) if keep_states else None
        a = fit.state(j, T).m
        f = iw_factor_draw(d, ls, rng)
        for k in range(K):
            if not conditional and k > 0:
                f = iw_factor_draw(d, ls, rng)
            theta = a + row[j][k] @ rng.standard_normal(a.shape) @ f.T
            ys[k] = Fs[k] @ theta + sd[j] * rng.standard_normal((n, fit.q)) @ f.T
            if keep_states:
                th[k] = theta
            if conditional:
                a = theta
        return ys, th, j

    with parallel.task_pool(threads) as pool:
        res = parallel.ordered_map(one, range(R), pool)
    aux = {"horizon": np.arange(1, K + 1), "conditional": conditional}
    if keep_states:
        aux["theta"] = np.stack([r[1] for r in res])
    return PosteriorDraws("forecast", np.stack([r[0] for r in res]),
                          np.array([r[2] for r in res], dtype=np.int64), aux)


def spatial_predict(fit: FitResult, t: int, new_locations: LocationSet, new_design, R: int,
                    seed: int = 0, *, threads: int | None = None) -> PosteriorDraws:
    """Draw outcomes ``Y~_t`` and latent effects ``Omega~_t`` at new locations.

    ``draws`` holds ``Y~`` (``R x m x q``); ``aux["omega"]`` holds ``Omega~``.
    """
    if not 1 <= t <= fit.T:
        raise InputError(f"t must lie in 1..{fit.T}, got {t}")
    if R < 1:
        raise InputError("R must be at least 1")
    xt = np.asarray(new_design, dtype=float)
    mm = len(new_locations)
    if xt.shape != (mm, fit.p):
        raise DimensionMismatch(f"new design must be {(mm, fit.p)}, got {xt.shape}")
    wts = fit.weights(t)
    models = np.flatnonzero(wts > 0)
    col = _col_factors(fit, t, models)
    params = {}
    for j in models:
        sp = schur_predictive(*correlation_blocks(fit.locations, new_locations, fit.grid[j].phi))
        chi = np.block([[xt, sp.m_tilde], [np.zeros((mm, fit.p)), sp.m_tilde]])
        wt = sp.w_tilde
        v = observation_variance(fit.grid[j].alpha)
        N = np.block([[v * np.eye(mm) + wt, wt], [wt, wt]])
        st = fit.state(j, t)
        E = chi @ st.C @ chi.T + N
        try:
            le = chol_psd(0.5 * (E + E.T)).lower
        except NotPositiveDefinite as exc:
            raise exc.tagged(t=t, j=j) from exc
        params[j] = (chi @ st.m, le)

    def one(r):
        rng = parallel.stream(seed, "interpolate", r)
        j = _choose(rng, wts)
        d, ls = col[j]
        mu, le = params[j]
        z, _ = mt_draw(d, mu, le, ls, rng)
        return z, j

    with parallel.task_pool(threads) as pool:
        res = parallel.ordered_map(one, range(R), pool)
    z = np.stack([r[0] for r in res])
    return PosteriorDraws("interpolation", z[:, :mm], np.array([r[1] for r in res], dtype=np.int64),
                          {"omega": z[:, mm:], "time": t})
