"""Synthetic panels from the spatiotemporal DLM and the replicate experiment harness."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import parallel
from .data import SpatioTemporalDataset
from .dlm import default_prior, observation_variance, state_covariance
from .engine import ModelGrid, PosteriorDraws, forecast, parallel_forward_filter, weighted_backward_sample
from .errors import DimensionMismatch, DynstackError, InputError, InvalidAlpha
from .matvar import chol_psd
from .spatial import LocationSet, exp_correlation, pairwise_distances
from .stacking import WeightTrace, hyperparam_estimate

log = logging.getLogger(__name__)

DEFAULT_SIGMA = np.array([[1.0, -0.3, 0.6],
                          [-0.3, 1.2, 0.4],
                          [0.6, 0.4, 1.0]])
CLOSED_ALPHAS = (0.7, 0.8, 0.9)
CLOSED_PHIS = (2.0, 4.0, 6.0)


def closed_grid() -> ModelGrid:
    return ModelGrid.cross(CLOSED_ALPHAS, CLOSED_PHIS)


@dataclass(frozen=True)
class GeneratorSpec:
    n: int = 100
    q: int = 3
    T: int = 20
    p: int = 2
    alpha_true: float = 0.8
    phi_true: float = 4.0
    sigma_true: np.ndarray = field(default_factory=lambda: DEFAULT_SIGMA.copy())
    seed: int = 0
    location_layout: str = "uniform_unit_square"
    coords: np.ndarray | None = None
    horizon: int = 0          # extra held-out time points after T
    coef_scale: float = 1.0

    def __post_init__(self):
        for name in ("n", "q", "T", "p"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"{name} must be a positive integer")
        if not 0 < self.alpha_true < 1:
            raise InvalidAlpha(f"alpha_true must lie in (0, 1), got {self.alpha_true}")
        sig = np.asarray(self.sigma_true, dtype=float)
        if sig.shape != (self.q, self.q):
            raise DimensionMismatch(f"sigma_true must be {self.q} x {self.q}")
        if not np.allclose(sig, sig.T) or np.linalg.eigvalsh(sig).min() <= 0:
            raise InputError("sigma_true must be symmetric positive definite")
        object.__setattr__(self, "sigma_true", sig)
        if self.location_layout == "supplied":
            if self.coords is None or np.shape(self.coords) != (self.n, 2):
                raise DimensionMismatch("supplied layout needs n x 2 coords")
        elif self.location_layout != "uniform_unit_square":
            raise InputError(f"unknown location layout {self.location_layout!r}")


@dataclass(frozen=True)
class GroundTruth:
    """``theta[k]`` is ``Theta_k`` for ``k = 0..T+horizon``."""

    theta: np.ndarray
    sigma: np.ndarray
    future_Y: np.ndarray
    future_X: np.ndarray
    p: int

    @property
    def B(self) -> np.ndarray:
        return self.theta[:, : self.p]

    @property
    def Omega(self) -> np.ndarray:
        return self.theta[:, self.p:]


def generate_dataset(spec: GeneratorSpec, rng: np.random.Generator | None = None):
    """Simulate ``T + horizon`` steps; return ``(dataset over 1..T, truth)``."""
    if rng is None:
        rng = parallel.stream(spec.seed, "simulate")
    n, p, q = spec.n, spec.p, spec.q
    coords = (rng.uniform(size=(n, 2)) if spec.location_layout == "uniform_unit_square"
              else np.asarray(spec.coords, dtype=float))
    locs = LocationSet.from_coords(coords)
    prior = default_prior(locs, p, q)
    ls = chol_psd(spec.sigma_true).lower
    l0 = chol_psd(prior.C0).lower
    corr = exp_correlation(pairwise_distances(locs, locs), spec.phi_true)
    lw = chol_psd(state_covariance(corr, p, spec.coef_scale)).lower
    sd_v = np.sqrt(observation_variance(spec.alpha_true))
    total = spec.T + spec.horizon
    theta = np.empty((total + 1, n + p, q))
    theta[0] = prior.m0 + l0 @ rng.standard_normal((n + p, q)) @ ls.T
    X = rng.uniform(size=(total, n, p))
    Y = np.empty((total, n, q))
    for k in range(total):
        theta[k + 1] = theta[k] + lw @ rng.standard_normal((n + p, q)) @ ls.T
        mean = X[k] @ theta[k + 1, :p] + theta[k + 1, p:]
        Y[k] = mean + sd_v * rng.standard_normal((n, q)) @ ls.T
    T = spec.T
    data = SpatioTemporalDataset(locs, Y[:T], X[:T])
    truth = GroundTruth(theta, spec.sigma_true.copy(), Y[T:], X[T:], p)
    return data, truth


@dataclass
class MetricPanel:
    """Scores of posterior draws against truth.

    Per-time, per-outcome arrays average over the rows of each time slice.
    """

    abs_bias: np.ndarray
    mspe: np.ndarray
    interval_width: np.ndarray
    pred_variance: np.ndarray
    coverage: dict
    frobenius: np.ndarray
    zero_width: bool = False


def _interval(d: np.ndarray, level: float):
    a = (1.0 - level) / 2.0
    return np.quantile(d, [a, 1.0 - a], axis=0)


def _covered(d: np.ndarray, truth: np.ndarray, level: float) -> float:
    lo, hi = _interval(d, level)
    return float(np.mean((lo <= truth) & (truth <= hi)))


def metrics(draws: PosteriorDraws, truth, level: float = 0.95, *, p: int | None = None,
            sigma_truth=None) -> MetricPanel:
    """Bias, MSPE, interval width and variance of draws around ``truth``.

    The point estimate is the posterior mean of the draws.  ``truth`` matches
    one draw (``T x rows x q`` or ``rows x q``).  With ``p`` the first ``p``
    rows are scored as the coefficient block ``B`` (coverage and Frobenius
    norm) and the rest as ``Omega``.
    """
    d = np.asarray(draws.draws, dtype=float)
    tr = np.asarray(truth, dtype=float)
    if d.shape[1:] != tr.shape:
        raise DimensionMismatch(f"truth shape {tr.shape} does not match draws {d.shape[1:]}")
    if d.ndim == 3:
        d, tr = d[:, None], tr[None]
    est = d.mean(axis=0)
    lo, hi = _interval(d, level)
    width = hi - lo
    panel = MetricPanel(
        abs_bias=np.abs(est - tr).mean(axis=1),
        mspe=((d - tr) ** 2).mean(axis=(0, 2)),
        interval_width=width.mean(axis=1),
        pred_variance=d.var(axis=0).mean(axis=1),
        coverage={},
        frobenius=np.empty(0),
        zero_width=bool(np.any(width == 0.0)),
    )
    if p is not None:
        panel.coverage["B"] = _covered(d[:, :, :p], tr[:, :p], level)
        panel.coverage["Omega"] = _covered(d[:, :, p:], tr[:, p:], level)
        panel.frobenius = np.sqrt(np.sum((est[:, :p] - tr[:, :p]) ** 2, axis=(1, 2)))
    else:
        panel.coverage["Y"] = _covered(d, tr, level)
    if sigma_truth is not None and "sigma" in draws.aux:
        panel.coverage["Sigma"] = _covered(np.asarray(draws.aux["sigma"]),
                                           np.asarray(sigma_truth, dtype=float), level)
    return panel


@dataclass
class ReplicateResult:
    index: int
    grid: ModelGrid
    final_weights: np.ndarray
    true_rank: int | None
    smooth: MetricPanel
    forecast: MetricPanel


@dataclass
class ExperimentResult:
    replicates: list
    failures: int
    errors: list

    def mean_coverage(self, block: str, panel: str = "smooth") -> float:
        vals = [getattr(r, panel).coverage[block] for r in self.replicates]
        return float(np.mean(vals)) if vals else float("nan")

    def true_in_top(self, k: int = 2) -> int:
        return sum(1 for r in self.replicates if r.true_rank is not None and r.true_rank < k)


def _rank_of(weights: np.ndarray, j: int) -> int:
    """0-based rank of model ``j``; ties are resolved in its favor."""
    return int(np.sum(weights > weights[j]))


def _replicate(rep: int, spec: GeneratorSpec, grid_fn, R: int, seed: int, aggregation: str,
               threads: int | None) -> ReplicateResult:
    rng = parallel.stream(seed, "replicate", rep)
    data, truth = generate_dataset(replace(spec, horizon=max(spec.horizon, 1)), rng)
    grid = grid_fn(rep)
    fit = parallel_forward_filter(data, grid, aggregation=aggregation, coef_scale=spec.coef_scale,
                                  threads=threads)
    draws = weighted_backward_sample(fit, R, seed + rep, threads=threads)
    fc = forecast(fit, 1, truth.future_X[:1], R, seed + rep, threads=threads)
    try:
        true_j = grid.index(spec.alpha_true, spec.phi_true)
        rank = _rank_of(fit.weights(), true_j)
    except KeyError:
        rank = None
    return ReplicateResult(
        rep, grid, fit.weights().copy(), rank,
        metrics(draws, truth.theta[1: data.T + 1], p=spec.p, sigma_truth=truth.sigma),
        metrics(fc, truth.future_Y[:1]),
    )


def _run(spec, grid_fn, replicates, R, seed, aggregation, threads) -> ExperimentResult:
    if replicates < 1:
        raise InputError("replicates must be at least 1")

    def task(rep):
        try:
            # replicates run side by side; each one stays single-threaded
            return _replicate(rep, spec, grid_fn, R, seed, aggregation, 1)
        except DynstackError as exc:
            log.warning("replicate %d failed: %s", rep, exc)
            return exc

    with parallel.task_pool(threads) as pool:
        out = parallel.ordered_map(task, range(replicates), pool)
    ok = [r for r in out if isinstance(r, ReplicateResult)]
    errs = [f"replicate {i}: {r}" for i, r in enumerate(out) if not isinstance(r, ReplicateResult)]
    return ExperimentResult(ok, len(errs), errs)


def run_mclosed(spec: GeneratorSpec | None = None, grid: ModelGrid | None = None,
                replicates: int = 10, R: int = 200, seed: int = 0, *,
                aggregation: str = "global", threads: int | None = None) -> ExperimentResult:
    """Replicates scored with a fixed grid (by default the 3 x 3 grid containing the truth)."""
    spec = spec or GeneratorSpec()
    grid = grid or closed_grid()
    return _run(spec, lambda rep: grid, replicates, R, seed, aggregation, threads)


def open_grid(rng: np.random.Generator, alpha_range=(0.5, 1.0), phi_range=(1.0, 50.0),
              size: int = 3) -> ModelGrid:
    alphas = rng.uniform(*alpha_range, size=size)
    phis = rng.uniform(*phi_range, size=size)
    return ModelGrid.cross(alphas, phis)


def run_mopen(spec: GeneratorSpec | None = None, replicates: int = 10, R: int = 200, seed: int = 0,
              *, alpha_range=(0.5, 1.0), phi_range=(1.0, 50.0), aggregation: str = "global",
              threads: int | None = None) -> ExperimentResult:
    """Replicates scored with a 3 x 3 grid drawn at random for each replicate."""
    spec = spec or GeneratorSpec()
    grid_fn = lambda rep: open_grid(parallel.stream(seed, "grid", rep), alpha_range, phi_range)  # noqa: E731
    return _run(spec, grid_fn, replicates, R, seed, aggregation, threads)


@dataclass
class WeightsDynamics:
    trace: WeightTrace
    alpha_hat: np.ndarray
    phi_hat: np.ndarray
    early_variability: float
    late_variability: float
    grid: ModelGrid

    @property
    def stabilized(self) -> bool:
        return self.late_variability < self.early_variability

    @property
    def argmax_agree(self) -> bool:
        return int(np.argmax(self.trace.global_[-1])) == int(np.argmax(self.trace.consensus[-1]))


def _variability(w: np.ndarray) -> float:
    # summed per-model standard deviation over a window of times
    return float(np.sum(np.std(w, axis=0)))


def weights_dynamics_experiment(spec: GeneratorSpec | None = None, grid: ModelGrid | None = None, *,
                                scale: str = "desk", threads: int | None = None) -> WeightsDynamics:
    """Weight trajectories over a long panel and the implied ``(alpha, phi)`` estimates.

    ``scale="full"`` uses ``n = 500, T = 100``; ``"desk"`` uses ``n = 100, T = 60``.
    Variability is compared between the first and last 20% of ``t = 2..T``.
    """
    if spec is None:
        n, T = {"desk": (100, 60), "full": (500, 100)}[scale]
        spec = GeneratorSpec(n=n, T=T)
    grid = grid or closed_grid()
    data, _ = generate_dataset(spec)
    fit = parallel_forward_filter(data, grid, coef_scale=spec.coef_scale, threads=threads,
                                  keep_states=False)
    tr = fit.weight_trace
    est = np.array([hyperparam_estimate(w, grid.alphas, grid.phis) for w in tr.global_])
    window = tr.global_[2:]
    k = max(2, int(round(0.2 * len(window))))
    return WeightsDynamics(tr, est[:, 0], est[:, 1], _variability(window[:k]),
                           _variability(window[-k:]), grid)
