"""``dynstack`` command line: simulate, fit, forecast, interpolate, weights.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Failures print one JSON line prefixed with ``dynstack-error:`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, apply_overrides, load_config
from .dlm import N_SEASONAL_DUMMIES, build_seasonal_design, default_prior
from .engine import (FitResult, ModelGrid, forecast, parallel_forward_filter, spatial_predict,
                     weighted_backward_sample)
from .errors import ConfigError, DataError, DynstackError, InputError, NumericError
from .simulate import GeneratorSpec, generate_dataset

log = logging.getLogger("dynstack")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
FIT_FILE = "fit.npz"
QUANTILES = (0.025, 0.5, 0.975)


def month_of(t: int, first_month: int) -> int:
    """Calendar month of time index ``t`` (1-based) when ``t = 1`` falls in ``first_month``."""
    return (first_month - 1 + t - 1) % 12 + 1


def seasonal_designs(X: np.ndarray, first_month: int, start: int = 1) -> np.ndarray:
    """Append monthly dummies to ``X[k]`` for time indices ``start + k``."""
    return np.stack([build_seasonal_design(x, month_of(start + k, first_month))
                     for k, x in enumerate(X)])


def _meta(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "seed": cfg.seed, "config": cfg.digest()}


def _row_labels(fit_p: int, ids) -> list[tuple[str, str]]:
    return [("B", f"b_{i + 1}") for i in range(fit_p)] + [("Omega", str(i)) for i in ids]


def _quantile_cols(d: np.ndarray) -> np.ndarray:
    return np.quantile(d, QUANTILES, axis=0)


# -- commands ---------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> list[Path]:
    s = cfg.simulate
    spec = GeneratorSpec(n=s.n, q=s.q, T=s.T, p=s.p, alpha_true=s.alpha, phi_true=s.phi,
                         sigma_true=cfg.sigma_matrix(), seed=cfg.seed, horizon=s.horizon,
                         coef_scale=s.coef_scale)
    data, truth = generate_dataset(spec)
    meta = _meta(cfg, "simulate")
    out = cfg.out_dir
    files = [io.emit_panel(data, out / "panel.csv", meta)]
    if s.horizon > 0:
        ids = data.locations.ids
        files.append(io.write_table(
            out / "designs.csv", ["k", "location_id"] + [f"x_{i + 1}" for i in range(s.p)],
            ([k + 1, ids[i], *map(float, truth.future_X[k, i])]
             for k in range(s.horizon) for i in range(s.n)), meta))
        files.append(io.write_table(
            out / "future.csv", ["k", "location_id"] + [f"y_{i + 1}" for i in range(s.q)],
            ([k + 1, ids[i], *map(float, truth.future_Y[k, i])]
             for k in range(s.horizon) for i in range(s.n)), meta))
    labels = _row_labels(s.p, data.locations.ids)
    files.append(io.write_table(
        out / "truth_theta.csv", ["time", "block", "row_id", "outcome", "value"],
        ([t, blk, rid, f"y_{c + 1}", float(truth.theta[t, r, c])]
         for t in range(truth.theta.shape[0]) for r, (blk, rid) in enumerate(labels)
         for c in range(s.q)), meta))
    files.append(io.write_table(
        out / "truth_sigma.csv", ["row", "col", "value"],
        ([a + 1, b + 1, float(truth.sigma[a, b])] for a in range(s.q) for b in range(s.q)), meta))
    return files


def weight_rows(fit: FitResult):
    ids = fit.locations.ids
    tr = fit.weight_trace
    models = list(fit.grid)
    for t in range(fit.T + 1):
        for i, loc in enumerate(ids):
            for j, m in enumerate(models):
                yield [t, "location", loc, j + 1, m.alpha, m.phi, float(tr.per_location[t, i, j])]
        for j, m in enumerate(models):
            yield [t, "global", "", j + 1, m.alpha, m.phi, float(tr.global_[t, j])]
        for j, m in enumerate(models):
            yield [t, "consensus", "", j + 1, m.alpha, m.phi, float(tr.consensus[t, j])]


WEIGHT_HEADER = ["time", "scope", "location_id", "model", "alpha", "phi", "weight"]


def _write_weights(fit: FitResult, path: Path, meta: dict) -> Path:
    return io.write_table(path, WEIGHT_HEADER, weight_rows(fit), meta)


def run_fit(cfg: RunConfig):
    """Fit from a validated config; returns ``(fit, smoothed draws, dataset)``."""
    data = io.ingest_panel(cfg.panel)
    X = data.X
    if cfg.seasonal:
        X = seasonal_designs(X, cfg.first_month)
        data = type(data)(data.locations, data.Y, X, data.times, data.outcome_names)
    prior = default_prior(data.locations, data.p, data.q, coef_var=cfg.coef_var,
                          phi=cfg.prior_phi, psi_scale=cfg.psi_scale, nu0=cfg.nu0)
    grid = ModelGrid.cross(cfg.alphas, cfg.phis)
    fit = parallel_forward_filter(data, grid, prior, cfg.aggregation, coef_scale=cfg.coef_scale,
                                  tol=cfg.tol, max_iter=cfg.max_iter, threads=cfg.threads)
    fit.config_echo.update(times=[int(t) for t in data.times], seasonal=cfg.seasonal,
                           first_month=cfg.first_month, seed=cfg.seed)
    draws = weighted_backward_sample(fit, cfg.draws, cfg.seed, freeze_model=cfg.freeze_model,
                                     threads=cfg.threads)
    return fit, draws, data


def cmd_fit(cfg: RunConfig) -> list[Path]:
    fit, draws, data = run_fit(cfg)
    out, meta = cfg.out_dir, _meta(cfg, "fit")
    labels = _row_labels(fit.p, fit.locations.ids)
    q = fit.q
    files = [io.save_fit(fit, out / FIT_FILE), _write_weights(fit, out / "weights.csv", meta)]

    def state_rows():
        for j, m in enumerate(fit.grid):
            st = fit.state(j, fit.T)
            # marginal sd of Theta[r, c]: C_rr * E[Sigma_cc]
            e_sigma = np.diag(st.Psi) / (st.nu - (q + 1) / 2.0)
            sd = np.sqrt(np.outer(np.diag(st.C), e_sigma))
            for r, (blk, rid) in enumerate(labels):
                for c in range(q):
                    yield [j + 1, m.alpha, m.phi, blk, rid, f"y_{c + 1}",
                           float(st.m[r, c]), float(sd[r, c])]

    files.append(io.write_table(
        out / "model_states.csv",
        ["model", "alpha", "phi", "block", "row_id", "outcome", "mean", "sd"], state_rows(), meta))
    mean = draws.draws.mean(axis=0)
    qs = _quantile_cols(draws.draws)

    def smooth_rows():
        for k, t in enumerate(data.times):
            for r, (blk, rid) in enumerate(labels):
                for c in range(q):
                    yield [int(t), blk, rid, f"y_{c + 1}", float(mean[k, r, c]),
                           *(float(v) for v in qs[:, k, r, c])]

    files.append(io.write_table(
        out / "smoothed.csv",
        ["time", "block", "row_id", "outcome", "mean", "q025", "q50", "q975"], smooth_rows(), meta))
    return files


def _load_fit(cfg: RunConfig) -> FitResult:
    path = cfg.out_dir / FIT_FILE
    if not path.is_file():
        raise ConfigError(f"no fit archive at {path}; run `dynstack fit` first")
    return io.load_fit(path)


def _raw_p(fit: FitResult) -> int:
    return fit.p - (N_SEASONAL_DUMMIES if fit.config_echo.get("seasonal") else 0)


def cmd_forecast(cfg: RunConfig) -> list[Path]:
    fit = _load_fit(cfg)
    if cfg.designs is None:
        raise ConfigError("[forecast] designs is required")
    K = cfg.horizon
    xs = io.read_designs(cfg.designs, fit.locations, _raw_p(fit))
    if xs.shape[0] < K:
        raise DataError(f"designs cover {xs.shape[0]} steps, horizon is {K}")
    xs = xs[:K]
    if fit.config_echo.get("seasonal"):
        xs = seasonal_designs(xs, int(fit.config_echo["first_month"]), start=fit.T + 1)
    fc = forecast(fit, K, xs, cfg.draws, cfg.seed, conditional=cfg.conditional, threads=cfg.threads)
    qs = _quantile_cols(fc.draws)
    ids = fit.locations.ids
    rows = ([k + 1, ids[i], f"y_{c + 1}", *(float(v) for v in qs[:, k, i, c])]
            for k in range(K) for i in range(fit.n) for c in range(fit.q))
    return [io.write_table(cfg.out_dir / "forecast.csv",
                           ["k", "location_id", "outcome", "q025", "q50", "q975"], rows,
                           _meta(cfg, "forecast"))]


def cmd_interpolate(cfg: RunConfig) -> list[Path]:
    fit = _load_fit(cfg)
    times = fit.config_echo.get("times") or list(range(1, fit.T + 1))
    if cfg.interp_time not in times:
        raise ConfigError(f"time {cfg.interp_time} is not a fitted time label")
    t = times.index(cfg.interp_time) + 1
    locs, x = io.read_locations(cfg.locations, _raw_p(fit))
    if fit.config_echo.get("seasonal"):
        x = seasonal_designs(x[None], int(fit.config_echo["first_month"]), start=t)[0]
    pred = spatial_predict(fit, t, locs, x, cfg.draws, cfg.seed, threads=cfg.threads)
    rows = []
    for name, d in (("Y", pred.draws), ("Omega", pred.aux["omega"])):
        qs = _quantile_cols(d)
        rows += [[loc, name, f"y_{c + 1}", *(float(v) for v in qs[:, i, c])]
                 for i, loc in enumerate(locs.ids) for c in range(fit.q)]
    return [io.write_table(cfg.out_dir / "interpolation.csv",
                           ["location_id", "quantity", "outcome", "q025", "q50", "q975"], rows,
                           _meta(cfg, "interpolate"))]


def cmd_weights(cfg: RunConfig) -> list[Path]:
    fit = _load_fit(cfg)
    return [_write_weights(fit, cfg.out_dir / "weights.csv", _meta(cfg, "weights"))]


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "forecast": cmd_forecast,
            "interpolate": cmd_interpolate, "weights": cmd_weights}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dynstack", description="Stacked spatiotemporal DLM inference.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", "-c", required=True, type=Path)
        sp.add_argument("--out", dest="out_dir", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--draws", type=int)
        if name == "fit":
            sp.add_argument("--panel", type=Path)
            sp.add_argument("--aggregation", choices=("global", "consensus"))
        if name == "forecast":
            sp.add_argument("--horizon", type=int)
            sp.add_argument("--designs", type=Path)
        if name == "interpolate":
            sp.add_argument("--time", dest="interp_time", type=int)
            sp.add_argument("--locations", type=Path)
    return ap


def _fail(code: int, exc: BaseException) -> int:
    payload = {"code": code, "type": type(exc).__name__, "message": str(exc)}
    print("dynstack-error: " + json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = apply_overrides(load_config(args.config), overrides).validate(args.command)
        files = COMMANDS[args.command](cfg)
    except (ConfigError, InputError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except DataError as exc:
        return _fail(EXIT_DATA, exc)
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except DynstackError as exc:
        return _fail(1, exc)
    for f in files:
        log.info("wrote %s", f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
