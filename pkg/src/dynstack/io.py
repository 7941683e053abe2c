"""CSV panels, result tables and fit archives.

Every table starts with one ``#`` metadata line, then a header row.  Floats
are written with ``%.12g``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import SpatioTemporalDataset
from .dlm import Prior
from .engine import CandidateModel, FitResult, ModelGrid
from .errors import GridError, ParseError, SchemaError
from .spatial import LocationSet
from .stacking import LogDensityHistory, WeightTrace

FLOAT_FORMAT = "%.12g"
PANEL_FIXED = ("time", "location_id", "lon", "lat")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FORMAT % v
    return str(v)


def meta_line(meta: dict | None) -> str:
    from . import __version__
    items = {"version": __version__}
    items.update(meta or {})
    return "# dynstack " + " ".join(f"{k}={v}" for k, v in items.items())


def write_table(path, header: Sequence[str], rows: Iterable[Sequence], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(meta_line(meta) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _data_lines(path):
    """Yield ``(line_number, fields)`` for non-comment, non-blank lines."""
    with open(path, newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            if fields[0].lstrip().startswith("#"):
                continue
            yield lineno, [f.strip() for f in fields]


def read_table(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    lines = list(_data_lines(path))
    if not lines:
        raise SchemaError(f"{path}: no header row")
    return lines[0][1], lines[1:]


def _float(text: str, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} as a number", line=line, column=column) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {text!r}", line=line, column=column)
    return v


def _int(text: str, line: int, column: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} as an integer", line=line, column=column) from None


def _prefixed(header: Sequence[str], prefix: str) -> int:
    """Count of consecutive ``prefix1, prefix2, ...`` columns at the start of ``header``."""
    k = 0
    while k < len(header) and header[k] == f"{prefix}{k + 1}":
        k += 1
    return k


def panel_header(q: int, p: int) -> list[str]:
    return list(PANEL_FIXED) + [f"y_{i + 1}" for i in range(q)] + [f"x_{i + 1}" for i in range(p)]


def _check_panel_header(header: list[str]) -> tuple[int, int]:
    if tuple(header[:4]) != PANEL_FIXED:
        raise SchemaError(f"panel header must start with {','.join(PANEL_FIXED)}, got {','.join(header[:4])}")
    rest = header[4:]
    q = _prefixed(rest, "y_")
    p = _prefixed(rest[q:], "x_")
    if q < 1:
        raise SchemaError("panel needs at least one outcome column y_1")
    if q + p != len(rest):
        raise SchemaError(f"unexpected column {rest[q + p]!r}; expected y_1..y_q then x_1..x_p")
    return q, p


def ingest_panel(path) -> SpatioTemporalDataset:
    """Read a long-format panel, check the time x location grid and sort it."""
    header, lines = read_table(path)
    q, p = _check_panel_header(header)
    width = len(header)
    cells: dict[tuple[int, str], tuple[int, np.ndarray, np.ndarray]] = {}
    coords: dict[str, tuple[float, float, int]] = {}
    for lineno, f in lines:
        if len(f) != width:
            raise ParseError(f"expected {width} fields, found {len(f)}", line=lineno)
        t = _int(f[0], lineno, "time")
        loc = f[1]
        if not loc:
            raise ParseError("empty location id", line=lineno, column="location_id")
        lon, lat = _float(f[2], lineno, "lon"), _float(f[3], lineno, "lat")
        vals = np.array([_float(v, lineno, header[4 + k]) for k, v in enumerate(f[4:])])
        if (t, loc) in cells:
            raise GridError(f"duplicated cell time={t} location_id={loc} (lines {cells[(t, loc)][0]} and {lineno})")
        if loc in coords and coords[loc][:2] != (lon, lat):
            raise GridError(f"location {loc} changes coordinates at line {lineno}")
        coords.setdefault(loc, (lon, lat, lineno))
        cells[(t, loc)] = (lineno, vals[:q], vals[q:])
    if not cells:
        raise GridError("panel has no data rows")
    times = sorted({t for t, _ in cells})
    ids = sorted(coords)
    for t in times:
        for loc in ids:
            if (t, loc) not in cells:
                raise GridError(f"missing cell time={t} location_id={loc}")
    Y = np.array([[cells[(t, loc)][1] for loc in ids] for t in times])
    X = np.array([[cells[(t, loc)][2] for loc in ids] for t in times]).reshape(len(times), len(ids), p)
    locs = LocationSet(tuple(ids), np.array([coords[i][:2] for i in ids]))
    return SpatioTemporalDataset(locs, Y, X, np.array(times))


def panel_rows(dataset: SpatioTemporalDataset):
    order = sorted(range(dataset.n), key=lambda i: str(dataset.locations.ids[i]))
    for k, t in enumerate(dataset.times):
        for i in order:
            lon, lat = dataset.locations.coords[i]
            yield [int(t), dataset.locations.ids[i], float(lon), float(lat),
                   *map(float, dataset.Y[k, i]), *map(float, dataset.X[k, i])]


def emit_panel(dataset: SpatioTemporalDataset, path, meta: dict | None = None) -> Path:
    return write_table(path, panel_header(dataset.q, dataset.p), panel_rows(dataset), meta)


def read_locations(path, p: int) -> tuple[LocationSet, np.ndarray]:
    """New-site file: ``location_id, lon, lat, x_1..x_p``."""
    header, lines = read_table(path)
    expected = ["location_id", "lon", "lat"] + [f"x_{i + 1}" for i in range(p)]
    if header != expected:
        raise SchemaError(f"locations header must be {','.join(expected)}")
    ids, xy, xs = [], [], []
    for lineno, f in lines:
        if len(f) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(f)}", line=lineno)
        ids.append(f[0])
        xy.append([_float(f[1], lineno, "lon"), _float(f[2], lineno, "lat")])
        xs.append([_float(v, lineno, header[3 + k]) for k, v in enumerate(f[3:])])
    if not ids:
        raise GridError("locations file has no rows")
    if len(set(ids)) != len(ids):
        raise GridError("locations file repeats a location id")
    return LocationSet(tuple(ids), np.array(xy)), np.array(xs, dtype=float).reshape(len(ids), p)


def read_designs(path, locations: LocationSet, p: int) -> np.ndarray:
    """Future designs ``k, location_id, x_1..x_p`` as a ``K x n x p`` array."""
    header, lines = read_table(path)
    expected = ["k", "location_id"] + [f"x_{i + 1}" for i in range(p)]
    if header != expected:
        raise SchemaError(f"designs header must be {','.join(expected)}")
    pos = {loc: i for i, loc in enumerate(locations.ids)}
    cells = {}
    for lineno, f in lines:
        if len(f) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(f)}", line=lineno)
        k = _int(f[0], lineno, "k")
        if f[1] not in pos:
            raise GridError(f"unknown location_id {f[1]!r} at line {lineno}")
        if (k, f[1]) in cells:
            raise GridError(f"duplicated cell k={k} location_id={f[1]}")
        cells[(k, f[1])] = [_float(v, lineno, header[2 + j]) for j, v in enumerate(f[2:])]
    ks = sorted({k for k, _ in cells})
    if not ks or ks != list(range(1, len(ks) + 1)):
        raise GridError("design steps must be numbered 1..K without gaps")
    out = np.empty((len(ks), len(locations), p))
    for k in ks:
        for loc, i in pos.items():
            if (k, loc) not in cells:
                raise GridError(f"missing cell k={k} location_id={loc}")
            out[k - 1, i] = cells[(k, loc)]
    return out


def save_fit(fit: FitResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    info = {
        "ids": [str(i) for i in fit.locations.ids],
        "alphas": fit.grid.alphas.tolist(), "phis": fit.grid.phis.tolist(),
        "labels": [m.label for m in fit.grid],
        "T": fit.T, "p": fit.p, "aggregation": fit.aggregation, "coef_scale": fit.coef_scale,
        "states_kept": fit.states_kept, "nu0": fit.prior.nu0, "config_echo": fit.config_echo,
    }
    tr = fit.weight_trace
    with open(path, "wb") as fh:
        np.savez_compressed(
            fh, info=np.array(json.dumps(info)), coords=fit.locations.coords,
            m=fit.m, C=fit.C, nu=fit.nu, Psi=fit.Psi,
            m0=fit.prior.m0, C0=fit.prior.C0, Psi0=fit.prior.Psi0,
            per_location=tr.per_location, global_=tr.global_, consensus=tr.consensus, counts=tr.counts,
            history=fit.log_density_history.values, first_logdens=fit.first_logdens)
    return path


def load_fit(path) -> FitResult:
    with np.load(path, allow_pickle=False) as z:
        info = json.loads(str(z["info"]))
        grid = ModelGrid(tuple(CandidateModel(a, f, lab) for a, f, lab
                               in zip(info["alphas"], info["phis"], info["labels"])))
        locs = LocationSet(tuple(info["ids"]), z["coords"])
        prior = Prior(z["m0"], z["C0"], info["nu0"], z["Psi0"])
        trace = WeightTrace(z["per_location"], z["global_"], z["consensus"], z["counts"])
        return FitResult(grid, locs, prior, z["m"], z["C"], z["nu"], z["Psi"], trace,
                         LogDensityHistory(z["history"]), z["first_logdens"], int(info["T"]),
                         int(info["p"]), info["aggregation"], float(info["coef_scale"]),
                         bool(info["states_kept"]), info["config_echo"])
