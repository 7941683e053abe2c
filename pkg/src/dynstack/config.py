"""Run configuration: one INI file plus command-line overrides.

See ``docs/config.md`` for the grammar.  Relative paths resolve against the
directory holding the config file.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError

SECTIONS = {
    "data": {"panel"},
    "model": {"alphas", "phis", "coef_scale"},
    "prior": {"coef_var", "phi", "psi_scale", "nu0"},
    "stacking": {"aggregation", "tol", "max_iter"},
    "sampling": {"draws", "seed", "threads", "freeze_model"},
    "forecast": {"horizon", "designs", "conditional"},
    "interpolate": {"time", "locations"},
    "output": {"dir"},
    "seasonal": {"enabled", "first_month"},
    "simulate": {"n", "q", "t", "p", "alpha", "phi", "sigma", "horizon", "coef_scale"},
}


@dataclass
class SimulateConfig:
    n: int = 100
    q: int = 3
    T: int = 20
    p: int = 2
    alpha: float = 0.8
    phi: float = 4.0
    sigma: list = field(default_factory=lambda: [1.0, -0.3, 0.6, -0.3, 1.2, 0.4, 0.6, 0.4, 1.0])
    horizon: int = 1
    coef_scale: float = 1.0


@dataclass
class RunConfig:
    panel: Path | None = None
    alphas: list = field(default_factory=list)
    phis: list = field(default_factory=list)
    coef_scale: float = 1.0
    coef_var: float = 0.05
    prior_phi: float = 1.0
    psi_scale: float = 10.0
    nu0: float | None = None
    aggregation: str = "global"
    tol: float = 1e-9
    max_iter: int = 500
    draws: int = 200
    seed: int | None = None
    threads: int | None = None
    freeze_model: bool = False
    horizon: int = 1
    designs: Path | None = None
    conditional: bool = True
    interp_time: int | None = None
    locations: Path | None = None
    out_dir: Path = Path("out")
    seasonal: bool = False
    first_month: int = 1
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    base_dir: Path | None = field(default=None, repr=False)

    def validate(self, command: str) -> "RunConfig":
        if self.seed is None:
            raise ConfigError("[sampling] seed is required")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.draws < 1:
            raise ConfigError("[sampling] draws must be at least 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("[sampling] threads must be at least 1")
        if self.aggregation not in ("global", "consensus"):
            raise ConfigError(f"[stacking] aggregation must be global or consensus, got {self.aggregation!r}")
        if not 1 <= self.first_month <= 12:
            raise ConfigError("[seasonal] first_month must lie in 1..12")
        if command == "fit":
            if not self.alphas or not self.phis:
                raise ConfigError("[model] alphas and phis must be non-empty")
            if self.panel is None:
                raise ConfigError("[data] panel is required")
            if not self.panel.is_file():
                raise ConfigError(f"panel file not found: {self.panel}")
        if command == "forecast":
            if self.horizon < 1:
                raise ConfigError("[forecast] horizon must be at least 1")
            if self.designs is not None and not self.designs.is_file():
                raise ConfigError(f"designs file not found: {self.designs}")
        if command == "interpolate":
            if self.interp_time is None:
                raise ConfigError("[interpolate] time is required")
            if self.locations is None or not self.locations.is_file():
                raise ConfigError(f"locations file not found: {self.locations}")
        if command == "simulate":
            s = self.simulate
            if min(s.n, s.q, s.T, s.p) < 1 or s.horizon < 0:
                raise ConfigError("[simulate] n, q, t, p must be positive and horizon nonnegative")
            if len(s.sigma) != s.q * s.q:
                raise ConfigError(f"[simulate] sigma needs q*q = {s.q * s.q} entries")
        return self

    def digest(self) -> str:
        """Short hash of the settings that determine results.

        Thread count and output directory are left out: they never change numbers.
        Paths enter relative to the config directory, so moving a whole
        experiment folder keeps the hash.
        """
        d = asdict(self)
        d.pop("threads")
        d.pop("out_dir")
        base = d.pop("base_dir")
        for k, v in d.items():
            if isinstance(v, Path) and base is not None:
                d[k] = os.path.relpath(v, base)
        payload = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def sigma_matrix(self) -> np.ndarray:
        q = self.simulate.q
        return np.asarray(self.simulate.sigma, dtype=float).reshape(q, q)


def _floats(text: str, key: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected a comma-separated list of numbers, got {text!r}") from None


def _conv(kind, text: str, key: str):
    try:
        if kind is bool:
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None


# (section, key) -> (attribute path, converter)
_KEYS = {
    ("data", "panel"): ("panel", Path),
    ("model", "alphas"): ("alphas", list),
    ("model", "phis"): ("phis", list),
    ("model", "coef_scale"): ("coef_scale", float),
    ("prior", "coef_var"): ("coef_var", float),
    ("prior", "phi"): ("prior_phi", float),
    ("prior", "psi_scale"): ("psi_scale", float),
    ("prior", "nu0"): ("nu0", float),
    ("stacking", "aggregation"): ("aggregation", str),
    ("stacking", "tol"): ("tol", float),
    ("stacking", "max_iter"): ("max_iter", int),
    ("sampling", "draws"): ("draws", int),
    ("sampling", "seed"): ("seed", int),
    ("sampling", "threads"): ("threads", int),
    ("sampling", "freeze_model"): ("freeze_model", bool),
    ("forecast", "horizon"): ("horizon", int),
    ("forecast", "designs"): ("designs", Path),
    ("forecast", "conditional"): ("conditional", bool),
    ("interpolate", "time"): ("interp_time", int),
    ("interpolate", "locations"): ("locations", Path),
    ("output", "dir"): ("out_dir", Path),
    ("seasonal", "enabled"): ("seasonal", bool),
    ("seasonal", "first_month"): ("first_month", int),
    ("simulate", "n"): ("simulate.n", int),
    ("simulate", "q"): ("simulate.q", int),
    ("simulate", "t"): ("simulate.T", int),
    ("simulate", "p"): ("simulate.p", int),
    ("simulate", "alpha"): ("simulate.alpha", float),
    ("simulate", "phi"): ("simulate.phi", float),
    ("simulate", "sigma"): ("simulate.sigma", list),
    ("simulate", "horizon"): ("simulate.horizon", int),
    ("simulate", "coef_scale"): ("simulate.coef_scale", float),
}


def _assign(cfg: RunConfig, attr: str, value):
    target = cfg
    *parents, last = attr.split(".")
    for p in parents:
        target = getattr(target, p)
    setattr(target, last, value)


def parse_config_text(text: str, base_dir: Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig(base_dir=base_dir)
    base = base_dir or Path(".")
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            attr, kind = _KEYS[(section, key)]
            name = f"[{section}] {key}"
            if kind is list:
                value = _floats(raw, name)
            elif kind is Path:
                value = Path(raw.strip())
                if not value.is_absolute():
                    value = base / value
            else:
                value = _conv(kind, raw.strip(), name)
            _assign(cfg, attr, value)
    if cfg.simulate.q and len(cfg.simulate.sigma) != cfg.simulate.q ** 2 \
            and not parser.has_option("simulate", "sigma"):
        cfg.simulate.sigma = np.eye(cfg.simulate.q).ravel().tolist()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), path.parent)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Set ``RunConfig`` attributes from flags; ``None`` values are skipped."""
    names = {f.name for f in fields(RunConfig)}
    for k, v in overrides.items():
        if v is None:
            continue
        if k not in names:
            raise ConfigError(f"unknown override {k!r}")
        setattr(cfg, k, v)
    return cfg
