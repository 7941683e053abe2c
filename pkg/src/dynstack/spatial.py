"""Planar geometry, exponential correlation and kriging (Schur complement) blocks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, InputError, InvalidPhi
from .matvar import chol_psd

COINCIDENCE_TOL = 1e-12


@dataclass(frozen=True)
class LocationSet:
    """Location identifiers with planar coordinates (lon/lat are treated as x/y)."""

    ids: tuple
    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise InputError(f"coords must be n x 2, got {coords.shape}")
        ids = tuple(self.ids)
        if len(ids) != coords.shape[0]:
            raise DimensionMismatch("ids and coords differ in length")
        if len(ids) < 1:
            raise InputError("a location set needs at least one location")
        if len(set(ids)) != len(ids):
            raise InputError("location ids must be unique")
        if not np.all(np.isfinite(coords)):
            raise InputError("coordinates must be finite")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "coords", coords)

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_coords(cls, coords, prefix: str = "s") -> "LocationSet":
        coords = np.asarray(coords, dtype=float)
        width = len(str(len(coords)))
        return cls(tuple(f"{prefix}{i + 1:0{width}d}" for i in range(len(coords))), coords)

    def subset(self, index: Sequence[int]) -> "LocationSet":
        index = list(index)
        return LocationSet(tuple(self.ids[i] for i in index), self.coords[index])


@dataclass(frozen=True)
class CorrelationBlock:
    matrix: np.ndarray
    phi: float
    kind: Literal["SS", "US", "UU"] = "SS"
    distances: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class SchurPredictive:
    m_tilde: np.ndarray
    w_tilde: np.ndarray


def pairwise_distances(a: LocationSet, b: LocationSet) -> np.ndarray:
    return cdist(a.coords, b.coords)


def _exponential(d: np.ndarray, phi: float) -> np.ndarray:
    return np.exp(-phi * d)


# kernel(distances, phi) -> correlations; new families slot in here
KERNELS: dict[str, Callable[[np.ndarray, float], np.ndarray]] = {"exponential": _exponential}


def exp_correlation(distances, phi: float, kind: Literal["SS", "US", "UU"] = "SS",
                    kernel: str = "exponential") -> CorrelationBlock:
    if not (np.isfinite(phi) and phi > 0):
        raise InvalidPhi(f"phi must be positive, got {phi}")
    d = np.asarray(distances, dtype=float)
    if np.any(d < 0):
        raise InputError("distances must be nonnegative")
    return CorrelationBlock(KERNELS[kernel](d, float(phi)), float(phi), kind, d)


def correlation_blocks(train: LocationSet, new: LocationSet, phi: float):
    """Return the ``(SS, US, UU)`` exponential blocks for one decay value."""
    return (exp_correlation(pairwise_distances(train, train), phi, "SS"),
            exp_correlation(pairwise_distances(new, train), phi, "US"),
            exp_correlation(pairwise_distances(new, new), phi, "UU"))


def effective_range(phi: float, threshold: float = 0.05) -> float:
    """Distance at which the exponential correlation falls to ``threshold``."""
    if not 0 < threshold < 1:
        raise InputError("threshold must lie in (0, 1)")
    return float(-np.log(threshold) / phi)


def schur_predictive(r_ss: CorrelationBlock, r_us: CorrelationBlock,
                     r_uu: CorrelationBlock) -> SchurPredictive:
    """Kriging operator ``R_US R_SS^-1`` and conditional correlation of the new sites.

    A new site within 1e-12 of a training site gets the exact interpolation
    answer (basis-vector row, zero conditional variance) without a solve.
    """
    rss, rus, ruu = (np.asarray(b.matrix, dtype=float) for b in (r_ss, r_us, r_uu))
    m, n = rus.shape
    if rss.shape != (n, n) or ruu.shape != (m, m):
        raise DimensionMismatch("correlation blocks are not conformable")
    if len({r_ss.phi, r_us.phi, r_uu.phi}) != 1:
        raise InputError("correlation blocks built with different phi")
    factor = chol_psd(rss)
    m_tilde = factor.solve(rus.T).T
    w_tilde = ruu - m_tilde @ rus.T
    w_tilde = 0.5 * (w_tilde + w_tilde.T)

    if r_us.distances is not None:
        hit = np.asarray(r_us.distances) < COINCIDENCE_TOL
        rows = np.flatnonzero(hit.any(axis=1))
        for i in rows:
            j = int(np.argmax(hit[i]))
            m_tilde[i] = 0.0
            m_tilde[i, j] = 1.0
            w_tilde[i, :] = 0.0
            w_tilde[:, i] = 0.0
    return SchurPredictive(m_tilde, w_tilde)
