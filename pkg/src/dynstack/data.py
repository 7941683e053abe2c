"""Container for a complete spatiotemporal panel."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InputError
from .spatial import LocationSet


@dataclass(frozen=True)
class SpatioTemporalDataset:
    """Outcomes ``Y[t]`` (``n x q``) and designs ``X[t]`` (``n x p``) for ``t = 1..T``.

    Array index ``k`` holds time ``t = k + 1``; ``times`` keeps the original labels.
    """

    locations: LocationSet
    Y: np.ndarray
    X: np.ndarray
    times: np.ndarray = field(default=None)
    outcome_names: tuple = ()
    covariate_names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.Y, dtype=float)
        x = np.asarray(self.X, dtype=float)
        if y.ndim != 3 or x.ndim != 3:
            raise InputError("Y and X must be T x n x q and T x n x p arrays")
        if y.shape[:2] != x.shape[:2]:
            raise DimensionMismatch(f"Y {y.shape} and X {x.shape} disagree on (T, n)")
        if y.shape[1] != len(self.locations):
            raise DimensionMismatch("number of locations does not match the panel")
        if y.shape[0] < 1:
            raise InputError("the panel needs at least one time point")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise InputError("the panel contains missing or non-finite values")
        times = np.arange(1, y.shape[0] + 1) if self.times is None else np.asarray(self.times)
        if times.shape != (y.shape[0],):
            raise DimensionMismatch("times must have one label per time point")
        object.__setattr__(self, "Y", y)
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "times", times)
        q, p = y.shape[2], x.shape[2]
        if not self.outcome_names:
            object.__setattr__(self, "outcome_names", tuple(f"y_{i + 1}" for i in range(q)))
        if not self.covariate_names:
            object.__setattr__(self, "covariate_names", tuple(f"x_{i + 1}" for i in range(p)))

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]

    @property
    def q(self) -> int:
        return self.Y.shape[2]

    @property
    def p(self) -> int:
        return self.X.shape[2]

    def head(self, T: int) -> "SpatioTemporalDataset":
        """The first ``T`` time points."""
        return SpatioTemporalDataset(self.locations, self.Y[:T], self.X[:T], self.times[:T],
                                     self.outcome_names, self.covariate_names)
