"""Exception hierarchy shared by every module."""

from __future__ import annotations


class DynstackError(Exception):
    """Base class for all package errors."""


class NumericError(DynstackError):
    """Numerical failure (factorization, convergence)."""


class NotPositiveDefinite(NumericError):
    def __init__(self, message: str, *, jitter: float = 0.0, t: int | None = None,
                 j: int | None = None, r: int | None = None):
        self.base = message
        self.jitter = jitter
        self.t = t
        self.j = j
        self.r = r
        tags = "".join(f" {k}={v}" for k, v in (("t", t), ("j", j), ("r", r)) if v is not None)
        super().__init__(message + tags)

    def tagged(self, *, t: int | None = None, j: int | None = None,
               r: int | None = None) -> "NotPositiveDefinite":
        return NotPositiveDefinite(self.base, jitter=self.jitter,
                                   t=self.t if t is None else t, j=self.j if j is None else j,
                                   r=self.r if r is None else r)


class NoConvergence(NumericError):
    def __init__(self, message: str, *, iterate=None, residual: float = float("nan"),
                 t: int | None = None, i: int | None = None):
        self.iterate = iterate
        self.residual = residual
        self.t = t
        self.i = i
        tags = "".join(f" {k}={v}" for k, v in (("t", t), ("i", i)) if v is not None)
        super().__init__(f"{message} (residual={residual:.3g}){tags}")


class InputError(DynstackError, ValueError):
    """Invalid argument values."""


class InvalidShape(InputError):
    pass


class InvalidPhi(InputError):
    pass


class InvalidAlpha(InputError):
    pass


class InvalidMonth(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class DataError(DynstackError):
    """Problems with an input data file."""


class SchemaError(DataError):
    pass


class GridError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, *, line: int | None = None, column: str | None = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))


class ConfigError(DynstackError):
    pass
