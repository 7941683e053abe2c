"""Matrix-variate normal, inverse-Wishart and matrix-t distributions.

Parameter conventions
---------------------
Filtering keeps the column-covariance posterior as ``(nu, Psi)`` in the
*half* convention: each step adds ``n/2`` to ``nu`` and half a quadratic
form to ``Psi``.  With density proportional to
``|Sigma|^-(nu + (q+1)/2) exp(-tr(Psi Sigma^-1))`` this is the standard
inverse-Wishart ``IW(d, S)`` with ``d = 2 nu`` and ``S = 2 Psi``.  The
conversion lives in :func:`half_to_standard` and nowhere else.

:class:`MatrixTParams` is expressed in the standard convention: ``dof`` is
the inverse-Wishart degrees of freedom ``d`` of the mixing column
covariance and ``col_scale`` is ``S``.  If ``Y | Sigma ~ MN(M, U, Sigma)``
and ``Sigma ~ IW(d, S)`` then

    log p(Y) = lgamma_q((d+r)/2) - lgamma_q(d/2) - (rq/2) log(pi)
               - (q/2) log|U| - (r/2) log|S|
               - ((d+r)/2) log|I_q + S^-1 (Y-M)' U^-1 (Y-M)|

For ``r = q = 1`` this is a Student-t with ``d`` degrees of freedom and
squared scale ``U S / d`` (``U Psi / nu`` in half-convention terms).  The
density is invariant under ``(U, S) -> (c U, S / c)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import multigammaln

from .errors import InvalidShape, NotPositiveDefinite

log = logging.getLogger(__name__)

DEFAULT_MAX_JITTER = 1e-6
_JITTER_START = 1e-10


@dataclass(frozen=True)
class SpdFactor:
    dim: int
    lower: np.ndarray
    jitter_applied: float = 0.0

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Return ``A^-1 b`` using two triangular solves."""
        z = solve_triangular(self.lower, b, lower=True, check_finite=False)
        return solve_triangular(self.lower.T, z, lower=False, check_finite=False)

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """Return ``L^-1 b``."""
        return solve_triangular(self.lower, b, lower=True, check_finite=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def _try_cholesky(a: np.ndarray) -> np.ndarray | None:
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(low)
    if not (np.all(np.isfinite(low)) and np.all(d > 0)):
        return None
    return low


def chol_psd(a, max_jitter: float = DEFAULT_MAX_JITTER) -> SpdFactor:
    """Cholesky factor of a symmetric matrix, adding diagonal jitter if needed.

    Jitter starts at 1e-10 and grows by a factor of ten until the
    factorization succeeds or ``max_jitter`` is exceeded.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidShape(f"expected a square matrix, got shape {a.shape}")
    if max_jitter < 0:
        raise InvalidShape("max_jitter must be nonnegative")
    n = a.shape[0]
    scale = max(float(np.max(np.abs(a))), 1e-300) if a.size else 1.0
    if a.size and float(np.max(np.abs(a - a.T))) > 1e-9 * scale:
        raise NotPositiveDefinite("matrix is not symmetric")
    low = _try_cholesky(a)
    if low is not None:
        return SpdFactor(n, low, 0.0)
    jitter = _JITTER_START
    eye = np.eye(n)
    while jitter <= max_jitter * (1 + 1e-12):
        low = _try_cholesky(a + jitter * eye)
        if low is not None:
            log.debug("cholesky needed jitter %.1e", jitter)
            return SpdFactor(n, low, jitter)
        jitter *= 10.0
    raise NotPositiveDefinite(f"factorization failed with jitter up to {max_jitter:g}",
                              jitter=max_jitter)


def half_to_standard(nu: float, psi: np.ndarray) -> tuple[float, np.ndarray]:
    """Map half-convention ``(nu, Psi)`` to standard IW ``(d, S) = (2 nu, 2 Psi)``."""
    return 2.0 * float(nu), 2.0 * np.asarray(psi, dtype=float)


@dataclass(frozen=True)
class MatrixNormalParams:
    mean: np.ndarray
    row_cov: np.ndarray
    col_cov: np.ndarray


@dataclass(frozen=True)
class InverseWishartParams:
    """Inverse-Wishart in the half convention (see module docstring)."""

    shape: float
    scale: np.ndarray

    @property
    def dim(self) -> int:
        return int(np.asarray(self.scale).shape[0])

    def mean(self) -> np.ndarray:
        """``Psi / (nu - (c+1)/2)``, finite only when ``nu > (c+1)/2``."""
        return np.asarray(self.scale) / (self.shape - (self.dim + 1) / 2.0)


@dataclass(frozen=True)
class MatrixTParams:
    """Matrix-t ``mT(dof, mean, row_scale, col_scale)``, standard convention."""

    dof: float
    mean: np.ndarray
    row_scale: np.ndarray
    col_scale: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.col_scale).shape[0]
        if not self.dof > q - 1:
            raise InvalidShape(f"matrix-t dof {self.dof} must exceed q - 1 = {q - 1}")

    @classmethod
    def from_half(cls, nu: float, mean, row_scale, psi) -> "MatrixTParams":
        d, s = half_to_standard(nu, psi)
        return cls(d, np.asarray(mean, dtype=float), np.asarray(row_scale, dtype=float), s)


def iw_factor_draw(dof: float, scale_lower: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Sigma ~ IW(dof, S)`` (standard convention) and return a factor ``F``
    with ``F F' = Sigma``.  ``scale_lower`` is the Cholesky factor of ``S``.

    Bartlett: ``Sigma^-1 = K^-T A A' K^-1`` with ``S = K K'``, hence
    ``Sigma = (K A^-T)(K A^-T)'``.
    """
    q = scale_lower.shape[0]
    a = np.zeros((q, q))
    a[np.diag_indices(q)] = np.sqrt(rng.chisquare(dof - np.arange(q)))
    tril = np.tril_indices(q, -1)
    a[tril] = rng.standard_normal(len(tril[0]))
    return solve_triangular(a, scale_lower.T, lower=True, check_finite=False).T


def mn_draw(mean: np.ndarray, row_lower: np.ndarray, col_factor: np.ndarray,
            rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(mean.shape)
    return mean + row_lower @ z @ col_factor.T


def mn_sample(params: MatrixNormalParams, rng: np.random.Generator) -> np.ndarray:
    """One draw ``mean + L_row Z L_col'`` with ``Z`` i.i.d. standard normal."""
    lr = chol_psd(params.row_cov).lower
    lc = chol_psd(params.col_cov).lower
    return mn_draw(np.asarray(params.mean, dtype=float), lr, lc, rng)


def mn_logdensity(y, params: MatrixNormalParams) -> float:
    """Matrix-normal log density (the infinite-dof limit of the matrix-t)."""
    e = np.asarray(y, dtype=float) - np.asarray(params.mean, dtype=float)
    r, c = e.shape
    fu = chol_psd(params.row_cov)
    fv = chol_psd(params.col_cov)
    z = fv.half_solve(fu.half_solve(e).T)
    return float(-0.5 * r * c * np.log(2 * np.pi) - 0.5 * c * fu.logdet()
                 - 0.5 * r * fv.logdet() - 0.5 * np.sum(z * z))


def iw_sample(params: InverseWishartParams, rng: np.random.Generator) -> np.ndarray:
    """Draw an SPD matrix from the half-convention inverse-Wishart.

    Requires ``shape > (c+1)/2`` so the mean ``Psi / (shape - (c+1)/2)`` is finite.
    """
    c = params.dim
    if not params.shape > (c + 1) / 2.0:
        raise InvalidShape(f"inverse-Wishart shape {params.shape} must exceed (c+1)/2 = {(c + 1) / 2}")
    d, s = half_to_standard(params.shape, params.scale)
    f = iw_factor_draw(d, chol_psd(s).lower, rng)
    out = f @ f.T
    return 0.5 * (out + out.T)


def mt_logdensity(y, params: MatrixTParams) -> float:
    e = np.atleast_2d(np.asarray(y, dtype=float) - np.asarray(params.mean, dtype=float))
    r, q = e.shape
    fu = chol_psd(params.row_scale)
    fs = chol_psd(params.col_scale)
    # M = L_U^-1 E L_S^-T, so that S^-1 E' U^-1 E is similar to M'M
    m = fs.half_solve(fu.half_solve(e).T).T
    inner = chol_psd(np.eye(q) + m.T @ m)
    d = params.dof
    return float(multigammaln((d + r) / 2.0, q) - multigammaln(d / 2.0, q)
                 - 0.5 * r * q * np.log(np.pi)
                 - 0.5 * q * fu.logdet() - 0.5 * r * fs.logdet()
                 - 0.5 * (d + r) * inner.logdet())


def mt_draw(dof: float, mean: np.ndarray, row_lower: np.ndarray, col_scale_lower: np.ndarray,
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Composition draw from a factored matrix-t; returns ``(Y, Sigma factor)``."""
    f = iw_factor_draw(dof, col_scale_lower, rng)
    return mn_draw(mean, row_lower, f, rng), f


def mt_sample(params: MatrixTParams, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Sigma ~ IW(dof, col_scale)`` then ``Y ~ MN(mean, row_scale, Sigma)``."""
    lr = chol_psd(params.row_scale).lower
    ls = chol_psd(params.col_scale).lower
    y, _ = mt_draw(params.dof, np.asarray(params.mean, dtype=float), lr, ls, rng)
    return y
