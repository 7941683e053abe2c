"""Reference implementations written independently of the package.

They use textbook dense formulas (explicit inverses, batch regressions) so
agreement with the package's factored, sequential code is meaningful.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln


def batch_conjugate_posterior(Fs, Ys, V, W, m0, C0, nu0, Psi0):
    """Posterior of the whole trajectory ``Theta_0..Theta_T`` in one regression.

    Random-walk states (``G = I``).  Given ``Sigma`` the stacked states are
    Gaussian with row covariance ``Cov(Theta_a, Theta_b) = C0 + min(a, b) W``
    and the observations are ``y = H z + e``.  Conjugacy gives the posterior
    row covariance and mean of ``z``, and the inverse-Wishart update is the
    marginal quadratic form of all observations at once.

    Returns ``(means, covs, nu_T, Psi_T)`` with one entry per time ``0..T``.
    """
    T = len(Fs)
    s = C0.shape[0]
    n = Fs[0].shape[0]
    big = (T + 1) * s
    P = np.empty((big, big))
    for a in range(T + 1):
        for b in range(T + 1):
            P[a * s:(a + 1) * s, b * s:(b + 1) * s] = C0 + min(a, b) * W
    mu = np.vstack([m0] * (T + 1))
    H = np.zeros((T * n, big))
    for t in range(1, T + 1):
        H[(t - 1) * n:t * n, t * s:(t + 1) * s] = Fs[t - 1]
    Vbig = np.kron(np.eye(T), V)
    y = np.vstack(Ys)
    S = H @ P @ H.T + Vbig
    Sinv = np.linalg.inv(S)
    resid = y - H @ mu
    K = P @ H.T @ Sinv
    post_mean = mu + K @ resid
    post_cov = P - K @ H @ P
    psi = Psi0 + 0.5 * resid.T @ Sinv @ resid
    nu = nu0 + 0.5 * n * T
    means = [post_mean[t * s:(t + 1) * s] for t in range(T + 1)]
    covs = [post_cov[t * s:(t + 1) * s, t * s:(t + 1) * s] for t in range(T + 1)]
    return means, covs, nu, psi


def information_filter(Fs, Ys, V, W, m0, C0, nu0, Psi0):
    """Textbook forward filter in information form (explicit inverses)."""
    m, C, nu, psi = m0, C0, nu0, Psi0
    out = [(m, C, nu, psi)]
    Vi = np.linalg.inv(V)
    for F, Y in zip(Fs, Ys):
        a, R = m, C + W
        q, Q = F @ a, F @ R @ F.T + V
        e = Y - q
        Cn = np.linalg.inv(np.linalg.inv(R) + F.T @ Vi @ F)
        m = Cn @ (np.linalg.inv(R) @ a + F.T @ Vi @ Y)
        psi = psi + 0.5 * e.T @ np.linalg.inv(Q) @ e
        nu = nu + 0.5 * F.shape[0]
        C = Cn
        out.append((m, C, nu, psi))
    return out


def information_smoother_params(m, C, W, theta_next):
    """``H = (C^-1 + W^-1)^-1``, ``h = H (C^-1 m + W^-1 Theta_{t+1})`` for ``G = I``."""
    Ci, Wi = np.linalg.inv(C), np.linalg.inv(W)
    H = np.linalg.inv(Ci + Wi)
    return H @ (Ci @ m + Wi @ theta_next), H


def student_t_logpdf(x, df, loc, scale):
    z = (x - loc) / scale
    return (gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * np.log(df * np.pi) - np.log(scale)
            - (df + 1) / 2 * np.log1p(z * z / df))


def exp_corr(coords_a, coords_b, phi):
    d = np.sqrt(((coords_a[:, None, :] - coords_b[None, :, :]) ** 2).sum(-1))
    return np.exp(-phi * d)


def grid_stacking_j2(logdens, step=1e-3):
    """Exhaustive search over ``w = (a, 1 - a)`` on a grid of spacing ``step``."""
    a = np.linspace(0.0, 1.0, int(round(1 / step)) + 1)
    ld = np.asarray(logdens)
    top = ld.max(axis=1, keepdims=True)
    p = np.exp(ld - top)
    with np.errstate(divide="ignore"):
        vals = np.mean(np.log(np.outer(a, p[:, 0]) + np.outer(1 - a, p[:, 1])) + top[:, 0], axis=1)
    k = int(np.argmax(vals))
    return a[k], vals[k]
