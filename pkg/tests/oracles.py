"""Reference solvers written independently of the package, for tests."""

import numpy as np
from scipy.optimize import brentq, least_squares, minimize_scalar


def band_mask(p, n):
    """Observed pattern of a p x n age-period grid laid out by cohort."""
    mask = np.zeros((p, n + p - 1), dtype=bool)
    for i in range(p):
        for t in range(n):
            mask[i, t - i + p - 1] = True
    return mask


def observed_loss(Z, mask, c, gamma):
    r = (Z - np.outer(c, gamma))[mask]
    return float(r @ r)


def rank1_masked_oracle(Z, mask, restarts=100, sweeps=300, polish=5, seed=0):
    """Best observed-cell rank-1 fit by coordinate descent from many starts.

    All restarts alternate the closed-form weighted regressions for gamma
    given c and c given gamma together.  Coordinate descent crawls near
    the optimum, so the best few end points are then polished by
    a trust-region least-squares solve on the observed residuals.  Returns
    ``(loss, c, gamma)`` with ``sum(c) = 1``.
    """
    rng = np.random.default_rng(seed)
    W = mask.astype(float)
    Zo = np.where(mask, Z, 0.0)
    p, m = Z.shape
    C = rng.normal(size=(restarts, p))
    for _ in range(sweeps):
        G = (C @ Zo) / (C**2 @ W)
        C = (G @ Zo.T) / (G**2 @ W.T)
    G = (C @ Zo) / (C**2 @ W)
    R = (Zo[None] - C[:, :, None] * G[:, None, :]) * W[None]
    losses = np.einsum("rij,rij->r", R, R)

    rows, cols = np.nonzero(mask)
    target = Z[rows, cols]

    def resid(theta):
        return theta[:p][rows] * theta[p:][cols] - target

    best = (np.inf, None, None)
    for i in np.argsort(losses)[:polish]:
        fit = least_squares(resid, np.concatenate([C[i], G[i]]), method="trf",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        c, gamma = fit.x[:p], fit.x[p:]
        loss = observed_loss(Z, mask, c, gamma)
        if loss < best[0]:
            s = c.sum()
            best = (loss, c / s, gamma * s)
    return best


def golden_gamma(column, p):
    """Minimize sum (z - g/p)^2 over g for one cohort column numerically.

    A golden-section pass brackets the minimizer, then the root of the
    derivative is found with Brent's method so the answer is not limited
    by the flatness of the objective near its minimum.
    """
    f = lambda g: float(np.sum((column - g / p) ** 2))
    df = lambda g: float(-2.0 / p * np.sum(column - g / p))
    centre = p * float(np.mean(column))
    width = 10.0 * (1.0 + abs(centre))
    res = minimize_scalar(f, bracket=(centre - width, centre + width), method="golden")
    lo, hi = res.x - 1.0, res.x + 1.0
    return brentq(df, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def constrained_gamma_qp(Z, mask):
    """Equality-constrained least squares via the KKT system.

    minimize  sum_{observed} (z_xs - gamma_s / p)^2
    s.t.      sum_s (s - s_bar) gamma_s = 0
    """
    p, m = Z.shape
    n_s = mask.sum(axis=0).astype(float)
    S = np.where(mask, Z, 0.0).sum(axis=0)
    s = np.arange(m) - (m - 1) / 2.0
    H = np.diag(2.0 * n_s / p**2)
    g = 2.0 * S / p
    K = np.zeros((m + 1, m + 1))
    K[:m, :m] = H
    K[:m, m] = s
    K[m, :m] = s
    rhs = np.concatenate([g, [0.0]])
    sol = np.linalg.solve(K, rhs)
    return sol[:m]


def h1_loss(Z, mask, gamma):
    p = Z.shape[0]
    r = (Z - gamma[None, :] / p)[mask]
    return float(r @ r)
