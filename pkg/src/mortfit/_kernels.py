"""Compiled inner loop of the iterative SVD with missing values.

The alternating estimator calls the inner solver once per outer iteration
and the inner solver takes hundreds of impute/refit steps on a small
matrix, so interpreter overhead dominates a plain numpy loop.
"""

import numpy as np
from numba import njit

EM_CONVERGED = 0
EM_MAX_ITER = 1
EM_DEGENERATE = 2

_EPS = np.finfo(np.float64).eps


@njit(cache=True)
def _norm(x):
    return np.sqrt(np.dot(x, x))


@njit(cache=True)
def stalled(previous, current, tol, scale):
    """True when the change is below ``tol`` relative or lost in rounding.

    ``scale`` is the sum of squares of the data; a sum of squared
    residuals ``L`` is only known to about ``eps * sqrt(L * scale)``.
    """
    delta = abs(previous - current)
    return delta <= tol * abs(current) or delta <= 8.0 * _EPS * np.sqrt(abs(current) * scale)


@njit(cache=True)
def em_rank1(obs, mask, fill, v0, tol, max_iter, svd_tol, svd_max_iter):
    """Impute, refit the leading singular triplet, re-impute, repeat.

    Parameters
    ----------
    obs : (p, m) float array, observed values (anything in masked-out cells)
    mask : (p, m) bool array, True where observed
    fill : (p, m) float array, initial values for the unobserved cells
    v0 : (m,) float array, start vector for the power iteration, or empty

    Returns
    -------
    c, gamma, completed, trace, status
    """
    p, m = obs.shape
    X = np.empty((p, m))
    scale = 0.0
    for i in range(p):
        for j in range(m):
            if mask[i, j]:
                X[i, j] = obs[i, j]
                scale += obs[i, j] * obs[i, j]
            else:
                X[i, j] = fill[i, j]

    if v0.size == m and _norm(v0) > 0.0:
        v = v0 / _norm(v0)
    else:
        best = -1.0
        jbest = 0
        for j in range(m):
            s = 0.0
            for i in range(p):
                s += X[i, j] * X[i, j]
            if s > best:
                best = s
                jbest = j
        v = X[:, jbest].copy() @ X
        nv = _norm(v)
        if nv == 0.0:
            v = np.zeros(m)
            v[0] = 1.0
        else:
            v = v / nv

    trace = np.empty(max_iter)
    c = np.full(p, 1.0 / p)
    gamma = np.zeros(m)
    status = EM_MAX_ITER
    n_done = 0
    for it in range(max_iter):
        # leading singular triplet of X, warm-started from the last v
        w = X @ v
        sigma = 0.0
        u = np.zeros(p)
        for _ in range(svd_max_iter):
            nw = _norm(w)
            if nw == 0.0:
                sigma = 0.0
                break
            u = w / nw
            t = u @ X
            sigma = _norm(t)
            v = t / sigma
            w = X @ v
            if _norm(w - sigma * u) <= svd_tol * sigma:
                break

        if sigma == 0.0:
            c = np.full(p, 1.0 / p)
            gamma = np.zeros(m)
        else:
            su = u.sum()
            if abs(su) < 1e-10:
                status = EM_DEGENERATE
                n_done = it
                break
            c = u / su
            gamma = (su * sigma) * v

        loss = 0.0
        for i in range(p):
            for j in range(m):
                f = c[i] * gamma[j]
                if mask[i, j]:
                    r = obs[i, j] - f
                    loss += r * r
                else:
                    X[i, j] = f
        trace[it] = loss
        n_done = it + 1
        if it > 0 and stalled(trace[it - 1], loss, tol, scale):
            status = EM_CONVERGED
            break
    return c, gamma, X, trace[:n_done], status
