"""Leading singular triplet and the constrained rank-1 least-squares fit.

Only the dominant direction is ever needed, and the matrices are small, so
the triplet comes from alternating power iteration rather than a full
decomposition.  A start vector can be supplied to warm-start the iteration
from a previous solution; the estimators rely on this inside their loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateNormalizationError, NumericalError

__all__ = ["SingularTriplet", "first_singular_triplet", "rank1_ls_fit"]

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 1000
_DEGENERATE_SUM = 1e-10


@dataclass(frozen=True)
class SingularTriplet:
    """Dominant singular triplet ``M v = sigma u``, ``M^T u = sigma v``.

    ``u`` is oriented so that its largest-magnitude entry is positive.
    """

    u: np.ndarray
    sigma: float
    v: np.ndarray
    iterations: int = 0


def _orient(u, v):
    i = int(np.argmax(np.abs(u)))
    if u[i] < 0:
        return -u, -v
    return u, v


def first_singular_triplet(M, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, u0=None):
    """Dominant singular triplet of ``M`` by alternating power iteration.

    Parameters
    ----------
    M : array_like, shape (p, q)
    tol : float
        Stop once ``||M v - sigma u|| <= tol * sigma`` and
        ``||M^T u - sigma v|| <= tol * sigma``.
    max_iter : int
    u0 : array_like, shape (p,), optional
        Starting left vector.  Defaults to the direction of the column of
        largest norm, which is never orthogonal to the dominant subspace of
        a nonzero matrix's column space in practice and keeps the result
        deterministic.

    Returns
    -------
    SingularTriplet

    Raises
    ------
    NumericalError
        If the residual test is not met within ``max_iter`` sweeps.  The
        last iterate and residual are attached as ``err.state``.

    Notes
    -----
    When the two leading singular values coincide, any unit vector in the
    dominant subspace is an acceptable answer; convergence of the residual
    test is then immediate for that vector.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or min(M.shape) < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    p, q = M.shape

    if not np.any(M):
        u = np.zeros(p)
        u[0] = 1.0
        v = np.zeros(q)
        v[0] = 1.0
        return SingularTriplet(u, 0.0, v, 0)

    # work on a unit-scale copy so products of tiny or huge entries cannot
    # underflow or overflow
    scale = float(np.max(np.abs(M)))
    M = M / scale

    if u0 is not None:
        u = np.asarray(u0, dtype=float).copy()
        if u.shape != (p,) or not np.any(u):
            u = None
    else:
        u = None
    if u is None:
        j = int(np.argmax(np.einsum("ij,ij->j", M, M)))
        u = M[:, j].copy()
    u /= np.linalg.norm(u)

    v = M.T @ u
    sigma = np.linalg.norm(v)
    if sigma == 0.0:
        # start vector orthogonal to the column space; restart from a column
        j = int(np.argmax(np.einsum("ij,ij->j", M, M)))
        u = M[:, j] / np.linalg.norm(M[:, j])
        v = M.T @ u
        sigma = np.linalg.norm(v)
    v /= sigma

    # v = M^T u / sigma holds exactly after each sweep, so only the
    # left residual needs testing
    residual = np.inf
    Mv = M @ v
    for it in range(1, max_iter + 1):
        u = Mv / np.linalg.norm(Mv)
        Mtu = M.T @ u
        sigma = np.linalg.norm(Mtu)
        v = Mtu / sigma
        Mv = M @ v
        residual = np.linalg.norm(Mv - sigma * u)
        if residual <= tol * sigma:
            u, v = _orient(u, v)
            return SingularTriplet(u, float(sigma) * scale, v, it)

    u, v = _orient(u, v)
    raise NumericalError(
        f"power iteration did not converge in {max_iter} sweeps "
        f"(relative residual {residual / sigma:.3e})",
        u=u,
        sigma=float(sigma) * scale,
        v=v,
        residual=float(residual) * scale,
    )


def rank1_ls_fit(M, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, b0=None):
    """Best rank-1 fit ``M ~ b k^T`` with ``sum(b) == 1``.

    ``b = u / (1^T u)`` and ``k = (1^T u) * sigma * v`` for the leading
    triplet ``(u, sigma, v)``.  A zero matrix maps to ``b = 1/p``, ``k = 0``.
    ``b0`` (any scaling) warm-starts the power iteration.

    Raises
    ------
    DegenerateNormalizationError
        If ``|1^T u| < 1e-10``.
    """
    M = np.asarray(M, dtype=float)
    p, q = M.shape
    if not np.any(M):
        return np.full(p, 1.0 / p), np.zeros(q)
    trip = first_singular_triplet(M, tol=tol, max_iter=max_iter, u0=b0)
    s = trip.u.sum()
    if abs(s) < _DEGENERATE_SUM:
        raise DegenerateNormalizationError(
            f"leading singular vector sums to {s:.3e}; cannot impose sum(b) = 1",
            u=trip.u,
        )
    return trip.u / s, s * trip.sigma * trip.v
