"""Shared test oracles: finite differences and matrix construction."""

import numpy as np
from scipy.optimize import linear_sum_assignment


def fd_gradient(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at matrix x."""
    g = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def rel_err(approx, exact):
    """Max absolute deviation normalized by the larger gradient scale."""
    scale = max(np.max(np.abs(exact)), np.max(np.abs(approx)), 1e-6)
    return np.max(np.abs(approx - exact)) / scale


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def matrix_with_condition(rng, d, cond):
    """Random d x d matrix with 2-norm condition number exactly ``cond``."""
    sigma = np.geomspace(1.0, 1.0 / cond, d)
    return random_orthogonal(rng, d) @ np.diag(sigma) @ random_orthogonal(rng, d)


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def eig_match_distance(A, B):
    """Largest eigenvalue gap under the optimal one-to-one pairing."""
    ea = np.linalg.eigvals(A)
    eb = np.linalg.eigvals(B)
    cost = np.abs(ea[:, None] - eb[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())
