"""Exact per-row projections for the barrier-relaxed projected gradient step.

The stability condition decouples by rows, so the matrix-level quadratic
projection splits into d independent d-variable problems. Two modes exist:

* symmetric: both sign branches of the row condition are enforced. Jointly
  they reduce to a row L1-norm bound,

      1 + x_i - sum_{j != i} |x_j| >= tau  and
      1 - x_i - sum_{j != i} |x_j| >= tau
      <=>  |x_i| + sum_{j != i} |x_j| <= 1 - tau,

  so the projection is the classic Euclidean projection onto an L1 ball of
  radius 1 - tau (sort and soft-threshold, exact in O(d log d)).

* asymmetric: the branch containing -x_i is dropped (useful for smoothly
  sampled data), leaving {x : sum_{j != i} |x_j| - x_i <= 1 - tau}. A
  single KKT multiplier lam >= 0 solves it: x_i = y_i + lam and
  x_j = soft_threshold(y_j, lam); the constraint residual is piecewise
  linear and strictly decreasing in lam, so the root is found exactly by
  walking its breakpoints.

The relaxed threshold tau = min(0, alpha * h_i(K_prev)) never exceeds 0:
rows that already satisfy the stability condition must keep satisfying it,
while infeasible rows are only required not to regress (and, for
alpha < 1, to approach the feasible set geometrically).

``brute_force_row_qp`` solves the same row problems by enumerating support
patterns; it exists purely as an independent test oracle.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ContractError, DimensionError, NumericError
from .stability import barrier_values

FEASIBILITY_TOL = 1e-9


def barrier_threshold(h_prev: float, alpha: float) -> float:
    """Relaxed per-row constraint threshold min(0, alpha * h_prev)."""
    if not 0.0 < alpha <= 1.0:
        raise ContractError(f"alpha must lie in (0, 1], got {alpha}")
    return min(0.0, alpha * float(h_prev))


def _l1_project(y: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of y onto {x : ||x||_1 <= radius}."""
    if radius <= 0.0:
        return np.zeros_like(y)
    mags = np.abs(y)
    if mags.sum() <= radius:
        return y.copy()
    u = np.sort(mags)[::-1]
    cumulative = np.cumsum(u)
    counts = np.arange(1, y.size + 1)
    rho = np.nonzero(u * counts > cumulative - radius)[0][-1]
    theta = (cumulative[rho] - radius) / (rho + 1.0)
    x = np.sign(y) * np.maximum(mags - theta, 0.0)
    # float roundoff can leave the result a few ulp outside; rescale down
    for _ in range(4):
        s = np.abs(x).sum()
        if s <= radius:
            break
        x *= radius / s
    return x


def _asym_project(y: np.ndarray, i: int, radius: float) -> np.ndarray:
    """Projection onto {x : sum_{j != i} |x_j| - x_i <= radius}."""
    others = np.abs(np.delete(y, i))
    if others.sum() - y[i] <= radius:
        return y.copy()
    # residual(lam) = sum_j max(|y_j| - lam, 0) - (y_i + lam) - radius,
    # strictly decreasing; solve the linear piece containing the root.
    u = np.sort(others)[::-1]
    cumulative = np.concatenate([[0.0], np.cumsum(u)])
    lam = None
    n = u.size
    for m in range(n + 1):
        candidate = (cumulative[m] - y[i] - radius) / (m + 1.0)
        lo = u[m] if m < n else 0.0
        hi = u[m - 1] if m > 0 else np.inf
        if lo - 1e-12 <= candidate <= hi + 1e-12:
            lam = max(candidate, 0.0)
            break
    if lam is None:
        raise NumericError("asymmetric projection: no breakpoint segment "
                           "contains the multiplier (malformed input?)")
    x = np.sign(y) * np.maximum(np.abs(y) - lam, 0.0)
    x[i] = y[i] + lam
    gap = (np.abs(np.delete(x, i)).sum() - x[i]) - radius
    if gap > 0.0:  # ulp-level guard: raising x_i reduces the residual 1:1
        x[i] += gap
    return x


def _check_row(y, i: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if not 0 <= i < y.size:
        raise DimensionError(f"row index {i} out of range for length {y.size}")
    return y


def project_row_symmetric(y, i: int, tau: float) -> np.ndarray:
    """Project a row onto both barrier branches at threshold tau.

    The joint constraint is index-independent (an L1 ball of radius
    1 - tau); the row index is validated for interface symmetry with the
    asymmetric mode.
    """
    y = _check_row(y, i)
    radius = 1.0 - tau
    if radius <= 0.0:
        raise ContractError(f"threshold {tau} leaves an empty interior (1 - tau <= 0)")
    return _l1_project(y, radius)


def project_row_asymmetric(y, i: int, tau: float) -> np.ndarray:
    """Project a row onto the single branch 'sum_{j != i} |x_j| - x_i <= 1 - tau'."""
    y = _check_row(y, i)
    return _asym_project(y, i, 1.0 - tau)


def project_row(y, i: int, tau: float, mode: str) -> np.ndarray:
    if mode == "symmetric":
        return project_row_symmetric(y, i, tau)
    if mode == "asymmetric":
        return project_row_asymmetric(y, i, tau)
    raise ContractError(f"unknown projection mode {mode!r}")


def _row_h(row: np.ndarray, i: int, mode: str) -> float:
    """Per-row barrier with the same arithmetic as stability.barrier_values.

    Matching the certificate's float operations bit-for-bit lets pgd_project
    guarantee certification at tolerance 0, not merely within an epsilon.
    """
    offdiag = np.sum(np.abs(row)) - abs(row[i])
    h_plus = (1.0 + row[i]) - offdiag
    if mode == "asymmetric":
        return h_plus
    return min(h_plus, (1.0 - row[i]) - offdiag)


def pgd_project(K_tilde, K_prev, alpha: float, mode: str = "symmetric",
                margin: float = 0.0) -> np.ndarray:
    """Projected-gradient step: pull each row of K_tilde back to its barrier set.

    Thresholds are computed from ``K_prev`` (the matrix as it stood before
    the gradient update), so the row problems are mutually independent.
    ``margin > 0`` shrinks every row radius to 1 - tau - margin, trading the
    marginal certificate for a strict one.
    """
    K_tilde = np.asarray(K_tilde, dtype=np.float64)
    K_prev = np.asarray(K_prev, dtype=np.float64)
    if K_tilde.shape != K_prev.shape:
        raise DimensionError(
            f"reference and previous matrices differ: {K_tilde.shape} vs {K_prev.shape}")
    if K_tilde.ndim != 2 or K_tilde.shape[0] != K_tilde.shape[1]:
        raise DimensionError(f"expected square matrices, got {K_tilde.shape}")
    if not 0.0 <= margin < 1.0:
        raise ContractError(f"margin must lie in [0, 1), got {margin}")

    h_prev = barrier_values(K_prev).rows(mode)
    out = np.empty_like(K_tilde)
    for i in range(K_tilde.shape[0]):
        tau = barrier_threshold(h_prev[i], alpha)
        target = tau + margin
        row = K_tilde[i]
        if _row_h(row, i, mode) >= target:
            out[i] = row
            continue
        radius = 1.0 - tau - margin
        if mode == "symmetric":
            x = _l1_project(row, radius)
        else:
            x = _asym_project(row, i, radius)
        # scaling a row toward 0 raises h by (1 - h) per unit shrink, so a
        # relative 1e-12 nudge absorbs any ulp-level shortfall left by the
        # projection's own rounding
        for _ in range(8):
            if _row_h(x, i, mode) >= target:
                break
            x = x * (1.0 - 1e-12)
        else:
            raise NumericError(
                f"row {i}: projection failed to reach barrier target {target}")
        out[i] = x
    return out


def _pattern_candidates(y: np.ndarray, coeff_rows: np.ndarray, free: np.ndarray,
                        radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Equality-constrained minimizers x = y - nu*a over all support patterns.

    ``coeff_rows`` holds the active-constraint gradient per pattern (zeros on
    the pattern's fixed coordinates), ``free`` its support mask. Returns the
    stacked candidates and their multipliers.
    """
    weight = (coeff_rows * coeff_rows).sum(axis=1)
    nu = (coeff_rows @ y - radius) / weight
    x = (y[None, :] - nu[:, None] * coeff_rows) * free
    return x, nu


def brute_force_row_qp(y, i: int, tau: float, mode: str = "symmetric") -> np.ndarray:
    """Row projection by exhaustive support-pattern enumeration (test oracle).

    Every candidate solution has some sign/zero pattern; for each of the
    3^k patterns the constraint restricted to the pattern is linear, so the
    active-set minimizer is closed-form. The optimum is the closest
    feasible candidate. Exponential in d; intended for d <= 8.
    """
    y = _check_row(y, i)
    d = y.size
    radius = 1.0 - tau
    if mode not in ("symmetric", "asymmetric"):
        raise ContractError(f"unknown projection mode {mode!r}")

    if mode == "symmetric":
        if np.abs(y).sum() <= radius:
            return y.copy()
        signs = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=d)))
        signs = signs[np.any(signs != 0.0, axis=1)]
        free = signs != 0.0
        candidates, _ = _pattern_candidates(y, signs, free, radius)
        sign_ok = np.all(signs * candidates >= -1e-12, axis=1)
        feasible = np.abs(candidates).sum(axis=1) <= radius + FEASIBILITY_TOL
    else:
        if np.abs(np.delete(y, i)).sum() - y[i] <= radius:
            return y.copy()
        others = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=d - 1)))
        signs = np.insert(others, i, -1.0, axis=1)
        free = signs != 0.0
        candidates, _ = _pattern_candidates(y, signs, free, radius)
        other_mask = np.ones(d, dtype=bool)
        other_mask[i] = False
        sign_ok = np.all((signs * candidates)[:, other_mask] >= -1e-12, axis=1)
        feasible = (np.abs(candidates[:, other_mask]).sum(axis=1)
                    - candidates[:, i]) <= radius + FEASIBILITY_TOL

    valid = sign_ok & feasible
    if not valid.any():
        raise NumericError("brute-force oracle found no feasible candidate")
    dist = ((candidates - y[None, :]) ** 2).sum(axis=1)
    dist[~valid] = np.inf
    return candidates[int(np.argmin(dist))]
