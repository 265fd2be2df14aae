"""Row-decoupled stability certificates and polyhedral invariance checks.

A square matrix K is certified stable when every row satisfies the pair of
piecewise-linear inequalities

    h_plus_i  = 1 + K_ii - sum_{j != i} |K_ij| >= 0
    h_minus_i = 1 - K_ii - sum_{j != i} |K_ij| >= 0

which together say the row absolute sum is at most 1, i.e. the map keeps
the unit hypercube forward-invariant. The condition is sufficient, not
necessary: it implies ||K||_inf <= 1 and hence spectral radius <= 1, but
Schur-stable matrices exist that violate it (see the tests for a nilpotent
witness).

The general polyhedral machinery (scaled sets, inward-pointing fields on a
vertex-listed polytope) mirrors the hypercube special case and is used to
cross-check it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, DimensionError, NumericError

MEMBERSHIP_TOL = 1e-9

_DENSE_EIG_LIMIT = 64


def _check_square(K) -> np.ndarray:
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {K.shape}")
    return K


@dataclass
class BarrierReport:
    """Per-row barrier values of a square matrix."""

    h_plus: np.ndarray
    h_minus: np.ndarray
    h: np.ndarray = field(init=False)
    margin: float = field(init=False)

    def __post_init__(self):
        self.h = np.minimum(self.h_plus, self.h_minus)
        self.margin = float(self.h.min())

    def rows(self, mode: str = "symmetric") -> np.ndarray:
        """Per-row barrier under the given constraint mode.

        Symmetric mode enforces both sign branches (h = min of the pair);
        asymmetric mode drops the branch containing -K_ii and keeps h_plus.
        """
        if mode == "symmetric":
            return self.h
        if mode == "asymmetric":
            return self.h_plus
        raise ContractError(f"unknown mode {mode!r}")


def barrier_values(K) -> BarrierReport:
    """Evaluate both barrier branches for every row of K."""
    K = _check_square(K)
    diag = np.diag(K)
    offdiag = np.sum(np.abs(K), axis=1) - np.abs(diag)
    return BarrierReport(h_plus=1.0 + diag - offdiag, h_minus=1.0 - diag - offdiag)


@dataclass
class Certificate:
    """Outcome of a stability certification attempt."""

    certified: bool
    report: BarrierReport
    margin_tol: float
    spectral_radius: float

    def text(self) -> str:
        lines = []
        verdict = "CERTIFIED" if self.certified else "REFUSED"
        lines.append(f"stability check: {verdict} (margin tolerance {self.margin_tol:g})")
        lines.append(f"{'row':>4}  {'h_plus':>14}  {'h_minus':>14}  {'h':>14}")
        rep = self.report
        for i in range(rep.h.size):
            lines.append(f"{i:>4}  {rep.h_plus[i]:>14.6e}  {rep.h_minus[i]:>14.6e}  "
                         f"{rep.h[i]:>14.6e}")
        lines.append(f"margin          = {rep.margin:.6e}")
        lines.append(f"spectral radius = {self.spectral_radius:.6e}")
        return "\n".join(lines)


def certify_stable(K, margin_tol: float = 0.0) -> Certificate:
    """Certify K stable iff its barrier margin is >= -margin_tol.

    A certificate implies ``||K||_inf <= 1 + margin_tol`` and therefore a
    spectral radius of at most ``1 + margin_tol``; a refusal implies
    nothing (the condition is only sufficient).
    """
    report = barrier_values(K)
    return Certificate(
        certified=bool(report.margin >= -margin_tol),
        report=report,
        margin_tol=float(margin_tol),
        spectral_radius=spectral_radius(K),
    )


def spectral_radius(K, max_iter: int = 100_000) -> float:
    """Largest eigenvalue modulus of a square matrix.

    Small matrices use the dense eigensolver; above the dense limit an
    implicitly restarted Arnoldi iteration finds the largest-modulus
    eigenvalues (relative accuracy 1e-8 or better).
    """
    K = _check_square(K)
    d = K.shape[0]
    if d <= _DENSE_EIG_LIMIT:
        return float(np.max(np.abs(np.linalg.eigvals(K))))
    from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigs
    try:
        vals = eigs(K, k=min(6, d - 2), which="LM", return_eigenvectors=False,
                    v0=np.full(d, d ** -0.5), maxiter=max_iter, tol=1e-10)
    except (ArpackNoConvergence, ArpackError) as exc:
        raise NumericError(f"spectral radius iteration failed: {exc}") from exc
    return float(np.max(np.abs(vals)))


@dataclass
class Polyhedron:
    """H-representation ``{x : A x <= b}`` with an optional vertex list."""

    A: np.ndarray
    b: np.ndarray
    vertices: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        if self.A.ndim != 2 or self.A.shape[0] != self.b.size:
            raise DimensionError(
                f"A is {self.A.shape} but b has {self.b.size} entries")
        if self.vertices is not None:
            self.vertices = np.atleast_2d(np.asarray(self.vertices, dtype=np.float64))
            if self.vertices.shape[1] != self.dim:
                raise DimensionError("vertex dimension does not match A")
            slack = self.vertices @ self.A.T - self.b
            if slack.max(initial=-np.inf) > MEMBERSHIP_TOL:
                raise ContractError(
                    f"listed vertex violates constraints by {slack.max():.3e}")

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        x = np.asarray(x, dtype=np.float64).ravel()
        return bool(np.all(self.A @ x <= self.b + tol))


def unit_hypercube(d: int, with_vertices: bool = True) -> Polyhedron:
    """The axis-aligned hypercube [-1, 1]^d.

    Constraint rows come in (+e_i, -e_i) pairs; vertices, when requested,
    enumerate sign patterns in lexicographic order starting at (-1,...,-1).
    Vertex count is 2^d, so keep d modest when asking for them.
    """
    A = np.vstack([np.eye(d), -np.eye(d)])
    b = np.ones(2 * d)
    vertices = None
    if with_vertices:
        grid = np.meshgrid(*([np.array([-1.0, 1.0])] * d), indexing="ij")
        vertices = np.stack([g.ravel() for g in grid], axis=1)
    return Polyhedron(A, b, vertices)


def scale_set(C: Polyhedron, s: float) -> Polyhedron:
    """Scale an origin-containing polyhedron: ``sC = {x : A x <= s b}``."""
    if s < 0:
        raise ContractError(f"scale must be nonnegative, got {s}")
    if np.any(C.b < 0):
        raise ContractError("scaling requires an origin-containing set (b >= 0)")
    vertices = None if C.vertices is None else s * C.vertices
    return Polyhedron(C.A, s * C.b, vertices)


@dataclass
class InwardPointingResult:
    ok: bool
    vertex: Optional[np.ndarray] = None
    constraint_index: Optional[int] = None

    def __bool__(self):
        return self.ok


def inward_pointing_check(C: Polyhedron, A) -> InwardPointingResult:
    """Decide whether the linear field ``x -> A x`` maps C into itself.

    For a bounded polytope given by its complete vertex list this is
    equivalent to checking the image of every vertex (the image of a convex
    set under a linear map is the convex hull of the vertex images). On
    failure the witness is the first vertex, in listed order, whose image
    leaves C, together with the index of the violated constraint row.
    """
    if C.vertices is None or len(C.vertices) == 0:
        raise ContractError("inward_pointing_check needs the complete vertex list")
    if np.any(C.b <= 0):
        raise ContractError("set must contain the origin strictly (all b > 0)")
    A = _check_square(A)
    if A.shape[0] != C.dim:
        raise DimensionError(f"field is {A.shape}, set lives in dimension {C.dim}")
    images = C.vertices @ A.T
    slack = images @ C.A.T - C.b
    bad = np.argwhere(slack > MEMBERSHIP_TOL)
    if bad.size == 0:
        return InwardPointingResult(ok=True)
    v_idx, c_idx = bad[0]
    return InwardPointingResult(ok=False, vertex=C.vertices[v_idx].copy(),
                                constraint_index=int(c_idx))
