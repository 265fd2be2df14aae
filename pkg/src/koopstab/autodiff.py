"""Minimal reverse-mode automatic differentiation over dense matrices.

Everything is a 2-D float64 array: vectors are (n, 1) columns, scalars are
(1, 1). Operations record themselves on a :class:`Tape` in execution order,
which is automatically a topological order, so a backward pass is a single
reverse sweep. Gradients accumulate (sum) across fan-out; a fresh tape is
used per training step, so there is nothing to reset.

Only the operations needed to train small fully-connected networks and to
differentiate through products like ``inv(S) @ K @ S`` are provided. There
is no broadcasting beyond the explicit column-bias case in
:func:`add_bias`, and no higher-order derivatives.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, SingularMatrixError

ACTIVATIONS = ("tanh", "relu", "identity")

DEFAULT_COND_CAP = 1e8


def _as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64, copy=True, order="C")
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class DiffValue:
    """A matrix participating in reverse-mode differentiation.

    ``grad`` has the same shape as ``value`` and is zero until a backward
    pass from a scalar loss fills it with d(loss)/d(value).
    """

    __slots__ = ("value", "grad", "_tape")

    def __init__(self, value: np.ndarray, tape: "Tape"):
        self.value = value
        self.grad = np.zeros_like(value)
        self._tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"DiffValue(shape={self.value.shape})"


class _Node:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out, parents, backward_fn):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations; replay in reverse to get gradients."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._backward_done = False

    def leaf(self, value) -> DiffValue:
        """Register an input (parameter or data constant) on this tape."""
        arr = _as_matrix(value)
        if not np.all(np.isfinite(arr)):
            raise ContractError("leaf values must be finite")
        return DiffValue(arr, self)

    # Data that never needs a gradient still lives on the tape as a leaf;
    # its gradient is simply ignored.
    constant = leaf

    def _record(self, out: DiffValue, parents: Sequence[DiffValue],
                backward_fn: Callable[[np.ndarray], tuple]) -> DiffValue:
        self._nodes.append(_Node(out, tuple(parents), backward_fn))
        return out

    def backward(self, loss: DiffValue) -> None:
        """Accumulate d(loss)/d(x) into ``x.grad`` for every reachable x.

        ``loss`` must be a (1, 1) scalar produced on this tape. A tape
        supports exactly one backward pass.
        """
        if loss._tape is not self:
            raise ContractError("loss was not computed on this tape")
        if loss.value.shape != (1, 1):
            raise ContractError(f"loss must be 1x1, got {loss.value.shape}")
        if self._backward_done:
            raise ContractError("tape already differentiated; build a new tape")
        self._backward_done = True

        loss.grad[0, 0] = 1.0
        for node in reversed(self._nodes):
            g = node.out.grad
            if not g.any():
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                parent.grad += pg

    def __len__(self):
        return len(self._nodes)


def _same_tape(*vals: DiffValue) -> Tape:
    tape = vals[0]._tape
    for v in vals[1:]:
        if v._tape is not tape:
            raise ContractError("operands live on different tapes")
    return tape


def matmul(a: DiffValue, b: DiffValue) -> DiffValue:
    """Matrix product a @ b."""
    tape = _same_tape(a, b)
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions differ, {a.value.shape} @ {b.value.shape}")
    out = DiffValue(a.value @ b.value, tape)
    av, bv = a.value, b.value

    def backward_fn(g):
        return g @ bv.T, av.T @ g

    return tape._record(out, (a, b), backward_fn)


def matinv(a: DiffValue, cond_cap: float = DEFAULT_COND_CAP) -> DiffValue:
    """Matrix inverse via LAPACK LU with an infinity-norm condition guard.

    Raises :class:`SingularMatrixError` (carrying the condition estimate)
    when the input is singular or its estimated condition number exceeds
    ``cond_cap``.
    """
    tape = _same_tape(a)
    av = a.value
    if av.shape[0] != av.shape[1]:
        raise DimensionError(f"matinv: matrix is {av.shape}, not square")
    try:
        inv = np.linalg.inv(av)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"singular matrix: {exc}") from exc
    norm = np.linalg.norm(av, np.inf)
    inv_norm = np.linalg.norm(inv, np.inf)
    cond = norm * inv_norm
    if not np.isfinite(cond) or cond > cond_cap:
        raise SingularMatrixError(
            f"condition estimate {cond:.3e} exceeds cap {cond_cap:.3e}", cond)
    out = DiffValue(inv, tape)

    def backward_fn(g):
        # d(inv(A)) = -inv(A) dA inv(A)  =>  grad_A = -inv^T g inv^T
        return (-inv.T @ g @ inv.T,)

    return tape._record(out, (a,), backward_fn)


def elementwise(a: DiffValue, fn: str) -> DiffValue:
    """Apply an activation entrywise; ``fn`` is one of tanh/relu/identity."""
    tape = _same_tape(a)
    if fn not in ACTIVATIONS:
        raise ContractError(f"unknown activation {fn!r}, expected one of {ACTIVATIONS}")
    if fn == "identity":
        out_val = a.value.copy()
    elif fn == "tanh":
        out_val = np.tanh(a.value)
    else:
        out_val = np.maximum(a.value, 0.0)
    out = DiffValue(out_val, tape)

    if fn == "identity":
        backward_fn = lambda g: (g,)
    elif fn == "tanh":
        deriv = 1.0 - out_val * out_val
        backward_fn = lambda g: (g * deriv,)
    else:
        mask = (a.value > 0.0).astype(np.float64)
        backward_fn = lambda g: (g * mask,)

    return tape._record(out, (a,), backward_fn)


def _check_same_shape(a: DiffValue, b: DiffValue, opname: str):
    if a.value.shape != b.value.shape:
        raise DimensionError(
            f"{opname}: shapes differ, {a.value.shape} vs {b.value.shape}")


def add(a: DiffValue, b: DiffValue) -> DiffValue:
    tape = _same_tape(a, b)
    _check_same_shape(a, b, "add")
    out = DiffValue(a.value + b.value, tape)
    return tape._record(out, (a, b), lambda g: (g, g))


def sub(a: DiffValue, b: DiffValue) -> DiffValue:
    tape = _same_tape(a, b)
    _check_same_shape(a, b, "sub")
    out = DiffValue(a.value - b.value, tape)
    return tape._record(out, (a, b), lambda g: (g, -g))


def add_bias(a: DiffValue, b: DiffValue) -> DiffValue:
    """Add a (r, 1) bias column to every column of a (r, c) matrix."""
    tape = _same_tape(a, b)
    if b.value.shape != (a.value.shape[0], 1):
        raise DimensionError(
            f"add_bias: bias must be ({a.value.shape[0]}, 1), got {b.value.shape}")
    out = DiffValue(a.value + b.value, tape)
    return tape._record(out, (a, b),
                        lambda g: (g, g.sum(axis=1, keepdims=True)))


def scale(a: DiffValue, c: float) -> DiffValue:
    """Multiply by a (non-differentiated) scalar constant."""
    tape = _same_tape(a)
    c = float(c)
    out = DiffValue(c * a.value, tape)
    return tape._record(out, (a,), lambda g: (c * g,))


def sum_sq_norm(a: DiffValue) -> DiffValue:
    """Squared Frobenius/L2 norm as a (1, 1) scalar."""
    tape = _same_tape(a)
    out = DiffValue(np.array([[np.sum(a.value * a.value)]]), tape)
    av = a.value
    return tape._record(out, (a,), lambda g: (2.0 * g[0, 0] * av,))


def gather_cols(a: DiffValue, indices) -> DiffValue:
    """Select columns ``a[:, indices]``; the adjoint scatter-adds back."""
    tape = _same_tape(a)
    idx = np.asarray(indices, dtype=np.intp).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= a.value.shape[1]):
        raise DimensionError(
            f"gather_cols: index out of range for {a.value.shape[1]} columns")
    out = DiffValue(a.value[:, idx].copy(), tape)
    shape = a.value.shape

    def backward_fn(g):
        buf = np.zeros(shape)
        np.add.at(buf, (slice(None), idx), g)
        return (buf,)

    return tape._record(out, (a,), backward_fn)
