import numpy as np
import pytest

from koopstab import autodiff as ad
from koopstab.errors import ContractError, DimensionError, SingularMatrixError

from helpers import fd_gradient, matrix_with_condition, rel_err


def scalar_sum(tape, dv):
    """sum of all entries, expressed with tape ops (ones @ dv @ ones)."""
    rows, cols = dv.value.shape
    left = tape.constant(np.ones((1, rows)))
    right = tape.constant(np.ones((cols, 1)))
    return ad.matmul(ad.matmul(left, dv), right)


# ---------------------------------------------------------------- examples

def test_matmul_identity():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((3, 3))
    tape = ad.Tape()
    out = ad.matmul(tape.leaf(np.eye(3)), tape.leaf(m))
    np.testing.assert_allclose(out.value, m, rtol=0, atol=1e-15)


def test_matmul_hand_case():
    tape = ad.Tape()
    a = tape.leaf([[1.0, 2.0], [3.0, 4.0]])
    b = tape.leaf([[1.0], [1.0]])
    np.testing.assert_array_equal(ad.matmul(a, b).value, [[3.0], [7.0]])


def test_matmul_gradient_vs_fd():
    rng = np.random.default_rng(1)
    a0 = rng.standard_normal((3, 4))
    b0 = rng.standard_normal((4, 2))

    def f(a):
        tape = ad.Tape()
        return scalar_sum(tape, ad.matmul(tape.leaf(a), tape.leaf(b0))).value[0, 0]

    tape = ad.Tape()
    a = tape.leaf(a0)
    loss = scalar_sum(tape, ad.matmul(a, tape.leaf(b0)))
    tape.backward(loss)
    assert rel_err(a.grad, fd_gradient(f, a0)) < 1e-5


def test_matinv_identity_and_diagonal():
    tape = ad.Tape()
    np.testing.assert_allclose(ad.matinv(tape.leaf(np.eye(4))).value, np.eye(4),
                               atol=1e-14)
    out = ad.matinv(tape.leaf(np.diag([2.0, 4.0])))
    np.testing.assert_allclose(out.value, np.diag([0.5, 0.25]), atol=1e-15)


def test_matinv_gradient_vs_fd():
    rng = np.random.default_rng(2)
    a0 = rng.standard_normal((4, 4)) + 4.0 * np.eye(4)

    def f(a):
        tape = ad.Tape()
        return scalar_sum(tape, ad.matinv(tape.leaf(a))).value[0, 0]

    tape = ad.Tape()
    a = tape.leaf(a0)
    tape.backward(scalar_sum(tape, ad.matinv(a)))
    assert rel_err(a.grad, fd_gradient(f, a0)) < 1e-4


def test_elementwise_examples():
    tape = ad.Tape()
    assert not ad.elementwise(tape.leaf(np.zeros((2, 3))), "tanh").value.any()
    out = ad.elementwise(tape.leaf([[-1.0, 2.0]]), "relu")
    np.testing.assert_array_equal(out.value, [[0.0, 2.0]])


def test_sum_sq_norm_and_sub_examples():
    tape = ad.Tape()
    assert ad.sum_sq_norm(tape.leaf([[3.0, 4.0]])).value[0, 0] == 25.0
    a = tape.leaf([[1.0, -2.0], [0.5, 3.0]])
    b = tape.leaf(a.value)
    assert not ad.sub(a, b).value.any()


def test_sum_sq_norm_gradient_is_exactly_twice_value():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((3, 2))
    tape = ad.Tape()
    x = tape.leaf(x0)
    tape.backward(ad.sum_sq_norm(x))
    np.testing.assert_array_equal(x.grad, 2.0 * x0)


def test_backward_simple_analytic():
    tape = ad.Tape()
    x = tape.leaf([[1.0, 2.0]])
    tape.backward(ad.sum_sq_norm(x))
    np.testing.assert_array_equal(x.grad, [[2.0, 4.0]])


def test_backward_unreachable_gets_zero_gradient():
    tape = ad.Tape()
    x = tape.leaf([[1.0, 2.0]])
    y = tape.leaf([[5.0, 6.0]])
    ad.scale(y, 3.0)  # on tape but not feeding the loss
    tape.backward(ad.sum_sq_norm(x))
    assert not y.grad.any()


def test_backward_composite_matmul_matinv_vs_fd():
    rng = np.random.default_rng(4)
    a0 = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
    b0 = rng.standard_normal((3, 3))

    def build(tape, a, b):
        return ad.sum_sq_norm(ad.matmul(ad.matinv(a), b))

    tape = ad.Tape()
    a, b = tape.leaf(a0), tape.leaf(b0)
    tape.backward(build(tape, a, b))

    def fa(m):
        t = ad.Tape()
        return build(t, t.leaf(m), t.leaf(b0)).value[0, 0]

    def fb(m):
        t = ad.Tape()
        return build(t, t.leaf(a0), t.leaf(m)).value[0, 0]

    assert rel_err(a.grad, fd_gradient(fa, a0)) < 1e-4
    assert rel_err(b.grad, fd_gradient(fb, b0)) < 1e-4


# ------------------------------------------------------- gradient sweeps

def _loss_through(op_name, tape, x):
    """Wrap op under test into a smooth scalar loss."""
    if op_name == "matmul_left":
        w = tape.constant(np.linspace(0.3, 1.2, x.value.shape[1] * 3).reshape(x.value.shape[1], 3))
        return ad.sum_sq_norm(ad.matmul(x, w))
    if op_name == "matmul_right":
        w = tape.constant(np.linspace(-0.5, 0.8, x.value.shape[0] * 3).reshape(3, x.value.shape[0]))
        return ad.sum_sq_norm(ad.matmul(w, x))
    if op_name == "matinv":
        return ad.sum_sq_norm(ad.matinv(x))
    if op_name in ("tanh", "relu", "identity"):
        return ad.sum_sq_norm(ad.elementwise(x, op_name))
    if op_name == "add":
        other = tape.constant(np.full(x.value.shape, 0.7))
        return ad.sum_sq_norm(ad.add(x, other))
    if op_name == "sub":
        other = tape.constant(np.full(x.value.shape, -0.3))
        return ad.sum_sq_norm(ad.sub(x, other))
    if op_name == "scale":
        return ad.sum_sq_norm(ad.scale(x, -1.7))
    if op_name == "add_bias":
        bias = tape.constant(np.linspace(0.1, 0.9, x.value.shape[0]).reshape(-1, 1))
        return ad.sum_sq_norm(ad.add_bias(x, bias))
    if op_name == "bias_arg":
        base = tape.constant(np.ones((x.value.shape[0], 5)))
        return ad.sum_sq_norm(ad.add_bias(base, x))
    if op_name == "sum_sq_norm":
        return ad.sum_sq_norm(ad.sum_sq_norm(x))
    if op_name == "gather_cols":
        idx = [0, 2, 2, 1]  # duplicate column exercises scatter-add
        return ad.sum_sq_norm(ad.gather_cols(x, idx))
    raise AssertionError(op_name)


SWEEP_OPS = ["matmul_left", "matmul_right", "matinv", "tanh", "relu", "identity",
             "add", "sub", "scale", "add_bias", "bias_arg", "sum_sq_norm",
             "gather_cols"]


@pytest.mark.parametrize("op_name", SWEEP_OPS)
def test_gradients_match_finite_differences(op_name):
    rng = np.random.default_rng(hash(op_name) % 2**32)
    for _ in range(20):
        if op_name == "matinv":
            x0 = rng.standard_normal((4, 4)) + 4.0 * np.eye(4)
        elif op_name == "bias_arg":
            x0 = rng.standard_normal((4, 1))
        else:
            x0 = rng.standard_normal((4, 3))
        if op_name == "relu":
            # keep samples away from the kink so the FD oracle is valid
            x0 = np.where(np.abs(x0) < 0.1, x0 + 0.2, x0)

        tape = ad.Tape()
        x = tape.leaf(x0)
        tape.backward(_loss_through(op_name, tape, x))

        def f(m):
            t = ad.Tape()
            return _loss_through(op_name, t, t.leaf(m)).value[0, 0]

        assert rel_err(x.grad, fd_gradient(f, x0)) < 1e-4, op_name


# ------------------------------------------------------------- invariants

def _two_term_grads(a0, b0, alpha, beta):
    tape = ad.Tape()
    x = tape.leaf(a0)
    l1 = ad.sum_sq_norm(ad.matmul(x, tape.constant(b0)))
    l2 = ad.sum_sq_norm(ad.elementwise(x, "tanh"))
    tape.backward(ad.add(ad.scale(l1, alpha), ad.scale(l2, beta)))
    return x.grad


def test_backward_is_linear_in_the_loss():
    rng = np.random.default_rng(5)
    a0 = rng.standard_normal((3, 3))
    b0 = rng.standard_normal((3, 2))
    combined = _two_term_grads(a0, b0, 2.5, -0.75)
    g1 = _two_term_grads(a0, b0, 1.0, 0.0)
    g2 = _two_term_grads(a0, b0, 0.0, 1.0)
    np.testing.assert_allclose(combined, 2.5 * g1 - 0.75 * g2, rtol=1e-12, atol=1e-12)


def test_matinv_roundtrip_well_conditioned():
    rng = np.random.default_rng(6)
    for cond in (1.0, 1e2, 1e4, 1e6):
        a0 = matrix_with_condition(rng, 5, cond)
        tape = ad.Tape()
        inv = ad.matinv(tape.leaf(a0)).value
        assert np.linalg.norm(inv @ a0 - np.eye(5), np.inf) < 1e-8
        assert np.linalg.norm(a0 @ inv - np.eye(5), np.inf) < 1e-8


def test_replay_is_deterministic():
    rng = np.random.default_rng(7)
    a0 = rng.standard_normal((4, 4)) + 3.0 * np.eye(4)
    b0 = rng.standard_normal((4, 2))

    def run():
        tape = ad.Tape()
        a, b = tape.leaf(a0), tape.leaf(b0)
        loss = ad.sum_sq_norm(ad.elementwise(ad.matmul(ad.matinv(a), b), "tanh"))
        tape.backward(loss)
        return loss.value.copy(), a.grad.copy(), b.grad.copy()

    v1, ga1, gb1 = run()
    v2, ga2, gb2 = run()
    assert np.array_equal(v1, v2)
    assert np.array_equal(ga1, ga2)
    assert np.array_equal(gb1, gb2)


# ----------------------------------------------------------------- errors

def test_shape_mismatches_raise_dimension_error():
    tape = ad.Tape()
    a = tape.leaf(np.ones((2, 3)))
    b = tape.leaf(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        ad.matmul(a, b)
    with pytest.raises(DimensionError):
        ad.add(a, tape.leaf(np.ones((3, 2))))
    with pytest.raises(DimensionError):
        ad.matinv(a)
    with pytest.raises(DimensionError):
        ad.add_bias(a, tape.leaf(np.ones((3, 1))))


def test_singular_and_ill_conditioned_inputs_refused():
    tape = ad.Tape()
    with pytest.raises(SingularMatrixError):
        ad.matinv(tape.leaf(np.zeros((2, 2))))
    rng = np.random.default_rng(8)
    bad = matrix_with_condition(rng, 4, 1e12)
    with pytest.raises(SingularMatrixError) as err:
        ad.matinv(tape.leaf(bad))
    assert err.value.cond_estimate > 1e8


def test_backward_contract_errors():
    tape = ad.Tape()
    x = tape.leaf(np.ones((2, 2)))
    with pytest.raises(ContractError):
        tape.backward(x)  # not scalar
    loss = ad.sum_sq_norm(x)
    tape.backward(loss)
    with pytest.raises(ContractError):
        tape.backward(loss)  # tapes are single-use
    other = ad.Tape()
    with pytest.raises(ContractError):
        ad.add(x, other.leaf(np.ones((2, 2))))
    with pytest.raises(ContractError):
        tape.leaf([[np.nan, 0.0]])
    with pytest.raises(ContractError):
        ad.elementwise(x, "sigmoid")
