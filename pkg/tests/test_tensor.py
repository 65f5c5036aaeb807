"""Reverse-mode scalar graph: forward values and backward gradients."""

import numpy as np
import pytest

from vqcgen.tensor import (
    Tensor,
    add,
    concat,
    constant,
    exp,
    log,
    masked_softmax_values,
    matmul,
    mul,
    relu,
    sigmoid,
    slice_,
    softmax,
    softmax_cross_entropy,
    tanh,
    tsum,
)


def leaf(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def numeric_grad(f, x: np.ndarray, eps=1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        up = x.copy(); up[idx] += eps
        dn = x.copy(); dn[idx] -= eps
        g[idx] = (f(up) - f(dn)) / (2 * eps)
    return g


# --- forward values ---------------------------------------------------------

def test_add_mul_values():
    a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
    assert np.allclose(add(a, b).values, [4, 6])
    assert np.allclose(mul(a, b).values, [3, 8])


def test_scalar_broadcast():
    a = leaf([1.0, 2.0, 3.0])
    out = a * 2.0 + 1.0
    assert np.allclose(out.values, [3, 5, 7])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape mismatch"):
        add(leaf([1.0, 2.0]), leaf([1.0, 2.0, 3.0]))


def test_matmul_matrix_vector():
    w = leaf([[1.0, 2.0], [3.0, 4.0]])
    x = leaf([5.0, 6.0])
    assert np.allclose(matmul(w, x).values, [17, 39])


def test_concat_slice_round_trip():
    a, b = leaf([1.0, 2.0]), leaf([3.0])
    joined = concat([a, b])
    assert np.allclose(joined.values, [1, 2, 3])
    assert np.allclose(slice_(joined, 1, 3).values, [2, 3])


def test_unary_values():
    x = leaf([-1.0, 0.0, 2.0])
    assert np.allclose(relu(x).values, [0, 0, 2])
    assert np.allclose(tanh(x).values, np.tanh([-1, 0, 2]))
    assert np.allclose(sigmoid(x).values, 1 / (1 + np.exp([1, 0, -2])))
    assert np.allclose(exp(x).values, np.exp([-1, 0, 2]))


def test_tsum_scalar():
    assert tsum(leaf([1.0, 2.0, 3.0])).item() == 6.0


def test_backward_requires_scalar():
    with pytest.raises(ValueError, match="scalar"):
        leaf([1.0, 2.0]).backward()


# --- backward vs finite differences --------------------------------------------

def test_composite_graph_gradient():
    x0 = np.array([0.3, -0.8, 1.2])

    def f(vals):
        x = leaf(vals)
        y = tsum(tanh(x) * sigmoid(x) + exp(x * 0.5))
        return y.item()

    x = leaf(x0)
    out = tsum(tanh(x) * sigmoid(x) + exp(x * 0.5))
    out.backward()
    assert np.allclose(x.grad, numeric_grad(f, x0), atol=1e-8)


def test_matmul_gradients():
    w0 = np.array([[0.2, -0.4], [0.7, 0.1], [0.5, 0.9]])
    x0 = np.array([1.3, -0.6])

    w, x = leaf(w0), leaf(x0)
    tsum(matmul(w, x) * matmul(w, x)).backward()

    def f_w(vals):
        y = vals @ x0
        return float(np.sum(y * y))

    def f_x(vals):
        y = w0 @ vals
        return float(np.sum(y * y))

    assert np.allclose(w.grad, numeric_grad(f_w, w0), atol=1e-7)
    assert np.allclose(x.grad, numeric_grad(f_x, x0), atol=1e-7)


def test_concat_slice_gradients():
    a0, b0 = np.array([0.1, 0.2]), np.array([0.3])
    a, b = leaf(a0), leaf(b0)
    out = tsum(slice_(concat([a, b]), 0, 2) * 3.0) + tsum(concat([a, b]) * 1.0)
    out.backward()
    assert np.allclose(a.grad, [4.0, 4.0])
    assert np.allclose(b.grad, [1.0])


def test_grad_accumulates_across_uses():
    x = leaf([2.0])
    (x * x).backward()  # d(x*x)/dx = 2x through both operands
    assert np.allclose(x.grad, [4.0])


def test_log_gradient():
    x0 = np.array([0.5, 1.5])
    x = leaf(x0)
    tsum(log(x)).backward()
    assert np.allclose(x.grad, 1 / x0)


def test_backward_twice_rejected():
    x = leaf([1.0])
    out = tsum(x * x)
    out.backward()
    with pytest.raises(RuntimeError, match="already ran"):
        out.backward()


# --- softmax ----------------------------------------------------------------------

def test_masked_softmax_values():
    logits = np.array([1.0, 2.0, 3.0])
    mask = np.array([True, False, True])
    p = masked_softmax_values(logits, mask)
    assert p[1] == 0.0
    assert abs(p.sum() - 1.0) < 1e-12
    assert p[2] > p[0]


def test_masked_softmax_all_masked():
    with pytest.raises(ValueError):
        masked_softmax_values(np.array([1.0, 2.0]), np.array([False, False]))


def test_softmax_shift_invariant():
    logits = np.array([1.0, 2.0, 3.0])
    a = masked_softmax_values(logits, None)
    b = masked_softmax_values(logits + 500.0, None)
    assert np.allclose(a, b)


def test_softmax_tensor_matches_values():
    logits = leaf([0.1, -2.0, 1.3])
    mask = np.array([True, True, False])
    assert np.allclose(softmax(logits, mask).values,
                       masked_softmax_values(logits.values, mask))


def test_cross_entropy_value_and_gradient():
    logits0 = np.array([0.4, -1.1, 2.2, 0.0])
    mask = np.array([True, True, True, False])

    def f(vals):
        p = masked_softmax_values(vals, mask)
        return -float(np.log(p[2]))

    logits = leaf(logits0)
    ce = softmax_cross_entropy(logits, 2, mask=mask)
    assert abs(ce.item() - f(logits0)) < 1e-12
    ce.backward()
    assert np.allclose(logits.grad, numeric_grad(f, logits0), atol=1e-7)
    assert logits.grad[3] == 0.0  # masked entry gets no gradient


def test_cross_entropy_masked_target_rejected():
    logits = leaf([1.0, 2.0])
    with pytest.raises(ValueError):
        softmax_cross_entropy(logits, 1, mask=np.array([True, False]))


def test_constant_has_no_grad():
    c = constant([1.0, 2.0])
    x = leaf([3.0, 4.0])
    tsum(c * x).backward()
    assert c.grad is None
    assert np.allclose(x.grad, [1.0, 2.0])
