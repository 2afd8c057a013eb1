import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssrkit.engine import (
    DimensionError,
    EngineError,
    Tape,
    Tensor,
    add,
    backward,
    concat_last_axis,
    count_flops,
    finite_diff_check,
    gather_columns,
    gelu,
    layer_norm,
    matmul,
    mean_all,
    mean_last_axis,
    mul,
    relu,
    sigmoid_bce,
    slice_last_axis,
    softplus,
    sum_all,
)


def test_matmul_identity():
    a = Tensor([[1.0, 0.0], [0.0, 1.0]])
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(matmul(a, b).data, b.data)


def test_matmul_inner_product():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data == np.array([[11.0]])


def test_matmul_shape_mismatch_reports_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradient_matches_finite_differences(rng):
    a = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    err = finite_diff_check(lambda: sum_all(matmul(a, b)), [a, b])
    assert err < 1e-6


def test_relu_values_and_kink_subgradient():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    out = relu(x)
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])
    backward(sum_all(out))
    # subgradient at exactly 0 is defined as 0
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0])


def test_relu_gradient_away_from_kink(rng):
    x = Tensor(rng.standard_normal(20) + np.sign(rng.standard_normal(20)),
               requires_grad=True)
    x.data[np.abs(x.data) < 0.1] = 0.5  # keep clear of the kink
    err = finite_diff_check(lambda: sum_all(relu(x)), [x])
    assert err < 1e-6


def test_gelu_zero_and_asymptote():
    assert gelu(Tensor([0.0])).data[0] == 0.0
    assert abs(gelu(Tensor([10.0])).data[0] - 10.0) < 1e-8


def test_gelu_gradient(rng):
    x = Tensor(rng.standard_normal(30), requires_grad=True)
    err = finite_diff_check(lambda: sum_all(gelu(x)), [x])
    assert err < 1e-6


def test_layer_norm_constant_input_is_finite_zero():
    x = Tensor(np.full((2, 5), 3.7))
    out = layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
    assert np.allclose(out.data, 0.0)
    assert np.all(np.isfinite(out.data))


def test_layer_norm_standardizes(rng):
    x = Tensor(rng.standard_normal((4, 64)) * 3 + 1)
    out = layer_norm(x, Tensor(np.ones(64)), Tensor(np.zeros(64)))
    assert np.max(np.abs(out.data.mean(axis=-1))) < 1e-10
    assert np.allclose(out.data.var(axis=-1), 1.0, atol=1e-4)


def test_layer_norm_gradient(rng):
    x = Tensor(rng.standard_normal((2, 6)), requires_grad=True)
    scale = Tensor(rng.standard_normal(6), requires_grad=True)
    shift = Tensor(rng.standard_normal(6), requires_grad=True)
    err = finite_diff_check(
        lambda: mean_all(mul(layer_norm(x, scale, shift),
                             layer_norm(x, scale, shift))),
        [x, scale, shift])
    assert err < 1e-5


def test_mean_last_axis():
    assert mean_last_axis(Tensor([1.0, 2.0, 3.0, 4.0])).data[0] == 2.5
    assert mean_last_axis(Tensor(np.zeros(7))).data[0] == 0.0


def test_mean_last_axis_gradient(rng):
    x = Tensor(rng.standard_normal((3, 8)), requires_grad=True)
    err = finite_diff_check(lambda: sum_all(mean_last_axis(x)), [x])
    assert err < 1e-6
    backward(sum_all(mean_last_axis(x)))


def test_concat_and_slice_round_trip(rng):
    parts = [Tensor(rng.standard_normal((3, w))) for w in (2, 5, 1)]
    merged = concat_last_axis(parts)
    assert np.array_equal(
        concat_last_axis([Tensor([1.0, 2.0]), Tensor([3.0])]).data,
        [1.0, 2.0, 3.0])
    off = 0
    for p in parts:
        w = p.data.shape[-1]
        assert np.array_equal(slice_last_axis(merged, off, off + w).data,
                              p.data)
        off += w


def test_concat_single_part_is_identity(rng):
    p = Tensor(rng.standard_normal((2, 4)))
    assert np.array_equal(concat_last_axis([p]).data, p.data)


def test_concat_leading_shape_mismatch():
    with pytest.raises(DimensionError):
        concat_last_axis([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))])


def test_gather_columns_basic():
    x = Tensor([[10.0, 20.0, 30.0]])
    assert np.array_equal(gather_columns(x, [2, 0]).data, [[30.0, 10.0]])
    assert np.array_equal(gather_columns(x, [0, 1, 2]).data, x.data)


def test_gather_columns_out_of_range_names_index():
    with pytest.raises(IndexError, match="5"):
        gather_columns(Tensor(np.zeros((1, 3))), [0, 5])


def test_gather_equals_one_hot_matmul_bit_exact(rng):
    x = Tensor(rng.standard_normal((4, 7)))
    idx = [5, 0, 3, 3]
    m = np.zeros((7, len(idx)))
    for j, i in enumerate(idx):
        m[i, j] = 1.0
    assert np.array_equal(gather_columns(x, idx).data,
                          matmul(x, Tensor(m)).data)


def test_gather_gradient_scatters(rng):
    x = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    backward(sum_all(gather_columns(x, [1, 1, 3])))
    assert np.array_equal(x.grad, np.tile([0.0, 2.0, 0.0, 1.0], (2, 1)))


def test_sigmoid_bce_values():
    loss = sigmoid_bce(Tensor([[0.0]]), Tensor([[1.0]]))
    assert abs(loss.item() - math.log(2)) < 1e-12
    saturated = sigmoid_bce(Tensor([[40.0]]), Tensor([[1.0]]))
    assert 0.0 <= saturated.item() < 1e-15


def test_sigmoid_bce_rejects_non_binary_labels():
    with pytest.raises(EngineError):
        sigmoid_bce(Tensor([[0.0]]), Tensor([[0.5]]))


def test_sigmoid_bce_gradient(rng):
    logits = Tensor(rng.standard_normal((6, 1)), requires_grad=True)
    labels = Tensor(rng.integers(0, 2, size=(6, 1)).astype(float))
    err = finite_diff_check(lambda: sigmoid_bce(logits, labels), [logits])
    assert err < 1e-6


def test_backward_sum_gives_ones():
    tape = Tape()
    w = tape.parameter("w", np.array([1.0, 2.0, 3.0]))
    tape.backward(sum_all(w))
    assert np.array_equal(w.grad, np.ones(3))


def test_backward_unused_parameter_gets_zero_grad():
    tape = Tape()
    w = tape.parameter("w", np.array([1.0, 2.0]))
    u = tape.parameter("unused", np.array([5.0]))
    tape.backward(sum_all(mul(w, Tensor([0.0, 0.0]))))
    assert np.array_equal(w.grad, np.zeros(2))
    assert np.array_equal(u.grad, np.zeros(1))


def test_backward_rejects_non_scalar_loss():
    with pytest.raises(EngineError):
        backward(Tensor([1.0, 2.0]))


def test_shared_subexpression_accumulates():
    x = Tensor([3.0], requires_grad=True)
    backward(sum_all(add(x, x)))
    assert np.array_equal(x.grad, [2.0])


def test_finite_diff_check_quadratic():
    x = Tensor([3.0], requires_grad=True)
    assert finite_diff_check(lambda: sum_all(mul(x, x)), [x], step=1e-5) < 1e-9


def test_finite_diff_check_relu_away_from_kink():
    x = Tensor([1.0], requires_grad=True)
    assert finite_diff_check(lambda: sum_all(relu(x)), [x]) < 1e-9


@pytest.mark.parametrize("op", [relu, gelu, softplus, mean_last_axis])
def test_primitive_gradients_random_instances(op, rng):
    for _ in range(20):
        x = Tensor(rng.standard_normal(8), requires_grad=True)
        if op is relu:  # reject kink neighborhoods
            x.data[np.abs(x.data) < 1e-3] += 0.1
        assert finite_diff_check(lambda: sum_all(op(x)), [x]) < 1e-5


@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1,
                max_size=32))
@settings(max_examples=50, deadline=None)
def test_forward_ops_produce_no_nan(values):
    x = Tensor(values)
    for out in (relu(x), gelu(x), softplus(x), mean_last_axis(x)):
        assert not np.any(np.isnan(out.data))
    ln = layer_norm(Tensor([values]), Tensor(np.ones(len(values))),
                    Tensor(np.zeros(len(values))))
    assert not np.any(np.isnan(ln.data))


def test_flop_counter_matmul_convention():
    with count_flops() as c:
        matmul(Tensor(np.zeros((1, 5))), Tensor(np.zeros((5, 3))))
    assert c.total == 2 * 5 * 3


def test_flop_counter_gather_is_free():
    with count_flops() as c:
        gather_columns(Tensor(np.zeros((4, 6))), [0, 2])
    assert c.total == 0
