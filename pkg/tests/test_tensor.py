import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from depthcomp.errors import ContractError, DegenerateError, DimensionError, EmptyInputError
from depthcomp.tensor import (
    Tensor,
    add,
    concat,
    conv2d,
    grad_check,
    graph_nodes,
    linear,
    matmul,
    maxpool_points,
    mse_masked,
    mul,
    no_grad,
    relu,
    repeat_rows,
    broadcast_rows,
    tensor_sum,
    upsample_nearest2x,
)


def rand(rng, *shape, grad=True):
    return Tensor(rng.uniform(-2, 2, size=shape), requires_grad=grad)


def weighted_sum(t, rng):
    """Scalar readout with random weights so every output coordinate matters."""
    w = Tensor(rng.normal(size=t.shape))
    return tensor_sum(mul(t, w))


# --- matmul ---------------------------------------------------------------


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(a, Tensor(np.eye(2))).data, a.data)


def test_matmul_row_by_column():
    # triple-loop oracle
    a, b = [[1.0, 2.0]], [[3.0], [4.0]]
    expected = [[sum(a[i][k] * b[k][j] for k in range(2)) for j in range(1)] for i in range(1)]
    assert expected == [[11.0]]
    np.testing.assert_array_equal(matmul(Tensor(a), Tensor(b)).data, expected)


def test_matmul_zero():
    assert matmul(Tensor([[0.0, 0.0]]), Tensor([[5.0], [7.0]])).data.tolist() == [[0.0]]


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


# --- conv2d ---------------------------------------------------------------


def test_conv_all_ones_center_is_nine():
    # direct summation: the 3x3 window around the center covers all nine ones
    x = Tensor(np.ones((1, 3, 3)))
    k = Tensor(np.ones((1, 1, 3, 3)))
    assert conv2d(x, k).data[0, 1, 1] == 9.0
    # corners see a 2x2 window after zero padding
    assert conv2d(x, k).data[0, 0, 0] == 4.0


def delta_kernel(c):
    k = np.zeros((c, c, 3, 3))
    for i in range(c):
        k[i, i, 1, 1] = 1.0
    return Tensor(k)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(3, 9), st.integers(3, 9)),
              elements=st.floats(-1e6, 1e6)))
def test_conv_delta_kernel_is_identity(x):
    np.testing.assert_array_equal(conv2d(Tensor(x), delta_kernel(x.shape[0])).data, x)


def test_conv_zero_input():
    rng = np.random.default_rng(0)
    out = conv2d(Tensor(np.zeros((2, 5, 5))), rand(rng, 3, 2, 3, 3))
    assert not out.data.any()


@pytest.mark.parametrize("h,w,stride", [(5, 7, 1), (5, 7, 2), (8, 8, 2), (3, 3, 2)])
def test_conv_output_extent(h, w, stride):
    rng = np.random.default_rng(1)
    out = conv2d(rand(rng, 2, h, w), rand(rng, 4, 2, 3, 3), stride=stride)
    assert out.shape == (4, -(-h // stride), -(-w // stride))
    proj = conv2d(rand(rng, 2, h, w), rand(rng, 4, 2, 1, 1), stride=stride)
    assert proj.shape == out.shape


def test_conv_matches_direct_loops():
    rng = np.random.default_rng(2)
    x, k, b = rng.normal(size=(2, 5, 6)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    for stride in (1, 2):
        out = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=stride).data
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        for o in range(3):
            for i in range(out.shape[1]):
                for j in range(out.shape[2]):
                    win = xp[:, i * stride : i * stride + 3, j * stride : j * stride + 3]
                    assert out[o, i, j] == pytest.approx((win * k[o]).sum() + b[o], abs=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError, match="channels"):
        conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


# --- relu / upsample / maxpool -------------------------------------------


def test_relu_values_and_gradient():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    y = relu(x)
    assert y.data.tolist() == [0.0, 0.0, 2.0]
    y.backward(np.array([5.0, 5.0, 5.0]))
    assert x.grad.tolist() == [0.0, 0.0, 5.0]


def test_relu_identity_on_positive():
    x = np.array([0.5, 3.0, 1e-9])
    np.testing.assert_array_equal(relu(Tensor(x)).data, x)


def test_upsample_replicates_and_sums_gradient():
    x = Tensor(np.full((1, 1, 1), 5.0), requires_grad=True)
    y = upsample_nearest2x(x)
    assert y.shape == (1, 2, 2) and (y.data == 5).all()
    tensor_sum(y).backward()
    assert x.grad.tolist() == [[[4.0]]]
    assert not upsample_nearest2x(Tensor(np.zeros((2, 3, 3)))).data.any()


def test_maxpool_values():
    assert maxpool_points(Tensor([[1.0, 5.0], [3.0, 2.0]])).data.tolist() == [3.0, 5.0]
    assert maxpool_points(Tensor([[4.0, -1.0]])).data.tolist() == [4.0, -1.0]


def test_maxpool_tie_goes_to_first_row():
    x = Tensor([[2.0, 1.0], [2.0, 1.0]], requires_grad=True)
    tensor_sum(maxpool_points(x)).backward()
    assert x.grad.tolist() == [[1.0, 1.0], [0.0, 0.0]]


def test_maxpool_empty():
    with pytest.raises(EmptyInputError):
        maxpool_points(Tensor(np.zeros((0, 3))))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 5)), elements=st.floats(-1e3, 1e3)),
       st.randoms())
def test_maxpool_permutation_invariant(x, r):
    perm = list(range(len(x)))
    r.shuffle(perm)
    np.testing.assert_array_equal(maxpool_points(Tensor(x)).data, maxpool_points(Tensor(x[perm])).data)


# --- concat / add / mse ----------------------------------------------------


def test_mse_masked_perfect_prediction():
    t = np.arange(4.0).reshape(1, 2, 2)
    mask = np.array([[[1, 0], [1, 1]]])
    pred = t + np.array([[[0, 9], [0, 0]]])
    assert mse_masked(Tensor(pred), t, mask).item() == 0.0


def test_mse_masked_ignores_excluded_pixel():
    # hand computation: three masked errors of 2 -> (3 * 4) / 3 = 4
    target = np.zeros(4)
    mask = np.array([1.0, 1.0, 1.0, 0.0])
    for excluded in (2.0, -100.0, 1e6):
        pred = Tensor(np.array([2.0, 2.0, 2.0, excluded]), requires_grad=True)
        loss = mse_masked(pred, target, mask)
        assert loss.item() == 4.0
        loss.backward()
        assert pred.grad[3] == 0.0


def test_mse_degenerate_mask():
    with pytest.raises(DegenerateError):
        mse_masked(Tensor(np.ones(3)), np.zeros(3), np.zeros(3))


def test_add_zeros_identity():
    x = np.array([[1.5, -2.0]])
    np.testing.assert_array_equal(add(Tensor(x), Tensor(np.zeros_like(x))).data, x)


def test_concat_shape_check():
    with pytest.raises(DimensionError):
        concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2)))], axis=1)
    assert concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2)))], axis=1).shape == (2, 5)


# --- graph bookkeeping ------------------------------------------------------


def test_backward_populates_every_reachable_node():
    rng = np.random.default_rng(3)
    x = rand(rng, 3, 4)
    h = relu(linear(x, rand(rng, 4, 5), rand(rng, 5)))
    loss = tensor_sum(mul(h, h))
    loss.backward()
    nodes = graph_nodes(loss)
    assert [n._seq for n in nodes] == sorted(n._seq for n in nodes)
    assert all(n.grad is not None and n.grad.shape == n.shape for n in nodes)


def test_shared_subexpression_gradient_accumulates():
    x = Tensor([3.0], requires_grad=True)
    y = add(x, x)
    tensor_sum(mul(y, x)).backward()  # 2x^2 -> 4x
    assert x.grad.tolist() == [12.0]


def test_no_grad_builds_no_graph():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = mul(x, x)
    assert not y.requires_grad and y._parents == ()


def test_forward_is_bit_deterministic():
    rng = np.random.default_rng(4)
    x, k = rand(rng, 3, 8, 8), rand(rng, 4, 3, 3, 3)
    a = relu(conv2d(x, k, stride=2)).data
    b = relu(conv2d(x, k, stride=2)).data
    assert a.tobytes() == b.tobytes()


# --- grad_check -------------------------------------------------------------


def test_grad_check_square_sum():
    x = Tensor([1.0, 2.0], requires_grad=True)
    f = lambda: tensor_sum(mul(x, x))
    f().backward()
    assert x.grad.tolist() == [2.0, 4.0]
    assert grad_check(f, x) < 1e-6


def test_grad_check_two_layer_mlp():
    rng = np.random.default_rng(5)
    x = rand(rng, 4, 3, grad=False)
    w1, b1, w2, b2 = rand(rng, 3, 6), rand(rng, 6), rand(rng, 6, 1), rand(rng, 1)
    f = lambda: tensor_sum(linear(relu(linear(x, w1, b1)), w2, b2))
    assert grad_check(f, [w1, b1, w2, b2], eps=1e-5) < 1e-4


def test_grad_check_constant_function():
    x = Tensor([1.0, -1.0], requires_grad=True)
    assert grad_check(lambda: tensor_sum(Tensor([3.0])), x) == 0.0


def test_grad_check_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        grad_check(lambda: mul(x, x), x)


def test_grad_check_tol_raises():
    x = Tensor([1.0], requires_grad=True)

    def broken():
        y = mul(x, x)
        y._backward = lambda g: (g * 0.0,)  # sabotage
        return tensor_sum(y)

    with pytest.raises(AssertionError):
        grad_check(broken, x, tol=1e-4)


# every differentiable op, ten random instances each
OP_CASES = {
    "matmul": lambda rng: ((rand(rng, 3, 4), rand(rng, 4, 2)), lambda a, b: matmul(a, b)),
    "add": lambda rng: ((rand(rng, 3, 4), rand(rng, 4)), lambda a, b: add(a, b)),
    "mul": lambda rng: ((rand(rng, 3, 4), rand(rng, 3, 4)), lambda a, b: mul(a, b)),
    "relu": lambda rng: ((rand(rng, 5, 4),), lambda a: relu(a)),
    "conv_s1": lambda rng: ((rand(rng, 2, 5, 6), rand(rng, 3, 2, 3, 3), rand(rng, 3)),
                            lambda x, k, b: conv2d(x, k, b, stride=1)),
    "conv_s2": lambda rng: ((rand(rng, 2, 5, 6), rand(rng, 3, 2, 3, 3), rand(rng, 3)),
                            lambda x, k, b: conv2d(x, k, b, stride=2)),
    "conv_1x1": lambda rng: ((rand(rng, 2, 4, 4), rand(rng, 3, 2, 1, 1)),
                             lambda x, k: conv2d(x, k, stride=2)),
    "upsample": lambda rng: ((rand(rng, 2, 3, 4),), lambda a: upsample_nearest2x(a)),
    "maxpool": lambda rng: ((rand(rng, 6, 4),), lambda a: maxpool_points(a)),
    "concat": lambda rng: ((rand(rng, 2, 3), rand(rng, 2, 5)), lambda a, b: concat([a, b], axis=1)),
    "repeat_rows": lambda rng: ((rand(rng, 3, 2),), lambda a: repeat_rows(a, 4)),
    "broadcast_rows": lambda rng: ((rand(rng, 3),), lambda a: broadcast_rows(a, 5)),
    "mse_masked": lambda rng: ((rand(rng, 1, 4, 4), rand(rng, 1, 4, 4)),
                               lambda a, b: mse_masked(a, b, (np.arange(16) % 3 != 0).reshape(1, 4, 4))),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_every_op_matches_finite_differences(name):
    worst = 0.0
    for trial in range(10):
        rng = np.random.default_rng([7, trial])
        inputs, op = OP_CASES[name](rng)
        readout = Tensor(rng.normal(size=op(*inputs).shape))
        worst = max(worst, grad_check(lambda: tensor_sum(mul(op(*inputs), readout)), inputs, eps=1e-5))
    assert worst < 1e-4
