import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmnet import ops
from mmnet.gradcheck import check_gradients
from mmnet.tensor import Axis, NonFiniteError, Tape, Tensor, debug_mode, default_dtype
from mmnet.verify import conv_naive, gap_naive


def T(a, grad=False, dtype=None):
    return Tensor(np.asarray(a), dtype=dtype, requires_grad=grad)


# ---------------------------------------------------------------- tensor

def test_tensor_rank_and_extent_checks():
    with pytest.raises(ValueError):
        Tensor(np.zeros((1,) * 6))
    with pytest.raises(ValueError):
        Tensor(np.zeros((2, 0)))


def test_default_dtype_is_float32_and_switchable():
    assert T([1.0, 2.0]).dtype == np.float32
    with default_dtype(np.float64):
        assert T([1.0]).dtype == np.float64
    assert T([1.0]).dtype == np.float32


def test_axis_order_matches_layout():
    assert [a.value for a in Axis] == [0, 1, 2, 3, 4]
    assert Axis.BATCH < Axis.CHANNEL < Axis.DEPTH < Axis.HEIGHT < Axis.WIDTH


def test_debug_mode_flags_non_finite():
    x = T([1e38, 1e38])
    with np.errstate(over="ignore"):
        with debug_mode():
            with pytest.raises(NonFiniteError):
                ops.mul(x, x)
        ops.mul(x, x)  # silent outside debug mode


# --------------------------------------------------------------- reshape

def test_reshape_roundtrip_bitwise():
    x = T(np.random.default_rng(0).normal(size=(2, 3)))
    y = ops.reshape(x, (3, 2))
    assert y.shape == (3, 2)
    assert np.array_equal(ops.reshape(y, (2, 3)).data, x.data)
    with pytest.raises(ValueError):
        ops.reshape(x, (4, 2))


def test_fold_shape_walk():
    x = T(np.zeros((1, 8, 18, 4, 4)))
    assert ops.fold_depth(x).shape == (18, 8, 4, 4)
    big = ops.reshape(T(np.zeros((8, 18, 2, 2))), (144, 2, 2))
    assert big.shape == (144, 2, 2)


def test_fold_constant_and_bad_unfold():
    x = T(np.full((2, 3, 4, 2, 2), 7.0))
    f = ops.fold_depth(x)
    assert np.all(f.data == 7.0)
    with pytest.raises(ValueError):
        ops.unfold_depth(f, 3)


@settings(max_examples=40, deadline=None)
@given(st.tuples(*[st.integers(1, 4)] * 5), st.integers(0, 2**31 - 1))
def test_fold_unfold_roundtrip(shape, seed):
    x = T(np.random.default_rng(seed).normal(size=shape))
    assert np.array_equal(ops.unfold_depth(ops.fold_depth(x), shape[2]).data, x.data)


# ------------------------------------------------------------- conv

def test_conv1d_identity_kernel():
    y = ops.conv1d(T([[[1.0, 2.0, 3.0]]]), T([[[1.0]]]), T([0.0]))
    assert y.data.ravel().tolist() == [1.0, 2.0, 3.0]


def test_conv2d_box_sum_of_delta():
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = 1
    y = ops.conv2d(T(x), T(np.ones((1, 1, 3, 3))), None, 1, 1)
    assert np.array_equal(y.data, np.ones((1, 1, 3, 3), dtype=np.float32))


def test_conv3d_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(1, 2, 4, 5, 5)), rng.normal(size=(3, 2, 3, 3, 3)), rng.normal(size=3)
    y = ops.conv3d(T(x), T(w), T(b), 1, 1)
    assert np.max(np.abs(y.data - conv_naive(x, w, b, 1, 1))) < 1e-5


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        ops.conv2d(T(np.zeros((1, 2, 4, 4))), T(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ValueError):
        ops.conv2d(T(np.zeros((1, 1, 2, 2))), T(np.zeros((1, 1, 3, 3))))
    assert ops.conv_output_shape((5,), (3,), (2,), (1,)) == (3,)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_conv_oracle_property(nd, seed):
    rng = np.random.default_rng(seed)
    k = tuple(int(v) for v in rng.integers(1, 4, nd))
    stride = tuple(int(v) for v in rng.integers(1, 3, nd))
    pad = tuple(int(rng.integers(0, kk)) for kk in k)
    spatial = tuple(int(kk + rng.integers(0, 7 - kk)) for kk in k)
    cin, cout = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    x, w, b = rng.normal(size=(2, cin) + spatial), rng.normal(size=(cout, cin) + k), rng.normal(size=cout)
    got = ops.conv(T(x), T(w), T(b), stride, pad).data
    assert np.max(np.abs(got - conv_naive(x, w, b, stride, pad))) < 1e-5


# ---------------------------------------------------------- batchnorm

def test_batchnorm_train_statistics():
    x = T(np.random.default_rng(2).normal(3.0, 2.0, size=(4, 3, 5, 6)))
    y = ops.batchnorm(x, T(np.ones(3)), T(np.zeros(3)), "train").data.astype(np.float64)
    assert np.all(np.abs(y.mean(axis=(0, 2, 3))) < 1e-5)
    assert np.all(np.abs(y.var(axis=(0, 2, 3)) - 1) < 1e-4)


def test_batchnorm_zero_gamma_gives_beta():
    x = T(np.random.default_rng(3).normal(size=(2, 3, 4)))
    beta = np.array([0.5, -1.0, 2.0])
    y = ops.batchnorm(x, T(np.zeros(3)), T(beta), "train")
    assert np.array_equal(y.data, np.broadcast_to(beta[None, :, None], (2, 3, 4)).astype(np.float32))


def test_batchnorm_running_stats_and_errors():
    rm, rv = np.zeros(2), np.ones(2)
    x = T(np.array([[[1.0, 3.0]], [[5.0, 7.0]]]).transpose(0, 1, 2).reshape(2, 1, 2).repeat(2, axis=1))
    ops.batchnorm(x, T(np.ones(2)), T(np.zeros(2)), "train", rm, rv)
    assert np.allclose(rm, 0.1 * 4.0) and np.allclose(rv, 0.9 + 0.1 * 5.0)
    with pytest.raises(ValueError):
        ops.batchnorm(T(np.ones((1, 2))), T(np.ones(2)), T(np.zeros(2)), "train")
    with pytest.raises(ValueError):
        ops.batchnorm(x, T(np.ones(2)), T(np.zeros(2)), "eval")


def test_batchnorm_gradcheck_f32():
    rng = np.random.default_rng(4)
    x, g, b = T(rng.normal(size=(2, 3, 4, 4)), True), T(rng.random(3) + 0.5, True), T(rng.normal(size=3), True)
    proj = T(rng.normal(size=(2, 3, 4, 4)))
    err = check_gradients(lambda: ops.sum_all(ops.mul(ops.batchnorm(x, g, b), proj)), [x, g, b], rng=rng)
    assert max(err.values()) < 1e-3


# -------------------------------------------------------- elementwise

def test_relu_sigmoid_values():
    assert ops.relu(T([-1.0, 2.0, 0.0])).data.tolist() == [0.0, 2.0, 0.0]
    assert ops.sigmoid(T([0.0])).data[0] == 0.5
    x = T([0.0], grad=True)
    with Tape() as tape:
        y = ops.sum_all(ops.relu(x))
    assert tape.backward(y, [x])[0][0] == 0.0


def test_gap_examples():
    assert np.all(ops.gap_over(T(np.full((2, 3, 4, 5, 6), 3.25)), Axis.DEPTH).data == 3.25)
    x = np.zeros((1, 2, 2, 2, 2))
    x[:, 1] = 5
    x[:, 0] = 1
    assert ops.gap_over(T(x), Axis.CHANNEL).data.tolist() == [[1.0, 5.0]]
    r = np.random.default_rng(5).normal(size=(2, 3, 4, 5, 6))
    assert np.max(np.abs(ops.gap_over(T(r), Axis.HEIGHT).data - gap_naive(r, 3))) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.tuples(*[st.integers(1, 4)] * 5), st.floats(-100, 100, allow_nan=False, width=32))
def test_gap_of_constant_is_constant(shape, value):
    x = T(np.full(shape, value))
    for axis in (1, 2, 3, 4):
        out = ops.gap_over(x, axis).data
        assert np.all(np.abs(out - np.float32(value)) <= np.spacing(np.float32(abs(value)) + np.float32(1e-30)))


def test_broadcast_mul_examples():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 3, 2, 2, 2))
    assert np.array_equal(ops.mul(T(x), T(np.ones_like(x))).data, x.astype(np.float32))
    v = rng.normal(size=(1, 3, 1, 1, 1))
    got = ops.mul(T(v), T(x)).data
    ref = np.empty_like(x)
    for idx in np.ndindex(*x.shape):
        ref[idx] = x[idx] * v[0, idx[1], 0, 0, 0]
    assert np.max(np.abs(got - ref)) < 1e-6
    with pytest.raises(ValueError):
        ops.add(T(np.zeros((2, 3))), T(np.zeros((4,))))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_broadcast_add_commutes_and_associates(seed):
    rng = np.random.default_rng(seed)
    a, b, c = T(rng.normal(size=(2, 3, 4))), T(rng.normal(size=(1, 3, 1))), T(rng.normal(size=(4,)))
    assert np.array_equal(ops.add(a, b).data, ops.add(b, a).data)
    assert np.array_equal(ops.mul(a, b).data, ops.mul(b, a).data)
    lhs = ops.add(ops.add(a, b), c).data
    rhs = ops.add(a, ops.add(b, c)).data
    assert np.max(np.abs(lhs - rhs)) < 1e-6


def test_blend_endpoints_and_tied_inputs():
    rng = np.random.default_rng(7)
    u, v = T(rng.random((2, 5))), T(rng.random((2, 5)))
    assert np.array_equal(ops.blend(u, v, 1.0).data, u.data)
    assert np.array_equal(ops.blend(u, v, 0.0).data, v.data)
    for a in (0.0, 0.3, 0.7, 1.0):
        assert np.array_equal(ops.blend(u, u, a).data, u.data)
    with pytest.raises(ValueError):
        ops.blend(u, v, 1.5)


# ------------------------------------------------------------- head

def test_cross_entropy_uniform_and_margin():
    for k in (2, 4, 7):
        loss = ops.softmax_cross_entropy(T(np.zeros((3, k)), dtype=np.float64), [0, 1, 1])
        assert abs(float(loss.data) - np.log(k)) < 1e-12
    losses = [float(ops.softmax_cross_entropy(T([[m, 0.0, 0.0]]), [0]).data) for m in (1, 5, 20, 80)]
    assert all(a > b for a, b in zip(losses, losses[1:])) and losses[-1] < 1e-6
    with pytest.raises(ValueError):
        ops.softmax_cross_entropy(T(np.zeros((1, 3))), [3])


def test_linear_shapes():
    y = ops.linear(T(np.ones((2, 3))), T(np.ones((4, 3))), T(np.zeros(4)))
    assert y.shape == (2, 4) and np.all(y.data == 3)
    with pytest.raises(ValueError):
        ops.linear(T(np.ones((2, 3))), T(np.ones((4, 2))))


# ------------------------------------------------------------- tape

def test_backward_sum_and_square():
    x = T(np.random.default_rng(8).normal(size=(3, 4)), True)
    with Tape() as tape:
        loss = ops.sum_all(x)
    assert np.array_equal(tape.backward(loss, [x])[0], np.ones((3, 4), np.float32))
    with Tape() as tape:
        loss = ops.sum_all(ops.mul(x, x))
    assert np.allclose(tape.backward(loss, [x])[0], 2 * x.data)


def test_backward_shared_input_accumulates_and_unused_is_zero():
    x, unused = T([1.0, 2.0], True), T([5.0], True)
    with Tape() as tape:
        loss = ops.sum_all(ops.add(ops.scale(x, 3.0), x))
    gx, gu = tape.backward(loss, [x, unused])
    assert gx.tolist() == [4.0, 4.0] and gu.tolist() == [0.0]
    with Tape() as tape:
        y = ops.scale(x, 2.0)
    with pytest.raises(ValueError):
        tape.backward(y, [x])


def test_op_gradchecks_float32():
    from mmnet.verify import op_gradchecks
    results = op_gradchecks(np.float32, seed=3)
    bad = [(r.name, r.value) for r in results if not r.passed]
    assert not bad
