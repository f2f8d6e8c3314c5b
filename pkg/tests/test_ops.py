import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from devgan import ops
from devgan.gradcheck import check_function
from devgan.tensor import ParamTensor, ShapeError, Tape, Tensor, backward


def naive_conv2d(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            for y in range(ho):
                for x_ in range(wo):
                    patch = xp[i, :, y * stride : y * stride + kh, x_ * stride : x_ * stride + kw]
                    out[i, o, y, x_] = (patch * w[o]).sum() + b[o]
    return out


def naive_conv_transpose2d(x, w, b, stride, pad, out_pad=0):
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    hf = (h - 1) * stride + kh + out_pad
    wf = (wd - 1) * stride + kw + out_pad
    full = np.zeros((n, cout, hf, wf))
    for i in range(n):
        for c in range(cin):
            for y in range(h):
                for x_ in range(wd):
                    full[i, :, y * stride : y * stride + kh, x_ * stride : x_ * stride + kw] += x[i, c, y, x_] * w[c]
    ho = (h - 1) * stride - 2 * pad + kh + out_pad
    wo = (wd - 1) * stride - 2 * pad + kw + out_pad
    return full[:, :, pad : pad + ho, pad : pad + wo] + b[None, :, None, None]


def T(a):
    return Tensor(np.asarray(a, dtype=float))


# ------------------------------------------------------------------- conv2d


def test_conv2d_identity_kernel():
    out = ops.conv2d(T(np.ones((1, 1, 3, 3))), T(np.ones((1, 1, 1, 1))), T([0.0]), 1, 0)
    assert np.array_equal(out.data, np.ones((1, 1, 3, 3)))


def test_conv2d_full_window_sum():
    x = np.arange(1, 10, dtype=float).reshape(1, 1, 3, 3)
    out = ops.conv2d(T(x), T(np.ones((1, 1, 3, 3))), T([0.0]), 1, 0)
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == naive_conv2d(x, np.ones((1, 1, 3, 3)), [0.0], 1, 0).item() == 45.0


@pytest.mark.parametrize("xs,ws,stride,pad", [
    ((2, 3, 5, 5), (4, 3, 3, 3), 1, 1),
    ((1, 2, 9, 9), (3, 2, 4, 4), 2, 1),
    ((2, 3, 8, 8), (2, 3, 7, 7), 1, 3),
    ((1, 4, 7, 7), (5, 4, 3, 3), 2, 0),
])
def test_conv2d_matches_loop_oracle(rng, xs, ws, stride, pad):
    x, w, b = rng.normal(size=xs), rng.normal(size=ws), rng.normal(size=ws[0])
    got = ops.conv2d(T(x), T(w), T(b), stride, pad).data
    np.testing.assert_allclose(got, naive_conv2d(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_conv2d_output_extent(rng):
    out = ops.conv2d(T(rng.normal(size=(1, 2, 10, 7))), T(rng.normal(size=(3, 2, 3, 3))), T(np.zeros(3)), 2, 1)
    assert out.shape == (1, 3, (10 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1)


def test_conv2d_channel_mismatch_names_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 2, 4, 4\).*\(1, 3, 3, 3\)"):
        ops.conv2d(T(np.zeros((1, 2, 4, 4))), T(np.zeros((1, 3, 3, 3))), T([0.0]))


def test_conv2d_fd_gradient_spec_shape():
    r = np.random.default_rng(0)
    x, w, b = (ParamTensor(n, r.normal(size=s)) for n, s in
               [("x", (2, 3, 5, 5)), ("w", (4, 3, 3, 3)), ("b", (4,))])
    # gradient of the plain sum, as well as a random projection
    with Tape():
        g = backward(ops.total(ops.conv2d(x, w, b)), [x, w, b])
    assert np.allclose(g["b"], 2 * 3 * 3)
    res = check_function("conv2d", "2x3x5x5", lambda: ops.conv2d(x, w, b), [x, w, b])
    assert res.passed, res


# --------------------------------------------------------- conv_transpose2d


def test_conv_transpose_scalar():
    out = ops.conv_transpose2d(T([[[[2.0]]]]), T([[[[3.0]]]]), T([0.0]), 1, 0)
    assert out.data.reshape(-1).tolist() == [6.0]


def test_conv_transpose_block_pattern():
    out = ops.conv_transpose2d(T(np.ones((1, 1, 2, 2))), T(np.ones((1, 1, 2, 2))), T([0.0]), 2, 0)
    expect = naive_conv_transpose2d(np.ones((1, 1, 2, 2)), np.ones((1, 1, 2, 2)), np.zeros(1), 2, 0)
    assert out.shape == (1, 1, 4, 4)
    assert np.array_equal(out.data, expect)
    assert np.array_equal(out.data, np.ones((1, 1, 4, 4)))


@pytest.mark.parametrize("xs,ws,stride,pad,op", [
    ((1, 3, 4, 4), (3, 2, 3, 3), 1, 1, 0),
    ((2, 4, 3, 3), (4, 2, 3, 3), 2, 1, 1),
    ((1, 2, 5, 5), (2, 3, 4, 4), 2, 1, 0),
])
def test_conv_transpose_matches_scatter_oracle(rng, xs, ws, stride, pad, op):
    x, w, b = rng.normal(size=xs), rng.normal(size=ws), rng.normal(size=ws[1])
    got = ops.conv_transpose2d(T(x), T(w), T(b), stride, pad, op).data
    np.testing.assert_allclose(got, naive_conv_transpose2d(x, w, b, stride, pad, op), rtol=1e-12, atol=1e-12)


def _adjoint_gap(rng, n, cin, cout, h, k, stride, pad):
    if h + 2 * pad < k:
        return None
    x = rng.normal(size=(n, cin, h, h))
    w = rng.normal(size=(cout, cin, k, k))
    zero_out, zero_in = T(np.zeros(cout)), T(np.zeros(cin))
    y_shape = ops.conv2d(T(x), T(w), zero_out, stride, pad).shape
    # output_padding makes the transposed extent land back on h
    out_pad = h - ((y_shape[2] - 1) * stride - 2 * pad + k)
    if not 0 <= out_pad < max(stride, 1) and out_pad != 0:
        return None
    y = rng.normal(size=y_shape)
    lhs = float((ops.conv2d(T(x), T(w), zero_out, stride, pad).data * y).sum())
    rhs = float((x * ops.conv_transpose2d(T(y), T(w), zero_in, stride, pad, out_pad).data).sum())
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 2), cin=st.integers(1, 4), cout=st.integers(1, 4), h=st.integers(3, 9),
       k=st.integers(1, 4), stride=st.integers(1, 2), pad=st.integers(0, 2), seed=st.integers(0, 2**16))
def test_adjoint_identity(n, cin, cout, h, k, stride, pad, seed):
    gap = _adjoint_gap(np.random.default_rng(seed), n, cin, cout, h, k, stride, pad)
    if gap is not None:
        assert gap <= 1e-10


# ------------------------------------------------------------ instance norm


def test_instance_norm_constant_plane_gives_beta():
    x = T(np.full((1, 2, 4, 4), 3.5))
    out = ops.instance_norm(x, T([1.0, 1.0]), T([0.0, 0.0]))
    assert np.array_equal(out.data, np.zeros((1, 2, 4, 4)))


def test_instance_norm_moments(rng):
    x = rng.normal(3.0, 2.0, size=(2, 3, 16, 16))
    gamma, beta = np.array([0.5, 2.0, 1.5]), np.array([-1.0, 0.25, 3.0])
    out = ops.instance_norm(T(x), T(gamma), T(beta), eps=1e-12).data
    mean = out.mean(axis=(2, 3))
    var = out.var(axis=(2, 3))
    assert np.abs(mean - beta[None, :]).max() <= 1e-9
    assert np.abs(var / gamma[None, :] ** 2 - 1).max() <= 1e-6


@pytest.mark.parametrize("shape", [(2, 3, 4, 4), (1, 4, 3, 5), (3, 2, 2, 2)])
def test_instance_norm_fd(rng, shape):
    x = ParamTensor("x", rng.normal(size=shape))
    g = ParamTensor("g", rng.normal(size=shape[1]))
    b = ParamTensor("b", rng.normal(size=shape[1]))
    assert check_function("instance_norm", str(shape), lambda: ops.instance_norm(x, g, b), [x, g, b]).passed


# -------------------------------------------------------------- activations


def test_relu_values():
    assert ops.relu(T([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]


def test_tanh_zero():
    assert ops.tanh(T([0.0])).data.tolist() == [0.0]


def test_leaky_relu_negative_slope_exact():
    x = ParamTensor("x", [-3.0, -0.5])
    with Tape():
        g = backward(ops.total(ops.leaky_relu(x, 0.2)), [x])
    assert g["x"].tolist() == [0.2, 0.2]


def test_activation_dispatch():
    x = T([-1.0, 1.0])
    assert ops.activation(x, "leaky_relu", 0.1).data.tolist() == [-0.1, 1.0]
    with pytest.raises(ValueError):
        ops.activation(x, "gelu")


# ------------------------------------------------------------------- losses


def test_l1_examples():
    assert ops.l1_loss(T([1.0, 2.0]), T([1.0, 2.0])).item() == 0.0
    assert ops.l1_loss(T([1.0, 2.0]), T([0.0, 0.0])).item() == 1.5


def test_l1_tie_subgradient_is_zero():
    a = ParamTensor("a", [1.0, 2.0])
    with Tape():
        g = backward(ops.l1_loss(a, T([1.0, 0.0])), [a])
    assert g["a"].tolist() == [0.0, 0.5]


def test_mse_examples():
    assert ops.mse_loss(T([1.0, 2.0]), T([1.0, 2.0])).item() == 0.0
    assert ops.mse_loss(T([1.0, 2.0]), T([0.0, 0.0])).item() == 2.5


@pytest.mark.parametrize("fn", [ops.l1_loss, ops.mse_loss])
def test_loss_shape_mismatch(fn):
    with pytest.raises(ShapeError):
        fn(T([1.0, 2.0]), T([1.0]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), size=st.integers(1, 20))
def test_losses_nonnegative(seed, size):
    r = np.random.default_rng(seed)
    a, b = T(r.normal(size=size)), T(r.normal(size=size))
    assert ops.l1_loss(a, b).item() >= 0
    assert ops.mse_loss(a, b).item() >= 0
    assert ops.bce_with_logits(a, T(r.uniform(size=size))).item() >= 0
