"""Differentiable kernels used by the four networks and their losses.

Convolutions go through im2col + a single GEMM; the scatter back (col2im)
runs over kernel offsets in a fixed order so results are bit-reproducible.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, make_result


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patch matrix of shape (C*kH*kW, N*Ho*Wo); rows follow the weight layout."""
    c = xp.shape[1]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, -1)


def _col2im(cols: np.ndarray, n: int, c: int, hp: int, wp: int, kh: int, kw: int,
            stride: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add a (C*kH*kW, N*Ho*Wo) patch matrix back into an N x C x Hp x Wp image."""
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros((c, n, hp, wp))
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + hs : stride, j : j + ws : stride] += cols[:, i, j]
    return out.transpose(1, 0, 2, 3)


def _to_nchw(mat: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    """(C, N*H*W) -> contiguous N x C x H x W."""
    return np.ascontiguousarray(mat.reshape(-1, n, h, w).transpose(1, 0, 2, 3))


def _from_nchw(x: np.ndarray) -> np.ndarray:
    """N x C x H x W -> (C, N*H*W)."""
    return x.transpose(1, 0, 2, 3).reshape(x.shape[1], -1)


def _check_conv_args(op, x, weight, bias, stride, pad, cin_axis):
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"{op}: expected 4-d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[cin_axis]:
        raise ShapeError(
            f"{op}: input channels {x.shape[1]} do not match weight; "
            f"input shape {x.shape}, weight shape {weight.shape}"
        )
    cout = weight.shape[1 - cin_axis]
    if bias.shape != (cout,):
        raise ShapeError(f"{op}: bias shape {bias.shape} does not match {cout} output channels")
    kh, kw = weight.shape[2:]
    if kh < 1 or kw < 1 or stride < 1 or pad < 0:
        raise ShapeError(f"{op}: invalid kernel/stride/pad ({kh}x{kw}, {stride}, {pad})")
    return kh, kw, cout


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation with zero padding, weight laid out (Cout, Cin, kH, kW)."""
    kh, kw, cout = _check_conv_args("conv2d", x, weight, bias, stride, pad, cin_axis=1)
    n, cin, h, w = x.shape
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {x.shape} (pad {pad})")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wm = weight.data.reshape(cout, -1)
    out = _to_nchw(wm @ cols, n, ho, wo) + bias.data[None, :, None, None]

    def backward_fn(g, needs):
        gm = _from_nchw(g)
        dx = dw = db = None
        if needs[0] and stride == 1 and pad < min(kh, kw):
            # full correlation with the flipped kernel; avoids a wide col2im
            qh, qw = kh - 1 - pad, kw - 1 - pad
            gp = np.pad(g, ((0, 0), (0, 0), (qh, qh), (qw, qw)))
            wflip = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
            dx = _to_nchw(wflip @ _im2col(gp, kh, kw, 1, h, w), n, h, w)
        elif needs[0]:
            dxp = _col2im(wm.T @ gm, n, cin, h + 2 * pad, w + 2 * pad, kh, kw, stride, ho, wo)
            dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
        if needs[1]:
            dw = (gm @ cols.T).reshape(weight.shape)
        if needs[2]:
            db = g.sum(axis=(0, 2, 3))
        return dx, dw, db

    return make_result("conv2d", out, (x, weight, bias), backward_fn)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0,
                     output_padding: int = 0) -> Tensor:
    """Transposed convolution, weight laid out (Cin, Cout, kH, kW).

    Output extent is ``(H - 1) * stride - 2 * pad + kH + output_padding``;
    ``output_padding`` only resolves the size ambiguity of strided layers.
    """
    kh, kw, cout = _check_conv_args("conv_transpose2d", x, weight, bias, stride, pad, cin_axis=0)
    if output_padding < 0 or (output_padding and output_padding >= stride):
        raise ShapeError(f"conv_transpose2d: output_padding {output_padding} must be < stride {stride}")
    n, cin, h, w = x.shape
    ho = (h - 1) * stride - 2 * pad + kh + output_padding
    wo = (w - 1) * stride - 2 * pad + kw + output_padding
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv_transpose2d: empty output for input {x.shape} and pad {pad}")
    hf = (h - 1) * stride + kh + output_padding
    wf = (w - 1) * stride + kw + output_padding
    xm = _from_nchw(x.data)
    wm = weight.data.reshape(cin, -1)
    full = _col2im(wm.T @ xm, n, cout, hf, wf, kh, kw, stride, h, w)
    out = full[:, :, pad : pad + ho, pad : pad + wo] + bias.data[None, :, None, None]

    def backward_fn(g, needs):
        dx = dw = db = None
        if needs[0] or needs[1]:
            gf = np.zeros((n, cout, hf, wf))
            gf[:, :, pad : pad + ho, pad : pad + wo] = g
            gcols = _im2col(gf, kh, kw, stride, h, w)
            if needs[0]:
                dx = _to_nchw(wm @ gcols, n, h, w)
            if needs[1]:
                dw = (xm @ gcols.T).reshape(weight.shape)
        if needs[2]:
            db = g.sum(axis=(0, 2, 3))
        return dx, dw, db

    return make_result("conv_transpose2d", np.ascontiguousarray(out), (x, weight, bias), backward_fn)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the spatial plane."""
    if x.data.ndim != 4:
        raise ShapeError(f"instance_norm: expected N x C x H x W input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"instance_norm: gamma/beta {gamma.shape}/{beta.shape} vs {c} channels")
    if eps <= 0:
        raise ValueError("instance_norm: eps must be positive")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=(2, 3), keepdims=True) + eps)
    xhat = xc * inv
    gm = gamma.data[None, :, None, None]
    out = xhat * gm + beta.data[None, :, None, None]

    def backward_fn(g, needs):
        dx = dgamma = dbeta = None
        if needs[0]:
            dxhat = g * gm
            dx = inv * (
                dxhat
                - dxhat.mean(axis=(2, 3), keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
            )
        if needs[1]:
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
        if needs[2]:
            dbeta = g.sum(axis=(0, 2, 3))
        return dx, dgamma, dbeta

    return make_result("instance_norm", out, (x, gamma, beta), backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result("relu", x.data * mask, (x,), lambda g, needs: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0 < slope < 1:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    factor = np.where(x.data > 0, 1.0, slope)
    return make_result("leaky_relu", x.data * factor, (x,), lambda g, needs: (g * factor,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_result("tanh", out, (x,), lambda g, needs: (g * (1.0 - out * out),))


def activation(x: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return make_result("add", a.data + b.data, (a, b), lambda g, needs: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return make_result("mul", a.data * b.data, (a, b), lambda g, needs: (g * b.data, g * a.data))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return make_result("scale", a.data * factor, (a,), lambda g, needs: (g * factor,))


def total(a: Tensor) -> Tensor:
    """Sum of all elements as a scalar."""
    shape = a.shape
    return make_result("sum", np.array(a.data.sum()), (a,),
                       lambda g, needs: (np.broadcast_to(g, shape).copy(),))


def weighted_sum(terms: list[tuple[float, Tensor]]) -> Tensor:
    """sum(w * t) over scalar terms; zero-weight terms drop out of the graph."""
    live = [(w, t) for w, t in terms if w != 0.0]
    if not live:
        return Tensor(np.array(0.0))
    out = scale(live[0][1], live[0][0]) if live[0][0] != 1.0 else live[0][1]
    for w, t in live[1:]:
        out = add(out, scale(t, w) if w != 1.0 else t)
    return out


def _check_pair(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference; the subgradient at a tie is 0."""
    _check_pair("l1_loss", a, b)
    d = a.data - b.data
    n = d.size
    sign = np.sign(d) / n
    return make_result("l1_loss", np.array(np.abs(d).mean()), (a, b),
                       lambda g, needs: (g * sign, -g * sign))


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    _check_pair("mse_loss", a, b)
    d = a.data - b.data
    k = 2.0 * d / d.size
    return make_result("mse_loss", np.array((d * d).mean()), (a, b),
                       lambda g, needs: (g * k, -g * k))


def bce_with_logits(logits: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy on raw scores; ``target`` is not differentiated."""
    _check_pair("bce_with_logits", logits, target)
    x, t = logits.data, target.data
    loss = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    k = (0.5 * (1.0 + np.tanh(0.5 * x)) - t) / x.size
    return make_result("bce_with_logits", np.array(loss.mean()), (logits, target),
                       lambda g, needs: (g * k, None))
