"""Differentiable primitives on :class:`~mmnet.tensor.Tensor`.

Each op computes its forward value with numpy and hands
:func:`~mmnet.tensor.make_result` a closure mapping the output cotangent to
input cotangents.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Axis, Tensor, make_result

BN_EPS = 1e-5
BN_DECAY = 0.9


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def broadcast_shape(a: Sequence[int], b: Sequence[int]) -> tuple[int, ...]:
    out = []
    for i in range(1, max(len(a), len(b)) + 1):
        x = a[-i] if i <= len(a) else 1
        y = b[-i] if i <= len(b) else 1
        if x != y and x != 1 and y != 1:
            raise ValueError(f"shapes {tuple(a)} and {tuple(b)} are not broadcast-compatible")
        out.append(max(x, y))
    return tuple(reversed(out))


# ---------------------------------------------------------------- shape ops

def reshape(t: Tensor, new_shape: Sequence[int]) -> Tensor:
    new_shape = tuple(int(s) for s in new_shape)
    if math.prod(new_shape) != t.size:
        raise ValueError(f"cannot reshape {t.shape} ({t.size} elements) to {new_shape}")
    old = t.shape
    return make_result("reshape", t.data.reshape(new_shape), (t,), lambda g: (g.reshape(old),))


def fold_depth(t: Tensor) -> Tensor:
    """(N, C, D, H, W) -> (N*D, C, H, W): depth slices become batch entries."""
    if t.ndim != 5:
        raise ValueError(f"fold_depth expects (N,C,D,H,W), got {t.shape}")
    n, c, d, h, w = t.shape
    out = np.ascontiguousarray(t.data.transpose(0, 2, 1, 3, 4)).reshape(n * d, c, h, w)

    def vjp(g):
        return (np.ascontiguousarray(g.reshape(n, d, c, h, w).transpose(0, 2, 1, 3, 4)),)

    return make_result("fold_depth", out, (t,), vjp)


def unfold_depth(t: Tensor, depth: int) -> Tensor:
    """Inverse of :func:`fold_depth`: (N*D, C, H, W) -> (N, C, D, H, W)."""
    if t.ndim != 4:
        raise ValueError(f"unfold_depth expects a rank-4 tensor, got {t.shape}")
    nd, c, h, w = t.shape
    if depth <= 0 or nd % depth:
        raise ValueError(f"depth {depth} does not divide leading extent {nd}")
    n = nd // depth
    out = np.ascontiguousarray(t.data.reshape(n, depth, c, h, w).transpose(0, 2, 1, 3, 4))

    def vjp(g):
        return (np.ascontiguousarray(g.transpose(0, 2, 1, 3, 4)).reshape(nd, c, h, w),)

    return make_result("unfold_depth", out, (t,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return parts

    return make_result("concat", data, tuple(tensors), vjp)


# ------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_result("add", a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_result("mul", ad * bd, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return make_result("scale", a.data * c, (a,), lambda g: (g * c,))


def blend(self_w: Tensor, cross_w: Tensor, alpha: float) -> Tensor:
    """alpha * self_w + (1 - alpha) * cross_w.

    Evaluated as ``cross + alpha * (self - cross)`` so that identical inputs
    give back the input bit-for-bit for every alpha; the endpoints return the
    selected operand exactly.
    """
    if self_w.shape != cross_w.shape:
        raise ValueError(f"blend shape mismatch {self_w.shape} vs {cross_w.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    a = self_w.dtype.type(alpha)
    if alpha == 1.0:
        data = self_w.data.copy()
    elif alpha == 0.0:
        data = cross_w.data.copy()
    else:
        data = cross_w.data + a * (self_w.data - cross_w.data)
    one_minus = self_w.dtype.type(1.0 - alpha)
    return make_result("blend", data, (self_w, cross_w), lambda g: (g * a, g * one_minus))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result("relu", np.maximum(x.data, x.dtype.type(0)), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    half = x.dtype.type(0.5)
    s = half * (np.tanh(half * x.data) + x.dtype.type(1))
    return make_result("sigmoid", s, (x,), lambda g: (g * s * (1 - s),))


def sum_all(x: Tensor) -> Tensor:
    shape, dtype = x.shape, x.dtype
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=dtype)
    return make_result("sum", out, (x,), lambda g: (np.full(shape, g, dtype=dtype),))


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


# ----------------------------------------------------------------- pooling

def gap_over(x: Tensor, keep: Axis | int) -> Tensor:
    """Mean over every axis of an (N,C,D,H,W) map except batch and ``keep``."""
    if x.ndim != 5:
        raise ValueError(f"gap_over expects (N,C,D,H,W), got {x.shape}")
    keep = Axis(keep)
    if keep == Axis.BATCH:
        raise ValueError("keep axis must be one of channel/depth/height/width")
    axes = tuple(a for a in range(1, 5) if a != keep)
    count = math.prod(x.shape[a] for a in axes)
    out = x.data.mean(axis=axes, dtype=np.float64).astype(x.dtype)
    shape = x.shape

    def vjp(g):
        bshape = [shape[0]] + [shape[a] if a == keep else 1 for a in range(1, 5)]
        return (np.broadcast_to(g.reshape(bshape) / x.dtype.type(count), shape),)

    return make_result("gap_over", out, (x,), vjp)


# ------------------------------------------------------------- convolution

def _tuple(v, nd: int) -> tuple[int, ...]:
    if isinstance(v, int):
        return (v,) * nd
    v = tuple(int(i) for i in v)
    if len(v) != nd:
        raise ValueError(f"expected {nd} values, got {v}")
    return v


def conv_output_shape(in_shape, kernel, stride, padding) -> tuple[int, ...]:
    out = tuple((i + 2 * p - k) // s + 1 for i, k, s, p in zip(in_shape, kernel, stride, padding))
    if any(i + 2 * p < k for i, k, p in zip(in_shape, kernel, padding)) or any(o < 1 for o in out):
        raise ValueError(f"kernel {kernel} does not fit input {in_shape} with padding {padding}")
    return out


def conv(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """N-d cross-correlation (N = weight.ndim - 2).

    x: (N, Cin, *spatial), weight: (Cout, Cin, *kernel), bias: (Cout,).

    Only the trailing spatial axes are unfolded into a patch matrix; taps
    along the leading spatial axis become separate GEMMs over shifted
    column blocks, which keeps the patch copy k0 times smaller.
    """
    nd = weight.ndim - 2
    if x.ndim != nd + 2:
        raise ValueError(f"input rank {x.ndim} does not match a {nd}-d kernel")
    stride, padding = _tuple(stride, nd), _tuple(padding, nd)
    if any(s < 1 for s in stride) or any(p < 0 for p in padding):
        raise ValueError("stride must be >= 1 and padding >= 0")
    n, cin = x.shape[:2]
    cout, wcin = weight.shape[:2]
    if cin != wcin:
        raise ValueError(f"input has {cin} channels, kernel expects {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} != ({cout},)")
    ksize = weight.shape[2:]
    spatial = x.shape[2:]
    out_sp = conv_output_shape(spatial, ksize, stride, padding)
    k0, s0, o0 = ksize[0], stride[0], out_sp[0]
    ktail, otail = ksize[1:], out_sp[1:]

    xp = x.data
    if any(padding):
        # zero buffer + slice assignment; np.pad is slow on small arrays
        xp = np.zeros(x.shape[:2] + tuple(e + 2 * p for e, p in zip(spatial, padding)), dtype=x.data.dtype)
        xp[(slice(None), slice(None)) + tuple(slice(p, p + e) for p, e in zip(padding, spatial))] = x.data
    pad_shape = xp.shape
    # layout (Cin, S0, N, *tail): a column block per leading-axis position
    xt = xp.transpose((1, 2, 0) + tuple(range(3, 2 + nd)))
    s0p = xt.shape[1]
    if nd > 1:
        tail_axes = tuple(range(3, 2 + nd))
        win = sliding_window_view(xt, ktail, axis=tail_axes)
        win = win[(slice(None),) * 3 + tuple(slice(0, o * s, s) for o, s in zip(otail, stride[1:]))]
        # (Cin, S0, N, *otail, *ktail) -> (Cin, *ktail, S0, N, *otail)
        perm = (0,) + tuple(range(3 + len(ktail), 3 + 2 * len(ktail))) + (1, 2) + tuple(range(3, 3 + len(ktail)))
        cols = np.ascontiguousarray(win.transpose(perm))
    else:
        cols = np.ascontiguousarray(xt)
    kvol = cin * math.prod(ktail)
    blk = n * math.prod(otail)              # columns per leading-axis position
    cols = cols.reshape(kvol, s0p, blk)
    nout = o0 * blk

    def block(k: int) -> np.ndarray:
        sub = cols[:, k:k + s0 * (o0 - 1) + 1:s0]
        return sub.reshape(kvol, nout)      # a view when s0 == 1

    # weight taps (k0, Cout, Cin * prod(ktail))
    wt = np.ascontiguousarray(np.moveaxis(weight.data, 2, 0)).reshape(k0, cout, kvol)
    y = wt[0] @ block(0)
    for k in range(1, k0):
        y += wt[k] @ block(k)
    if bias is not None:
        y += bias.data[:, None]
    # (Cout, O0, N, *otail) -> (N, Cout, O0, *otail)
    y = np.ascontiguousarray(y.reshape((cout, o0, n) + otail).transpose((2, 0, 1) + tuple(range(3, 2 + nd))))

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        gt = np.ascontiguousarray(g.transpose((1, 2, 0) + tuple(range(3, 2 + nd)))).reshape(cout, nout)
        gw = None
        if weight.requires_grad:
            gw = np.stack([(block(k) @ gt.T).T for k in range(k0)])        # (k0, Cout, kvol)
            gw = np.moveaxis(gw.reshape((k0, cout, cin) + ktail), 0, 2)
            gw = np.ascontiguousarray(gw)
        gx = None
        if x.requires_grad:
            gcols = np.zeros((kvol, s0p, blk), dtype=x.dtype)
            for k in range(k0):
                gcols[:, k:k + s0 * (o0 - 1) + 1:s0] += (wt[k].T @ gt).reshape(kvol, o0, blk)
            gxt = np.zeros(xt.shape, dtype=x.dtype)
            if nd > 1:
                gcols = gcols.reshape((cin,) + ktail + (s0p, n) + otail)
                lead = (slice(None),) * 3
                for off in np.ndindex(*ktail):
                    sl = tuple(slice(o, o + s * (e - 1) + 1, s) for o, s, e in zip(off, stride[1:], otail))
                    gxt[lead + sl] += gcols[(slice(None),) + off]
            else:
                gxt += gcols.reshape(gxt.shape)
            gxp = gxt.transpose((2, 0, 1) + tuple(range(3, 2 + nd)))
            crop = tuple(slice(p, p + e) for p, e in zip(padding, spatial))
            gx = np.ascontiguousarray(gxp[(slice(None), slice(None)) + crop])
        grads = [gx, gw]
        if bias is not None:
            grads.append(gt.sum(axis=1) if bias.requires_grad else None)
        return grads

    return make_result(f"conv{nd}d", y, inputs, vjp)


def conv1d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    if weight.ndim != 3:
        raise ValueError("conv1d weight must be (Cout, Cin, k)")
    return conv(x, weight, bias, stride, padding)


def conv2d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    if weight.ndim != 4:
        raise ValueError("conv2d weight must be (Cout, Cin, kh, kw)")
    return conv(x, weight, bias, stride, padding)


def conv3d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    if weight.ndim != 5:
        raise ValueError("conv3d weight must be (Cout, Cin, kd, kh, kw)")
    return conv(x, weight, bias, stride, padding)


# ------------------------------------------------------------ normalization

def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, mode: str = "train",
              running_mean: np.ndarray | None = None, running_var: np.ndarray | None = None,
              decay: float = BN_DECAY, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization over every non-channel axis.

    In train mode ``running_mean``/``running_var`` (if given) are updated in
    place: ``r <- decay * r + (1 - decay) * batch_stat``.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta must have shape ({c},)")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    m = x.size // c
    dt = x.dtype.type
    if mode == "train":
        if m < 2:
            raise ValueError("batchnorm needs more than one value per channel in train mode")
        mean = x.data.mean(axis=axes, dtype=np.float64)
        var = x.data.var(axis=axes, dtype=np.float64)
        if running_mean is not None:
            running_mean *= decay
            running_mean += (1 - decay) * mean
        if running_var is not None:
            running_var *= decay
            running_var += (1 - decay) * var
    elif mode == "eval":
        if running_mean is None or running_var is None:
            raise ValueError("eval mode needs running statistics")
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(bshape)
    xhat = (x.data - mean.astype(x.dtype).reshape(bshape)) * inv
    g_ = gamma.data.reshape(bshape)
    y = xhat * g_ + beta.data.reshape(bshape)

    def vjp(g):
        dgamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        dbeta = g.sum(axis=axes) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * g_
            if mode == "train":
                s1 = dxhat.mean(axis=axes, keepdims=True)
                s2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
                dx = inv * (dxhat - s1 - xhat * s2)
            else:
                dx = dxhat * inv
        return dx, dgamma, dbeta

    return make_result(f"batchnorm[{mode}]", y.astype(x.dtype, copy=False), (x, gamma, beta), vjp)


# ------------------------------------------------------------------- head

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x: (N, F), weight: (O, F), bias: (O,) -> (N, O)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data
    xd, wd = x.data, weight.data

    def vjp(g):
        grads = [g @ wd if x.requires_grad else None,
                 g.T @ xd if weight.requires_grad else None]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result("linear", y, inputs, vjp)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over the batch; labels are integer class ids."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} rows of logits")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    lsm = log_softmax(logits.data.astype(np.float64))
    loss = np.asarray(-lsm[np.arange(n), labels].mean(), dtype=logits.dtype)

    def vjp(g):
        p = np.exp(lsm)
        p[np.arange(n), labels] -= 1.0
        return ((p * (float(g) / n)).astype(logits.dtype),)

    return make_result("softmax_cross_entropy", loss, (logits,), vjp)
