"""Differentiable primitives over NCHW tensors."""
from __future__ import annotations

import contextlib
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result

Scalar = (int, float, np.floating, np.integer)

_branches: list | None = None


@contextlib.contextmanager
def record_branches() -> Iterator[list]:
    """Collect the active branch of every piecewise op (relu, clamp, max) run inside."""
    global _branches
    old, _branches = _branches, []
    try:
        yield _branches
    finally:
        _branches = old


def _note(*patterns: np.ndarray) -> None:
    if _branches is not None:
        _branches.extend(np.array(p, copy=True) for p in patterns)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ValueError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _check_broadcast(a: tuple, b: tuple) -> None:
    """Allowed: exact match, scalars, and [N,C,1,1] / [N,1,H,W] against [N,C,H,W]."""
    if a == b or len(a) == 0 or len(b) == 0:
        return
    if int(np.prod(a)) == 1 or int(np.prod(b)) == 1:
        return
    if len(a) == len(b) == 4:
        small, big = (a, b) if np.prod(a) < np.prod(b) else (b, a)
        if small[0] == big[0]:
            if small[1] == big[1] and small[2:] == (1, 1):
                return
            if small[1] == 1 and small[2:] == big[2:]:
                return
    raise ValueError(f"incompatible shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward, "div")


def neg(x: Tensor) -> Tensor:
    return make_result(-x.data, (x,), lambda g: (-g,), "neg")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _note(mask)
    # np.maximum keeps NaN visible to the non-finite loss check
    return make_result(np.maximum(x.data, 0).astype(x.dtype, copy=False), (x,),
                       lambda g: (g * mask,), "relu")


def relu6(x: Tensor) -> Tensor:
    d = x.data
    mask = (d > 0) & (d < 6)
    _note(d > 0, d < 6)
    return make_result(np.clip(d, 0, 6), (x,), lambda g: (g * mask,), "relu6")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log(x: Tensor) -> Tensor:
    d = x.data
    return make_result(np.log(d), (x,), lambda g: (g / d,), "log")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    d = x.data
    mask = (d >= lo) & (d <= hi)
    _note(d >= lo, d <= hi)
    return make_result(np.clip(d, lo, hi), (x,), lambda g: (g * mask,), "clamp")


# ------------------------------------------------------------------ reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_result(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[a] for a in axes]))
    out = np.mean(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return make_result(np.asarray(out), (x,), backward, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of nothing")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ValueError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# --------------------------------------------------------------- convolution

def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding=0, groups: int = 1) -> Tensor:
    """Cross-correlation, output ``H' = floor((H + 2*pad_h - kh)/stride) + 1``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    ph, pw = _pair(padding)
    if groups < 1 or c % groups or cout % groups:
        raise ValueError(f"channels {c}->{cout} not divisible by groups={groups}")
    if cin_g != c // groups:
        raise ValueError(f"weight expects {cin_g * groups} input channels, input has {c}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} != ({cout},)")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ho = conv_output_size(h, kh, stride, ph)
    wo = conv_output_size(w, kw, stride, pw)
    if ho < 1 or wo < 1 or ph < 0 or pw < 0:
        raise ValueError(f"conv2d output would be empty for input {x.shape}, kernel {(kh, kw)}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    wd = weight.data
    depthwise = groups == c and cin_g == 1

    if depthwise:
        # per-channel multiplier, channel-major output (cout = c * m)
        m = cout // c
        wdw = wd.reshape(c, m, kh, kw)
        out = np.zeros((n, c, m, ho, wo), dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
                out += patch[:, :, None] * wdw[None, :, :, i, j, None, None]
        out = out.reshape(n, cout, ho, wo)
        cols = None
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        # (n, groups, cin_g, ho, wo, kh, kw) -> (groups, n*ho*wo, cin_g*kh*kw)
        win = win.reshape(n, groups, cin_g, ho, wo, kh, kw)
        cols = np.ascontiguousarray(win.transpose(1, 0, 3, 4, 2, 5, 6)).reshape(
            groups, n * ho * wo, cin_g * kh * kw)
        wmat = wd.reshape(groups, cout // groups, cin_g * kh * kw)
        out = np.matmul(cols, wmat.transpose(0, 2, 1))  # (groups, n*ho*wo, cout_g)
        out = out.reshape(groups, n, ho, wo, cout // groups).transpose(1, 0, 4, 2, 3)
        out = np.ascontiguousarray(out).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)
    in_shape = xp.shape

    def backward(g):
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if depthwise:
            m = cout // c
            g5 = g.reshape(n, c, m, ho, wo)
            if weight.requires_grad:
                gw = np.empty((c, m, kh, kw), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
                        gw[:, :, i, j] = np.einsum("ncmhw,nchw->cm", g5, patch)
                gw = gw.reshape(cout, 1, kh, kw)
            if x.requires_grad:
                gxp = np.zeros(in_shape, dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.einsum(
                            "ncmhw,cm->nchw", g5, wdw[:, :, i, j])
                gx = gxp[:, :, ph:ph + h, pw:pw + w]
        else:
            cg = cout // groups
            gmat = g.reshape(n, groups, cg, ho, wo).transpose(1, 0, 3, 4, 2).reshape(groups, n * ho * wo, cg)
            if weight.requires_grad:
                gw = np.matmul(gmat.transpose(0, 2, 1), cols).reshape(cout, cin_g, kh, kw)
            if x.requires_grad:
                gcols = np.matmul(gmat, wd.reshape(groups, cg, cin_g * kh * kw))
                gcols = gcols.reshape(groups, n, ho, wo, cin_g, kh, kw)
                gxp = np.zeros((n, groups, cin_g) + in_shape[2:], dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                            gcols[:, :, :, :, :, i, j].transpose(1, 0, 4, 2, 3)
                gx = gxp.reshape(in_shape)[:, :, ph:ph + h, pw:pw + w]
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, backward, "conv2d")


def asym_conv(x: Tensor, w_vert: Tensor, w_horz: Tensor, b_vert: Tensor | None = None,
              b_horz: Tensor | None = None) -> Tensor:
    """k x 1 then 1 x k convolution with size-preserving padding."""
    kv, kh = w_vert.shape[2], w_horz.shape[3]
    if w_vert.shape[3] != 1 or w_horz.shape[2] != 1:
        raise ValueError("asym_conv expects (k,1) and (1,k) kernels")
    if kv != kh or kv % 2 == 0:
        raise ValueError(f"asymmetric kernel size must be odd and matched, got {kv}, {kh}")
    p = (kv - 1) // 2
    y = conv2d(x, w_vert, b_vert, stride=1, padding=(p, 0))
    return conv2d(y, w_horz, b_horz, stride=1, padding=(0, p))


# -------------------------------------------------------------- normalization

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Batch normalization over (N, H, W); updates running stats in place when training."""
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError(f"batch_norm: channel mismatch between input {x.shape} and gamma {gamma.shape}")
    d = x.data
    axes = (0, 2, 3)
    if training:
        mu = d.mean(axis=axes)
        xc = d - mu[None, :, None, None]
        var = (xc * xc).mean(axis=axes)
        count = d.shape[0] * d.shape[2] * d.shape[3]
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean.astype(d.dtype, copy=False)
        var = running_var.astype(d.dtype, copy=False)
        xc = d - mu[None, :, None, None]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv[None, :, None, None]
    gd = gamma.data[None, :, None, None]
    out = xhat * gd + beta.data[None, :, None, None]

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gd
            if training:
                m1 = gxhat.mean(axis=axes, keepdims=True)
                m2 = (gxhat * xhat).mean(axis=axes, keepdims=True)
                gx = (gxhat - m1 - xhat * m2) * inv[None, :, None, None]
            else:
                gx = gxhat * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward, "batch_norm")


# ------------------------------------------------------------------- pooling

def global_pool(x: Tensor, kind: str) -> Tensor:
    """Pool over H, W -> [N, C, 1, 1]."""
    d = x.data
    n, c, h, w = d.shape
    if kind == "avg":
        return make_result(d.mean(axis=(2, 3), keepdims=True), (x,),
                           lambda g: (np.broadcast_to(g / (h * w), d.shape),), "global_avg")
    if kind == "max":
        flat = d.reshape(n, c, h * w)
        idx = flat.argmax(axis=2)
        _note(idx)
        out = np.take_along_axis(flat, idx[..., None], axis=2).reshape(n, c, 1, 1)

        def backward(g):
            gf = np.zeros((n, c, h * w), dtype=g.dtype)
            np.put_along_axis(gf, idx[..., None], g.reshape(n, c, 1), axis=2)
            return (gf.reshape(d.shape),)

        return make_result(out, (x,), backward, "global_max")
    raise ValueError(f"unknown pool kind {kind!r}")


def channel_pool(x: Tensor, kind: str) -> Tensor:
    """Pool over C -> [N, 1, H, W]."""
    d = x.data
    c = d.shape[1]
    if kind == "avg":
        return make_result(d.mean(axis=1, keepdims=True), (x,),
                           lambda g: (np.broadcast_to(g / c, d.shape),), "channel_avg")
    if kind == "max":
        idx = d.argmax(axis=1)[:, None]
        _note(idx)
        out = np.take_along_axis(d, idx, axis=1)

        def backward(g):
            gx = np.zeros_like(d, dtype=g.dtype)
            np.put_along_axis(gx, idx, g, axis=1)
            return (gx,)

        return make_result(out, (x,), backward, "channel_max")
    raise ValueError(f"unknown pool kind {kind!r}")


def pool2d(x: Tensor, kind: str, kernel: int, stride: int | None = None) -> Tensor:
    """Windowed pooling without padding."""
    stride = kernel if stride is None else stride
    d = x.data
    n, c, h, w = d.shape
    if kernel > h or kernel > w:
        raise ValueError(f"pool window {kernel} larger than input {h}x{w}")
    ho = conv_output_size(h, kernel, stride, 0)
    wo = conv_output_size(w, kernel, stride, 0)
    win = sliding_window_view(d, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win.reshape(n, c, ho, wo, kernel * kernel)
    if kind == "avg":
        out = win.mean(axis=-1)

        def backward(g):
            gx = np.zeros_like(d, dtype=g.dtype)
            share = g / (kernel * kernel)
            for i in range(kernel):
                for j in range(kernel):
                    gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += share
            return (gx,)

        return make_result(out, (x,), backward, "avg_pool")
    if kind == "max":
        arg = win.argmax(axis=-1)
        _note(arg)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

        def backward(g):
            gx = np.zeros_like(d, dtype=g.dtype)
            di, dj = np.divmod(arg, kernel)
            ii = np.arange(ho)[:, None] * stride + di
            jj = np.arange(wo)[None, :] * stride + dj
            nn_, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
            np.add.at(gx, (nn_[:, :, None, None], cc[:, :, None, None], ii, jj), g)
            return (gx,)

        return make_result(out, (x,), backward, "max_pool")
    raise ValueError(f"unknown pool kind {kind!r}")


def pool(x: Tensor, kind: str, scope: str = "spatial", kernel: int | None = None,
         stride: int | None = None) -> Tensor:
    if scope == "spatial":
        return global_pool(x, kind)
    if scope == "channel":
        return channel_pool(x, kind)
    if scope == "window":
        if kernel is None:
            raise ValueError("windowed pooling needs a kernel size")
        return pool2d(x, kind, kernel, stride)
    raise ValueError(f"unknown pool scope {scope!r}")


# ---------------------------------------------------------------- resampling

def resize_matrix(src: int, dst: int, mode: str, dtype=np.float64) -> np.ndarray:
    """Row-stochastic (dst, src) interpolation matrix; bilinear uses half-pixel centers."""
    m = np.zeros((dst, src), dtype=dtype)
    rows = np.arange(dst)
    if mode == "nearest":
        idx = np.minimum(np.floor(rows * src / dst).astype(int), src - 1)
        m[rows, idx] = 1.0
        return m
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")
    pos = (rows + 0.5) * src / dst - 0.5
    pos = np.clip(pos, 0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize(x: Tensor, size: tuple[int, int], mode: str = "bilinear") -> Tensor:
    n, c, h, w = x.shape
    rh = resize_matrix(h, size[0], mode, x.dtype)
    rw = resize_matrix(w, size[1], mode, x.dtype)
    out = rh @ x.data @ rw.T
    return make_result(out, (x,), lambda g: (rh.T @ g @ rw,), f"resize_{mode}")


def upsample2x(x: Tensor, mode: str = "bilinear") -> Tensor:
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ValueError(f"upsample2x expects a non-empty NCHW tensor, got {x.shape}")
    if mode == "nearest":
        out = x.data.repeat(2, axis=2).repeat(2, axis=3)
        n, c, h, w = x.shape
        return make_result(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),),
                           "upsample_nearest")
    return resize(x, (2 * x.shape[2], 2 * x.shape[3]), mode)
