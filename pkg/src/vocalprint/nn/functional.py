"""Fused differentiable operations with hand-written backward passes.

Convolutions use im2col on a channels-last copy of the input so each layer
is a single GEMM. Outputs are returned as transposed views of channels-last
buffers, which makes the next convolution's layout change free.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, _sigmoid, as_tensor, concat


def _check_ndim(x: Tensor, ndim: int, what: str):
    if x.ndim != ndim:
        raise ShapeError(f"{what}: expected a {ndim}-D input, got shape {x.shape}")


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, dilation=1, padding=0) -> Tensor:
    """x [N, Cin, T], w [Cout, Cin, K] -> [N, Cout, T_out]."""
    _check_ndim(x, 3, "conv1d")
    n, cin, t = x.shape
    cout, wcin, k = w.shape
    if cin != wcin:
        raise ShapeError(f"conv1d: expected {wcin} input channels, got {cin}")
    tp = t + 2 * padding
    reach = dilation * (k - 1) + 1
    t_out = (tp - reach) // stride + 1
    if t_out < 1:
        raise ShapeError(f"conv1d: input length {t} too short for kernel {k} dilation {dilation}")

    xt = np.ascontiguousarray(x.data.transpose(0, 2, 1))
    if padding:
        xt = np.pad(xt, ((0, 0), (padding, padding), (0, 0)))
    view = np.lib.stride_tricks.sliding_window_view(xt, reach, axis=1)[:, ::stride, :, ::dilation]
    cols = view[:, :t_out].reshape(n * t_out, cin * k)
    wmat = w.data.reshape(cout, cin * k)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, t_out, cout).transpose(0, 2, 1)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(n * t_out, cout)
        gw = (g2.T @ cols).reshape(w.shape)
        grads = [None, gw]
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, t_out, cin, k)
            gx = np.zeros((n, tp, cin), dtype=g.dtype)
            span = stride * (t_out - 1) + 1
            for j in range(k):
                gx[:, j * dilation : j * dilation + span : stride] += gcols[:, :, :, j]
            grads[0] = gx[:, padding : padding + t].transpose(0, 2, 1)
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.make(out, parents, backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """x [N, Cin, H, W], w [Cout, Cin, KH, KW] -> [N, Cout, H_out, W_out]."""
    _check_ndim(x, 4, "conv2d")
    n, cin, h, wid = x.shape
    cout, wcin, kh, kw = w.shape
    if cin != wcin:
        raise ShapeError(f"conv2d: expected {wcin} input channels, got {cin}")
    sh, sw = stride
    ph, pw = padding
    hp, wp = h + 2 * ph, wid + 2 * pw
    h_out, w_out = (hp - kh) // sh + 1, (wp - kw) // sw + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv2d: input {h}x{wid} too small for kernel {kh}x{kw}")

    xt = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))
    if ph or pw:
        xt = np.pad(xt, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    view = np.lib.stride_tricks.sliding_window_view(xt, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    m = n * h_out * w_out
    cols = view[:, :h_out, :w_out].reshape(m, cin * kh * kw)
    wmat = w.data.reshape(cout, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, h_out, w_out, cout).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(m, cout)
        gw = (g2.T @ cols).reshape(w.shape)
        grads = [None, gw]
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, h_out, w_out, cin, kh, kw)
            gx = np.zeros((n, hp, wp, cin), dtype=g.dtype)
            span_h, span_w = sh * (h_out - 1) + 1, sw * (w_out - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    gx[:, i : i + span_h : sh, j : j + span_w : sw] += gcols[..., i, j]
            grads[0] = gx[:, ph : ph + h, pw : pw + wid].transpose(0, 3, 1, 2)
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.make(out, parents, backward)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x [N, in], w [out, in] -> [N, out]."""
    _check_ndim(x, 2, "dense")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"dense: expected {w.shape[1]} features, got {x.shape[1]}")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out = out + b.data

    def backward(g):
        grads = [g @ wd, g.T @ xd]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return Tensor.make(out, (x, w) if b is None else (x, w, b), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalise over every axis except channels (axis 1).

    In training mode the batch statistics are used and the running buffers
    are updated in place.
    """
    if x.ndim < 2 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm: expected {gamma.shape[0]} channels on axis 1, got shape {x.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    xd = x.data
    if training:
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    m = xd.size // xd.shape[1]

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (
                inv_std.reshape(bshape)
                / m
                * (
                    m * dxhat
                    - dxhat.sum(axis=axes).reshape(bshape)
                    - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
                )
            )
        else:
            gx = dxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return Tensor.make(out.astype(xd.dtype, copy=False), (x, gamma, beta), backward)


def max_feature_map(x: Tensor) -> Tensor:
    """Split channels (axis 1) into halves and keep the elementwise max."""
    c = x.shape[1]
    if c % 2:
        raise ShapeError(f"max_feature_map needs an even channel count, got {c}")
    a, b = x.data[:, : c // 2], x.data[:, c // 2 :]
    first = a >= b

    def backward(g):
        return (np.concatenate([g * first, g * ~first], axis=1),)

    return Tensor.make(np.where(first, a, b), (x,), backward)


def max_pool2d(x: Tensor, kernel=(2, 2)) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped."""
    _check_ndim(x, 4, "max_pool2d")
    n, c, h, w = x.shape
    kh, kw = kernel
    ho, wo = h // kh, w // kw
    if ho < 1 or wo < 1:
        raise ShapeError(f"max_pool2d: input {h}x{w} smaller than kernel {kh}x{kw}")
    blocks = (
        x.data[:, :, : ho * kh, : wo * kw]
        .reshape(n, c, ho, kh, wo, kw)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, kh * kw)
    )
    idx = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        gb = gb.reshape(n, c, ho, wo, kh, kw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * kh, wo * kw)
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :, : ho * kh, : wo * kw] = gb
        return (gx,)

    return Tensor.make(out, (x,), backward)


def softmax(x: Tensor, axis=-1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.make(out, (x,), backward)


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor.make(out, (x,), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer class labels."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    logp = log_softmax(logits, axis=1)
    picked = logp.data[np.arange(n), labels]

    def backward(g):
        gl = np.zeros_like(logp.data)
        gl[np.arange(n), labels] = -g / n
        return (gl,)

    return Tensor.make(np.asarray(-picked.mean(), dtype=logits.dtype), (logp,), backward)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits."""
    z = logits.data
    y = np.asarray(targets, dtype=z.dtype).reshape(z.shape)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    p = _sigmoid(z)

    def backward(g):
        return (g * (p - y) / z.size,)

    return Tensor.make(np.asarray(loss.mean(), dtype=z.dtype), (logits,), backward)


def attentive_stats_pool(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, eps=1e-8) -> Tensor:
    """Channel-wise attention over time, returning [weighted mean, weighted std].

    x [N, C, T]; w1 [A, C, 1]; w2 [C, A, 1] -> [N, 2C]. The second projection
    has no bias: a per-channel constant cancels in the softmax over time.
    """
    _check_ndim(x, 3, "attentive_stats_pool")
    hidden = conv1d(x, w1, b1).tanh()
    alpha = softmax(conv1d(hidden, w2), axis=2)
    mean = (alpha * x).sum(axis=2)
    second = (alpha * x * x).sum(axis=2)
    std = (second - mean * mean).clamp_min(eps).sqrt()
    return concat([mean, std], axis=1)


def squeeze_excite(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """x [N, C, T] rescaled per channel by sigmoid(W2 relu(W1 mean_t x))."""
    s = x.mean(axis=2)
    z = dense(s, w1, b1).relu()
    e = dense(z, w2, b2).sigmoid()
    return x * e.reshape(e.shape[0], e.shape[1], 1)


def mse(pred: Tensor, target) -> Tensor:
    diff = pred - as_tensor(target, pred.dtype)
    return (diff * diff).mean()
